"""Uniformly accurate time integrators for oscillatory Klein-Gordon-type equations."""
from .calculus import (SpectralBasis, ac_symbol, apply_ac, apply_bc_inv,
                       bc_inv_symbol, make_state, rotate_fast, semigroup_jac,
                       state_norm)
from .integrator import (Nonlinearity, PhaseSplit, SchemeParams, cal_f,
                         g0_eval, g_upsilon_eval, initial_twist, psi,
                         psi1_autonomous_trapezoid, run, split_phase, step,
                         untwist)
from .problems import build_problem
from .reference import reference_phi, reference_solution

__version__ = "0.1.0"
