"""Uniformly accurate integrators in twisted variables.

For ``c^-2 phi'' + L phi + c^2 phi = f(phi, t)`` the state
``w = (u, v)`` with ``u = e^{-c^2 t J} (phi - c^-2 B^-1 J phi')`` and
``v = e^{c^2 t J} (phi + c^-2 B^-1 J phi')`` obeys

    w' = cal_J A w + B^-1 e^{-c^2 t cal_J} F(e^{c^2 t cal_J} w, t),
    F(W, t) = (-J g, J g),   g = f((U + V)/2, t),

whose solutions have derivatives bounded uniformly in ``c``.  Steps are whole
multiples ``tau = m T`` of the fast period ``T = 2 pi / c^2``, where
``phi = (u + v)/2``.

The schemes ``Psi_l`` iterate the Duhamel formula ``l`` times.  Every integral
over ``[0, z]`` is split into whole fast periods plus a fractional tail; a
sum over periods is compressed by a Gram rule in the slow variable and each
period is integrated by a Gauss rule in the fast phase.

Inner stages are evaluated at nodes ``(rho, sigma)`` that carry the slow
time ``rho`` and the fast phase ``sigma`` separately (``inner_split="phase"``,
the default).  Re-splitting ``rho + sigma T`` into whole periods
(``inner_split="literal"``) makes inner stages jump in ``rho`` at every
period boundary, which the Gram rule cannot integrate; that mode is kept for
comparison.
"""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .calculus import (BLOCK_SIGN, ac_symbol, apply_bc_inv, bc_inv_symbol,
                       rotate_fast, semigroup_jac, state_norm)
from .quadrature import discrete_sum_rule, gauss_legendre

log = logging.getLogger(__name__)

AUTONOMOUS = "autonomous"
PERIODIC = "periodic"
SMOOTH = "smooth"
PHASE = "phase"
LITERAL = "literal"

BLOWUP_FACTOR = 1e6
QUARTER_TURN = -0.5 * np.pi * BLOCK_SIGN


class NumericalFailure(RuntimeError):
    """Non-finite state encountered while stepping."""

    def __init__(self, message, step=None):
        super().__init__(message)
        self.step = step


@dataclass(frozen=True)
class SchemeParams:
    """Parameters of ``Psi_l`` with step ``tau = m T``, ``T = 2 pi / c^2``.

    ``M`` defaults to ``(l + 1) // 2``.  ``gamma`` only enters the error
    model (floor ``gamma^(2N)``), never the algorithm.
    """

    l: int
    c: float
    m: int = 1
    N: int = 8
    M: int | None = None
    gamma: float = 0.5
    inner_split: str = PHASE

    def __post_init__(self):
        if int(self.l) != self.l or self.l < 1:
            raise ValueError("l must be a positive integer")
        if int(self.m) != self.m or self.m < 1:
            raise ValueError("m must be a positive integer")
        if int(self.N) != self.N or self.N < 1:
            raise ValueError("N must be a positive integer")
        if not self.c > 0:
            raise ValueError("c must be positive")
        if not 0 < self.gamma < 1:
            raise ValueError("gamma must lie in (0, 1)")
        if self.inner_split not in (PHASE, LITERAL):
            raise ValueError(f"unknown inner_split {self.inner_split!r}")
        if self.M is None:
            object.__setattr__(self, "M", (self.l + 1) // 2)
        elif int(self.M) != self.M or self.M < 1:
            raise ValueError("M must be a positive integer")

    @property
    def T(self):
        return 2.0 * math.pi / (self.c * self.c)

    @property
    def tau(self):
        return self.m * self.T

    @property
    def floor(self):
        """Quadrature error floor estimate ``gamma^(2N)``."""
        return self.gamma ** (2 * self.N)


class PhaseSplit(tuple):
    """``z / T = m_z + theta_z`` with integer ``m_z`` and ``theta_z`` in ``[0, 1)``."""

    __slots__ = ()

    def __new__(cls, m_z, theta_z):
        return super().__new__(cls, (int(m_z), float(theta_z)))

    @property
    def m_z(self):
        return self[0]

    @property
    def theta_z(self):
        return self[1]

    def __repr__(self):
        return f"PhaseSplit(m_z={self.m_z}, theta_z={self.theta_z!r})"


def split_phase(z, T):
    """Split ``z`` into whole periods and a fractional part.

    A quotient within a few ulps of an integer is snapped to it, so that
    ``split_phase(m * T, T) == (m, 0)`` despite rounding in ``m * T``.
    """
    if z < 0 or not T > 0:
        raise ValueError("need z >= 0 and T > 0")
    q = z / T
    k = round(q)
    if abs(q - k) <= 8 * np.finfo(float).eps * max(1.0, q):
        return PhaseSplit(k, 0.0)
    k = math.floor(q)
    return PhaseSplit(k, q - k)


@dataclass(frozen=True)
class Nonlinearity:
    """``f(psi, t)`` acting on coefficient blocks.

    ``func`` must accept a batch ``psi`` of shape ``(..., n)`` together with
    times ``t`` broadcastable to ``psi.shape[:-1]``.

    ``time_dependence`` states how ``f`` depends on ``t``:

    ``"autonomous"``
        not at all;
    ``"periodic"``
        only through the fast phase ``c^2 t``, i.e. ``f`` is ``T``-periodic.
        Times handed to ``func`` are then reduced modulo ``T``, which keeps
        the phase exact at large ``c^2 t`` and lets inner stages see the
        phase of their node;
    ``"smooth"``
        slowly (uniformly in ``c``); absolute time is passed.
    """

    func: Callable
    description: str = ""
    time_dependence: str = AUTONOMOUS

    def __post_init__(self):
        if self.time_dependence not in (AUTONOMOUS, PERIODIC, SMOOTH):
            raise ValueError(f"unknown time_dependence {self.time_dependence!r}")

    def __call__(self, psi, t):
        return self.func(psi, t)


def zero_nonlinearity():
    return Nonlinearity(lambda psi, t: np.zeros_like(psi), "f = 0", AUTONOMOUS)


def _time_arg(nl, t0, rho, sigma, T, split=PHASE):
    if nl.time_dependence == PERIODIC:
        return sigma * T if split == PHASE else rho + sigma * T
    return t0 + rho + sigma * T


def cal_f(W, t, nl, basis):
    """``F(W, t) = (-J g, J g)`` with ``g = f((U + V)/2, t)``."""
    W = basis.check(W)
    g = np.asarray(nl(0.5 * (W[..., 0, :] + W[..., 1, :]), t))
    Jg = basis.apply_j(g)
    return np.stack((-Jg, Jg), axis=-2)


def g0_eval(w, rho, sigma, params, nl, basis, t0=0.0):
    """``G_0(rho, sigma) = B^-1 e^{-2 pi sigma cal_J} F(e^{2 pi sigma cal_J} w, t)``."""
    theta = 2.0 * math.pi * sigma
    t = _time_arg(nl, t0, rho, sigma, params.T, params.inner_split)
    F = cal_f(rotate_fast(w, theta, basis), t, nl, basis)
    return apply_bc_inv(rotate_fast(F, -theta, basis), basis, params.c)


def g_upsilon_eval(upsilon, w, rho, sigma, params, nl, basis, t0=0.0):
    """``B^-1 e^{-s cal_J A} e^{-2 pi sigma cal_J} F(e^{2 pi sigma cal_J} Y, t)``
    with ``s = rho + sigma T`` and ``Y = upsilon(w, s)``."""
    s = rho + sigma * params.T
    theta = 2.0 * math.pi * sigma
    t = _time_arg(nl, t0, rho, sigma, params.T, params.inner_split)
    F = cal_f(rotate_fast(upsilon(w, s), theta, basis), t, nl, basis)
    back = semigroup_jac(rotate_fast(F, -theta, basis), -s, basis, params.c)
    return apply_bc_inv(back, basis, params.c)


def initial_twist(phi0, phi0_prime, c, basis):
    """``u0 = phi0 - c^-2 B^-1 J phi0'``, ``v0 = phi0 + c^-2 B^-1 J phi0'``."""
    phi0 = np.asarray(phi0)
    phi0_prime = np.asarray(phi0_prime)
    if phi0.shape != (basis.size,) or phi0_prime.shape != (basis.size,):
        raise ValueError("initial data must match the basis size")
    corr = basis.apply_j(phi0_prime) * bc_inv_symbol(basis.eigenvalues, c) / (c * c)
    return np.stack((phi0 - corr, phi0 + corr)).astype(basis.dtype, copy=False)


def untwist(w_n, n=0, params=None):
    """``phi = (u + v)/2``; valid at whole multiples of ``T``."""
    w_n = np.asarray(w_n)
    return 0.5 * (w_n[..., 0, :] + w_n[..., 1, :])


# ---------------------------------------------------------------------------
# evaluation plan


@dataclass
class _Level:
    """Quadrature children of the nodes of one level.

    ``parents`` are the nodes where ``Psi_j`` is wanted; ``rho``/``sigma``
    the children where the integrand of level ``j`` is sampled; ``reduce``
    maps child values to weighted sums per parent.
    """

    z: np.ndarray
    rho: np.ndarray
    sigma: np.ndarray
    reduce: sp.csr_matrix
    time_raw: np.ndarray = None
    time_offset: np.ndarray = None
    pre: Callable = None
    post: Callable = None
    semigroup: Callable = None
    # factored innermost level only
    mean_weights: np.ndarray = None
    tail_weights: np.ndarray = None
    whole: np.ndarray = None
    tail_index: np.ndarray = None
    expand: np.ndarray = None


def _expand(rho, sigma, T, M, eta, om, split):
    """Children (rho, sigma, weight, parent) of the nodes ``(rho, sigma)``."""
    out_r, out_s, out_w, out_p = [], [], [], []
    for p, (r, s) in enumerate(zip(rho, sigma)):
        if split == LITERAL:
            ps = split_phase(r + s * T, T)
            r, s = ps.m_z * T, ps.theta_z
        x, W = discrete_sum_rule(r / T, M)
        for xi, Wi in zip(x, W):
            out_r.append(np.full(eta.size, xi * T))
            out_s.append(eta)
            out_w.append(Wi * T * om)
            out_p.append(np.full(eta.size, p))
        if s > 0:
            out_r.append(np.full(eta.size, r))
            out_s.append(s * eta)
            out_w.append(s * T * om)
            out_p.append(np.full(eta.size, p))
    if not out_r:
        e = np.zeros(0)
        return e, e, e, np.zeros(0, dtype=int)
    return (np.concatenate(out_r), np.concatenate(out_s),
            np.concatenate(out_w), np.concatenate(out_p))


class StepPlan:
    """Precomputed node tree for ``Psi_l(., z)`` evaluated from time ``t0``.

    Node sets, weights and all rotation factors depend only on
    ``(l, z, params, basis)``; applying the plan to a state costs a handful
    of vectorized operations per level.
    """

    def __init__(self, l, split, params, basis, time_dependence=SMOOTH):
        self.time_dependence = time_dependence
        self.l = l
        self.split = split
        self.params = params
        self.basis = basis
        T, c = params.T, params.c
        a = ac_symbol(basis.eigenvalues, c)
        binv = bc_inv_symbol(basis.eigenvalues, c)
        eta, om = gauss_legendre(params.N).mapped(0.0, 1.0)
        rho = np.array([split.m_z * T])
        sigma = np.array([split.theta_z])
        levels = []
        for j in range(l, 0, -1):
            z = rho + sigma * T
            if j == 1 and self._phase_only(params):
                lev, cr, cs = self._factored_level(rho, sigma, eta, om)
                lev.z = z
            else:
                cr, cs, cw, cp = _expand(rho, sigma, T, params.M, eta, om,
                                         params.inner_split)
                cols = np.arange(cr.size)
                if j == 1:
                    # samples with equal (rho, sigma) coincide
                    _, first, cols = np.unique(np.stack((cr, cs), axis=1), axis=0,
                                               return_index=True, return_inverse=True)
                    cols = cols.ravel()
                    cr, cs = cr[first], cs[first]
                lev = _Level(z=z, rho=cr, sigma=cs,
                             reduce=_reducer(cw, cp, cols, (rho.size, cr.size)))
            theta = 2.0 * np.pi * cs[:, None, None] * BLOCK_SIGN
            # phi = (R_theta u + R_-theta v) / 2 = (cos (u + v) + sin J (u - v)) / 2
            lev.pre = basis.rotator(2.0 * np.pi * cs[:, None], scale=0.5)
            back = theta if j == 1 else theta + (cr + cs * T)[:, None, None] * BLOCK_SIGN * a
            # the (-J g, J g) blocks are g turned by -pi/2 and +pi/2
            lev.post = basis.rotator(QUARTER_TURN - back, scale=binv)
            if np.any(a):
                lev.semigroup = basis.rotator(z[:, None, None] * BLOCK_SIGN * a)
            else:
                lev.semigroup = lambda x: x
            lev.time_raw = cr + cs * T
            lev.time_offset = cs * T if params.inner_split == PHASE else lev.time_raw
            levels.append(lev)
            rho, sigma = cr, cs
        self.levels = levels[::-1]  # levels[0] is Psi_1
        self.evaluations = int(sum(lev.rho.size for lev in self.levels))

    def _factored_level(self, rho, sigma, eta, om):
        """Innermost level when ``G_0`` depends on the phase alone.

        The whole-period part of every parent then equals its length times
        the one-period mean, and the tail part only depends on the tail
        length, so samples are taken once per distinct tail.
        """
        T = self.params.T
        if self.params.inner_split == LITERAL:
            parts = [split_phase(r + s * T, T) for r, s in zip(rho, sigma)]
            rho = np.array([ps.m_z * T for ps in parts])
            sigma = np.array([ps.theta_z for ps in parts])
        tails, inverse = np.unique(sigma, return_inverse=True)
        nonzero = tails > 0
        slot = np.where(nonzero, np.cumsum(nonzero) - 1, nonzero.sum())
        tails = tails[nonzero]
        nodes = np.concatenate((eta, (tails[:, None] * eta).ravel()))
        nodes, expand = np.unique(nodes, return_inverse=True)
        lev = _Level(z=None, rho=np.zeros(nodes.size), sigma=nodes, reduce=None)
        lev.expand = expand.ravel()
        lev.mean_weights = om
        lev.tail_weights = tails[:, None] * T * om
        lev.whole = rho.copy()
        lev.tail_index = slot[inverse.ravel()]
        return lev, lev.rho, nodes

    def _phase_only(self, params):
        if self.time_dependence == AUTONOMOUS:
            return True
        return self.time_dependence == PERIODIC and params.inner_split == PHASE

    def apply(self, w, nl, t0=0.0):
        if nl.time_dependence != self.time_dependence:
            raise ValueError("plan was built for a different time dependence")
        basis = self.basis
        vals = None
        for j, lev in enumerate(self.levels, start=1):
            if lev.rho.size == 0:
                integral = 0.0
            else:
                Y = w if j == 1 else vals
                phi = lev.pre(Y[..., 0, :] + Y[..., 1, :], Y[..., 0, :] - Y[..., 1, :])
                if nl.time_dependence == PERIODIC:
                    t = lev.time_offset
                else:
                    t = t0 + lev.time_raw
                g = np.asarray(nl(phi, t))
                G = lev.post(g[:, None, :])
                if lev.reduce is None:
                    integral = _factored_sum(lev, G)
                else:
                    integral = (lev.reduce @ G.reshape(G.shape[0], -1)).reshape(
                        (-1,) + G.shape[1:])
            if j == 1:
                vals = lev.semigroup(w) + integral
            else:
                vals = lev.semigroup(w + integral)
        return vals[0]


def _factored_sum(lev, G):
    G = G[lev.expand]
    n_mean = lev.mean_weights.size
    mean = np.tensordot(lev.mean_weights, G[:n_mean], axes=1)
    tails = np.einsum("uk,uk...->u...", lev.tail_weights,
                      G[n_mean:].reshape(lev.tail_weights.shape + G.shape[1:]))
    tails = np.concatenate((tails, np.zeros((1,) + G.shape[1:], G.dtype)))
    return lev.whole[:, None, None] * mean + tails[lev.tail_index]


def _reducer(weights, rows, cols, shape):
    mat = sp.csr_matrix((weights, (rows, cols)), shape=shape)
    if shape[0] * shape[1] <= 50_000:
        return mat.toarray()
    return mat


@lru_cache(maxsize=64)
def _plan(l, split, params, basis, time_dependence):
    return StepPlan(l, split, params, basis, time_dependence)


def build_plan(l, z, params, basis, time_dependence=SMOOTH):
    """Cached :class:`StepPlan` for ``Psi_l(., z)``."""
    split = split_phase(z, params.T)
    return _plan(int(l), split, params, basis, time_dependence)


def psi(l, w, z, params, nl, basis, t0=0.0):
    """Scheme ``Psi_l(w, z)`` started at time ``t0`` (a whole multiple of ``T``).

    ``Psi_1(w, z) = e^{z cal_J A} w + Q[G_0]`` and
    ``Psi_{l+1}(w, z) = e^{z cal_J A} (w + Q[G[Psi_l]])``, where ``Q`` is the
    Gram x Gauss rule on the whole periods of ``[0, z]`` plus a Gauss rule on
    the fractional tail.
    """
    if l < 1:
        raise ValueError("l must be at least 1")
    if not 0 <= z < 1:
        raise ValueError(f"z must lie in [0, 1), got {z}")
    w = basis.check(w)
    return build_plan(l, z, params, basis, nl.time_dependence).apply(w, nl, t0)


def step(w_n, params, nl, basis, t0=0.0):
    """One step ``w_{n+1} = Psi_l(w_n, tau)``."""
    return psi(params.l, w_n, params.tau, params, nl, basis, t0)


def psi1_autonomous_trapezoid(w, tau, params, nl, basis):
    """First-order step with the periodic trapezoid rule in the fast phase.

    For autonomous ``f`` the integrand ``G_0`` is ``T``-periodic, so
    ``int_0^tau G_0 = tau * mean over one period``.
    """
    if nl.time_dependence != AUTONOMOUS:
        raise ValueError("trapezoid variant requires an autonomous nonlinearity")
    split = split_phase(tau, params.T)
    if split.theta_z != 0:
        raise ValueError("tau must be a whole multiple of T")
    w = basis.check(w)
    sig = np.arange(params.N) / params.N
    theta = 2.0 * np.pi * sig[:, None, None] * BLOCK_SIGN
    X = basis.rotate(w, theta)
    F = cal_f(X, sig * params.T, nl, basis)
    G = apply_bc_inv(basis.rotate(F, -theta), basis, params.c)
    return semigroup_jac(w, tau, basis, params.c) + tau * G.mean(axis=0)


# ---------------------------------------------------------------------------
# time stepping


@dataclass
class Trajectory:
    t: np.ndarray
    phi: np.ndarray
    norm_phi: np.ndarray
    norm_w: np.ndarray
    w_final: np.ndarray
    params: SchemeParams
    evaluations_per_step: int = 0
    depth: int = 0
    blowup: bool = False
    notes: list = field(default_factory=list)

    @property
    def n_steps(self):
        return self.t.size - 1


def n_steps_for(t_final, tau):
    """Whole steps of size ``tau`` fitting into ``t_final`` (rounded down)."""
    q = t_final / tau
    n = round(q)
    if abs(q - n) <= 1e-9 * max(1.0, q):
        return int(n), True
    return int(math.floor(q)), False


def run(problem, params, t_final, callback=None):
    """Integrate ``problem`` from 0 to the last step time not exceeding ``t_final``.

    ``problem`` needs ``basis``, ``nonlinearity``, ``phi0`` and ``dphi0``.
    Blow-up (``|w| > 1e6 |w_0|``) stops the run and sets ``blowup``;
    non-finite states raise :class:`NumericalFailure`.
    """
    basis, nl = problem.basis, problem.nonlinearity
    if params.tau >= 1:
        raise ValueError(f"step tau = {params.tau:.4g} must be below 1")
    n_steps, exact = n_steps_for(t_final, params.tau)
    notes = []
    if not exact:
        msg = (f"t_final={t_final} is not a multiple of tau={params.tau:.6g}; "
               f"stopping at {n_steps * params.tau:.6g}")
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
    w = initial_twist(problem.phi0, problem.dphi0, params.c, basis)
    plan = build_plan(params.l, params.tau, params, basis, nl.time_dependence)
    log.debug("plan: depth %d, %d nonlinearity evaluations per step",
              params.l, plan.evaluations)
    norm0 = max(state_norm(w), np.finfo(float).tiny)
    phis = [untwist(w)]
    norms = [state_norm(w)]
    blowup = False
    for k in range(n_steps):
        w = plan.apply(w, nl, k * params.tau)
        nrm = state_norm(w)
        if not np.isfinite(nrm):
            raise NumericalFailure(f"non-finite state at step {k + 1}", step=k + 1)
        phis.append(untwist(w))
        norms.append(nrm)
        if callback is not None:
            callback(k + 1, w)
        if nrm > BLOWUP_FACTOR * norm0:
            blowup = True
            notes.append(f"blow-up at step {k + 1}: |w| = {nrm:.3g}")
            break
    phi = np.array(phis)
    t = params.tau * np.arange(phi.shape[0])
    return Trajectory(t=t, phi=phi, norm_phi=np.linalg.norm(phi, axis=-1),
                      norm_w=np.array(norms), w_final=w, params=params,
                      evaluations_per_step=plan.evaluations, depth=params.l,
                      blowup=blowup, notes=notes)
