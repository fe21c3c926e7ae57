"""High-accuracy reference solutions used as truth in order studies.

Both solvers work on the twisted system and integrate over panels that
subdivide each fast period, with ``K``-point Legendre-Gauss collocation per
panel.  Node phases are kept as (period index, fraction) pairs, so the fast
rotation ``e^{c^2 t cal_J}`` stays exact at large ``c^2 t``.

* :func:`reference_phi` evaluates the iterated Duhamel maps ``Phi_l``
  (exact integrals, no quadrature compression), refining the panels until
  successive results agree.
* :func:`reference_solution` solves the full equation by Picard iteration
  to a fixed point on windows of panels.
* :func:`adaptive_gauss` is a panel-doubling Gauss rule for scalar or vector
  integrands.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from numpy.polynomial import legendre as npleg

from .calculus import BLOCK_SIGN, ac_symbol, bc_inv_symbol, state_norm
from .integrator import PERIODIC, split_phase


@lru_cache(maxsize=16)
def _collocation(K):
    """Gauss nodes/weights on [0, 1] and the matrix ``S[i, j] = int_0^{x_i} l_j``."""
    xi, wi = npleg.leggauss(K)
    vander = npleg.legvander(xi, K - 1)
    coef = np.linalg.inv(vander)  # column j: Legendre coefficients of l_j
    S = np.empty((K, K))
    for j in range(K):
        S[:, j] = npleg.legval(xi, npleg.legint(coef[:, j], lbnd=-1.0))
    return 0.5 * (xi + 1.0), 0.5 * wi, 0.5 * S


def adaptive_gauss(F, a, b, tol=1e-13, K=20, max_panels=2 ** 14):
    """Integrate ``F`` over ``[a, b]`` by doubling Gauss panels until converged."""
    x, w, _ = _collocation(K)
    panels = 1
    prev = None
    while panels <= max_panels:
        edges = np.linspace(a, b, panels + 1)
        h = np.diff(edges)
        nodes = edges[:-1, None] + h[:, None] * x
        vals = np.array([np.asarray(F(t)) for t in nodes.ravel()])
        wts = (h[:, None] * w).ravel()
        val = np.tensordot(wts, vals, axes=(0, 0))
        if prev is not None and np.max(np.abs(val - prev)) <= tol * max(1.0, np.max(np.abs(val))):
            return val
        prev = val
        panels *= 2
    raise RuntimeError("adaptive Gauss rule did not converge")


@dataclass
class _Panels:
    """Panels on ``[0, z]`` relative to a start on the period grid.

    ``period`` is the index of the fast period a panel lies in, ``frac0`` and
    ``dfrac`` its start and length as fractions of a period.
    """

    period: np.ndarray
    frac0: np.ndarray
    dfrac: np.ndarray

    def nodes(self, x, T):
        frac = self.frac0[:, None] + self.dfrac[:, None] * x  # phase fraction
        s = (self.period[:, None] + frac) * T  # time from the start
        return frac, s


def _panels(n_periods, tail, per_period):
    """``per_period`` equal panels in each whole period, then the tail."""
    k = np.arange(per_period)
    period = np.repeat(np.arange(n_periods), per_period)
    frac0 = np.tile(k / per_period, n_periods)
    dfrac = np.full(period.size, 1.0 / per_period)
    if tail > 0:
        period = np.concatenate((period, np.full(per_period, n_periods)))
        frac0 = np.concatenate((frac0, tail * k / per_period))
        dfrac = np.concatenate((dfrac, np.full(per_period, tail / per_period)))
    return _Panels(period, frac0, dfrac)


class _Twisted:
    """Pieces of the twisted right-hand side evaluated on collocation nodes."""

    def __init__(self, basis, nl, c, t0=0.0):
        self.basis, self.nl, self.c, self.t0 = basis, nl, c, t0
        self.T = 2.0 * math.pi / (c * c)
        self.a = ac_symbol(basis.eigenvalues, c)
        self.binv = bc_inv_symbol(basis.eigenvalues, c)

    def semigroup(self, s, sign=1.0):
        return self.basis.rotator(sign * s[..., None, None] * BLOCK_SIGN * self.a)

    def integrand(self, W, frac, s, back=True):
        """``B^-1 [e^{-s cal_J A}] e^{-theta cal_J} F(e^{theta cal_J} W, t)``."""
        basis = self.basis
        theta = 2.0 * np.pi * frac[..., None, None] * BLOCK_SIGN
        X = basis.rotate(W, theta)
        t = frac * self.T if self.nl.time_dependence == PERIODIC else self.t0 + s
        g = np.asarray(self.nl(0.5 * (X[..., 0, :] + X[..., 1, :]), t))
        Jg = basis.apply_j(g)
        F = np.stack((-Jg, Jg), axis=-2)
        angle = -theta
        if back:
            angle = angle - s[..., None, None] * BLOCK_SIGN * self.a
        return basis.rotate(F, angle) * self.binv


def _cumulative(g, h, w, S):
    """Integrals from the first panel start to every node, and panel totals.

    ``g`` has shape ``(P, K, ...)``, ``h`` the panel lengths ``(P,)``.
    """
    hh = h.reshape(h.shape + (1,) * (g.ndim - 1))
    local = hh * np.tensordot(S, g, axes=(1, 1)).swapaxes(0, 1)
    totals = h.reshape(h.shape + (1,) * (g.ndim - 2)) * np.tensordot(w, g, axes=(0, 1))
    before = np.cumsum(totals, axis=0) - totals
    return before[:, None] + local, totals


@dataclass
class ReferenceResult:
    value: np.ndarray
    estimate: float
    converged: bool


def reference_phi(l, w, z, params, nl, basis, t0=0.0, tol=1e-13, K=16,
                  max_refinements=6):
    """Iterated Duhamel map ``Phi_l(w, z)`` with converged integrals.

    ``Phi_1(w, z) = e^{z cal_J A} w + int_0^z B^-1 e^{-c^2 s cal_J} F(e^{c^2 s cal_J} w, s) ds``
    and ``Phi_{l+1}(w, z) = e^{z cal_J A} (w + int_0^z B^-1 e^{-s cal_J A}
    e^{-c^2 s cal_J} F(e^{c^2 s cal_J} Phi_l(w, s), s) ds)``.
    """
    if l < 1:
        raise ValueError("l must be at least 1")
    w = basis.check(w)
    rhs = _Twisted(basis, nl, params.c, t0)
    split = split_phase(z, rhs.T)
    x, wq, S = _collocation(K)
    per_period = max(1, math.ceil(rhs.T / 0.05))
    prev = None
    for _ in range(max_refinements):
        pan = _panels(split.m_z, split.theta_z, per_period)
        frac, s = pan.nodes(x, rhs.T)
        h = pan.dfrac * rhs.T
        sg = rhs.semigroup(s)
        phi = sg(w)
        end = z
        for j in range(1, l + 1):
            inside = phi if j > 1 else np.broadcast_to(w, s.shape + w.shape)
            g = rhs.integrand(inside, frac, s, back=j > 1)
            cum, totals = _cumulative(g, h, wq, S)
            total = totals.sum(axis=0)
            if j == 1:
                phi = sg(w) + cum
                val = rhs.semigroup(np.asarray(end))(w) + total
            else:
                phi = sg(w + cum)
                val = rhs.semigroup(np.asarray(end))(w + total)
        if prev is not None:
            est = float(state_norm(val - prev))
            if est <= tol * max(1.0, float(state_norm(val))):
                return ReferenceResult(val, est, True)
        prev = val
        per_period *= 2
    return ReferenceResult(val, est, False)


@dataclass
class ReferenceTrajectory:
    """Reference states at every whole period ``j T`` up to ``t_final``,
    plus the state at ``t_final`` itself."""

    c: float
    T: float
    w_periods: np.ndarray
    w_final: np.ndarray
    phi_final: np.ndarray
    t_final: float
    converged: bool
    max_iterations: int

    def w_at(self, t):
        if abs(t - self.t_final) <= 1e-12 * max(1.0, t):
            return self.w_final
        split = split_phase(t, self.T)
        if split.theta_z != 0:
            raise ValueError("reference stored only at whole periods")
        if split.m_z >= self.w_periods.shape[0]:
            raise ValueError("time beyond the reference horizon")
        return self.w_periods[split.m_z]

    def phi_at(self, t):
        """``phi(t)``; off the period grid only at ``t_final``."""
        if abs(t - self.t_final) <= 1e-12 * max(1.0, t):
            return self.phi_final
        w = self.w_at(t)
        return 0.5 * (w[0] + w[1])


def _picard_window(rhs, w_a, pan, x, wq, S, tol, maxit):
    frac, s = pan.nodes(x, rhs.T)
    h = pan.dfrac * rhs.T
    s_end = (pan.period + pan.frac0 + pan.dfrac) * rhs.T
    sg = rhs.semigroup(s)
    W = sg(w_a)
    scale = max(1.0, float(state_norm(w_a)))
    for it in range(1, maxit + 1):
        g = rhs.integrand(W, frac, s)
        cum, totals = _cumulative(g, h, wq, S)
        W_new = sg(w_a + cum)
        change = np.max(np.abs(W_new - W))
        W = W_new
        if change <= tol * scale:
            break
    else:
        it = -1
    ends = rhs.semigroup(s_end)(w_a + np.cumsum(totals, axis=0))
    return ends, it


def reference_solution(basis, nl, w0, c, t_final, K=16, panel_max=0.01,
                       window=0.01, tol=2e-16, maxit=80):
    """Solve the twisted system from ``w0`` at ``t = 0`` up to ``t_final``.

    Each fast period is cut into at least two panels no longer than
    ``panel_max``; Picard iteration is run to a fixed point on windows of
    roughly ``window`` time units.
    """
    w0 = basis.check(w0)
    rhs = _Twisted(basis, nl, c)
    T = rhs.T
    x, wq, S = _collocation(K)
    per_period = max(2, math.ceil(T / panel_max))
    periods_per_window = max(1, int(window / T))
    split = split_phase(t_final, T)
    out = np.empty((split.m_z + 1,) + w0.shape, dtype=np.result_type(w0, basis.dtype))
    out[0] = w0
    w = w0
    ok = True
    worst = 0
    j = 0
    while j < split.m_z:
        nper = min(periods_per_window, split.m_z - j)
        rhs.t0 = j * T
        ends, it = _picard_window(rhs, w, _panels(nper, 0.0, per_period),
                                  x, wq, S, tol, maxit)
        ok &= it > 0
        worst = max(worst, it if it > 0 else maxit)
        out[j + 1:j + nper + 1] = ends[per_period - 1::per_period]
        w = ends[-1]
        j += nper
    w_final = w
    if split.theta_z > 0:
        rhs.t0 = j * T
        ends, it = _picard_window(rhs, w, _panels(0, split.theta_z, per_period),
                                  x, wq, S, tol, maxit)
        ok &= it > 0
        w_final = ends[-1]
    # phi = (e^{c^2 t J} u + e^{-c^2 t J} v) / 2
    W = basis.rotate(w_final, 2.0 * np.pi * split.theta_z * BLOCK_SIGN)
    phi_final = 0.5 * (W[0] + W[1])
    return ReferenceTrajectory(c=c, T=T, w_periods=out, w_final=w_final,
                               phi_final=phi_final,
                               t_final=t_final, converged=bool(ok),
                               max_iterations=worst)
