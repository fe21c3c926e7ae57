"""Concrete instances of ``c^-2 phi'' + L phi + c^2 phi = f(phi, t)``.

``kg``
    cubic Klein-Gordon on the 1-d torus, ``L = -d_xx`` in Fourier
    coefficients, ``f = |phi|^2 phi``.
``ode``
    the rotating toy system ``q' = p``, ``p' / (2 c^2) = J p - grad V(q)``,
    rewritten for ``phi = e^{-c^2 t J} q`` with ``L = 0`` and
    ``f(phi, t) = -2 e^{-c^2 t J} grad V(e^{c^2 t J} phi)``.
``free``
    ``f = 0`` on a Fourier basis, for exactness checks.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .calculus import COMPLEX, SYMPLECTIC, SpectralBasis
from .integrator import AUTONOMOUS, PERIODIC, Nonlinearity, zero_nonlinearity

KINDS = ("ode", "kg", "free")


class ProblemError(ValueError):
    """Invalid problem description."""


@dataclass(frozen=True, eq=False)
class Problem:
    kind: str
    basis: SpectralBasis
    nonlinearity: Nonlinearity
    phi0: np.ndarray
    dphi0: np.ndarray
    c: float
    description: dict = field(default_factory=dict)

    def key(self):
        """Stable hash of the description, ``c`` included."""
        blob = json.dumps({"problem": self.description, "c": self.c}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass(frozen=True)
class TorusKGProblem(Problem):
    n_modes: int = 0

    @property
    def wavenumbers(self):
        return fourier_wavenumbers(self.n_modes)


@dataclass(frozen=True)
class RotatingODEProblem(Problem):
    d: int = 1
    potential: "PolynomialPotential" = None
    q0: np.ndarray = None
    p0: np.ndarray = None


# ---------------------------------------------------------------------------
# torus


def fourier_wavenumbers(n):
    """``k`` in FFT order: ``0, 1, .., n/2 - 1, -n/2, .., -1``."""
    return np.fft.fftfreq(n, d=1.0 / n).astype(int)


def to_grid(coef):
    """Values at ``x_j = 2 pi j / n`` of ``sum_k coef_k e^{i k x}``."""
    n = coef.shape[-1]
    return np.fft.ifft(coef, axis=-1) * n


def to_coefficients(values):
    n = values.shape[-1]
    return np.fft.fft(values, axis=-1) / n


def dealias_mask(n):
    """2/3 rule: keep ``|k| <= n // 3``; the unpaired mode ``-n/2`` is dropped."""
    k = fourier_wavenumbers(n)
    return (np.abs(k) <= n // 3) & (k != -(n // 2))


def kg_nonlinearity(n_modes):
    """``phi_hat -> (|phi|^2 phi)^`` evaluated on the grid, dealiased."""
    mask = dealias_mask(n_modes)

    def f(phi_hat, t=None):
        phi_hat = np.asarray(phi_hat)
        if phi_hat.shape[-1] != n_modes:
            raise ValueError(f"expected {n_modes} coefficients, got {phi_hat.shape[-1]}")
        u = to_grid(phi_hat)
        return to_coefficients(np.abs(u) ** 2 * u) * mask

    return Nonlinearity(f, "cubic Klein-Gordon |phi|^2 phi", AUTONOMOUS)


def bump_coefficients(n_modes, amplitude=0.6, width=1.0):
    """Coefficients of the real bump ``amplitude * exp((cos x - 1) / width)``."""
    x = 2.0 * np.pi * np.arange(n_modes) / n_modes
    coef = to_coefficients(amplitude * np.exp((np.cos(x) - 1.0) / width))
    coef[n_modes // 2] = 0.0  # keep the coefficient array Hermitian
    return coef


def is_hermitian(coef, tol=1e-12):
    """Coefficients of a real function: ``coef_{-k} = conj(coef_k)``."""
    n = coef.shape[-1]
    idx = (-np.arange(n)) % n
    return bool(np.max(np.abs(coef - np.conj(coef[..., idx])), initial=0.0)
                <= tol * max(1.0, np.max(np.abs(coef), initial=0.0)))


# ---------------------------------------------------------------------------
# rotating ODE


@dataclass(frozen=True)
class PolynomialPotential:
    """``V(q) = sum_i coef_i prod_j q_j^{e_ij}``."""

    coefs: tuple
    exponents: tuple
    name: str = ""

    @classmethod
    def named(cls, name, dim):
        if name == "quartic":  # |q|^4 / 4
            terms = {}
            for i in range(dim):
                for j in range(dim):
                    e = [0] * dim
                    e[i] += 2
                    e[j] += 2
                    terms[tuple(e)] = terms.get(tuple(e), 0.0) + 0.25
        elif name == "quadratic":  # |q|^2 / 2
            terms = {}
            for i in range(dim):
                e = [0] * dim
                e[i] = 2
                terms[tuple(e)] = 0.5
        elif name == "zero":
            terms = {}
        else:
            raise ProblemError(f"unknown potential {name!r}")
        return cls(tuple(terms.values()), tuple(terms.keys()), name)

    @classmethod
    def from_terms(cls, terms, dim):
        coefs, exps = [], []
        for entry in terms:
            coef, e = entry
            e = tuple(int(k) for k in e)
            if len(e) != dim or min(e, default=0) < 0:
                raise ProblemError(f"bad exponent vector {e} for dimension {dim}")
            coefs.append(float(coef))
            exps.append(e)
        return cls(tuple(coefs), tuple(exps))

    def gradient(self, q):
        q = np.asarray(q, dtype=float)
        if self.name == "quartic":
            return np.sum(q * q, axis=-1, keepdims=True) * q
        if self.name == "quadratic":
            return q.copy()
        out = np.zeros_like(q)
        for coef, e in zip(self.coefs, self.exponents):
            for j, ej in enumerate(e):
                if ej == 0:
                    continue
                term = coef * ej * q[..., j] ** (ej - 1)
                for i, ei in enumerate(e):
                    if i != j and ei:
                        term = term * q[..., i] ** ei
                out[..., j] += term
        return out


def canonical_j(d):
    """``J = [[0, I], [-I, 0]]`` as a ``2d x 2d`` matrix."""
    eye = np.eye(d)
    zero = np.zeros((d, d))
    return np.block([[zero, eye], [-eye, zero]])


def ode_nonlinearity(potential, c, d=1):
    """``f(phi, t) = -2 e^{-c^2 t J} grad V(e^{c^2 t J} phi)``."""
    basis = SpectralBasis(np.zeros(2 * d), SYMPLECTIC)
    cache = {}

    def rotators(t):
        # integrators pass the same time array at every step
        hit = cache.get(id(t))
        if hit is None or hit[0] is not t:
            if len(cache) > 32:
                cache.clear()
            angle = c * c * np.asarray(t, dtype=float)[..., None]
            hit = cache[id(t)] = (t, basis.rotator(angle), basis.rotator(-angle, -2.0))
        return hit[1], hit[2]

    def f(phi, t):
        fwd, back = rotators(t)
        return back(potential.gradient(fwd(phi)))

    return Nonlinearity(f, "-2 e^{-c^2 t J} grad V(e^{c^2 t J} phi)", PERIODIC)


# ---------------------------------------------------------------------------
# assembly


def default_config(kind):
    if kind == "ode":
        return {"kind": "ode", "d": 1, "potential": "quartic",
                "q0": [1.0, 0.0], "p0": [0.0, 1.0]}
    if kind == "kg":
        return {"kind": "kg", "n_modes": 32, "amplitude": 0.6, "width": 1.0,
                "velocity": 0.0}
    if kind == "free":
        return {"kind": "free", "n_modes": 8, "amplitude": 0.6, "width": 1.0}
    raise ProblemError(f"unknown problem kind {kind!r}; expected one of {KINDS}")


def _array(values, size, name):
    arr = np.asarray(values, dtype=float)
    if arr.shape != (size,):
        raise ProblemError(f"{name} must have length {size}")
    return arr


def build_problem(config, c):
    """Assemble a problem from its configuration block at speed ``c``.

    Missing keys take the defaults of :func:`default_config`.
    """
    if not isinstance(config, dict) or "kind" not in config:
        raise ProblemError("problem block must be an object with a 'kind'")
    kind = config["kind"]
    desc = {**default_config(kind), **config}
    c = float(c)
    if kind == "ode":
        d = int(desc["d"])
        if d < 1:
            raise ProblemError("d must be positive")
        pot = desc["potential"]
        if isinstance(pot, str):
            potential = PolynomialPotential.named(pot, 2 * d)
        elif isinstance(pot, dict) and "terms" in pot:
            potential = PolynomialPotential.from_terms(pot["terms"], 2 * d)
        else:
            raise ProblemError("potential must be a name or {'terms': [...]}")
        q0 = _array(desc["q0"], 2 * d, "q0")
        p0 = _array(desc["p0"], 2 * d, "p0")
        basis = SpectralBasis(np.zeros(2 * d), SYMPLECTIC)
        # phi = e^{-c^2 t J} q  =>  phi'(0) = p0 - c^2 J q0
        dphi0 = p0 - c * c * (canonical_j(d) @ q0)
        return RotatingODEProblem(kind, basis, ode_nonlinearity(potential, c, d),
                                  q0.copy(), dphi0, c, desc, d=d,
                                  potential=potential, q0=q0, p0=p0)
    if kind in ("kg", "free"):
        n = int(desc["n_modes"])
        if n < 2 or n % 2:
            raise ProblemError("n_modes must be an even integer >= 2")
        k = fourier_wavenumbers(n)
        basis = SpectralBasis(k.astype(float) ** 2, COMPLEX)
        phi0 = bump_coefficients(n, float(desc["amplitude"]), float(desc["width"]))
        dphi0 = float(desc.get("velocity", 0.0)) * c * c * phi0
        if kind == "free":
            return TorusKGProblem(kind, basis, zero_nonlinearity(), phi0, dphi0,
                                  c, desc, n_modes=n)
        return TorusKGProblem(kind, basis, kg_nonlinearity(n), phi0, dphi0, c,
                              desc, n_modes=n)
    raise ProblemError(f"unknown problem kind {kind!r}; expected one of {KINDS}")
