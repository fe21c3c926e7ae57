"""Diagonal functional calculus for ``L``, ``J``, ``B_c`` and ``A_c``.

States are numpy arrays of shape ``(..., 2, n)``.  Index 0 of the
second-to-last axis is the ``u`` block, index 1 the ``v`` block; the last
axis runs over the coefficient slots of the :class:`SpectralBasis`.  Leading
axes are batch axes and are carried through every operation unchanged.

Two realizations of the complex structure are supported:

``"complex"``
    complex coefficient arrays, ``J`` is multiplication by ``1j``.
``"symplectic"``
    real arrays of even length ``2d`` holding ``(x, y)``, with
    ``J (x, y) = (y, -x)``, i.e. ``J = [[0, I], [-I, 0]]``.
"""
from __future__ import annotations

import numpy as np

COMPLEX = "complex"
SYMPLECTIC = "symplectic"

# cal_J = diag(J, -J): the u block turns forward, the v block backward.
BLOCK_SIGN = np.array([1.0, -1.0])[:, None]


class SpectralBasis:
    """Eigenvalues of ``L`` together with the action of ``J``.

    Parameters
    ----------
    eigenvalues : array_like
        One non-negative eigenvalue per coefficient slot.  For the
        symplectic realization slots ``k`` and ``k + d`` form a conjugate
        pair and must carry the same eigenvalue, otherwise ``J`` would not
        commute with ``L``.
    j_action : {"complex", "symplectic"}
    """

    def __init__(self, eigenvalues, j_action=COMPLEX):
        lam = np.array(eigenvalues, dtype=float).ravel()
        if lam.size == 0:
            raise ValueError("basis must have at least one mode")
        if not np.all(np.isfinite(lam)) or np.any(lam < 0):
            raise ValueError("eigenvalues of L must be finite and non-negative")
        if j_action not in (COMPLEX, SYMPLECTIC):
            raise ValueError(f"unknown j_action {j_action!r}")
        if j_action == SYMPLECTIC:
            if lam.size % 2:
                raise ValueError("symplectic basis needs an even number of slots")
            d = lam.size // 2
            if not np.array_equal(lam[:d], lam[d:]):
                raise ValueError("paired slots k and k+d must share an eigenvalue")
        lam.setflags(write=False)
        self.eigenvalues = lam
        self.j_action = j_action

    def __repr__(self):
        return f"SpectralBasis(size={self.size}, j_action={self.j_action!r})"

    def __eq__(self, other):
        if not isinstance(other, SpectralBasis):
            return NotImplemented
        return (self.j_action == other.j_action
                and np.array_equal(self.eigenvalues, other.eigenvalues))

    def __hash__(self):
        return hash((self.j_action, self.eigenvalues.tobytes()))

    @property
    def size(self):
        return self.eigenvalues.size

    @property
    def dtype(self):
        return np.complex128 if self.j_action == COMPLEX else np.float64

    def apply_j(self, x):
        """Apply ``J`` along the last axis."""
        x = np.asarray(x)
        if self.j_action == COMPLEX:
            return 1j * x
        d = self.size // 2
        return np.concatenate((x[..., d:], -x[..., :d]), axis=-1)

    def rotate(self, x, angle):
        """Return ``cos(angle) x + sin(angle) J x``.

        ``angle`` must broadcast against ``x``; for the symplectic
        realization it has to be equal on paired slots (true for every angle
        built from the eigenvalues or from a scalar).
        """
        return self.rotator(angle)(x)

    def rotator(self, angle, scale=1.0):
        """Precompute ``x -> scale (cos(angle) x + sin(angle) J x)``.

        The returned function also accepts a second argument ``y`` and then
        computes ``scale (cos(angle) x + sin(angle) J y)``.
        """
        angle = np.asarray(angle, dtype=float)
        cos = scale * np.cos(angle)
        if self.j_action == COMPLEX:
            factor = scale * np.exp(1j * angle)
            isin = 1j * scale * np.sin(angle)
            return lambda x, y=None: x * factor if y is None else cos * x + isin * y
        d = self.size // 2
        # J x = sign * x[perm]: swap the halves, negate the lower one
        sin = scale * np.sin(angle) * np.repeat([1.0, -1.0], d)
        perm = slice(None, None, -1) if d == 1 else np.roll(np.arange(2 * d), d)

        def rotate(x, y=None):
            return cos * x + sin * (x if y is None else y)[..., perm]

        return rotate

    def check(self, w):
        w = np.asarray(w)
        if w.ndim < 2 or w.shape[-2] != 2 or w.shape[-1] != self.size:
            raise ValueError(
                f"state shape {w.shape} does not match (..., 2, {self.size})")
        return w


def make_state(u, v):
    """Stack the ``u`` and ``v`` blocks into a state array."""
    u = np.asarray(u)
    v = np.asarray(v)
    if u.shape != v.shape:
        raise ValueError(f"u and v blocks differ in shape: {u.shape} vs {v.shape}")
    return np.stack((u, v), axis=-2)


def state_norm(w):
    """``sqrt(|u|^2 + |v|^2)`` over the last two axes."""
    w = np.asarray(w)
    return np.sqrt(np.sum(np.abs(w) ** 2, axis=(-2, -1)))


def _check_symbol_args(lam, c):
    lam = np.asarray(lam, dtype=float)
    if np.any(lam < 0) or np.any(np.isnan(lam)):
        raise ValueError("eigenvalue must be non-negative")
    if not np.all(np.asarray(c) > 0):
        raise ValueError("c must be positive")
    return lam


def ac_symbol(lam, c):
    """Symbol of ``A_c = c^2 B_c - c^2``.

    Evaluated as ``c lam / (sqrt(lam + c^2) + c)``, which is the same number
    as ``c (sqrt(lam + c^2) - c)`` without the cancellation at large ``c``.
    """
    lam = _check_symbol_args(lam, c)
    c = np.asarray(c, dtype=float)
    out = c * lam / (np.sqrt(lam + c * c) + c)
    return out if out.ndim else float(out)


def bc_inv_symbol(lam, c):
    """Symbol of ``B_c^{-1}``, i.e. ``c / sqrt(lam + c^2)``; never exceeds 1."""
    lam = _check_symbol_args(lam, c)
    c = np.asarray(c, dtype=float)
    out = c / np.sqrt(lam + c * c)
    return out if out.ndim else float(out)


def apply_bc_inv(w, basis, c):
    w = basis.check(w)
    return w * bc_inv_symbol(basis.eigenvalues, c)


def apply_ac(w, basis, c):
    w = basis.check(w)
    return w * ac_symbol(basis.eigenvalues, c)


def rotate_fast(w, s, basis):
    """Apply ``e^{s cal_J} = cos(s) I + sin(s) cal_J`` with ``cal_J = diag(J, -J)``."""
    w = basis.check(w)
    s = np.asarray(s, dtype=float)[..., None, None]
    return basis.rotate(w, s * BLOCK_SIGN)


def semigroup_jac(w, t, basis, c):
    """Apply the unitary group ``e^{t cal_J A_c}``.

    Mode ``k`` of the ``u`` block turns by ``t a_c(lam_k)``, the ``v`` block
    by the opposite angle.  ``t`` may carry batch axes matching ``w``.
    """
    w = basis.check(w)
    t = np.asarray(t, dtype=float)[..., None, None]
    angle = t * BLOCK_SIGN * ac_symbol(basis.eigenvalues, c)
    return basis.rotate(w, angle)
