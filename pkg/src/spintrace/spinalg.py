"""Spin-S matrix algebra.

Angular-momentum matrices, rotation exponentials exp(-i theta n.S) and the
conventional time-reversal matrix exp(i pi S_y).  Units have hbar = 1, so
the eigenvalues of S_z are S, S-1, ..., -S.

The time-reversal convention is T = exp(i pi S_y) K with K complex
conjugation (standard Pauli matrices, sigma_y imaginary).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "SpinContext",
    "spin_rotation",
    "time_reversal_matrix",
    "time_reversal_square_sign",
    "classify_antiunitary_spin_part",
    "polar_unitary",
]

UNIT_TOL = 1e-10


def _hermitian_exp(generator: np.ndarray, factor: complex) -> np.ndarray:
    # exp(factor * generator) for Hermitian generator
    w, v = np.linalg.eigh(generator)
    return (v * np.exp(factor * w)) @ v.conj().T


@dataclass(frozen=True)
class SpinContext:
    """Spin matrices for spin quantum number S = two_s / 2."""

    two_s: int
    Sx: np.ndarray = field(init=False, repr=False)
    Sy: np.ndarray = field(init=False, repr=False)
    Sz: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if int(self.two_s) != self.two_s or self.two_s < 0:
            raise ValueError(f"two_s must be a non-negative integer, got {self.two_s}")
        s = self.two_s / 2.0
        m = s - np.arange(self.two_s + 1)
        # <m+1| S+ |m>
        sp = np.zeros((self.dim, self.dim), dtype=complex)
        for k in range(1, self.dim):
            sp[k - 1, k] = np.sqrt(s * (s + 1) - m[k] * (m[k] + 1))
        sm = sp.conj().T
        object.__setattr__(self, "Sx", (sp + sm) / 2)
        object.__setattr__(self, "Sy", (sp - sm) / 2j)
        object.__setattr__(self, "Sz", np.diag(m).astype(complex))
        for a in (self.Sx, self.Sy, self.Sz):
            a.setflags(write=False)

    @property
    def S(self) -> float:
        return self.two_s / 2.0

    @property
    def dim(self) -> int:
        return self.two_s + 1

    @property
    def half_integer(self) -> bool:
        return self.two_s % 2 == 1

    def dot(self, vec) -> np.ndarray:
        """Return S.vec for a real 3-vector."""
        vx, vy, vz = vec
        return vx * self.Sx + vy * self.Sy + vz * self.Sz


def spin_rotation(ctx: SpinContext, n, theta: float) -> np.ndarray:
    """Spin rotation exp(-i theta S.n) about the unit axis ``n``."""
    n = np.asarray(n, dtype=float)
    if abs(np.linalg.norm(n) - 1.0) > UNIT_TOL:
        raise ValueError(f"rotation axis must be a unit vector, got |n|={np.linalg.norm(n)}")
    return _hermitian_exp(ctx.dot(n), -1j * theta)


def time_reversal_matrix(ctx: SpinContext) -> np.ndarray:
    """Matrix factor exp(i pi S_y) of the conventional time-reversal operator."""
    return _hermitian_exp(ctx.Sy, 1j * np.pi)


def time_reversal_square_sign(ctx: SpinContext) -> int:
    """Sign of T^2 = exp(2 pi i S_y): +1 for integer S, -1 for half-integer S."""
    m = _hermitian_exp(ctx.Sy, 2j * np.pi)
    sign = -1 if ctx.half_integer else 1
    if np.max(np.abs(m - sign * np.eye(ctx.dim))) > 1e-12:
        raise ArithmeticError("exp(2 pi i S_y) is not proportional to the identity")
    return sign


def classify_antiunitary_spin_part(a0: float, a, tol: float = 1e-10) -> str:
    """Classify the total spin part U = a0 + i a.sigma of an antiunitary operator.

    For (U K)^2 to be proportional to the identity, U U* must be; this
    requires either a_y = 0 (the S_y rotation removed altogether) or
    a0 = a_x = a_z = 0 (equivalent to the conventional operator, extra
    spin part equal to the identity).

    Returns
    -------
    str
        ``"conventional-equivalent"``, ``"rotation-removed"`` or ``"invalid"``.
    """
    a = np.asarray(a, dtype=float)
    if abs(a0**2 + a @ a - 1.0) > tol:
        raise ValueError("coefficients do not define a unitary: a0^2 + |a|^2 != 1")
    ctx = SpinContext(1)
    sigma = 2 * np.array([ctx.Sx, ctx.Sy, ctx.Sz])
    u = a0 * np.eye(2) + 1j * np.einsum("i,ijk->jk", a, sigma)
    w = u @ u.conj()
    proportional = abs(w[0, 1]) < tol and abs(w[1, 0]) < tol and abs(w[0, 0] - w[1, 1]) < tol
    if not proportional:
        return "invalid"
    if abs(a[1]) < tol:
        return "rotation-removed"
    # remaining branch forced by the algebra
    assert abs(a0) < 1e-6 and abs(a[0]) < 1e-6 and abs(a[2]) < 1e-6
    return "conventional-equivalent"


def polar_unitary(m: np.ndarray) -> np.ndarray:
    """Closest unitary to ``m`` (unitary factor of the polar decomposition)."""
    u, _, vh = np.linalg.svd(m)
    return u @ vh
