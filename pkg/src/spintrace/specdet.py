"""Pseudo-orbit expansions of the irrep-resolved spectral determinant.

Up to a constant,

    Delta(E+) = exp(-i pi Nbar(E+)) prod_p exp(-sum_r a_{p,r} y_p^r / r),
    y_p = exp(i S_p(E+) / hbar),

with a_{p,r} = chi(g_p^r) tr(d_p^r) exp(-i mu_{p,r} pi/2) / sqrt|det(M_p^r - 1)|.
Expanding every factor in powers of y_p gives pseudo-orbits: multisets
of primitive orbits.  A primitive taken k times carries the exact
series coefficient c_{p,k}; when the repetition amplitudes factorize
(a_{p,r} = a_p^r) this reduces to c_{p,1} = -a_p and c_{p,k>1} = 0, the
familiar (-1)^{n_A} F_A form.  The inverse determinant flips the sign
in the exponent.  E- variants are complex conjugates on the real axis.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.interpolate import CubicSpline
from scipy.optimize import brentq

from .grouprep import Irrep
from .orbits import PeriodicOrbit

log = logging.getLogger(__name__)

__all__ = [
    "PseudoOrbitCapError",
    "PseudoOrbit",
    "MeanCounting",
    "repetition_weights",
    "enumerate_pseudo_orbits",
    "enumerate_period_multisets",
    "determinant_series",
    "riemann_siegel",
    "heisenberg_cutoff",
    "find_zeros",
    "series_csv",
]

VARIANTS = ("plus", "minus", "inv_plus", "inv_minus", "riemann_siegel")


class PseudoOrbitCapError(RuntimeError):
    """Pseudo-orbit enumeration exceeded its configured cap."""


@dataclass(frozen=True)
class PseudoOrbit:
    """Multiset of primitive orbits with cumulative period and action.

    ``members`` is a tuple of (label, multiplicity).  ``coef`` is the
    expansion coefficient of Delta(E+) (it includes the (-1)^n sign);
    ``coef_inv`` the one of 1/Delta(E+).  ``F`` is the plain product of
    the members' single-traversal weights.
    """

    members: tuple
    period: float
    action: float
    n: int
    coef: complex
    coef_inv: complex
    F: complex
    energy: float = 0.0

    def action_at(self, E):
        return self.action + self.period * (np.asarray(E) - self.energy)


@dataclass
class MeanCounting:
    """Smooth Nbar(E) tabulated on [e_lo, e_hi] and spline-interpolated."""

    e_lo: float
    e_hi: float
    spline: CubicSpline = field(repr=False)

    @classmethod
    def tabulate(cls, fn: Callable[[float], float], e_lo: float, e_hi: float, n: int = 41) -> "MeanCounting":
        es = np.linspace(e_lo, e_hi, n)
        return cls(e_lo, e_hi, CubicSpline(es, [fn(e) for e in es]))

    @classmethod
    def from_function(cls, fn, e_lo, e_hi):
        return cls.tabulate(fn, e_lo, e_hi)

    def __call__(self, E):
        return self.spline(E)

    def density(self, E):
        return self.spline(E, 1)


def repetition_weights(orbits: Sequence[PeriodicOrbit], irrep: Irrep, r_max: int, base_label: str) -> np.ndarray:
    """a_{p,r} for r = 1..r_max of primitive ``base_label``.

    Every repetition up to ``r_max`` must be present in the database.
    """
    reps = {o.repetition: o for o in orbits if o.label.split("^")[0] == base_label}
    out = np.zeros(r_max, dtype=complex)
    for r in range(1, r_max + 1):
        o = reps.get(r)
        if o is None or o.d is None or o.maslov is None:
            raise KeyError(f"repetition {r} of {base_label} missing from the orbit database")
        chi = irrep.characters[o.g]
        det = o.det_m_minus_i
        trd = np.trace(o.d)
        mu = o.maslov
        if abs(det) < 1e-8:
            out[r - 1] = 0.0
            continue
        out[r - 1] = chi * trd * np.exp(-0.5j * math.pi * mu) / math.sqrt(abs(det))
    return out


def _series_coefficients(a: np.ndarray, sign: float, k_max: int) -> np.ndarray:
    """Coefficients of exp(sign * sum_r a_r y^r / r) up to y^k_max."""
    c = np.zeros(k_max + 1, dtype=complex)
    c[0] = 1.0
    for k in range(1, k_max + 1):
        s = 0.0
        for j in range(1, k + 1):
            if j <= len(a):
                s += a[j - 1] * c[k - j]
        c[k] = sign * s / k
    return c


def enumerate_period_multisets(periods: Sequence[float], cutoff: float, cap: int = 10 ** 6) -> list:
    """All multiplicity vectors k with sum k_i T_i < cutoff (strict)."""
    periods = list(periods)
    out = []

    def rec(i, budget, ks):
        if i == len(periods):
            out.append(tuple(ks))
            if len(out) > cap:
                raise PseudoOrbitCapError(f"more than {cap} pseudo-orbits below T={cutoff}")
            return
        k = 0
        while k * periods[i] < budget - 1e-12 or k == 0:
            rec(i + 1, budget - k * periods[i], ks + [k])
            k += 1

    rec(0, cutoff, [])
    return out


def _max_multiplicity(period: float, cutoff: float) -> int:
    k = 0
    while (k + 1) * period < cutoff - 1e-12:
        k += 1
    return k


def enumerate_pseudo_orbits(orbits: Sequence[PeriodicOrbit], irrep: Irrep, cutoff: float,
                            cap: int = 10 ** 6, weight_scale: float = 1.0) -> list:
    """Pseudo-orbits with cumulative period strictly below ``cutoff``.

    ``weight_scale`` multiplies every a_{p,r}.  With 1/2 the expansion is
    that of sqrt(Delta), whose zeros are simple when every level is
    Kramers-doubled (real irreps at half-integer spin).
    """
    prims = sorted([o for o in orbits if o.repetition == 1 and not o.marginal],
                   key=lambda o: (o.period, o.label))
    if not prims:
        return [PseudoOrbit((), 0.0, 0.0, 0, 1.0 + 0j, 1.0 + 0j, 1.0 + 0j)]
    energies = {o.energy for o in prims}
    if len(energies) != 1:
        raise ValueError("orbit database mixes energies")
    e0 = energies.pop()
    kmax = [_max_multiplicity(o.period, cutoff) for o in prims]
    coef, coef_inv, single = [], [], []
    for o, km in zip(prims, kmax):
        avail = max([q.repetition for q in orbits if q.label.split("^")[0] == o.label] + [1])
        a = weight_scale * repetition_weights(orbits, irrep, min(km, avail), o.label) if km else np.zeros(0)
        if km > avail:
            log.warning("orbit %s: repetitions beyond %d unavailable, truncating", o.label, avail)
        coef.append(_series_coefficients(a, -1.0, km))
        coef_inv.append(_series_coefficients(a, 1.0, km))
        single.append(a[0] if a.size else 0.0)
    out = []
    for ks in enumerate_period_multisets([o.period for o in prims], cutoff, cap):
        c, ci, F = 1.0 + 0j, 1.0 + 0j, 1.0 + 0j
        members = []
        for o, k, cp, cpi, w in zip(prims, ks, coef, coef_inv, single):
            if k:
                c *= cp[k]
                ci *= cpi[k]
                F *= w ** k
                members.append((o.label, k))
        period = sum(k * o.period for k, o in zip(ks, prims))
        action = sum(k * o.action for k, o in zip(ks, prims))
        out.append(PseudoOrbit(tuple(members), period, action, sum(ks), c, ci, F, e0))
    out.sort(key=lambda a: (a.period, a.members))
    return out


def heisenberg_cutoff(rho_bar: float, hbar: float) -> float:
    """T_H / 2 with T_H = 2 pi hbar rhobar."""
    return math.pi * hbar * rho_bar


def determinant_series(pseudo: Sequence[PseudoOrbit], nbar: MeanCounting, E, hbar: float,
                       variant: str = "plus", eta: float = 1e-6) -> np.ndarray:
    """Delta(E+-) or its inverse from a pseudo-orbit list (constants dropped).

    The offset +-i eta enters through S(E + i eta) = S + i eta T and
    Nbar(E + i eta) = Nbar + i eta rhobar.
    """
    if variant not in VARIANTS[:4]:
        raise ValueError(f"unknown variant {variant!r}")
    e = np.atleast_1d(np.asarray(E, dtype=float))
    inverse = variant.startswith("inv")
    z = e + 1j * eta
    nb = nbar(e) + 1j * eta * nbar.density(e)
    total = np.zeros_like(e, dtype=complex)
    for a in pseudo:
        c = a.coef_inv if inverse else a.coef
        total += c * np.exp(1j * (a.action + a.period * (z - a.energy)) / hbar)
    out = np.exp((1j if inverse else -1j) * math.pi * nb) * total
    if variant.endswith("minus"):
        # real actions and periods: the E- line is the mirror image of E+
        out = np.conj(out)
    return out if np.ndim(E) else out[0]


def riemann_siegel(pseudo: Sequence[PseudoOrbit], nbar: MeanCounting, E, hbar: float,
                   cutoff: float) -> np.ndarray:
    """Riemann-Siegel lookalike: half-sum over T_A < cutoff plus its conjugate."""
    e = np.atleast_1d(np.asarray(E, dtype=float))
    half = np.zeros_like(e, dtype=complex)
    for a in pseudo:
        if a.period < cutoff:
            half += a.coef * np.exp(1j * a.action_at(e) / hbar)
    half *= np.exp(-1j * math.pi * nbar(e))
    val = half + np.conj(half)
    if np.max(np.abs(val.imag)) > 1e-12:
        raise AssertionError("Riemann-Siegel value is not real")
    return val.real if np.ndim(E) else float(val.real[0])


def find_zeros(fn: Callable, e_lo: float, e_hi: float, n_grid: int = 4000) -> list:
    """Sign-change zeros of a real function, refined by Brent's method.

    Returns (E_zero, bracket width) pairs.
    """
    es = np.linspace(e_lo, e_hi, n_grid)
    vals = np.asarray(fn(es))
    out = []
    for i in np.nonzero(np.sign(vals[:-1]) * np.sign(vals[1:]) < 0)[0]:
        a, b = es[i], es[i + 1]
        root = brentq(lambda x: float(np.asarray(fn(np.array([x])))[0]), a, b, xtol=1e-13)
        out.append((root, b - a))
    return out


def series_csv(energies, values, variant: str, irrep_label: str) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["E", "re", "im", "variant", "irrep"])
    for e, v in zip(energies, np.asarray(values, dtype=complex)):
        w.writerow([f"{e:.12g}", f"{v.real:.12g}", f"{v.imag:.12g}", variant, irrep_label])
    return buf.getvalue()
