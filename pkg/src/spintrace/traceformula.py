"""Symmetry- and spin-resolved level densities.

rho_alpha(E) = rhobar_alpha(E)
    + (1 / pi hbar) Re sum_p chi_alpha(g_p) tr(d_p) A_p exp(i S_p(E) / hbar)

with A_p = T_p^prim exp(-i mu_p pi / 2) / sqrt|det(M_p - 1)| and the
mean part

rhobar_alpha(E) = s_alpha (2S + 1) |Omega(E)| / (|Gamma| (2 pi hbar)^f).

|Omega(E)| is the energy-shell volume  int delta(E - H) dq dp.
"""

from __future__ import annotations

import csv
import io
import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.special import gamma as gamma_fn

from .dynamics import FoldingScheme, ModelSpec, integrate_full, potential
from .grouprep import FiniteGroup, Irrep, VanishingProjectorError, build_double_group, build_point_group
from .orbits import PeriodicOrbit, monodromy_and_maslov, radial_extent

log = logging.getLogger(__name__)

__all__ = [
    "ConventionError",
    "DensityGrid",
    "shell_constant",
    "energy_shell_volume",
    "energy_shell_volume_mc",
    "phase_space_volume",
    "weyl_density",
    "weyl_total_density",
    "weyl_counting",
    "assign_group_element",
    "convention_terms",
    "check_conventions",
    "orbit_weight",
    "oscillatory_density",
    "full_space_density",
    "windowed_fourier",
    "local_peaks",
    "predicted_peaks",
    "match_peaks",
]


class ConventionError(AssertionError):
    """Geometric and double-group conventions give different orbit terms."""


@dataclass
class DensityGrid:
    energies: np.ndarray
    mean_part: np.ndarray
    oscillatory_part: np.ndarray
    irrep_label: str
    smoothing_sigma: float
    hbar_eff: float

    def __post_init__(self):
        n = len(self.energies)
        if len(self.mean_part) != n or len(self.oscillatory_part) != n:
            raise ValueError("density arrays have different lengths")
        if not self.smoothing_sigma > 0:
            raise ValueError("sigma must be positive")

    @property
    def total(self) -> np.ndarray:
        return self.mean_part + self.oscillatory_part

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["E", "mean", "oscillatory", "total"])
        for row in zip(self.energies, self.mean_part, self.oscillatory_part, self.total):
            w.writerow([f"{v:.12g}" for v in row])
        return buf.getvalue()


def shell_constant(f: int, mass: float) -> float:
    """C_f(m) with int delta(E - V - p^2/2m) d^f p = C_f(m) (E - V)^((f-2)/2)."""
    return 2 * math.pi ** (f / 2) / gamma_fn(f / 2) * mass * (2 * mass) ** ((f - 2) / 2)


def _ball_constant(f: int, mass: float) -> float:
    """int Theta(E - V - p^2/2m) d^f p = B_f(m) (E - V)^(f/2)."""
    return math.pi ** (f / 2) / gamma_fn(f / 2 + 1) * (2 * mass) ** (f / 2)


def _directions(f: int, n_theta: int, n_phi: int):
    """Quadrature directions and weights on the unit circle/sphere."""
    if f == 2:
        th = 2 * math.pi * np.arange(n_theta) / n_theta
        return np.stack([np.cos(th), np.sin(th)], axis=1), np.full(n_theta, 2 * math.pi / n_theta)
    x, w = np.polynomial.legendre.leggauss(n_phi)
    ph = 2 * math.pi * np.arange(n_theta) / n_theta
    ct, pp = np.meshgrid(x, ph, indexing="ij")
    st = np.sqrt(1 - ct ** 2)
    dirs = np.stack([st * np.cos(pp), st * np.sin(pp), ct], axis=-1).reshape(-1, 3)
    wts = (w[:, None] * np.full(n_theta, 2 * math.pi / n_theta)[None, :]).ravel()
    return dirs, wts


def _radial_integral(model, E, power, n_theta=256, n_phi=48, n_r=64):
    """int_{V <= E, star-shaped about 0} (E - V)^power dq in polar coordinates."""
    f = model.dof
    if E <= float(potential(model, np.zeros(f))):
        return 0.0
    dirs, wts = _directions(f, n_theta, n_phi)
    xg, wg = np.polynomial.legendre.leggauss(n_r)
    total = 0.0
    for d, wd in zip(dirs, wts):
        rmax = radial_extent(model, E, d)
        if not math.isfinite(rmax):
            raise ValueError("energy shell is unbounded: no finite bounding box")
        # r = rmax (1 - u^2) removes the square-root edge of (E - V)^power
        u = 0.5 * (xg + 1)
        r = rmax * (1 - u * u)
        vals = np.clip(E - potential(model, r[:, None] * d[None, :]), 0.0, None) ** power
        total += wd * 0.5 * np.sum(wg * vals * r ** (f - 1) * 2 * rmax * u)
    return float(total)


def energy_shell_volume(model: ModelSpec, E: float, **quad) -> float:
    """|Omega(E)| by polar quadrature over the star-shaped allowed region."""
    f = model.dof
    return shell_constant(f, model.mass) * _radial_integral(model, E, (f - 2) / 2, **quad)


def phase_space_volume(model: ModelSpec, E: float, **quad) -> float:
    """int Theta(E - H) dq dp (so that d/dE of it is |Omega(E)|)."""
    f = model.dof
    return _ball_constant(f, model.mass) * _radial_integral(model, E, f / 2, **quad)


def energy_shell_volume_mc(model: ModelSpec, E: float, mc_samples: int = 10 ** 6,
                           rng: Optional[np.random.Generator] = None, n_ray: int = 16):
    """Monte Carlo |Omega(E)| over a bounding box; returns (value, standard error).

    A sample counts when V <= E on the whole ray from the origin (checked at
    ``n_ray`` points), which restricts to the star-shaped allowed region.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    f = model.dof
    if E <= float(potential(model, np.zeros(f))):
        return 0.0, 0.0
    dirs, _ = _directions(f, 64, 16)
    ext = max(radial_extent(model, E, d) for d in dirs)
    if not math.isfinite(ext):
        raise ValueError("energy shell is unbounded: no finite bounding box")
    half = 1.05 * ext
    vol_box = (2 * half) ** f
    c = shell_constant(f, model.mass)
    acc, acc2, done = 0.0, 0.0, 0
    chunk = 200000
    while done < mc_samples:
        n = min(chunk, mc_samples - done)
        q = rng.uniform(-half, half, size=(n, f))
        v = potential(model, q)
        ok = v <= E
        for s in np.linspace(0.0, 1.0, n_ray, endpoint=False)[1:]:
            ok &= potential(model, s * q) <= E
        val = np.where(ok, np.clip(E - v, 0, None) ** ((f - 2) / 2), 0.0)
        acc += val.sum()
        acc2 += (val * val).sum()
        done += n
    mean = acc / done
    var = acc2 / done - mean * mean
    return c * vol_box * mean, c * vol_box * math.sqrt(max(var, 0.0) / done)


def _irrep_factor(group: FiniteGroup, irrep: Irrep) -> float:
    if group.is_double and irrep.kappa == 1:
        raise VanishingProjectorError(f"irrep {irrep.label} is standard: no states for half-integer spin")
    return irrep.dimension / group.gamma_order


def weyl_total_density(model: ModelSpec, two_s: int, E: float, volume: Optional[float] = None) -> float:
    """rhobar(E) = (2S + 1) |Omega| / (2 pi hbar)^f."""
    vol = energy_shell_volume(model, E) if volume is None else volume
    return (two_s + 1) * vol / (2 * math.pi * model.hbar_eff) ** model.dof


def weyl_density(model: ModelSpec, group: FiniteGroup, two_s: int, irrep: Irrep, E: float,
                 volume: Optional[float] = None) -> float:
    """rhobar_alpha(E) = (s_alpha / |Gamma|) rhobar(E)."""
    return _irrep_factor(group, irrep) * weyl_total_density(model, two_s, E, volume)


def weyl_counting(model: ModelSpec, group: Optional[FiniteGroup], two_s: int, irrep: Optional[Irrep],
                  E: float) -> float:
    """Nbar_alpha(E): integral of rhobar_alpha up to E (whole spectrum if irrep is None)."""
    n = (two_s + 1) * phase_space_volume(model, E) / (2 * math.pi * model.hbar_eff) ** model.dof
    return n if irrep is None else _irrep_factor(group, irrep) * n


def assign_group_element(orbit: PeriodicOrbit, group: FiniteGroup, convention: str) -> int:
    """Group element of an orbit under the 'double' or 'geometric' convention.

    double: ordered product of the double-group crossing elements (an odd
    number of net 2 pi windings yields ebar).  geometric: the element of
    Gamma with the same geometric action, i.e. the one relating initial
    and final points of the unfolded orbit.
    """
    if convention == "double":
        return orbit.g
    if convention == "geometric":
        return group.find(group.elements[orbit.g].geo, 1)
    raise ValueError(f"unknown convention {convention!r}")


def convention_terms(orbit: PeriodicOrbit, group: FiniteGroup, irrep: Irrep, d_full: np.ndarray) -> tuple:
    """chi(g) tr(d) under both conventions.

    The double term uses the folded spin factor stored on the orbit; the
    geometric term uses U(g_geo)^dagger applied to the independently
    computed full-space spin factor ``d_full`` of the unfolded orbit.
    """
    g_d = assign_group_element(orbit, group, "double")
    g_g = assign_group_element(orbit, group, "geometric")
    t_d = irrep.characters[g_d] * np.trace(orbit.d)
    t_g = irrep.characters[g_g] * np.trace(group.spin_lift(g_g).conj().T @ d_full)
    return complex(t_g), complex(t_d)


def check_conventions(model: ModelSpec, scheme: FoldingScheme, orbits: Sequence[PeriodicOrbit],
                      irreps: Sequence[Irrep], ctx, tol: float = 1e-10) -> float:
    """Hard gate: both conventions agree for every orbit and irrep; returns the max deviation."""
    from .dynamics import integrate_folded
    from .spintransport import transport_unfolded

    group = scheme.group
    f = model.dof
    worst = 0.0
    for orb in orbits:
        if orb.repetition != 1:
            continue
        folded = integrate_folded(model, scheme, orb.state(f), orb.period)
        d_full = transport_unfolded(model, folded, ctx).d
        for ir in irreps:
            if group.is_double and ir.kappa == 1:
                continue
            t_g, t_d = convention_terms(orb, group, ir, d_full)
            dev = abs(t_g - t_d)
            worst = max(worst, dev)
            if dev > tol:
                raise ConventionError(
                    f"orbit {orb.label}, irrep {ir.label}: geometric {t_g} vs double {t_d}")
    return worst


def orbit_weight(orbit: PeriodicOrbit, irrep: Irrep) -> complex:
    """chi_alpha(g_p) tr(d_p) A_p."""
    return complex(irrep.characters[orbit.g] * np.trace(orbit.d) * orbit.amplitude)


def oscillatory_density(orbits: Sequence[PeriodicOrbit], irrep: Irrep, energies, sigma: float,
                        hbar: float, mean_part=None) -> DensityGrid:
    """Gaussian-smoothed periodic-orbit sum on an energy grid.

    Actions are continued linearly from the database energy, S(E) = S_p +
    T_p (E - E_p), which is reliable for |E - E_p| T_p^2 small compared to
    the inverse stability scale.  Marginal orbits are skipped.
    """
    e = np.asarray(energies, dtype=float)
    osc = np.zeros_like(e, dtype=complex)
    usable = [o for o in orbits if not o.marginal and o.amplitude is not None]
    if not usable:
        log.warning("no periodic orbits: density reduces to the Weyl term")
    for o in sorted(usable, key=lambda o: (o.label, o.period)):
        w = orbit_weight(o, irrep)
        phase = (o.action + o.period * (e - o.energy)) / hbar
        osc += w * np.exp(1j * phase) * math.exp(-0.5 * (sigma * o.period / hbar) ** 2)
    total = (osc + np.conj(osc)) / 2 / (math.pi * hbar)
    if np.max(np.abs(total.imag), initial=0.0) > 1e-12:
        raise AssertionError("smoothed density has an imaginary residue")
    mean = np.zeros_like(e) if mean_part is None else np.asarray(mean_part, dtype=float)
    return DensityGrid(e, mean, total.real, irrep.label, sigma, hbar)


def full_space_density(model: ModelSpec, group: FiniteGroup, ctx, orbits: Sequence[PeriodicOrbit],
                       T_max: float, energies, sigma: float) -> np.ndarray:
    """Unprojected oscillatory density from full-space orbits (no folding).

    Each fundamental-domain primitive whose geometric element has order k
    unfolds into |Gamma|/k full-space orbits of primitive period k T_p.
    Their monodromy, Maslov index and spin factor are recomputed by
    integrating in the full space without any symmetry reduction.
    """
    from .spintransport import transport_full

    f = model.dof
    trivial = FoldingScheme.from_group(build_double_group(build_point_group({"kind": "Cn", "n": 1}), ctx.two_s))
    hb = model.hbar_eff
    e = np.asarray(energies, dtype=float)
    out = np.zeros_like(e, dtype=complex)
    for p in orbits:
        if p.repetition != 1:
            continue
        geo = group.find(group.elements[p.g].geo, 1)
        # order in Gamma, not in the double group (R^k may be ebar)
        k = 1
        while group.elements[group.power(geo, k)].geo != group.elements[group.identity_index].geo:
            k += 1
        t_full = k * p.period
        r = 1
        while r * t_full <= T_max + 1e-9:
            traj = integrate_full(model, p.state(f), r * t_full)
            d = transport_full(model, traj, ctx).d
            m, mu, det = monodromy_and_maslov(model, trivial, p.initial, r * t_full)
            if abs(det) > 1e-8:
                amp = t_full * np.exp(-0.5j * math.pi * mu) / math.sqrt(abs(det))
                mult = group.gamma_order / k
                phase = (r * k * p.action + r * t_full * (e - p.energy)) / hb
                out += mult * np.trace(d) * amp * np.exp(1j * phase) * math.exp(-0.5 * (sigma * r * t_full / hb) ** 2)
            r += 1
    return ((out + np.conj(out)) / 2).real / (math.pi * hb)


def windowed_fourier(eigenvalues, mean_density, e_lo: float, e_hi: float, hbar: float,
                     times, n_quad: int = 4001) -> np.ndarray:
    """|FT| over E of the oscillatory part of a discrete spectrum.

    F(T) = sum_n w(E_n) exp(i E_n T / hbar) - int w rhobar exp(i E T / hbar) dE
    with a Hann window w on [e_lo, e_hi].  A periodic-orbit term
    A exp(i S(E) / hbar) shows up as a peak at its period T.
    """
    e = np.asarray(eigenvalues, dtype=float)
    e = e[(e > e_lo) & (e < e_hi)]
    t = np.asarray(times, dtype=float)
    width = e_hi - e_lo
    w_n = np.sin(math.pi * (e - e_lo) / width) ** 2
    grid = np.linspace(e_lo, e_hi, n_quad)
    w_g = np.sin(math.pi * (grid - e_lo) / width) ** 2 * np.asarray(mean_density(grid))
    wq = np.full(n_quad, grid[1] - grid[0])
    wq[[0, -1]] *= 0.5
    out = np.empty(t.size, dtype=complex)
    for i0 in range(0, t.size, 256):
        tt = t[i0:i0 + 256, None]
        disc = np.exp(1j * tt * e[None, :] / hbar) @ w_n
        smooth = np.exp(1j * tt * grid[None, :] / hbar) @ (w_g * wq)
        out[i0:i0 + 256] = disc - smooth
    return np.abs(out)


def local_peaks(times, values, rel_threshold: float = 0.0) -> list:
    """Local maxima (T, height), parabola-refined, above rel_threshold * max."""
    t = np.asarray(times, dtype=float)
    v = np.asarray(values, dtype=float)
    floor = rel_threshold * v.max()
    out = []
    for i in range(1, len(v) - 1):
        if v[i] > v[i - 1] and v[i] >= v[i + 1] and v[i] > floor:
            den = v[i - 1] - 2 * v[i] + v[i + 1]
            shift = 0.5 * (v[i - 1] - v[i + 1]) / den if den != 0 else 0.0
            out.append((float(t[i] + shift * (t[1] - t[0])), float(v[i] - 0.25 * (v[i - 1] - v[i + 1]) * shift)))
    return out


def predicted_peaks(orbits: Sequence[PeriodicOrbit], irrep: Irrep, rel_tol: float = 1e-6) -> list:
    """Orbits grouped into period classes with height |sum chi tr(d) A|.

    Orbits of equal period (symmetry or time-reversal partners, coinciding
    repetitions) interfere, so their weights are summed before taking the
    modulus.  Returned sorted by period as dicts {period, height, labels}.
    """
    usable = sorted((o for o in orbits if not o.marginal and o.amplitude is not None),
                    key=lambda o: (o.period, o.label))
    classes = []
    for o in usable:
        if classes and abs(o.period - classes[-1]["period"]) <= rel_tol * o.period:
            classes[-1]["weight"] += orbit_weight(o, irrep)
            classes[-1]["labels"].append(o.label)
        else:
            classes.append({"period": o.period, "weight": orbit_weight(o, irrep), "labels": [o.label]})
    return [{"period": c["period"], "height": abs(c["weight"]), "labels": c["labels"]} for c in classes]


def match_peaks(predicted: Sequence[dict], peaks: Sequence[tuple], rel_tol: float = 0.02) -> list:
    """Nearest measured peak to every predicted period, or None beyond rel_tol."""
    out = []
    for c in predicted:
        best = min(peaks, key=lambda p: abs(p[0] - c["period"]), default=None)
        if best is not None and abs(best[0] - c["period"]) <= rel_tol * c["period"]:
            out.append(best)
        else:
            out.append(None)
    return out
