"""Classical flows of the built-in models and fundamental-domain folding.

Built-in potentials (q = (x, y) or (x, y, z), r the in-plane radius):

planar_c3
    V = r^2/2 + lam (x^2 y - y^3/3) + beta r^4 + eps Im((x + i y)^6)
threed_c3
    V = |q|^2/2 + lam (x^2 y - y^3/3) + mu z^2 (x^2 + y^2) + beta |q|^4

``beta`` is an optional quartic confinement (default 0).  The cubic term
alone leaves the potential open above the saddle energy 1/(6 lam^2);
a small ``beta`` closes it, which is what a bounded quantum reference
spectrum needs.  ``eps`` breaks the mirror lines and leaves C3.

The fundamental domain is a wedge about z between the angles phi0 and
phi0 + alpha, closed at phi0 and open at phi0 + alpha.  For C_n,
phi0 = 0 and alpha = 2 pi / n.  For C_nv the wedge is bounded by two
adjacent mirror lines.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp

from .grouprep import FiniteGroup, axis_angle

__all__ = [
    "IntegrationError",
    "GrazingError",
    "ModelSpec",
    "PhaseState",
    "FullTrajectory",
    "Segment",
    "FoldedTrajectory",
    "FoldingScheme",
    "potential",
    "potential_and_gradient",
    "hamiltonian",
    "integrate_full",
    "fold_state",
    "integrate_folded",
]

DEFAULT_RTOL = 1e-12


class IntegrationError(RuntimeError):
    """Failure of the classical integrator (step underflow or energy drift)."""


class GrazingError(IntegrationError):
    """Trajectory touches a fundamental-domain wall tangentially."""


@dataclass(frozen=True)
class ModelSpec:
    """Orbital Hamiltonian H0 = p^2/2m + V(q) plus spin-coupling settings."""

    family: str = "planar_c3"
    mass: float = 1.0
    lam: float = 1.0
    epsilon: float = 0.0
    mu: float = 0.0
    beta: float = 0.0
    kappa: float = 0.05
    hbar_eff: float = 0.02
    custom_potential: Optional[Callable] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.family not in ("planar_c3", "threed_c3", "custom"):
            raise ValueError(f"unknown model family {self.family!r}")
        if not self.mass > 0:
            raise ValueError("mass must be positive")
        if not self.hbar_eff > 0:
            raise ValueError("hbar_eff must be positive")
        if self.family == "custom" and self.custom_potential is None:
            raise ValueError("custom family needs custom_potential")

    @property
    def dof(self) -> int:
        if self.family == "custom":
            return int(getattr(self.custom_potential, "dof", 2))
        return 2 if self.family == "planar_c3" else 3

    @property
    def potential_params(self) -> list:
        if self.family == "planar_c3":
            return [self.lam, self.beta, self.epsilon]
        return [self.lam, self.mu, self.beta]

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        return cls(
            family=d.get("family", "planar_c3"),
            mass=float(d.get("mass", 1.0)),
            lam=float(d.get("lambda", 1.0)),
            epsilon=float(d.get("epsilon", 0.0)),
            mu=float(d.get("mu", 0.0)),
            beta=float(d.get("beta", 0.0)),
            kappa=float(d.get("kappa", 0.05)),
            hbar_eff=float(d.get("hbar_eff", 0.02)),
        )

    def to_dict(self) -> dict:
        return {"family": self.family, "mass": self.mass, "lambda": self.lam,
                "epsilon": self.epsilon, "mu": self.mu, "beta": self.beta,
                "kappa": self.kappa, "hbar_eff": self.hbar_eff}


@dataclass(frozen=True)
class PhaseState:
    q: np.ndarray
    p: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.p))):
            raise ValueError("phase-space state has non-finite components")


def potential(model: ModelSpec, q: np.ndarray) -> np.ndarray:
    """Vectorized potential; ``q`` has shape (..., f)."""
    return potential_and_gradient(model, q, hessian=False)[0]


def potential_and_gradient(model: ModelSpec, q, hessian: bool = True):
    """V, grad V and (optionally) the Hessian, vectorized over leading axes."""
    q = np.asarray(q, dtype=float)
    if model.family == "custom":
        return model.custom_potential(q)
    if q.ndim == 1:
        return _point_terms(model, q, hessian)
    x, y = q[..., 0], q[..., 1]
    lam, beta = model.lam, model.beta
    f = q.shape[-1]
    r2 = np.sum(q * q, axis=-1)
    v = 0.5 * r2 + lam * (x * x * y - y ** 3 / 3) + beta * r2 * r2
    g = q + 4 * beta * r2[..., None] * q
    g[..., 0] += 2 * lam * x * y
    g[..., 1] += lam * (x * x - y * y)
    h = None
    if hessian:
        h = np.broadcast_to(np.eye(f), q.shape + (f,)).copy()
        h += 4 * beta * (r2[..., None, None] * np.eye(f) + 2 * q[..., :, None] * q[..., None, :])
        h[..., 0, 0] += 2 * lam * y
        h[..., 0, 1] += 2 * lam * x
        h[..., 1, 0] += 2 * lam * x
        h[..., 1, 1] -= 2 * lam * y
    if model.family == "planar_c3" and model.epsilon != 0.0:
        z = x + 1j * y
        eps = model.epsilon
        v = v + eps * np.imag(z ** 6)
        z5 = 6 * z ** 5
        g[..., 0] += eps * np.imag(z5)
        g[..., 1] += eps * np.real(z5)
        if hessian:
            z4 = 30 * z ** 4
            h[..., 0, 0] += eps * np.imag(z4)
            h[..., 0, 1] += eps * np.real(z4)
            h[..., 1, 0] += eps * np.real(z4)
            h[..., 1, 1] -= eps * np.imag(z4)
    if model.family == "threed_c3" and model.mu != 0.0:
        zc = q[..., 2]
        mu = model.mu
        rho2 = x * x + y * y
        v = v + mu * zc * zc * rho2
        g[..., 0] += 2 * mu * zc * zc * x
        g[..., 1] += 2 * mu * zc * zc * y
        g[..., 2] += 2 * mu * zc * rho2
        if hessian:
            h[..., 0, 0] += 2 * mu * zc * zc
            h[..., 1, 1] += 2 * mu * zc * zc
            h[..., 2, 2] += 2 * mu * rho2
            for a, c in ((0, x), (1, y)):
                h[..., a, 2] += 4 * mu * zc * c
                h[..., 2, a] += 4 * mu * zc * c
    return v, g, h


def _point_terms(model: ModelSpec, q: np.ndarray, hessian: bool):
    """Scalar fast path of potential_and_gradient for one point."""
    lam, beta = model.lam, model.beta
    x, y = float(q[0]), float(q[1])
    z = float(q[2]) if q.size == 3 else 0.0
    r2 = x * x + y * y + z * z
    v = 0.5 * r2 + lam * (x * x * y - y * y * y / 3) + beta * r2 * r2
    b4 = 1.0 + 4 * beta * r2
    gx = b4 * x + 2 * lam * x * y
    gy = b4 * y + lam * (x * x - y * y)
    gz = b4 * z
    if hessian:
        hxx = b4 + 8 * beta * x * x + 2 * lam * y
        hyy = b4 + 8 * beta * y * y - 2 * lam * y
        hxy = 8 * beta * x * y + 2 * lam * x
        hzz = b4 + 8 * beta * z * z
        hxz = 8 * beta * x * z
        hyz = 8 * beta * y * z
    if model.family == "planar_c3":
        if model.epsilon != 0.0:
            eps = model.epsilon
            w = complex(x, y)
            w4 = w ** 4
            w5 = 6 * w4 * w
            v += eps * (w5 * w / 6).imag
            gx += eps * w5.imag
            gy += eps * w5.real
            if hessian:
                h4 = 30 * w4
                hxx += eps * h4.imag
                hyy -= eps * h4.imag
                hxy += eps * h4.real
        g = np.array([gx, gy])
        h = np.array([[hxx, hxy], [hxy, hyy]]) if hessian else None
        return v, g, h
    mu = model.mu
    if mu != 0.0:
        rho2 = x * x + y * y
        v += mu * z * z * rho2
        gx += 2 * mu * z * z * x
        gy += 2 * mu * z * z * y
        gz += 2 * mu * z * rho2
        if hessian:
            hxx += 2 * mu * z * z
            hyy += 2 * mu * z * z
            hzz += 2 * mu * rho2
            hxz += 4 * mu * z * x
            hyz += 4 * mu * z * y
    g = np.array([gx, gy, gz])
    h = np.array([[hxx, hxy, hxz], [hxy, hyy, hyz], [hxz, hyz, hzz]]) if hessian else None
    return v, g, h


def hamiltonian(model: ModelSpec, q, p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    return np.sum(p * p, axis=-1) / (2 * model.mass) + potential(model, q)


def _rhs(model: ModelSpec):
    f = model.dof
    m = model.mass

    def rhs(t, y):
        q, p = y[:f], y[f:2 * f]
        _, g, _ = potential_and_gradient(model, q, hessian=False)
        return np.concatenate([p / m, -g, [p @ p / m]])

    return rhs


@dataclass
class FullTrajectory:
    """Dense full-space solution; state layout (q, p, action)."""

    model: ModelSpec
    sol: object = field(repr=False)
    t_end: float
    energy: float
    t: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)

    def __call__(self, t):
        return self.sol(t)

    @property
    def action(self) -> float:
        return float(self.y[-1, -1])

    def state(self, t: float) -> PhaseState:
        f = self.model.dof
        y = self.sol(t)
        return PhaseState(y[:f], y[f:2 * f], t)


def _check_energy(model, y, e0, tol, where):
    f = model.dof
    e = hamiltonian(model, y[:f].T, y[f:2 * f].T)
    drift = np.max(np.abs(e - e0)) / max(abs(e0), 1e-300)
    if drift > tol:
        raise IntegrationError(f"relative energy drift {drift:.2e} exceeds {tol:.1e} ({where})")
    return drift


def integrate_full(model: ModelSpec, initial: PhaseState, T: float, tol: float = 1e-9,
                   rtol: float = DEFAULT_RTOL, t_eval=None) -> FullTrajectory:
    """Hamiltonian flow of H0 over [0, T] with DOP853 dense output.

    Raises IntegrationError when the solver fails or the relative energy
    drift exceeds ``tol``.
    """
    if not T > 0:
        raise ValueError("T must be positive")
    y0 = np.concatenate([initial.q, initial.p, [0.0]]).astype(float)
    e0 = float(hamiltonian(model, initial.q, initial.p))
    res = solve_ivp(_rhs(model), (0.0, T), y0, method="DOP853", rtol=rtol,
                    atol=rtol * 1e-2, dense_output=True)
    if res.status != 0:
        raise IntegrationError(f"integration failed at t={res.t[-1]:.6g}: {res.message}")
    _check_energy(model, res.y, e0, tol, "integrate_full")
    return FullTrajectory(model, res.sol, T, e0, res.t, res.y)


def _planar_rotation(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _line_mirror(psi: float) -> np.ndarray:
    nvec = np.array([-math.sin(psi), math.cos(psi), 0.0])
    return np.eye(3) - 2 * np.outer(nvec, nvec)


@dataclass(frozen=True, eq=False)
class FoldingScheme:
    """Wedge fundamental domain and the wall-crossing elements of a group.

    ``h_low`` / ``h_high`` are double-group indices of the elements that
    carry the domain onto its neighbour across the low / high wall.  For
    rotation groups h_low is the group inverse of h_high, so that a
    trajectory winding once around the axis accumulates exactly the
    lift of a 2 pi rotation.
    """

    group: FiniteGroup
    n: int
    mirrors: bool
    phi0: float
    alpha: float
    h_low: Optional[int]
    h_high: Optional[int]

    @classmethod
    def from_group(cls, group: FiniteGroup) -> "FoldingScheme":
        rot, mir = [], []
        z = np.array([0.0, 0.0, 1.0])
        for gi, ge in enumerate(group.geometric):
            m = ge.matrix
            if ge.proper:
                n_, th = axis_angle(m)
                if th == 0.0:
                    continue
                if not np.allclose(n_, z, atol=1e-9):
                    raise ValueError("folding supports rotations about z and vertical mirrors only")
                rot.append((th, gi))
            else:
                if not np.allclose(m[2], z, atol=1e-9) or not np.allclose(m[:, 2], z, atol=1e-9):
                    raise ValueError("folding supports rotations about z and vertical mirrors only")
                mir.append(gi)
        n = len(rot) + 1
        if mir and len(mir) != n:
            raise ValueError("group is not of C_nv type")
        if not mir:
            alpha = 2 * math.pi / n
            if n == 1:
                return cls(group, 1, False, 0.0, alpha, None, None)
            geo = _find_geo(group, _planar_rotation(alpha))
            hi = group.find(geo, 1)
            return cls(group, n, False, 0.0, alpha, group.inverse(hi), hi)
        alpha = math.pi / n
        # high wall: the first mirror line at or above the y axis
        lines = []
        for gi in mir:
            nvec = np.linalg.eigh(group.geometric[gi].matrix)[1][:, 0]
            psi = (math.atan2(nvec[1], nvec[0]) + math.pi / 2) % math.pi
            lines.append((psi if psi > 1e-12 else math.pi, gi))
        psi1 = min(ln for ln in lines if ln[0] >= math.pi / 2 - 1e-12)[0]
        phi0 = psi1 - alpha
        lo = group.find(_find_geo(group, _line_mirror(phi0)), 1)
        hi = group.find(_find_geo(group, _line_mirror(psi1)), 1)
        return cls(group, n, True, phi0, alpha, lo, hi)

    def wall_functions(self, q) -> tuple:
        """Signed inward distances to the low and high wall lines."""
        x, y = q[0], q[1]
        a0, a1 = self.phi0, self.phi0 + self.alpha
        return (-x * math.sin(a0) + y * math.cos(a0), x * math.sin(a1) - y * math.cos(a1))

    def contains(self, q, tol: float = 1e-9) -> bool:
        if self.n == 1 and not self.mirrors:
            return True
        lo, hi = self.wall_functions(q)
        if self.alpha < math.pi - 1e-12:
            return lo >= -tol and hi >= -tol
        return lo >= -tol

    def geo3(self, idx: int) -> np.ndarray:
        return self.group.geo_matrix(idx)

    def copy_element(self, q) -> int:
        """Double-group index of the element h with h^-1 q in the domain."""
        g = self.group
        if self.n == 1 and not self.mirrors:
            return g.identity_index
        theta = (math.atan2(q[1], q[0]) - self.phi0) % (2 * math.pi)
        k = int(theta // self.alpha)
        if not self.mirrors:
            return g.power(self.h_high, k)
        # copy k of 2n: rotations for even k, high-wall mirror composed for odd k
        rot = g.find(_find_geo(g, _planar_rotation(2 * self.alpha * (k // 2))), 1)
        return rot if k % 2 == 0 else g.multiply(rot, self.h_high)


def _find_geo(group: FiniteGroup, m: np.ndarray) -> int:
    for gi, ge in enumerate(group.geometric):
        if np.allclose(ge.matrix, m, atol=1e-9):
            return gi
    raise ValueError("required symmetry element is missing from the group")


def _apply(m3: np.ndarray, v: np.ndarray) -> np.ndarray:
    f = v.shape[-1]
    return v @ m3[:f, :f].T


def fold_state(group, q, p):
    """Map (q, p) into the fundamental domain; returns (q_FD, p_FD, h)."""
    scheme = group if isinstance(group, FoldingScheme) else FoldingScheme.from_group(group)
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    h = scheme.copy_element(q)
    minv = scheme.geo3(h).T
    return _apply(minv, q), _apply(minv, p), h


@dataclass
class Segment:
    """Piece of a folded trajectory between two wall crossings.

    ``frame`` is the double-group index of the copy the segment occupies
    when unfolded (product of crossings so far, in order).
    """

    t0: float
    t1: float
    sol: object = field(repr=False)
    frame: int
    t: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)


@dataclass
class FoldedTrajectory:
    model: ModelSpec
    scheme: FoldingScheme = field(repr=False)
    segments: list = field(repr=False)
    crossings: list
    accumulated_g: int
    energy: float
    action: float
    walls: list = field(default_factory=list)

    @property
    def group(self) -> FiniteGroup:
        return self.scheme.group

    @property
    def T(self) -> float:
        return self.segments[-1].t1

    def segment_at(self, t: float) -> Segment:
        for seg in self.segments:
            if t <= seg.t1:
                return seg
        return self.segments[-1]

    def sample(self, times) -> np.ndarray:
        """FD states (q, p) at the given times, shape (len(times), 2f)."""
        f = self.model.dof
        out = []
        for t in np.atleast_1d(times):
            out.append(self.segment_at(t).sol(t)[:2 * f])
        return np.array(out)

    def unfolded(self, times) -> np.ndarray:
        """Full-space states obtained by applying each segment's frame."""
        f = self.model.dof
        out = []
        for t in np.atleast_1d(times):
            seg = self.segment_at(t)
            m = self.scheme.geo3(seg.frame)
            y = seg.sol(t)
            out.append(np.concatenate([_apply(m, y[:f]), _apply(m, y[f:2 * f])]))
        return np.array(out)

    def to_csv(self, times) -> str:
        """CSV dump: t, q..., p..., segment_index, crossing_flags (1 where a crossing ends the segment)."""
        f = self.model.dof
        names = "xyz"[:f]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"q{c}" for c in names] + [f"p{c}" for c in names] + ["segment_index", "crossing_flags"])
        bounds = [seg.t1 for seg in self.segments]
        for t in np.atleast_1d(times):
            k = next((i for i, t1 in enumerate(bounds) if t <= t1), len(bounds) - 1)
            y = self.segments[k].sol(t)[:2 * f]
            flag = int(k < len(self.crossings) and abs(t - bounds[k]) < 1e-12)
            w.writerow([f"{t:.12g}"] + [f"{v:.12g}" for v in y] + [k, flag])
        return buf.getvalue()

    def final_state(self) -> PhaseState:
        f = self.model.dof
        y = self.segments[-1].y[:, -1]
        return PhaseState(y[:f].copy(), y[f:2 * f].copy(), self.T)


def integrate_folded(model: ModelSpec, group, initial: PhaseState, T: float,
                     tol: float = 1e-9, rtol: float = DEFAULT_RTOL,
                     max_crossings: int = 100000, max_retries: int = 3) -> FoldedTrajectory:
    """Integrate inside the fundamental domain, refolding at each wall crossing.

    Crossing times are localized by the solver's event root finder.  A
    crossing of the high wall maps the state back by h_high^-1 and
    appends h_high; the low wall likewise.  The accumulated element is the
    ordered product h_1 h_2 ... h_n, which gives d_fold = U(g)^dagger d_full
    for any (also non-abelian) group.
    """
    scheme = group if isinstance(group, FoldingScheme) else FoldingScheme.from_group(group)
    g = scheme.group
    f = model.dof
    if not T > 0:
        raise ValueError("T must be positive")
    if not scheme.contains(initial.q):
        raise ValueError("initial point lies outside the fundamental domain")
    e0 = float(hamiltonian(model, initial.q, initial.p))
    rhs = _rhs(model)
    has_walls = not (scheme.n == 1 and not scheme.mirrors)
    single_line = has_walls and scheme.alpha > math.pi - 1e-12

    def ev_low(t, y):
        return scheme.wall_functions(y)[0]

    def ev_high(t, y):
        return scheme.wall_functions(y)[1]

    for ev in (ev_low, ev_high):
        ev.terminal = True
        ev.direction = -1
    events = [] if not has_walls else ([ev_low] if single_line else [ev_low, ev_high])

    max_step = np.inf
    for attempt in range(max_retries + 1):
        try:
            return _folded_pass(model, scheme, g, f, initial, T, tol, rtol, e0, rhs,
                                events, single_line, max_crossings, max_step)
        except GrazingError:
            if attempt == max_retries:
                raise
            max_step = (T / 200) / 2 ** attempt
    raise AssertionError("unreachable")


def _folded_pass(model, scheme, g, f, initial, T, tol, rtol, e0, rhs, events,
                 single_line, max_crossings, max_step):
    y = np.concatenate([initial.q, initial.p, [0.0]]).astype(float)
    t = 0.0
    frame = g.identity_index
    segments, crossings, walls = [], [], []
    while True:
        res = solve_ivp(rhs, (t, T), y, method="DOP853", rtol=rtol, atol=rtol * 1e-2,
                        dense_output=True, events=events or None, max_step=max_step)
        if res.status == -1:
            raise IntegrationError(f"integration failed at t={res.t[-1]:.6g}: {res.message}")
        if events:
            lo, hi = scheme.wall_functions(res.y[:f])
            worst = min(np.min(lo), np.min(hi)) if not single_line else np.min(lo)
            if worst < -1e-7:
                raise GrazingError(f"trajectory left the domain unnoticed near t={t:.6g}")
        segments.append(Segment(t, float(res.t[-1]), res.sol, frame, res.t, res.y))
        if res.status == 0:
            break
        t = float(res.t[-1])
        y = res.y[:, -1].copy()
        if single_line:
            a0 = scheme.phi0
            along = y[0] * math.cos(a0) + y[1] * math.sin(a0)
            wall = "low" if along >= 0 else "high"
        else:
            wall = "low" if len(res.t_events[0]) else "high"
        h = scheme.h_low if wall == "low" else scheme.h_high
        minv = scheme.geo3(h).T
        y[:f] = _apply(minv, y[:f])
        y[f:2 * f] = _apply(minv, y[f:2 * f])
        # keep the refolded point on the closed side of the wall it sits on
        crossings.append(h)
        walls.append(wall)
        frame = g.multiply(frame, h)
        if len(crossings) > max_crossings:
            raise IntegrationError("too many wall crossings")
        if T - t < 1e-14:
            break
    yall = np.concatenate([s.y for s in segments], axis=1)
    _check_energy(model, yall, e0, tol, "integrate_folded")
    return FoldedTrajectory(model, scheme, segments, crossings, frame, e0,
                            float(segments[-1].y[-1, -1]), walls)
