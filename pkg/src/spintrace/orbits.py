"""Periodic orbits of the fundamental-domain dynamics.

Orbits are found on Poincare sections {q.u = c} with u the wedge
bisector (in-plane) and crossing direction p.u > 0.  Seeds come from
close recurrences of long trajectories; each seed is refined by damped
Newton on P^k(z) - z, with the Jacobian taken from the variational
equations.  Lines rather than rays are used as sections so that orbits
through the axis are also caught.

Monodromy matrices are those of the fundamental-domain orbit (tangent
vectors are refolded with the wall elements).  The Maslov index is the
number of conjugate points of the unfolded orbit at fixed energy plus
the number of negative eigenvalues of the second-variation matrix

    W = M22 M12^-1 + M12^-1 M11 - M12^-1 - (M12^-1)^T

built from the reduced monodromy in orbit-local transverse coordinates.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import minimize_scalar

from .dynamics import FoldingScheme, ModelSpec, PhaseState, potential, potential_and_gradient
from .grouprep import FiniteGroup

log = logging.getLogger(__name__)

__all__ = [
    "OrbitError",
    "Section",
    "SearchConfig",
    "PeriodicOrbit",
    "FlowResult",
    "fd_flow",
    "radial_extent",
    "find_orbits",
    "refine_orbit",
    "monodromy_and_maslov",
    "decorate_orbit",
    "repeat_orbit",
    "orbit_record",
    "orbit_from_record",
]

MARGINAL_TOL = 1e-8
RTOL = 1e-12


class OrbitError(RuntimeError):
    """Orbit refinement or monodromy evaluation failed."""


@dataclass(frozen=True)
class Section:
    """Poincare section {q.u = c} crossed with p.u > 0.

    ``basis`` has u as its first row, followed by f-1 orthonormal
    directions that supply the section coordinates (q.w, p.w).
    """

    basis: np.ndarray
    c: float

    @property
    def u(self) -> np.ndarray:
        return self.basis[0]

    @property
    def w(self) -> np.ndarray:
        return self.basis[1:]

    @classmethod
    def through(cls, u, c: float, f: int) -> "Section":
        u = np.asarray(u, dtype=float)[:f]
        u = u / np.linalg.norm(u)
        # complete to an orthonormal basis with u first
        q, _ = np.linalg.qr(np.column_stack([u, np.eye(f)]))
        b = q[:, :f].T
        b[0] = u
        if f == 2:
            b[1] = np.array([-u[1], u[0]])
        return cls(b, float(c))

    def value(self, y, f: int) -> float:
        return float(self.u @ y[:f] - self.c)

    def coords(self, y, f: int) -> np.ndarray:
        return np.concatenate([self.w @ y[:f], self.w @ y[f:2 * f]])

    def lift(self, model: ModelSpec, E: float, z) -> Optional[np.ndarray]:
        """Phase-space point on the section at energy E, or None if forbidden."""
        f = model.dof
        k = f - 1
        q = self.c * self.u + self.w.T @ z[:k]
        pw = z[k:]
        t = 2 * model.mass * (E - float(potential(model, q))) - pw @ pw
        if t <= 0:
            return None
        p = math.sqrt(t) * self.u + self.w.T @ pw
        return np.concatenate([q, p])

    def lift_jacobian(self, model: ModelSpec, x) -> np.ndarray:
        """d(q, p)/d(z) of the energy-shell embedding, shape (2f, 2f-2)."""
        f = model.dof
        k = f - 1
        q, p = x[:f], x[f:]
        pu = self.u @ p
        _, g, _ = potential_and_gradient(model, q, hessian=False)
        j = np.zeros((2 * f, 2 * k))
        j[:f, :k] = self.w.T
        j[f:, :k] = np.outer(self.u, -model.mass * (self.w @ g) / pu)
        j[f:, k:] = self.w.T + np.outer(self.u, -(self.w @ p) / pu)
        return j


@dataclass
class FlowResult:
    t: float
    y: np.ndarray
    crossings: list
    frame: int
    phi: Optional[np.ndarray] = None
    segments: list = field(default_factory=list, repr=False)
    hits: list = field(default_factory=list, repr=False)


def _rhs(model: ModelSpec, variational: bool):
    f = model.dof
    m = model.mass
    n = 2 * f

    def rhs(t, y):
        q, p = y[:f], y[f:n]
        _, g, h = potential_and_gradient(model, q, hessian=variational)
        out = [p / m, -g, [p @ p / m]]
        if variational:
            phi = y[n + 1:].reshape(n, n)
            dphi = np.empty_like(phi)
            dphi[:f] = phi[f:] / m
            dphi[f:] = -h @ phi[:f]
            out.append(dphi.ravel())
        return np.concatenate(out)

    return rhs


def fd_flow(model: ModelSpec, scheme: FoldingScheme, x0, t_max: float, *,
            section: Optional[Section] = None, n_returns: int = 0,
            variational: bool = False, keep_segments: bool = False,
            rtol: float = RTOL) -> FlowResult:
    """Flow in the fundamental domain with refolding at the walls.

    Stops at the ``n_returns``-th section crossing (if requested) or at
    ``t_max``.  The state layout is (q, p, action[, Phi]); Phi is the
    fundamental-domain tangent map, refolded like the state at walls.
    Section hits at the starting time are ignored.
    """
    f = model.dof
    n = 2 * f
    g = scheme.group
    y = np.concatenate([np.asarray(x0, dtype=float)[:n], [0.0]])
    if variational:
        y = np.concatenate([y, np.eye(n).ravel()])
    rhs = _rhs(model, variational)
    has_walls = not (scheme.n == 1 and not scheme.mirrors)
    single = has_walls and scheme.alpha > math.pi - 1e-12

    def ev_low(t, s):
        return scheme.wall_functions(s)[0]

    def ev_high(t, s):
        return scheme.wall_functions(s)[1]

    ev_low.terminal = ev_high.terminal = True
    ev_low.direction = ev_high.direction = -1
    walls = [] if not has_walls else ([ev_low] if single else [ev_low, ev_high])
    events = list(walls)
    if section is not None:
        def ev_sec(t, s):
            return section.u @ s[:f] - section.c
        ev_sec.terminal = False
        ev_sec.direction = 1
        events.append(ev_sec)
    t = 0.0
    frame = g.identity_index
    crossings, segments, hits = [], [], []
    while True:
        res = solve_ivp(rhs, (t, t_max), y, method="DOP853", rtol=rtol, atol=rtol * 1e-2,
                        events=events or None, dense_output=keep_segments)
        if res.status == -1:
            raise OrbitError(f"integration failed at t={res.t[-1]:.6g}: {res.message}")
        if keep_segments:
            segments.append((t, float(res.t[-1]), res.sol, frame))
        if section is not None:
            for te, ye in zip(res.t_events[-1], res.y_events[-1]):
                if te < 1e-9:
                    continue
                hits.append((float(te), ye.copy(), frame, len(crossings)))
                if n_returns and len(hits) == n_returns:
                    return _flow_result(te, ye, crossings, frame, variational, n, segments, hits)
        if res.status == 0:
            break
        t = float(res.t[-1])
        y = res.y[:, -1].copy()
        if single:
            a0 = scheme.phi0
            wall = "low" if y[0] * math.cos(a0) + y[1] * math.sin(a0) >= 0 else "high"
        else:
            wall = "low" if len(res.t_events[0]) else "high"
        h = scheme.h_low if wall == "low" else scheme.h_high
        r = scheme.geo3(h)[:f, :f].T
        y[:f] = r @ y[:f]
        y[f:n] = r @ y[f:n]
        if variational:
            phi = y[n + 1:].reshape(n, n)
            phi = np.vstack([r @ phi[:f], r @ phi[f:]])
            y[n + 1:] = phi.ravel()
        crossings.append(h)
        frame = g.multiply(frame, h)
        if t >= t_max - 1e-14:
            break
    if n_returns:
        raise OrbitError(f"only {len(hits)} of {n_returns} section returns before t={t_max:g}")
    return _flow_result(res.t[-1], res.y[:, -1], crossings, frame, variational, n, segments, hits)


def _flow_result(t, y, crossings, frame, variational, n, segments, hits):
    phi = y[n + 1:].reshape(n, n).copy() if variational else None
    return FlowResult(float(t), np.asarray(y[:n + 1]).copy(), list(crossings), frame, phi, segments, hits)


def radial_extent(model: ModelSpec, E: float, direction, r_cap: float = 1e3) -> float:
    """Distance from the origin to the first point with V = E along ``direction``."""
    d = np.asarray(direction, dtype=float)[:model.dof]
    d = d / np.linalg.norm(d)
    if potential(model, np.zeros(model.dof)) >= E:
        return 0.0
    # march outward in small relative steps so a saddle is not jumped over
    lo, hi = 0.0, 1e-3
    while potential(model, hi * d) < E:
        lo, hi = hi, hi * 1.05 + 1e-3
        if hi > r_cap:
            return math.inf
    for _ in range(80):
        mid = 0.5 * (lo + hi)
        if potential(model, mid * d) < E:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@dataclass
class SearchConfig:
    """Orbit-search settings.

    section_fractions
        offsets c of the section lines as fractions of the energy-shell
        extent along the wedge bisector.
    """

    section_fractions: tuple = (0.25, 0.5)
    n_trajectories: int = 4
    seed_time: float = 400.0
    max_returns: int = 6
    recurrence_tol: float = 0.05
    max_seeds_per_k: int = 40
    grid_seeds: int = 0
    newton_tol: float = 1e-11
    newton_maxiter: int = 40
    seed: int = 12345

    @classmethod
    def from_dict(cls, d: dict) -> "SearchConfig":
        kw = {k: d[k] for k in cls.__dataclass_fields__ if k in d}
        if "section_fractions" in kw:
            kw["section_fractions"] = tuple(kw["section_fractions"])
        return cls(**kw)


@dataclass
class PeriodicOrbit:
    """Periodic orbit of the fundamental-domain flow at energy E."""

    energy: float
    initial: np.ndarray
    period: float
    primitive_period: float
    repetition: int
    action: float
    g: int
    g_label: str
    n_returns: int = 1
    monodromy: Optional[np.ndarray] = field(default=None, repr=False)
    maslov: Optional[int] = None
    det_m_minus_i: Optional[float] = None
    marginal: bool = False
    d: Optional[np.ndarray] = field(default=None, repr=False)
    amplitude: Optional[complex] = None
    label: str = ""
    crossings: list = field(default_factory=list, repr=False)

    @property
    def tr_d(self) -> complex:
        return complex(np.trace(self.d)) if self.d is not None else complex("nan")

    def state(self, f: int) -> PhaseState:
        return PhaseState(self.initial[:f].copy(), self.initial[f:2 * f].copy(), 0.0)

    def recompute_amplitude(self) -> complex:
        return complex(self.primitive_period * np.exp(-0.5j * math.pi * self.maslov)
                       / math.sqrt(abs(self.det_m_minus_i)))


def _flow_vector(model: ModelSpec, x) -> np.ndarray:
    f = model.dof
    _, g, _ = potential_and_gradient(model, x[:f], hessian=False)
    return np.concatenate([x[f:2 * f] / model.mass, -g])


def _poincare_jacobian(model, section: Section, x0, xk, phi) -> np.ndarray:
    f = model.dof
    fv = _flow_vector(model, xk)
    grad = np.concatenate([section.u, np.zeros(f)])
    proj = np.eye(2 * f) - np.outer(fv, grad) / (grad @ fv)
    pi = np.zeros((2 * f - 2, 2 * f))
    pi[:f - 1, :f] = section.w
    pi[f - 1:, f:] = section.w
    return pi @ proj @ phi @ section.lift_jacobian(model, x0)


def refine_orbit(model: ModelSpec, scheme: FoldingScheme, E: float, section: Section,
                 z0, k: int, t_guess: float, tol: float = 1e-11, maxiter: int = 40):
    """Damped Newton for a fixed point of the k-th return map.

    Returns (x0, FlowResult of the k returns, Poincare Jacobian) or None.
    """
    z = np.asarray(z0, dtype=float).copy()
    t_max = 1.5 * t_guess + 5.0
    scale = max(1.0, float(np.max(np.abs(z))))

    def evaluate(zz):
        x = section.lift(model, E, zz)
        if x is None:
            return None
        try:
            res = fd_flow(model, scheme, x, t_max, section=section, n_returns=k, variational=True)
        except OrbitError:
            return None
        return x, res, section.coords(res.y, model.dof) - zz

    cur = evaluate(z)
    if cur is None:
        return None
    for _ in range(maxiter):
        x, res, resid = cur
        err = float(np.max(np.abs(resid)))
        if err < tol:
            dp = _poincare_jacobian(model, section, x, res.y[:2 * model.dof], res.phi)
            return x, res, dp
        t_max = 1.5 * res.t + 5.0
        dp = _poincare_jacobian(model, section, x, res.y[:2 * model.dof], res.phi)
        try:
            step = np.linalg.solve(dp - np.eye(len(z)), -resid)
        except np.linalg.LinAlgError:
            return None
        nrm = float(np.max(np.abs(step)))
        if nrm > 0.1 * scale:
            step *= 0.1 * scale / nrm
        lam = 1.0
        for _ls in range(8):
            trial = evaluate(z + lam * step)
            if trial is not None and np.max(np.abs(trial[2])) < max(err, 1e-300) * (1 - 1e-4 * lam) + 1e-15:
                break
            lam *= 0.5
        else:
            return None
        z = z + lam * step
        cur = trial
    return None


def _local_frame(model: ModelSpec, x0):
    """Orthonormal directions perpendicular to p0 in configuration space."""
    f = model.dof
    p = x0[f:2 * f]
    ph = p / np.linalg.norm(p)
    q, _ = np.linalg.qr(np.column_stack([ph, np.eye(f)]))
    return ph, q[:, 1:f]


def _reduced_monodromy(model, x0, phi) -> np.ndarray:
    """Transverse energy-shell monodromy in orbit-local canonical coordinates."""
    f = model.dof
    ph, perp = _local_frame(model, x0)
    pn = np.linalg.norm(x0[f:2 * f])
    _, g, _ = potential_and_gradient(model, x0[:f], hessian=False)
    k = f - 1
    emb = np.zeros((2 * f, 2 * k))
    emb[:f, :k] = perp
    emb[f:, :k] = np.outer(ph, -model.mass * (perp.T @ g) / pn)
    emb[f:, k:] = perp
    fv = _flow_vector(model, x0)
    grad = np.concatenate([ph, np.zeros(f)])
    proj = np.eye(2 * f) - np.outer(fv, grad) / (grad @ fv)
    pi = np.zeros((2 * k, 2 * f))
    pi[:k, :f] = perp.T
    pi[k:, f:] = perp.T
    return pi @ proj @ phi @ emb


def _conjugate_count(model, scheme, x0, flow: FlowResult, T: float) -> int:
    f = model.dof
    _, perp = _local_frame(model, x0)
    n_samples = int(max(4000, 400 * T))
    ts = np.linspace(0.0, T, n_samples + 1)[1:]
    ts = np.concatenate([[min(1e-6 * T, ts[0] / 10)], ts[:-1], [T * (1 - 1e-9)]])
    vals = []
    for t0, t1, sol, frame in flow.segments:
        sel = ts[(ts >= t0) & (ts <= t1)]
        if sel.size == 0:
            continue
        y = np.asarray(sol(sel))
        sgn = np.sign(np.linalg.det(scheme.geo3(frame)[:f, :f]))
        for j in range(sel.size):
            col = y[:, j]
            phi = col[2 * f + 1:].reshape(2 * f, 2 * f)
            mqp = phi[:f, f:]
            qdot = col[f:2 * f] / model.mass
            vals.append((sel[j], sgn * np.linalg.det(np.column_stack([mqp @ perp, qdot]))))
    vals.sort()
    d = np.array([v for _, v in vals])
    s = np.sign(d[np.abs(d) > 0])
    return int(np.sum(s[1:] != s[:-1]))


def monodromy_and_maslov(model: ModelSpec, scheme: FoldingScheme, x0, T: float, shift_tries: int = 4):
    """(M_red, maslov, det(M - 1)) for the orbit through x0 with period T.

    M_red is the transverse energy-shell monodromy of the fundamental-domain
    orbit.  If M12 is singular at x0 the start point is shifted along the
    orbit; the index is invariant under such shifts.
    """
    f = model.dof
    x = np.asarray(x0, dtype=float)[:2 * f]
    for attempt in range(shift_tries + 1):
        flow = fd_flow(model, scheme, x, T, variational=True, keep_segments=True)
        m = _reduced_monodromy(model, x, flow.phi)
        k = f - 1
        m11, m12, m22 = m[:k, :k], m[:k, k:], m[k:, k:]
        if abs(np.linalg.det(m12)) > 1e-9:
            inv = np.linalg.inv(m12)
            w = m22 @ inv + inv @ m11 - inv - inv.T
            w = 0.5 * (w + w.T)
            neg = int(np.sum(np.linalg.eigvalsh(w) < 0))
            nu = _conjugate_count(model, scheme, x, flow, T)
            det = float(np.linalg.det(m - np.eye(2 * k)))
            return m, nu + neg, det
        shift = fd_flow(model, scheme, x, T * (0.137 + 0.1 * attempt))
        x = shift.y[:2 * f]
    raise OrbitError("transverse block M12 singular at all trial start points")


def _bisector(scheme: FoldingScheme, f: int) -> np.ndarray:
    a = scheme.phi0 + 0.5 * scheme.alpha if (scheme.n > 1 or scheme.mirrors) else 0.0
    u = np.zeros(f)
    u[0], u[1] = math.cos(a), math.sin(a)
    return u


def default_sections(model: ModelSpec, scheme: FoldingScheme, E: float, fractions) -> list:
    f = model.dof
    u = _bisector(scheme, f)
    ext = radial_extent(model, E, u)
    if not math.isfinite(ext):
        raise OrbitError("energy shell is unbounded along the section direction")
    return [Section.through(u, fr * ext, f) for fr in fractions]


def _random_fd_point(model, scheme, E, rng, r_box):
    f = model.dof
    for _ in range(10000):
        q = rng.uniform(-r_box, r_box, size=f)
        if not scheme.contains(q, tol=0.0) or float(potential(model, q)) >= E:
            continue
        if np.linalg.norm(q[:2]) > r_box:
            continue
        d = rng.normal(size=f)
        d /= np.linalg.norm(d)
        p = math.sqrt(2 * model.mass * (E - float(potential(model, q)))) * d
        return np.concatenate([q, p])
    raise OrbitError("could not sample an initial point inside the energy shell")


def _orbit_samples(model, scheme, orbit: PeriodicOrbit, per_unit: int = 400):
    flow = fd_flow(model, scheme, orbit.initial, orbit.period, keep_segments=True)
    n = int(max(200, per_unit * orbit.period))
    ts = np.linspace(0.0, orbit.period, n, endpoint=False)
    out = []
    for t0, t1, sol, _ in flow.segments:
        sel = ts[(ts >= t0) & (ts < t1)]
        if sel.size:
            out.append((sel, np.asarray(sol(sel))[:2 * model.dof].T, sol, t0, t1))
    return out


def _distance_to_orbit(samples, x) -> float:
    best = (math.inf, None)
    for sel, ys, sol, t0, t1 in samples:
        d = np.linalg.norm(ys - x, axis=1)
        j = int(np.argmin(d))
        if d[j] < best[0]:
            best = (float(d[j]), (sel[j], sol, t0, t1, len(x)))
    dist, info = best
    if info is None or dist > 0.05:
        return dist
    tj, sol, t0, t1, n = info
    lo, hi = max(t0, tj - 0.02), min(t1, tj + 0.02)
    res = minimize_scalar(lambda t: float(np.linalg.norm(np.asarray(sol(t))[:n] - x)),
                          bounds=(lo, hi), method="bounded", options={"xatol": 1e-13})
    return min(dist, float(res.fun))


def find_orbits(model: ModelSpec, group, E: float, T_max: float,
                config: Optional[SearchConfig] = None, ctx=None) -> list:
    """Primitive periodic orbits up to T_max and their repetitions.

    Orbits are decorated with g_p, d_p and A_p when a SpinContext ``ctx``
    is given.  The result is sorted by (action, g label); marginal orbits
    are kept but flagged.
    """
    config = config or SearchConfig()
    scheme = group if isinstance(group, FoldingScheme) else FoldingScheme.from_group(group)
    g = scheme.group
    f = model.dof
    if E <= float(potential(model, np.zeros(f))):
        raise OrbitError("energy is not above the potential minimum")
    rng = np.random.default_rng(config.seed)
    sections = default_sections(model, scheme, E, config.section_fractions)
    r_box = max(radial_extent(model, E, np.eye(f)[i] * s) for i in range(min(f, 2)) for s in (1, -1))
    if not math.isfinite(r_box):
        r_box = max(sec.c for sec in sections) * 4
    pscale = math.sqrt(2 * model.mass * E)
    zscale = np.concatenate([np.full(f - 1, r_box), np.full(f - 1, pscale)])

    seeds = []
    for si, sec in enumerate(sections):
        hits = []
        for _ in range(config.n_trajectories):
            x0 = _random_fd_point(model, scheme, E, rng, r_box)
            fl = fd_flow(model, scheme, x0, config.seed_time, section=sec)
            hits.append([(t, sec.coords(y, f)) for t, y, _, _ in fl.hits])
        for k in range(1, config.max_returns + 1):
            cands = []
            for hl in hits:
                for i in range(len(hl) - k):
                    dt = hl[i + k][0] - hl[i][0]
                    if dt > T_max:
                        continue
                    dz = float(np.max(np.abs((hl[i + k][1] - hl[i][1]) / zscale)))
                    if dz < config.recurrence_tol:
                        cands.append((dz, hl[i][1], dt))
            cands.sort(key=lambda c: c[0])
            chosen = []
            for dz, z, dt in cands:
                if all(np.max(np.abs((z - c[1]) / zscale)) > 0.02 for c in chosen):
                    chosen.append((dz, z, dt))
                if len(chosen) >= config.max_seeds_per_k:
                    break
            seeds += [(si, k, z, dt) for _, z, dt in chosen]
        if config.grid_seeds:
            n = config.grid_seeds
            for a in np.linspace(-1, 1, n + 2)[1:-1]:
                for b in np.linspace(-1, 1, n + 2)[1:-1]:
                    z = np.concatenate([np.full(f - 1, a * r_box), np.full(f - 1, b * pscale)])
                    if sec.lift(model, E, z) is not None:
                        for k in (1, 2):
                            seeds.append((si, k, z, 2 * math.pi * k))

    primitives, failures = [], 0
    samples_cache = []
    for si, k, z, dt in seeds:
        sec = sections[si]
        out = refine_orbit(model, scheme, E, sec, z, k, dt, config.newton_tol, config.newton_maxiter)
        if out is None:
            failures += 1
            continue
        x0, res, _ = out
        # reduce to the primitive number of returns
        z0 = sec.coords(x0, f)
        m_prim = k
        for j, (tj, yj, _, _) in enumerate(res.hits[:-1], start=1):
            if k % j == 0 and np.max(np.abs(sec.coords(yj, f) - z0)) < 1e-7:
                m_prim = j
                break
        if m_prim != k:
            res = fd_flow(model, scheme, x0, 1.5 * res.t + 5, section=sec, n_returns=m_prim)
        if res.t > T_max:
            continue
        cand = PeriodicOrbit(E, x0, res.t, res.t, 1, float(res.y[2 * f]), res.frame,
                             g.elements[res.frame].label, m_prim, crossings=res.crossings)
        dup = False
        for orb, smp in zip(primitives, samples_cache):
            if abs(orb.action - cand.action) < 1e-6 and _same_geometry(g, orb.g, cand.g):
                if _distance_to_orbit(smp, x0) < 1e-6:
                    dup = True
                    break
        if dup:
            continue
        primitives.append(cand)
        samples_cache.append(_orbit_samples(model, scheme, cand))
    # H0 is even in p, so every orbit has a time-reversed partner starting at (q0, -p0)
    for orb in list(primitives):
        rev = _time_reversed(model, scheme, orb)
        if rev is None:
            continue
        if any(abs(o.action - rev.action) < 1e-6 and _same_geometry(g, o.g, rev.g)
               and _distance_to_orbit(smp, rev.initial) < 1e-6
               for o, smp in zip(primitives, samples_cache)):
            continue
        primitives.append(rev)
        samples_cache.append(_orbit_samples(model, scheme, rev))
    log.info("orbit search: %d seeds, %d Newton failures, %d primitives",
             len(seeds), failures, len(primitives))

    result = []
    for orb in primitives:
        m, mu, det = monodromy_and_maslov(model, scheme, orb.initial, orb.period)
        orb.monodromy, orb.maslov, orb.det_m_minus_i = m, mu, det
        orb.marginal = abs(det) < MARGINAL_TOL
        if orb.marginal:
            log.warning("marginal orbit excluded from sums: T=%.6g |det(M-1)|=%.2e", orb.period, abs(det))
        if ctx is not None:
            orb = decorate_orbit(model, scheme, ctx, orb)
        result.append(orb)
        r = 2
        while r * orb.period <= T_max:
            result.append(repeat_orbit(model, scheme, orb, r))
            r += 1
    result.sort(key=lambda o: (round(o.action, 9), o.g_label, o.repetition))
    # label primitives in sorted order; repetitions carry their primitive's label
    labels = {}
    for o in result:
        if o.repetition == 1:
            labels[_okey(o)] = f"p{len(labels)}"
    for o in result:
        base = labels[_okey(o)]
        o.label = base if o.repetition == 1 else f"{base}^{o.repetition}"
    return result


def _same_geometry(group: FiniteGroup, a: int, b: int) -> bool:
    # an orbit through the symmetry axis gets e or ebar depending on which side the
    # corner is passed; chi(g) tr(d) is the same for both, so compare geometric parts only
    return group.elements[a].geo == group.elements[b].geo


def _time_reversed(model: ModelSpec, scheme: FoldingScheme, orbit: PeriodicOrbit) -> Optional[PeriodicOrbit]:
    f = model.dof
    x_rev = np.concatenate([orbit.initial[:f], -orbit.initial[f:2 * f]])
    res = fd_flow(model, scheme, x_rev, orbit.period)
    scale = max(1.0, float(np.max(np.abs(x_rev))))
    if np.max(np.abs(res.y[:2 * f] - x_rev)) > 1e-6 * scale:
        log.warning("time-reversed partner of T=%.6g does not close", orbit.period)
        return None
    g = scheme.group
    return PeriodicOrbit(orbit.energy, x_rev, orbit.period, orbit.period, 1, float(res.y[2 * f]), res.frame,
                         g.elements[res.frame].label, orbit.n_returns, crossings=res.crossings)


def _okey(o: PeriodicOrbit):
    return tuple(np.round(o.initial, 9))


def repeat_orbit(model: ModelSpec, scheme: FoldingScheme, orbit: PeriodicOrbit, r: int) -> PeriodicOrbit:
    """r-th repetition: S, T scaled, M = M1^r, g = g1^r, d = d1^r, Maslov recounted."""
    g = scheme.group
    m, mu, det = monodromy_and_maslov(model, scheme, orbit.initial, r * orbit.primitive_period)
    m_pow = np.linalg.matrix_power(orbit.monodromy, r)
    if np.max(np.abs(m - m_pow)) > 1e-5 * max(1.0, np.max(np.abs(m_pow))):
        log.warning("repeated monodromy differs from M1^r by %.2e", np.max(np.abs(m - m_pow)))
    gr = g.power(orbit.g, r)
    out = replace(orbit, period=r * orbit.primitive_period, repetition=r, action=r * orbit.action,
                  g=gr, g_label=g.elements[gr].label, monodromy=m_pow, maslov=mu,
                  det_m_minus_i=float(np.linalg.det(m_pow - np.eye(len(m_pow)))),
                  crossings=orbit.crossings * r)
    out.marginal = abs(out.det_m_minus_i) < MARGINAL_TOL
    if orbit.d is not None:
        out.d = np.linalg.matrix_power(orbit.d, r)
        out.amplitude = None if out.marginal else out.recompute_amplitude()
    return out


def decorate_orbit(model: ModelSpec, group, ctx, orbit: PeriodicOrbit) -> PeriodicOrbit:
    """Fill g_p (double-group product of crossings), d_p and A_p."""
    from .dynamics import integrate_folded
    from .spintransport import transport_folded

    scheme = group if isinstance(group, FoldingScheme) else FoldingScheme.from_group(group)
    f = model.dof
    if orbit.repetition > 1:
        raise ValueError("decorate primitives; repetitions derive from them")
    folded = integrate_folded(model, scheme, orbit.state(f), orbit.period)
    if folded.accumulated_g != orbit.g:
        raise OrbitError("group element from the folded replay disagrees with the search")
    d = transport_folded(model, folded, ctx).d
    out = replace(orbit, d=d)
    out.amplitude = None if out.marginal else out.recompute_amplitude()
    return out


def orbit_record(orbit: PeriodicOrbit) -> dict:
    """JSON-serializable record for the orbit database."""
    amp = orbit.amplitude if orbit.amplitude is not None else complex("nan")
    trd = orbit.tr_d
    rec = {
        "label": orbit.label, "E": orbit.energy, "T": orbit.period,
        "T_prim": orbit.primitive_period, "r": orbit.repetition, "action": orbit.action,
        "maslov": orbit.maslov, "detM_minus_I": orbit.det_m_minus_i, "g_label": orbit.g_label,
        "tr_d_re": trd.real, "tr_d_im": trd.imag, "A_re": amp.real, "A_im": amp.imag,
        "initial_state": [float(v) for v in orbit.initial],
        "marginal": bool(orbit.marginal), "n_returns": orbit.n_returns,
        "monodromy": None if orbit.monodromy is None else orbit.monodromy.tolist(),
    }
    if orbit.d is not None:
        rec["d_re"] = orbit.d.real.tolist()
        rec["d_im"] = orbit.d.imag.tolist()
    return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in rec.items()}


def orbit_from_record(rec: dict, group: FiniteGroup) -> PeriodicOrbit:
    g = group.index_of_label(rec["g_label"])
    d = None
    if rec.get("d_re") is not None:
        d = np.array(rec["d_re"]) + 1j * np.array(rec["d_im"])
    amp = None if rec.get("A_re") is None else complex(rec["A_re"], rec["A_im"])
    mono = None if rec.get("monodromy") is None else np.array(rec["monodromy"])
    return PeriodicOrbit(rec["E"], np.array(rec["initial_state"]), rec["T"], rec["T_prim"], rec["r"],
                         rec["action"], g, rec["g_label"], rec.get("n_returns", 1), mono,
                         rec["maslov"], rec["detM_minus_I"], bool(rec.get("marginal", False)),
                         d, amp, rec["label"])
