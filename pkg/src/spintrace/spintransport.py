"""Spin precession along classical trajectories.

The spin factor solves  d' = -(i/2) S.C(q(t), p(t)) d,  d(0) = 1,
with S the spin matrices at spin two_s/2 (hbar = 1) and C the Weyl
symbol of the coupling.  Note the factor 1/2 in the generator.

Integration uses a fourth-order Magnus scheme on a uniform grid (two
Gauss points per step).  Each step is the exponential of an
anti-Hermitian matrix, so the product is unitary to round-off; the grid
is refined by doubling until two successive results agree to ``tol``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .dynamics import FoldedTrajectory, FullTrajectory, ModelSpec, potential_and_gradient
from .spinalg import SpinContext, polar_unitary

__all__ = [
    "TransportError",
    "SpinTransportResult",
    "coupling_symbol",
    "transport_path",
    "transport_full",
    "transport_unfolded",
    "transport_folded",
    "rk4_reference",
]

_G = np.sqrt(3.0) / 6.0


class TransportError(RuntimeError):
    """Requested spin-transport tolerance not reached."""


@dataclass
class SpinTransportResult:
    d: np.ndarray
    mode: str
    steps: int
    unitarity_error: float


def coupling_symbol(model: ModelSpec, q, p) -> np.ndarray:
    """C = kappa (grad V x p) as a real 3-vector, vectorized over leading axes.

    For the planar family grad V and p lie in the plane, so C is along z.
    """
    q = np.asarray(q, dtype=float)
    p = np.asarray(p, dtype=float)
    _, g, _ = potential_and_gradient(model, q, hessian=False)
    if q.shape[-1] == 2:
        out = np.zeros(q.shape[:-1] + (3,))
        out[..., 2] = model.kappa * (g[..., 0] * p[..., 1] - g[..., 1] * p[..., 0])
        return out
    return model.kappa * np.cross(g, p)


def _generator(ctx: SpinContext, c: np.ndarray) -> np.ndarray:
    """Hermitian K(t) = S.C / 2 for a stack of vectors c, shape (N, d, d)."""
    return 0.5 * (c[:, 0, None, None] * ctx.Sx + c[:, 1, None, None] * ctx.Sy
                  + c[:, 2, None, None] * ctx.Sz)


def _ordered_product(mats: np.ndarray) -> np.ndarray:
    """mats[N-1] @ ... @ mats[0] by pairwise reduction."""
    while len(mats) > 1:
        if len(mats) % 2:
            last = mats[-1]
            mats = np.concatenate([mats[1:-1:2] @ mats[0:-1:2], last[None]])
        else:
            mats = mats[1::2] @ mats[0::2]
    return mats[0]


def _magnus(ctx: SpinContext, cfun: Callable, t0: float, t1: float, n: int) -> np.ndarray:
    h = (t1 - t0) / n
    left = t0 + h * np.arange(n)
    k1 = _generator(ctx, cfun(left + h * (0.5 - _G)))
    k2 = _generator(ctx, cfun(left + h * (0.5 + _G)))
    # Omega = -i h (K1+K2)/2 - (sqrt3 h^2/12) [K2, K1]; exp(Omega) = exp(-i H)
    comm = k2 @ k1 - k1 @ k2
    herm = 0.5 * h * (k1 + k2) - 1j * (np.sqrt(3.0) * h * h / 12.0) * comm
    herm = 0.5 * (herm + np.conj(np.swapaxes(herm, -1, -2)))
    w, v = np.linalg.eigh(herm)
    steps = (v * np.exp(-1j * w)[:, None, :]) @ np.conj(np.swapaxes(v, -1, -2))
    return _ordered_product(steps)


def transport_path(model: ModelSpec, ctx: SpinContext, path: Callable, t0: float, t1: float,
                   tol: float = 1e-10, min_step: float = 0.05, max_doublings: int = 12) -> SpinTransportResult:
    """Spin transport along ``path(times) -> (N, 2f)`` phase-space samples."""
    dim = ctx.dim
    if t1 <= t0 or ctx.two_s == 0 or model.kappa == 0.0:
        return SpinTransportResult(np.eye(dim, dtype=complex), "path", 0, 0.0)
    f = model.dof

    def cfun(ts):
        y = path(ts)
        return coupling_symbol(model, y[:, :f], y[:, f:2 * f])

    n = max(4, int(np.ceil((t1 - t0) / min_step)))
    prev = _magnus(ctx, cfun, t0, t1, n)
    for _ in range(max_doublings):
        n *= 2
        cur = _magnus(ctx, cfun, t0, t1, n)
        # Richardson-corrected error estimate for a fourth-order method
        if np.max(np.abs(cur - prev)) / 15.0 < tol:
            return _finish(cur, "path", n)
        prev = cur
    raise TransportError(f"spin transport did not reach tol={tol:g} with {n} steps")


def _finish(d: np.ndarray, mode: str, steps: int) -> SpinTransportResult:
    err = float(np.max(np.abs(d.conj().T @ d - np.eye(len(d)))))
    if err > 1e-10:
        d = polar_unitary(d)
        err = float(np.max(np.abs(d.conj().T @ d - np.eye(len(d)))))
    return SpinTransportResult(d, mode, steps, err)


def _sol_path(sol, f):
    def path(ts):
        return np.asarray(sol(ts))[:2 * f].T
    return path


def transport_full(model: ModelSpec, trajectory: FullTrajectory, ctx: SpinContext,
                   t0: float = 0.0, t1: float | None = None, tol: float = 1e-10) -> SpinTransportResult:
    """Spin factor d along a full-space trajectory over [t0, t1]."""
    t1 = trajectory.t_end if t1 is None else t1
    res = transport_path(model, ctx, _sol_path(trajectory.sol, model.dof), t0, t1, tol)
    res.mode = "full"
    return res


def transport_unfolded(model: ModelSpec, folded: FoldedTrajectory, ctx: SpinContext,
                       tol: float = 1e-10) -> SpinTransportResult:
    """Spin factor of the unfolded (full-space) image of a folded trajectory."""
    f = model.dof
    d = np.eye(ctx.dim, dtype=complex)
    steps = 0
    for seg in folded.segments:
        m = folded.scheme.geo3(seg.frame)[:f, :f]

        def path(ts, seg=seg, m=m):
            y = np.asarray(seg.sol(ts))[:2 * f].T
            return np.concatenate([y[:, :f] @ m.T, y[:, f:] @ m.T], axis=1)

        r = transport_path(model, ctx, path, seg.t0, seg.t1, tol)
        d = r.d @ d
        steps += r.steps
    return _finish(d, "full", steps)


def _check_lifts(group, ctx: SpinContext):
    if group.two_s != ctx.two_s:
        raise ValueError(f"group carries spin lifts for two_s={group.two_s}, transport uses {ctx.two_s}")


def transport_folded(model: ModelSpec, folded: FoldedTrajectory, ctx: SpinContext,
                     tol: float = 1e-10) -> SpinTransportResult:
    """Folded spin factor d_n U(h_n)^dagger ... U(h_1)^dagger d_0.

    Each d_j is the transport along segment j in fundamental-domain
    coordinates with identity initial condition.
    """
    group = folded.group
    _check_lifts(group, ctx)
    f = model.dof
    d = np.eye(ctx.dim, dtype=complex)
    steps = 0
    for j, seg in enumerate(folded.segments):
        r = transport_path(model, ctx, _sol_path(seg.sol, f), seg.t0, seg.t1, tol)
        d = r.d @ d
        steps += r.steps
        if j < len(folded.crossings):
            d = group.spin_lift(folded.crossings[j]).conj().T @ d
    return _finish(d, "folded", steps)


def rk4_reference(model: ModelSpec, ctx: SpinContext, path: Callable, t0: float, t1: float,
                  n: int) -> np.ndarray:
    """Fixed-step classical RK4 for the spin ODE (test oracle, not unitary)."""
    f = model.dof
    h = (t1 - t0) / n
    ts = t0 + h * np.arange(n + 1)
    mids = ts[:-1] + h / 2
    y_nodes = path(ts)
    y_mid = path(mids)
    a_nodes = -1j * _generator(ctx, coupling_symbol(model, y_nodes[:, :f], y_nodes[:, f:2 * f]))
    a_mid = -1j * _generator(ctx, coupling_symbol(model, y_mid[:, :f], y_mid[:, f:2 * f]))
    d = np.eye(ctx.dim, dtype=complex)
    for k in range(n):
        k1 = a_nodes[k] @ d
        k2 = a_mid[k] @ (d + 0.5 * h * k1)
        k3 = a_mid[k] @ (d + 0.5 * h * k2)
        k4 = a_nodes[k + 1] @ (d + h * k3)
        d = d + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    return d
