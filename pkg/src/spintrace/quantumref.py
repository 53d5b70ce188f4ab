"""Exact quantum reference for the planar model.

Basis: two-dimensional oscillator states |n+, n-> in circular quanta,
n+ + n- <= n_max, with angular momentum l = n+ - n-.  Position and
momentum operators are polynomials in the ladder operators, so every
polynomial potential has exact matrix elements.  Products are formed in
a basis enlarged by the polynomial degree and truncated afterwards,
which keeps them exact on the retained states.

Hamiltonian (spin part diagonal because the planar coupling is along z):

    H = 1 (x) H0 + (hbar/2) s_z (x) C_z,   C_z = kappa (dV/dx p_y - dV/dy p_x)

with Weyl-ordered products.  The factor hbar/2 makes the spin precession
of the classical limit d' = -(i/2) s.C d.

A rotation by theta about z acts as exp(-i theta (l + m_s)).  The sector
of irrep alpha contains the states with U(g) psi = chi_alpha(g) psi.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.sparse as sp

from .dynamics import ModelSpec
from .grouprep import FiniteGroup, Irrep, VanishingProjectorError, axis_angle, classify_standard_extra
from .spinalg import SpinContext

__all__ = [
    "BasisTooSmallError",
    "QuantumBasis",
    "ProjectedSpectrum",
    "PlanarOperators",
    "build_operators",
    "build_hamiltonian",
    "sector_blocks",
    "sector_for_irrep",
    "project_spectrum",
    "explicit_projected_spectrum",
    "kramers_check",
    "quantum_density",
    "smooth_counting",
]


class BasisTooSmallError(RuntimeError):
    """Requested energies reach the truncation ceiling of the basis."""


@dataclass(frozen=True)
class QuantumBasis:
    n_max: int
    two_s: int = 1
    omega: Optional[float] = None

    def __post_init__(self):
        if self.n_max < 1:
            raise ValueError("n_max must be >= 1")

    def frequency(self, model: ModelSpec) -> float:
        return self.omega if self.omega is not None else 1.0 / math.sqrt(model.mass)

    def ceiling(self, model: ModelSpec) -> float:
        """Energy of the truncation shell of the reference oscillator."""
        return model.hbar_eff * self.frequency(model) * (self.n_max + 1)

    @property
    def states(self) -> np.ndarray:
        """(n+, n-) pairs, shape (N, 2), ordered by n+ then n-."""
        return np.array([(a, b) for a in range(self.n_max + 1) for b in range(self.n_max + 1 - a)])


@dataclass
class PlanarOperators:
    """Truncated orbital operators on the retained basis states."""

    basis: QuantumBasis
    states: np.ndarray
    h0: sp.csr_matrix
    cz: sp.csr_matrix
    l: np.ndarray


def _ladder(k: int) -> sp.csr_matrix:
    return sp.diags(np.sqrt(np.arange(1, k)), 1, shape=(k, k), format="csr")


def build_operators(model: ModelSpec, basis: QuantumBasis) -> PlanarOperators:
    """H0 and the Weyl-ordered C_z on the retained states."""
    if model.family != "planar_c3":
        raise ValueError("quantum reference supports the planar family only")
    hb, m = model.hbar_eff, model.mass
    w = basis.frequency(model)
    degree = 6 if model.epsilon != 0.0 else 4
    k = basis.n_max + degree + 2
    a = _ladder(k)
    eye = sp.identity(k, format="csr")
    ap = sp.kron(a, eye, format="csr")
    am = sp.kron(eye, a, format="csr")
    ax = (ap + am) / math.sqrt(2)
    ay = 1j * (ap - am) / math.sqrt(2)
    lx = math.sqrt(hb / (2 * m * w))
    lp = math.sqrt(m * w * hb / 2)
    x = lx * (ax + ax.conj().T)
    y = lx * (ay + ay.conj().T)
    px = 1j * lp * (ax.conj().T - ax)
    py = 1j * lp * (ay.conj().T - ay)
    lam, beta, eps = model.lam, model.beta, model.epsilon
    r2 = x @ x + y @ y
    v = 0.5 * r2 + lam * (x @ x @ y - y @ y @ y / 3)
    dvx = x + lam * 2 * (x @ y)
    dvy = y + lam * (x @ x - y @ y)
    if beta:
        v = v + beta * (r2 @ r2)
        dvx = dvx + 4 * beta * (r2 @ x)
        dvy = dvy + 4 * beta * (r2 @ y)
    if eps:
        zc = x + 1j * y
        z4 = zc @ zc @ zc @ zc
        z5 = z4 @ zc
        z6 = z5 @ zc
        v = v + eps * (z6 - _dag(z6)) / 2j
        dvx = dvx + eps * 6 * (z5 - _dag(z5)) / 2j
        dvy = dvy + eps * 6 * (z5 + _dag(z5)) / 2
    kin = (px @ px + py @ py) / (2 * m)
    cz = model.kappa * 0.5 * (dvx @ py + py @ dvx - dvy @ px - px @ dvy)
    full = np.array([(i, j) for i in range(k) for j in range(k)])
    keep = np.nonzero(full.sum(axis=1) <= basis.n_max)[0]
    # order retained states like QuantumBasis.states
    keep = keep[np.lexsort((full[keep, 1], full[keep, 0]))]
    h0 = (kin + v)[keep][:, keep].tocsr()
    czr = cz[keep][:, keep].tocsr()
    states = full[keep]
    for name, op in (("H0", h0), ("C_z", czr)):
        if abs(op - op.conj().T).max() > 1e-10 * max(1.0, abs(op).max()):
            raise AssertionError(f"{name} is not Hermitian")
    return PlanarOperators(basis, states, h0, czr, states[:, 0] - states[:, 1])


def _dag(a):
    return a.conj().T


def build_hamiltonian(model: ModelSpec, basis: QuantumBasis,
                      ops: Optional[PlanarOperators] = None) -> sp.csr_matrix:
    """Full spin (x) orbital Hamiltonian, spin index outermost (m_s = S..-S)."""
    ops = ops or build_operators(model, basis)
    ctx = SpinContext(basis.two_s)
    sz = sp.diags(np.diag(ctx.Sz).real)
    h = sp.kron(sp.identity(ctx.dim), ops.h0) + 0.5 * model.hbar_eff * sp.kron(sz, ops.cz)
    return h.tocsr()


def sector_blocks(ops: PlanarOperators, model: ModelSpec, n: int = 3) -> dict:
    """Dense Hamiltonian blocks keyed by (m_s as two_m, l mod n)."""
    ctx = SpinContext(ops.basis.two_s)
    blocks = {}
    for two_m in range(ctx.two_s, -ctx.two_s - 1, -2):
        h = ops.h0 + 0.25 * two_m * model.hbar_eff * ops.cz
        for r in range(n):
            idx = np.nonzero(ops.l % n == r)[0]
            sub = h[idx][:, idx].toarray()
            leak = h[idx][:, np.setdiff1d(np.arange(len(ops.l)), idx)]
            if leak.nnz and abs(leak).max() > 1e-10:
                raise AssertionError("Hamiltonian couples different rotation sectors")
            blocks[(two_m, r)] = sub
    return blocks


def _generator_rotation(group: FiniteGroup):
    """Index and angle of the rotation by 2 pi / n about z with the +1 lift."""
    best = None
    for i, el in enumerate(group.elements):
        if el.sign != 1:
            continue
        ge = group.geometric[el.geo]
        if not ge.proper:
            continue
        nvec, th = axis_angle(ge.matrix)
        if th > 1e-9 and np.allclose(nvec, [0, 0, 1]) and (best is None or th < best[1]):
            best = (i, th)
    if best is None:
        raise ValueError("group has no rotation about z")
    return best


def sector_for_irrep(group: FiniteGroup, irrep: Irrep, two_s: int, n: int = 3) -> list:
    """Blocks (two_m, l mod n) whose rotation eigenvalue equals chi(g)."""
    if irrep.dimension != 1:
        raise ValueError("sector selection needs a one-dimensional irrep")
    gi, th = _generator_rotation(group)
    n_rot = int(round(2 * math.pi / th))
    if n_rot != n:
        raise ValueError(f"group rotation order {n_rot} differs from the model's {n}")
    chi = irrep.characters[gi]
    out = []
    for two_m in range(two_s, -two_s - 1, -2):
        for r in range(n):
            lam = np.exp(-1j * th * (r + two_m / 2))
            if abs(lam - chi) < 1e-9:
                out.append((two_m, r))
    return out


@dataclass
class ProjectedSpectrum:
    irrep_label: str
    eigenvalues: np.ndarray = field(repr=False)
    degeneracy_divided: bool = True
    sectors: list = field(default_factory=list)
    basis_params: dict = field(default_factory=dict)

    def count(self, E) -> np.ndarray:
        return np.searchsorted(self.eigenvalues, E, side="right")

    def to_dict(self, model: Optional[ModelSpec] = None) -> dict:
        return {"irrep": self.irrep_label, "eigenvalues": [float(e) for e in self.eigenvalues],
                "degeneracy_divided": self.degeneracy_divided,
                "sectors": [list(s) for s in self.sectors], "basis_params": self.basis_params,
                "model_params": None if model is None else model.to_dict()}


def project_spectrum(model: ModelSpec, basis: QuantumBasis, group: FiniteGroup, irrep: Irrep,
                     e_max: Optional[float] = None, blocks: Optional[dict] = None) -> ProjectedSpectrum:
    """Eigenvalues of the irrep-alpha subspectrum (each level once).

    For one-dimensional irreps the s_alpha degeneracy is trivial.  Raises
    VanishingProjectorError for a standard irrep of a double group, and
    BasisTooSmallError if ``e_max`` reaches within 5% of the basis ceiling.
    """
    if group.is_double and classify_standard_extra(irrep, group) == 1:
        raise VanishingProjectorError(f"irrep {irrep.label} is standard: no half-integer-spin states")
    if e_max is not None and e_max > 0.95 * basis.ceiling(model):
        raise BasisTooSmallError(
            f"requested energy {e_max:g} is within 5% of the basis ceiling {basis.ceiling(model):g}")
    if blocks is None:
        blocks = sector_blocks(build_operators(model, basis), model)
    sectors = sector_for_irrep(group, irrep, basis.two_s)
    eig = np.sort(np.concatenate([np.linalg.eigvalsh(blocks[s]) for s in sectors]))
    if e_max is not None:
        eig = eig[eig <= e_max]
    return ProjectedSpectrum(irrep.label, eig, True, sectors,
                             {"n_max": basis.n_max, "two_s": basis.two_s,
                              "omega": basis.frequency(model)})


def explicit_projected_spectrum(model: ModelSpec, basis: QuantumBasis, group: FiniteGroup,
                                irrep: Irrep, weights: np.ndarray) -> tuple:
    """Projected eigenvalues from the explicit projector sum_g w_g U(g)^dagger.

    ``weights`` run over the whole group (length |G|) or over the
    geometric subset (length |Gamma|).  Returns (eigenvalues, projector norm).  Only rotations about z are
    represented (phase exp(-i theta l) times the spin lift).
    """
    ops = build_operators(model, basis)
    h = build_hamiltonian(model, basis, ops).toarray()
    ctx = SpinContext(basis.two_s)
    dim = h.shape[0]
    p = np.zeros((dim, dim), dtype=complex)
    elements = range(group.order) if len(weights) == group.order else group.geometric_subset
    for w, gi in zip(weights, elements):
        ge = group.geometric[group.elements[gi].geo]
        nvec, th = axis_angle(ge.matrix)
        if th > 0 and not np.allclose(nvec, [0, 0, 1]):
            raise ValueError("explicit projector supports rotations about z only")
        orb = np.exp(-1j * th * ops.l)
        spin = group.spin_lift(gi) if group.two_s == basis.two_s else np.eye(ctx.dim)
        u = np.kron(spin, np.diag(orb))
        p += w * u.conj().T
    norm = float(np.linalg.norm(p, 2))
    wv, vv = np.linalg.eigh(0.5 * (p + p.conj().T))
    range_ = vv[:, wv > 0.5]
    if range_.shape[1] == 0:
        return np.array([]), norm
    hr = range_.conj().T @ h @ range_
    return np.sort(np.linalg.eigvalsh(hr)), norm


def kramers_check(spectra: dict, irreps: list, two_s: int, rel_tol: float = 1e-8) -> dict:
    """Check the degeneracies forced by time reversal.

    ``spectra`` maps irrep label -> ProjectedSpectrum.  Half-integer spin
    with a real irrep, or integer spin with a pseudo-real irrep, must give
    pairwise degenerate levels.  Complex irreps must share their spectrum
    with the conjugate irrep.
    """
    report = {}
    tsq = -1 if two_s % 2 else 1
    by_label = {ir.label: ir for ir in irreps}
    for label, spec in spectra.items():
        ir = by_label[label]
        e = spec.eigenvalues
        entry = {"fs": ir.fs_indicator, "levels": int(e.size)}
        doubled = (tsq == -1 and ir.fs_indicator == 1) or (tsq == 1 and ir.fs_indicator == -1)
        if doubled:
            n2 = e.size - e.size % 2
            pairs = e[:n2].reshape(-1, 2)
            gap = np.abs(pairs[:, 1] - pairs[:, 0]) / np.maximum(np.abs(pairs).max(axis=1), 1e-300)
            entry.update(kind="kramers", max_rel_gap=float(gap.max()) if gap.size else 0.0,
                         passed=bool(e.size % 2 == 0 and (gap.size == 0 or gap.max() < rel_tol)))
        elif ir.fs_indicator == 0:
            conj = [o for o in irreps if np.allclose(o.characters, ir.characters.conj(), atol=1e-9)]
            partner = conj[0].label if conj else None
            if partner in spectra:
                e2 = spectra[partner].eigenvalues
                n = min(e.size, e2.size)
                diff = np.abs(e[:n] - e2[:n]) / np.maximum(np.abs(e[:n]), 1e-300)
                entry.update(kind="conjugate-pair", partner=partner,
                             max_rel_diff=float(diff.max()) if n else 0.0,
                             passed=bool(e.size == e2.size and (n == 0 or diff.max() < rel_tol)))
            else:
                entry.update(kind="conjugate-pair", partner=partner, passed=None)
        else:
            entry.update(kind="none", passed=True)
        report[label] = entry
    return report


def quantum_density(eigenvalues, energies, sigma: float) -> np.ndarray:
    """Gaussian-broadened level density sum_n N(E - E_n; sigma)."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    e = np.asarray(eigenvalues, dtype=float)
    x = np.asarray(energies, dtype=float)
    if e.size == 0:
        return np.zeros_like(x)
    z = (x[:, None] - e[None, :]) / sigma
    return np.exp(-0.5 * z * z).sum(axis=1) / (sigma * math.sqrt(2 * math.pi))


def smooth_counting(eigenvalues, energies) -> np.ndarray:
    """Staircase N(E) = #{E_n <= E}."""
    return np.searchsorted(np.sort(np.asarray(eigenvalues)), np.asarray(energies), side="right")
