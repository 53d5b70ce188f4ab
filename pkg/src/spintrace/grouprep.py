"""Finite point groups, their double groups, and numerical character tables.

Elements are stored abstractly through a multiplication table.  Each
element carries its O(3) matrix (via ``geo``), a sign flag for the
2-pi rotation ebar, and a spin lift at the requested spin.  Improper
elements R = I Q lift through their proper part Q.

SU(2) lift convention: the rotation angle theta is taken in [0, 2 pi)
about an axis whose orientation is fixed by the sign of its z component
(then y, then x).  Only products of lifts are physical; golden values
depending on individual lifts follow this choice.
"""

from __future__ import annotations

import csv
import io
import itertools
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .spinalg import SpinContext, spin_rotation, polar_unitary

__all__ = [
    "GroupError",
    "VanishingProjectorError",
    "GeometricElement",
    "DoubleGroupElement",
    "FiniteGroup",
    "Irrep",
    "axis_angle",
    "rotation_matrix",
    "build_point_group",
    "build_double_group",
    "group_from_spec",
    "character_table",
    "frobenius_schur",
    "classify_standard_extra",
    "projector_coefficients",
    "full_projector_coefficients",
    "find_intertwiner",
    "regular_representation",
    "character_table_csv",
]

MAX_ORDER = 96
ORTHO_TOL = 1e-12
CHAR_TOL = 1e-10


class GroupError(ValueError):
    """Invalid group input or a failed group-theoretic consistency check."""


class VanishingProjectorError(GroupError):
    """Projector onto a standard irrep of a double group, which is identically zero."""


@dataclass(frozen=True)
class GeometricElement:
    label: str
    matrix: np.ndarray
    proper: bool

    @property
    def axis(self) -> np.ndarray:
        return axis_angle(self.proper_part)[0]

    @property
    def angle(self) -> float:
        return axis_angle(self.proper_part)[1]

    @property
    def proper_part(self) -> np.ndarray:
        return self.matrix if self.proper else -self.matrix


@dataclass(frozen=True)
class DoubleGroupElement:
    geo: int
    sign: int
    spin_lift: np.ndarray = field(repr=False)
    label: str = ""


def rotation_matrix(axis, theta: float) -> np.ndarray:
    """SO(3) matrix for an anticlockwise rotation by ``theta`` about ``axis``."""
    n = np.asarray(axis, dtype=float)
    n = n / np.linalg.norm(n)
    k = np.array([[0, -n[2], n[1]], [n[2], 0, -n[0]], [-n[1], n[0], 0]])
    return np.eye(3) + np.sin(theta) * k + (1 - np.cos(theta)) * (k @ k)


def _canonical_axis(n: np.ndarray) -> tuple[np.ndarray, bool]:
    for c in (2, 1, 0):
        if abs(n[c]) > 1e-9:
            return (n, False) if n[c] > 0 else (-n, True)
    return n, False


def axis_angle(r: np.ndarray) -> tuple[np.ndarray, float]:
    """Canonical (axis, angle) of a proper rotation, angle in [0, 2 pi)."""
    c = np.clip((np.trace(r) - 1) / 2, -1.0, 1.0)
    theta = float(np.arccos(c))
    if theta < 1e-9:
        return np.array([0.0, 0.0, 1.0]), 0.0
    if np.pi - theta < 1e-6:
        # axis from the symmetric part
        b = (r + np.eye(3)) / 2
        j = int(np.argmax(np.diag(b)))
        n = b[:, j] / np.sqrt(b[j, j])
        n, _ = _canonical_axis(n / np.linalg.norm(n))
        return n, float(np.pi)
    n = np.array([r[2, 1] - r[1, 2], r[0, 2] - r[2, 0], r[1, 0] - r[0, 1]]) / (2 * np.sin(theta))
    n = n / np.linalg.norm(n)
    n, flipped = _canonical_axis(n)
    if flipped:
        theta = 2 * np.pi - theta
    return n, theta


def _axis_name(n: np.ndarray) -> str:
    n = np.where(np.abs(n) < 1e-9, 0.0, n)
    for name, e in zip("xyz", np.eye(3)):
        if np.allclose(n, e, atol=1e-9):
            return name
    return "(" + ",".join(f"{v:.4g}" for v in n) + ")"


def _geo_label(m: np.ndarray) -> str:
    proper = np.linalg.det(m) > 0
    q = m if proper else -m
    n, th = axis_angle(q)
    if th == 0.0:
        return "e" if proper else "I"
    core = f"R[{_axis_name(n)}]({np.degrees(th):.6g})"
    return core if proper else "I" + core


def _su2(m: np.ndarray) -> np.ndarray:
    q = m if np.linalg.det(m) > 0 else -m
    n, th = axis_angle(q)
    return spin_rotation(SpinContext(1), n, th)


@dataclass(frozen=True, eq=False)
class FiniteGroup:
    """A finite group given by its multiplication table.

    ``mult_table[i, j]`` is the index of ``elements[i] * elements[j]``.
    For double groups the first ``|Gamma|`` elements are the geometric
    subset with sign +1 and the rest are their ebar partners.
    """

    elements: list
    mult_table: np.ndarray
    identity_index: int
    is_double: bool
    geometric_subset: list
    geometric: list
    two_s: int = 0

    @property
    def order(self) -> int:
        return len(self.elements)

    @property
    def gamma_order(self) -> int:
        return len(self.geometric_subset)

    @property
    def labels(self) -> list:
        return [el.label for el in self.elements]

    def multiply(self, i: int, j: int) -> int:
        return int(self.mult_table[i, j])

    def inverse(self, i: int) -> int:
        return int(np.nonzero(self.mult_table[i] == self.identity_index)[0][0])

    def power(self, i: int, k: int) -> int:
        out = self.identity_index
        base = i if k >= 0 else self.inverse(i)
        for _ in range(abs(k)):
            out = self.multiply(out, base)
        return out

    def element_order(self, i: int) -> int:
        k, x = 1, i
        while x != self.identity_index:
            x = self.multiply(x, i)
            k += 1
        return k

    def find(self, geo: int, sign: int = 1) -> int:
        for idx, el in enumerate(self.elements):
            if el.geo == geo and el.sign == sign:
                return idx
        raise KeyError((geo, sign))

    def index_of_label(self, label: str) -> int:
        return self.labels.index(label)

    @property
    def ebar_index(self) -> Optional[int]:
        if not self.is_double:
            return None
        return self.find(self.elements[self.identity_index].geo, -1)

    def geo_matrix(self, i: int) -> np.ndarray:
        return self.geometric[self.elements[i].geo].matrix

    def spin_lift(self, i: int) -> np.ndarray:
        return self.elements[i].spin_lift

    def is_abelian(self) -> bool:
        return bool(np.all(self.mult_table == self.mult_table.T))

    def conjugacy_classes(self) -> list:
        seen, classes = set(), []
        for g in range(self.order):
            if g in seen:
                continue
            cls = sorted({self.multiply(self.multiply(h, g), self.inverse(h)) for h in range(self.order)})
            seen.update(cls)
            classes.append(cls)
        return classes

    def verify_table(self) -> None:
        """Exhaustive group-axiom check; raises GroupError on failure."""
        t = self.mult_table
        n = self.order
        e = self.identity_index
        if not (np.all(t[e] == np.arange(n)) and np.all(t[:, e] == np.arange(n))):
            raise GroupError("identity element does not act trivially")
        for row in t:
            if len(set(row.tolist())) != n:
                raise GroupError("multiplication table row is not a permutation")
        # associativity: (ab)c == a(bc)
        lhs = t[t[:, :, None], np.arange(n)[None, None, :]]
        rhs = t[np.arange(n)[:, None, None], t[None, :, :]]
        if not np.array_equal(lhs, rhs):
            raise GroupError("multiplication table is not associative")


def _close(generators: Sequence[np.ndarray], cap: int) -> list:
    mats = [np.eye(3)]
    frontier = [np.eye(3)]
    while frontier:
        new = []
        for a in frontier:
            for g in generators:
                b = g @ a
                if not any(np.allclose(b, m, atol=1e-9) for m in mats):
                    mats.append(b)
                    new.append(b)
                    if len(mats) > cap:
                        raise GroupError(f"closure not reached within {cap} elements")
        frontier = new
    return mats


def _sort_key(m: np.ndarray):
    proper = np.linalg.det(m) > 0
    n, th = axis_angle(m if proper else -m)
    identity = proper and th == 0.0
    return (not identity, not proper, tuple(np.round(-n, 9)), round(th, 9))


def _table_from_matrices(mats: list) -> np.ndarray:
    n = len(mats)
    t = np.empty((n, n), dtype=int)
    for i, a in enumerate(mats):
        for j, b in enumerate(mats):
            c = a @ b
            hits = [k for k, m in enumerate(mats) if np.allclose(c, m, atol=1e-9)]
            if len(hits) != 1:
                raise GroupError("generated set is not closed")
            t[i, j] = hits[0]
    return t


def _perpendicular(axis: np.ndarray) -> np.ndarray:
    for trial in (np.array([1.0, 0, 0]), np.array([0, 1.0, 0])):
        v = trial - (trial @ axis) * axis
        if np.linalg.norm(v) > 1e-6:
            return v / np.linalg.norm(v)
    raise GroupError("cannot find a perpendicular direction")


def build_point_group(spec: dict) -> FiniteGroup:
    """Generate a geometric point group.

    ``spec`` has ``kind`` in {Cn, Cnv, Dn, custom}; ``n`` and ``axis`` for
    the axial families, ``generators`` (list of 3x3 matrices) for custom.
    For Cnv the mirror plane contains the axis and the direction
    perpendicular to x (for axis z: the mirror x -> -x).  For Dn the extra
    two-fold axis is x (projected perpendicular to the main axis).
    """
    kind = spec.get("kind", "Cn")
    if kind == "custom":
        gens = [np.asarray(g, dtype=float) for g in spec["generators"]]
    else:
        n = int(spec.get("n", 1))
        if n < 1:
            raise GroupError("n must be >= 1")
        axis = np.asarray(spec.get("axis", [0, 0, 1]), dtype=float)
        axis = axis / np.linalg.norm(axis)
        gens = [rotation_matrix(axis, 2 * np.pi / n)]
        perp = _perpendicular(axis)
        if kind == "Cnv":
            gens.append(np.eye(3) - 2 * np.outer(perp, perp))
        elif kind == "Dn":
            gens.append(rotation_matrix(perp, np.pi))
        elif kind != "Cn":
            raise GroupError(f"unknown group kind {kind!r}")
    for g in gens:
        if g.shape != (3, 3) or np.max(np.abs(g.T @ g - np.eye(3))) > ORTHO_TOL * 100:
            raise GroupError("generator is not an orthogonal 3x3 matrix")
    mats = _close(gens, MAX_ORDER)
    mats.sort(key=_sort_key)
    table = _table_from_matrices(mats)
    geometric = [GeometricElement(_geo_label(m), m, bool(np.linalg.det(m) > 0)) for m in mats]
    elements = [DoubleGroupElement(i, 1, np.ones((1, 1), dtype=complex), g.label) for i, g in enumerate(geometric)]
    group = FiniteGroup(elements, table, 0, False, list(range(len(mats))), geometric, 0)
    group.verify_table()
    return group


def build_double_group(gamma: FiniteGroup, two_s: int) -> FiniteGroup:
    """Spin-S group built over the geometric group ``gamma``.

    Half-integer spin doubles the group (G = Gamma u ebar Gamma) with the
    multiplication fixed by products of spin-1/2 lifts; integer spin keeps
    Gamma and attaches single-valued lifts.
    """
    if gamma.is_double:
        raise GroupError("input group is already a double group")
    ctx = SpinContext(two_s)
    geo = gamma.geometric
    lifts = []
    for g in geo:
        n, th = axis_angle(g.proper_part)
        lifts.append(spin_rotation(ctx, n, th))
    if two_s % 2 == 0:
        elements = [DoubleGroupElement(i, 1, lifts[i], g.label) for i, g in enumerate(geo)]
        return FiniteGroup(elements, gamma.mult_table.copy(), 0, False,
                           list(range(len(geo))), geo, two_s)
    su2 = [_su2(g.matrix) for g in geo]
    ng = len(geo)
    elements = [DoubleGroupElement(i, 1, lifts[i], geo[i].label) for i in range(ng)]
    elements += [DoubleGroupElement(i, -1, -lifts[i], "ebar" if i == 0 else "ebar*" + geo[i].label)
                 for i in range(ng)]
    table = np.empty((2 * ng, 2 * ng), dtype=int)
    for a in range(2 * ng):
        for b in range(2 * ng):
            ga, sa = a % ng, (1 if a < ng else -1)
            gb, sb = b % ng, (1 if b < ng else -1)
            k = gamma.multiply(ga, gb)
            prod = su2[ga] @ su2[gb]
            if np.allclose(prod, su2[k], atol=1e-9):
                s = 1
            elif np.allclose(prod, -su2[k], atol=1e-9):
                s = -1
            else:
                raise GroupError("inconsistent SU(2) lift: product is not +-lift")
            s *= sa * sb
            table[a, b] = k if s == 1 else k + ng
    group = FiniteGroup(elements, table, 0, True, list(range(ng)), geo, two_s)
    group.verify_table()
    return group


def group_from_spec(spec: dict, two_s: int = 0) -> FiniteGroup:
    """Scenario ``group`` block -> group with spin lifts at spin two_s/2.

    ``double: false`` with half-integer spin is rejected, since the
    geometric group alone does not act by a representation then.
    """
    gamma = build_point_group(spec)
    if two_s % 2 == 1 and not spec.get("double", True):
        raise GroupError("half-integer spin requires the double group")
    return build_double_group(gamma, two_s)


@dataclass(frozen=True, eq=False)
class Irrep:
    """Unitary irreducible representation of a finite group."""

    label: str
    matrices: np.ndarray = field(repr=False)
    dimension: int
    characters: np.ndarray = field(repr=False)
    fs_indicator: int
    kappa: Optional[int] = None
    intertwiner_Z: Optional[np.ndarray] = field(default=None, repr=False)
    zz_sign: Optional[int] = None

    @property
    def is_extra(self) -> bool:
        return self.kappa == -1


def regular_representation(group: FiniteGroup, extra_only: bool = False) -> np.ndarray:
    """Left-regular permutation matrices, shape (|G|, |G|, |G|).

    With ``extra_only`` the representation is restricted to the subspace
    on which ebar acts as -1 (dimension |Gamma|), which is where the
    double-group projector over Gamma is idempotent.
    """
    n = group.order
    reg = np.zeros((n, n, n))
    for g in range(n):
        reg[g, group.mult_table[g], np.arange(n)] = 1.0
    if not extra_only:
        return reg
    if not group.is_double:
        raise GroupError("extra_only needs a double group")
    p = (np.eye(n) - reg[group.ebar_index]) / 2
    w, v = np.linalg.eigh(p)
    basis = v[:, w > 0.5]
    return np.einsum("ia,gij,jb->gab", basis, reg, basis)


def _abelian_irreps(group: FiniteGroup) -> list:
    n = group.order
    gens, span = [], {group.identity_index}

    def closure(gs):
        s = {group.identity_index}
        frontier = [group.identity_index]
        while frontier:
            nxt = []
            for x in frontier:
                for g in gs:
                    y = group.multiply(x, g)
                    if y not in s:
                        s.add(y)
                        nxt.append(y)
            frontier = nxt
        return s

    while len(span) < n:
        cand = [i for i in range(n) if i not in span]
        best = max(cand, key=lambda i: (group.element_order(i), -i))
        gens.append(best)
        span = closure(gens)
    orders = [group.element_order(g) for g in gens]
    chars = []
    for ks in itertools.product(*[range(o) for o in orders]):
        val = {group.identity_index: 1.0 + 0j}
        frontier = [group.identity_index]
        ok = True
        while frontier and ok:
            nxt = []
            for x in frontier:
                for g, k, o in zip(gens, ks, orders):
                    y = group.multiply(x, g)
                    v = val[x] * np.exp(2j * np.pi * k / o)
                    if y in val:
                        if abs(val[y] - v) > 1e-9:
                            ok = False
                            break
                    else:
                        val[y] = v
                        nxt.append(y)
                if not ok:
                    break
            frontier = nxt
        if ok:
            chars.append(np.array([val[i] for i in range(n)]))
    if len(chars) != n:
        raise GroupError("abelian character enumeration failed")
    return chars


def _class_sum_characters(group: FiniteGroup, rng: np.random.Generator, retries: int = 8) -> list:
    classes = group.conjugacy_classes()
    nc = len(classes)
    cls_of = np.empty(group.order, dtype=int)
    for k, c in enumerate(classes):
        cls_of[c] = k
    # c[i, j, k]: number of (x in C_i, y in C_j) with x y = z_k
    coef = np.zeros((nc, nc, nc))
    for k, c in enumerate(classes):
        z = c[0]
        for i, ci in enumerate(classes):
            for x in ci:
                y = group.multiply(group.inverse(x), z)
                coef[i, cls_of[y], k] += 1
    sizes = np.array([len(c) for c in classes], dtype=float)
    e_cls = cls_of[group.identity_index]
    for _ in range(retries):
        r = rng.normal(size=nc)
        m = np.einsum("i,ijk->jk", r, coef)
        w, v = np.linalg.eig(m)
        gaps = np.abs(w[:, None] - w[None, :]) + np.eye(nc) * 1e9
        if gaps.min() < 1e-6 * max(1.0, np.abs(w).max()):
            continue
        chars = []
        for a in range(nc):
            omega = v[:, a] / v[e_cls, a]
            s = np.sqrt(group.order / np.sum(np.abs(omega) ** 2 / sizes))
            s_int = int(round(s.real))
            chi_cls = s_int * omega / sizes
            chars.append(chi_cls[cls_of])
        return chars
    raise GroupError("class-sum spectrum not separable after retries")


def _irrep_matrices(group: FiniteGroup, chi: np.ndarray, dim: int,
                    reg: np.ndarray, rng: np.random.Generator, retries: int = 8) -> np.ndarray:
    if dim == 1:
        return chi.reshape(-1, 1, 1).astype(complex)
    n = group.order
    p = dim / n * np.einsum("g,gij->ij", chi.conj(), reg)
    w, v = np.linalg.eigh((p + p.conj().T) / 2)
    b = v[:, w > 0.5]
    if b.shape[1] != dim * dim:
        raise GroupError("isotypic component has the wrong dimension")
    reg_b = np.einsum("ia,gij,jb->gab", b.conj(), reg, b)
    for _ in range(retries):
        a = rng.normal(size=(dim * dim, dim * dim)) + 1j * rng.normal(size=(dim * dim, dim * dim))
        a = a + a.conj().T
        abar = np.einsum("gab,bc,gdc->ad", reg_b, a, reg_b.conj()) / n
        ew, ev = np.linalg.eigh((abar + abar.conj().T) / 2)
        block = ev[:, :dim]
        if dim < ew.size and ew[dim] - ew[dim - 1] < 1e-6:
            continue
        if ew[dim - 1] - ew[0] > 1e-8:
            continue
        rho = np.einsum("ai,gab,bj->gij", block.conj(), reg_b, block)
        return rho
    raise GroupError("failed to split the isotypic component into irreducibles")


def character_table(group: FiniteGroup, rng: Optional[np.random.Generator] = None) -> list:
    """Complete list of irreps of ``group`` (|G| <= 96).

    Abelian groups use exact roots of unity; nonabelian groups use
    simultaneous diagonalization of class sums (randomized combination)
    for the characters and the regular representation for the matrices.
    """
    if group.order > MAX_ORDER:
        raise GroupError(f"group order {group.order} exceeds {MAX_ORDER}")
    rng = rng if rng is not None else np.random.default_rng(20240601)
    if group.is_abelian():
        chars = _abelian_irreps(group)
        dims = [1] * len(chars)
    else:
        chars = _class_sum_characters(group, rng)
        dims = [int(round(c[group.identity_index].real)) for c in chars]
    if sum(d * d for d in dims) != group.order:
        raise GroupError("sum of squared irrep dimensions differs from |G|")
    reg = None if all(d == 1 for d in dims) else regular_representation(group)
    ebar = group.ebar_index
    records = []
    for chi, d in zip(chars, dims):
        mats = _irrep_matrices(group, chi, d, reg, rng)
        chi = np.einsum("gii->g", mats)
        kappa = None
        if ebar is not None:
            kappa = _kappa(chi, d, ebar)
        records.append((chi, d, mats, kappa))
    if not group.is_abelian():
        records.sort(key=lambda r: (r[1], -(r[3] or 1), tuple(np.round(-r[0].real, 6)), tuple(np.round(r[0].imag, 6))))
    irreps = []
    for idx, (chi, d, mats, kappa) in enumerate(records):
        proto = Irrep(str(idx), mats, d, chi, 0, kappa)
        fs = frobenius_schur(proto, group)
        z = find_intertwiner(Irrep(str(idx), mats, d, chi, fs, kappa), group, rng)
        irreps.append(Irrep(str(idx), mats, d, chi, fs, kappa,
                            None if z is None else z[0], None if z is None else z[1]))
    _check_table(group, irreps)
    return irreps


def _kappa(chi: np.ndarray, dim: int, ebar: int) -> int:
    k = chi[ebar] / dim
    if abs(k - 1) < 1e-12 * 100:
        return 1
    if abs(k + 1) < 1e-12 * 100:
        return -1
    raise GroupError(f"chi(ebar)/s = {k} is not +-1: corrupted irrep")


def _check_table(group: FiniteGroup, irreps: list) -> None:
    x = np.array([ir.characters for ir in irreps])
    gram = x @ x.conj().T / group.order
    if np.max(np.abs(gram - np.eye(len(irreps)))) > CHAR_TOL:
        raise GroupError("character orthogonality violated")
    t = group.mult_table
    for ir in irreps:
        lhs = np.einsum("aij,bjk->abik", ir.matrices, ir.matrices)
        if np.max(np.abs(lhs - ir.matrices[t])) > CHAR_TOL:
            raise GroupError(f"irrep {ir.label} is not a homomorphism")


def frobenius_schur(irrep: Irrep, group: FiniteGroup) -> int:
    """Frobenius-Schur indicator (1/|G|) sum_g chi(g^2) in {0, +1, -1}."""
    sq = np.diag(group.mult_table)
    full = irrep.characters[sq].sum() / group.order
    if group.is_double:
        gam = np.asarray(group.geometric_subset)
        restricted = irrep.characters[sq[gam]].sum() / group.gamma_order
        if abs(full - restricted) > 1e-12:
            raise GroupError("full and Gamma-restricted FS indicators disagree")
    val = int(round(full.real))
    if abs(full - val) > 1e-8 or val not in (-1, 0, 1):
        raise GroupError(f"FS indicator {full} is not in {{0, +1, -1}}")
    return val


def classify_standard_extra(irrep: Irrep, group: FiniteGroup) -> int:
    """kappa = chi(ebar)/s: +1 for standard, -1 for extra irreps."""
    if not group.is_double:
        raise GroupError("standard/extra classification needs a double group")
    return _kappa(irrep.characters, irrep.dimension, group.ebar_index)


def projector_coefficients(irrep: Irrep, group: FiniteGroup) -> np.ndarray:
    """Weights w_g = (s/|Gamma|) chi(g) over the geometric subset.

    The projector is P = sum_g w_g U(g)^dagger in any unitary
    representation where ebar acts as -1 (or any representation at all for
    non-double groups).
    """
    if group.is_double and classify_standard_extra(irrep, group) == 1:
        raise VanishingProjectorError(
            f"irrep {irrep.label} is standard: its projector vanishes for half-integer spin")
    gam = np.asarray(group.geometric_subset)
    return irrep.dimension / group.gamma_order * irrep.characters[gam]


def full_projector_coefficients(irrep: Irrep, group: FiniteGroup) -> np.ndarray:
    """Weights (s/|G|) chi(g) over every element of the group.

    For a standard irrep of a double group these weights pair g with
    ebar g at equal character, so the projector built from them vanishes
    in any representation where ebar acts as -1.
    """
    return irrep.dimension / group.order * irrep.characters


def find_intertwiner(irrep: Irrep, group: FiniteGroup,
                     rng: Optional[np.random.Generator] = None, retries: int = 8):
    """Unitary Z with conj(rho(g)) = Z rho(g) Z^-1 and the sign of Z Z*.

    Returns ``None`` for complex irreps (no such Z).
    """
    rng = rng if rng is not None else np.random.default_rng(7)
    rho = irrep.matrices
    d = irrep.dimension
    if irrep.fs_indicator == 0:
        return None
    for _ in range(retries):
        w = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
        a = np.einsum("gij,jk,glk->il", rho.conj(), w, rho.conj()) / group.order
        if abs(np.linalg.det(a)) < 1e-8 * np.linalg.norm(a) ** d:
            continue
        z = polar_unitary(a)
        resid = np.max(np.abs(rho.conj() - z @ rho @ z.conj().T))
        if resid > 1e-8:
            continue
        zz = z @ z.conj()
        sign = int(round(zz[0, 0].real))
        if np.max(np.abs(zz - sign * np.eye(d))) > 1e-8:
            raise GroupError("Z Z* is not +-1")
        return z, sign
    return None


def character_table_csv(group: FiniteGroup, irreps: list) -> str:
    """CSV text: irrep, class representative label, Re chi, Im chi, FS, kappa."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["irrep", "class", "re_chi", "im_chi", "fs", "kappa"])
    for ir in irreps:
        for cls in group.conjugacy_classes():
            chi = ir.characters[cls[0]]
            w.writerow([ir.label, group.elements[cls[0]].label,
                        f"{_clean(chi.real):.12g}", f"{_clean(chi.imag):.12g}",
                        ir.fs_indicator, "" if ir.kappa is None else ir.kappa])
    return buf.getvalue()


def _clean(x: float) -> float:
    return 0.0 if abs(x) < 1e-12 else float(x)
