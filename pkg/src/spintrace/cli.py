"""Command-line driver: ``spintrace <command> --scenario file.json --out dir``.

Commands: group, spin, orbits, density, specdet, quantum, compare, selftest.
Exit status 0 on success, 1 when the scenario fails validation, 2 when a
numerical tolerance check fails.
"""

from __future__ import annotations

import argparse
import copy
import csv
import io
import json
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np
from scipy.interpolate import CubicSpline

from . import __version__
from .dynamics import FoldingScheme, ModelSpec, PhaseState, fold_state, integrate_folded, potential
from .grouprep import (character_table, character_table_csv, classify_standard_extra, frobenius_schur,
                       group_from_spec)
from .orbits import SearchConfig, find_orbits, orbit_from_record, orbit_record
from .quantumref import (QuantumBasis, build_operators, kramers_check, project_spectrum, sector_blocks)
from .spinalg import SpinContext, spin_rotation, time_reversal_matrix, time_reversal_square_sign
from .spintransport import transport_folded, transport_unfolded
from .traceformula import (ConventionError, check_conventions, local_peaks, match_peaks,
                           oscillatory_density, predicted_peaks, weyl_counting,
                           windowed_fourier)
from .specdet import (MeanCounting, determinant_series, enumerate_pseudo_orbits, find_zeros,
                      heisenberg_cutoff, riemann_siegel)

log = logging.getLogger("spintrace")

COMMANDS = ("group", "spin", "orbits", "density", "specdet", "quantum", "compare", "selftest")

_num = {"type": "number"}
_pos = {"type": "number", "exclusiveMinimum": 0}
_int = {"type": "integer", "minimum": 1}

SCHEMA = {
    "type": "object",
    "required": ["model", "group", "spin"],
    "additionalProperties": False,
    "properties": {
        "model": {
            "type": "object", "required": ["family", "hbar_eff"], "additionalProperties": False,
            "properties": {"family": {"enum": ["planar_c3", "threed_c3"]}, "mass": _pos, "lambda": _num,
                           "epsilon": _num, "mu": _num, "beta": {"type": "number", "minimum": 0},
                           "kappa": _num, "hbar_eff": _pos},
        },
        "group": {
            "type": "object", "required": ["kind"], "additionalProperties": False,
            "properties": {"kind": {"enum": ["Cn", "Cnv", "Dn", "custom"]}, "n": _int,
                           "axis": {"type": "array", "items": _num, "minItems": 3, "maxItems": 3},
                           "double": {"type": "boolean"},
                           "generators": {"type": "array"}},
        },
        "spin": {"type": "object", "required": ["two_s"], "additionalProperties": False,
                 "properties": {"two_s": {"type": "integer", "minimum": 0, "maximum": 9}}},
        "search": {
            "type": "object", "additionalProperties": False,
            "properties": {"energy": _num, "T_max": _pos,
                           "section_fractions": {"type": "array", "items": _num, "minItems": 1},
                           "n_trajectories": {"type": "integer", "minimum": 0}, "seed_time": _pos,
                           "max_returns": _int, "recurrence_tol": _pos, "max_seeds_per_k": _int,
                           "grid_seeds": {"type": "integer", "minimum": 0}, "newton_tol": _pos,
                           "newton_maxiter": _int},
        },
        "density": {
            "type": "object", "additionalProperties": False,
            "properties": {"e_min": _num, "e_max": _num, "n_points": _int, "sigma": _pos,
                           "irreps": {"type": "array", "items": {"type": "string"}}},
        },
        "specdet": {
            "type": "object", "additionalProperties": False,
            "properties": {"e_min": _num, "e_max": _num, "n_points": _int, "eta": _pos,
                           "cutoff": {"type": ["number", "null"]}, "max_pseudo_orbits": _int},
        },
        "quantum": {
            "type": "object", "additionalProperties": False,
            "properties": {"n_max": _int, "omega": {"type": ["number", "null"], "exclusiveMinimum": 0},
                           "e_max": _num},
        },
        "compare": {
            "type": "object", "additionalProperties": False,
            "properties": {"e_min": _num, "e_max": _num, "T_min": _pos, "T_max": _pos,
                           "n_times": _int, "n_classes": _int},
        },
        "seed": {"type": "integer", "minimum": 0},
        "output": {"type": "string"},
    },
}

DEFAULTS = {
    "search": {"energy": 0.5, "T_max": 4.0, "section_fractions": [0.25, 0.5], "n_trajectories": 2,
               "seed_time": 150.0, "max_returns": 4, "recurrence_tol": 0.05, "max_seeds_per_k": 40,
               "grid_seeds": 0, "newton_tol": 1e-11, "newton_maxiter": 40},
    "density": {"e_min": 0.4, "e_max": 0.6, "n_points": 401, "sigma": 0.004},
    "specdet": {"e_min": 0.45, "e_max": 0.55, "n_points": 2001, "eta": 1e-6, "cutoff": None,
                "max_pseudo_orbits": 10 ** 6},
    "quantum": {"n_max": 60, "omega": None, "e_max": 0.3},
    "compare": {"e_min": 0.4, "e_max": 0.6, "T_min": 0.3, "T_max": 4.0, "n_times": 1000, "n_classes": 5},
    "seed": 12345,
    "output": "out",
}


class ScenarioError(ValueError):
    """Scenario failed schema or semantic validation."""


class ToleranceFailure(AssertionError):
    """A numerical check exceeded its tolerance."""


def bundled_scenario_path() -> Path:
    return Path(str(resources.files("spintrace") / "scenarios" / "c3_half.json"))


def _error_path(err) -> str:
    return ".".join(str(p) for p in err.absolute_path) or "<root>"


def resolve_scenario(raw: dict) -> dict:
    """Validate ``raw`` and fill defaults; raises ScenarioError naming the field."""
    validator = jsonschema.Draft7Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        raise ScenarioError("; ".join(f"{_error_path(e)}: {e.message}" for e in errors))
    sc = copy.deepcopy(raw)
    for key, default in DEFAULTS.items():
        if isinstance(default, dict):
            merged = dict(default)
            merged.update(sc.get(key, {}))
            sc[key] = merged
        else:
            sc.setdefault(key, default)
    sc["group"].setdefault("axis", [0, 0, 1])
    sc["group"].setdefault("double", sc["spin"]["two_s"] % 2 == 1)
    if sc["group"]["double"] != (sc["spin"]["two_s"] % 2 == 1):
        raise ScenarioError("group.double: must be true exactly for half-integer spin")
    dim = 2 if sc["model"]["family"] == "planar_c3" else 3
    if dim == 2 and sc["group"]["kind"] != "Cn":
        raise ScenarioError("group.kind: the planar model is solved with Cn groups only")
    for block in ("density", "specdet", "compare"):
        if sc[block]["e_min"] >= sc[block]["e_max"]:
            raise ScenarioError(f"{block}.e_min: must be below {block}.e_max")
    if sc["compare"]["T_min"] >= sc["compare"]["T_max"]:
        raise ScenarioError("compare.T_min: must be below compare.T_max")
    return sc


class Run:
    """One CLI invocation: resolved scenario, output directory and shared objects."""

    def __init__(self, scenario: dict, out: Path, threads: int = 1):
        self.sc = scenario
        self.out = out
        self.threads = max(1, threads)
        self.model = ModelSpec.from_dict(scenario["model"])
        self.two_s = scenario["spin"]["two_s"]
        self.ctx = SpinContext(self.two_s)
        try:
            self.group = group_from_spec(scenario["group"], self.two_s)
        except Exception as exc:
            raise ScenarioError(f"group: {exc}") from exc
        self.rng = np.random.default_rng(scenario["seed"])
        self.irreps = character_table(self.group, rng=np.random.default_rng(scenario["seed"]))
        labels = [ir.label for ir in self.irreps]
        for lab in scenario["density"].get("irreps", []):
            if lab not in labels:
                raise ScenarioError(f"density.irreps: unknown irrep {lab!r}; available {labels}")
        self._orbits = None
        self._counting = {}

    # output helpers ---------------------------------------------------------
    def write_text(self, name: str, text: str) -> None:
        self.out.mkdir(parents=True, exist_ok=True)
        (self.out / name).write_text(text)

    def write_json(self, name: str, obj) -> None:
        self.write_text(name, json.dumps(obj, indent=2, sort_keys=True) + "\n")

    def physical_irreps(self) -> list:
        chosen = self.sc["density"].get("irreps")
        out = []
        for ir in self.irreps:
            if self.group.is_double and classify_standard_extra(ir, self.group) == 1:
                continue
            if chosen and ir.label not in chosen:
                continue
            out.append(ir)
        return out

    def scheme(self) -> FoldingScheme:
        return FoldingScheme.from_group(self.group)

    def orbits(self):
        if self._orbits is None:
            path = self.out / "orbits.jsonl"
            if path.exists():
                lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
                self._orbits = [orbit_from_record(json.loads(ln), self.group) for ln in lines]
            else:
                self._orbits = self._search()
        return self._orbits

    def _search(self):
        s = self.sc["search"]
        cfg = SearchConfig.from_dict({**s, "seed": self.sc["seed"]})
        return find_orbits(self.model, self.group, s["energy"], s["T_max"], cfg, ctx=self.ctx)

    def kramers_halved(self, irrep) -> bool:
        """Real irrep with T^2 = -1: every level is doubly degenerate."""
        return self.ctx.half_integer and irrep.fs_indicator == 1

    def mean_counting(self, irrep, e_lo, e_hi, scale: float = 1.0) -> MeanCounting:
        key = (e_lo, e_hi)
        if key not in self._counting:
            es = np.linspace(e_lo, e_hi, 15)
            self._counting[key] = (es, [weyl_counting(self.model, None, self.two_s, None, e) for e in es])
        es, total = self._counting[key]
        share = scale * irrep.dimension / self.group.gamma_order
        return MeanCounting(e_lo, e_hi, CubicSpline(es, share * np.asarray(total)))


# commands -------------------------------------------------------------------

def cmd_group(run: Run) -> dict:
    run.write_text("character_table.csv", character_table_csv(run.group, run.irreps))
    rows = []
    for ir in run.irreps:
        fs = frobenius_schur(ir, run.group)
        rows.append({"irrep": ir.label, "dimension": ir.dimension, "fs": fs, "kappa": ir.kappa})
    order = sum(ir.dimension ** 2 for ir in run.irreps)
    if order != run.group.order:
        raise ToleranceFailure(f"sum of squared dimensions {order} != |G| {run.group.order}")
    return {"group_order": run.group.order, "irreps": rows}


def spin_checks(two_s: int) -> dict:
    ctx = SpinContext(two_s)
    comm = max(np.max(np.abs(ctx.Sx @ ctx.Sy - ctx.Sy @ ctx.Sx - 1j * ctx.Sz)),
               np.max(np.abs(ctx.Sy @ ctx.Sz - ctx.Sz @ ctx.Sy - 1j * ctx.Sx)),
               np.max(np.abs(ctx.Sz @ ctx.Sx - ctx.Sx @ ctx.Sz - 1j * ctx.Sy)))
    s = two_s / 2
    cas = np.max(np.abs(ctx.Sx @ ctx.Sx + ctx.Sy @ ctx.Sy + ctx.Sz @ ctx.Sz - s * (s + 1) * np.eye(ctx.dim)))
    full_turn = np.max(np.abs(spin_rotation(ctx, np.array([0.3, -0.5, 0.8]) / math.sqrt(0.98), 2 * math.pi)
                              - (-1) ** two_s * np.eye(ctx.dim)))
    tr = time_reversal_matrix(ctx)
    return {"two_s": two_s, "commutator_error": float(comm), "casimir_error": float(cas),
            "two_pi_error": float(full_turn), "T2_sign": int(time_reversal_square_sign(ctx)),
            "T2_expected": (-1) ** two_s,
            "T_unitarity_error": float(np.max(np.abs(tr.conj().T @ tr - np.eye(ctx.dim))))}


def cmd_spin(run: Run) -> dict:
    rep = spin_checks(run.two_s)
    run.write_json("spin_report.json", rep)
    for key in ("commutator_error", "casimir_error", "two_pi_error", "T_unitarity_error"):
        if rep[key] > 1e-12:
            raise ToleranceFailure(f"spin check {key} = {rep[key]:.3e} > 1e-12")
    if rep["T2_sign"] != rep["T2_expected"]:
        raise ToleranceFailure("spin check T2_sign differs from (-1)^(2S)")
    return rep


def cmd_orbits(run: Run) -> dict:
    orbits = run._search()
    run._orbits = orbits
    run.write_text("orbits.jsonl", "".join(json.dumps(orbit_record(o), sort_keys=True) + "\n" for o in orbits))
    return {"n_orbits": len(orbits), "labels": [o.label for o in orbits]}


def _convention_gate(run: Run, orbits) -> float:
    try:
        return check_conventions(run.model, run.scheme(), orbits, run.physical_irreps(), run.ctx, tol=1e-10)
    except ConventionError as exc:
        raise ToleranceFailure(f"convention equivalence: {exc}") from exc


def cmd_density(run: Run) -> dict:
    d = run.sc["density"]
    orbits = run.orbits()
    worst = _convention_gate(run, orbits)
    energies = np.linspace(d["e_min"], d["e_max"], d["n_points"])
    for ir in run.physical_irreps():
        mean = run.mean_counting(ir, d["e_min"], d["e_max"]).density(energies)
        grid = oscillatory_density(orbits, ir, energies, d["sigma"], run.model.hbar_eff, mean)
        run.write_text(f"density_{ir.label}.csv", grid.to_csv())
    return {"convention_max_deviation": worst, "n_orbits": len(orbits)}


def cmd_specdet(run: Run) -> dict:
    s = run.sc["specdet"]
    orbits = run.orbits()
    energies = np.linspace(s["e_min"], s["e_max"], s["n_points"])
    hb = run.model.hbar_eff
    e_mid = 0.5 * (s["e_min"] + s["e_max"])
    summary = {}
    for ir in run.physical_irreps():
        # Kramers pairs: expand sqrt(Delta) so that every doublet is a simple zero
        scale = 0.5 if run.kramers_halved(ir) else 1.0
        nbar = run.mean_counting(ir, s["e_min"] - 0.01, s["e_max"] + 0.01, scale)
        cutoff = s["cutoff"] if s["cutoff"] is not None else heisenberg_cutoff(float(nbar.density(e_mid)), hb)
        pseudo = enumerate_pseudo_orbits(orbits, ir, cutoff, cap=s["max_pseudo_orbits"], weight_scale=scale)
        rs = riemann_siegel(pseudo, nbar, energies, hb, cutoff)
        plus = determinant_series(pseudo, nbar, energies, hb, "plus", s["eta"])
        zeros = find_zeros(lambda e: riemann_siegel(pseudo, nbar, e, hb, cutoff), s["e_min"], s["e_max"],
                           s["n_points"])
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["E", "riemann_siegel", "re_plus", "im_plus", "nbar"])
        for e, r, p, n in zip(energies, rs, plus, nbar(energies)):
            w.writerow([f"{e:.12g}", f"{r:.12g}", f"{p.real:.12g}", f"{p.imag:.12g}", f"{n:.12g}"])
        w.writerow([])
        w.writerow(["zero", "bracket"])
        for z, width in zeros:
            w.writerow([f"{z:.12g}", f"{width:.3g}"])
        run.write_text(f"specdet_{ir.label}.csv", buf.getvalue())
        summary[ir.label] = {"cutoff": cutoff, "n_pseudo_orbits": len(pseudo), "n_zeros": len(zeros),
                             "kramers_halved": scale == 0.5}
    return summary


def _spectra(run: Run) -> dict:
    q = run.sc["quantum"]
    basis = QuantumBasis(q["n_max"], run.two_s, q["omega"])
    blocks = sector_blocks(build_operators(run.model, basis), run.model)
    irreps = run.physical_irreps()
    with ThreadPoolExecutor(max_workers=run.threads) as pool:
        specs = list(pool.map(lambda ir: project_spectrum(run.model, basis, run.group, ir, q["e_max"], blocks),
                              irreps))
    return {ir.label: sp for ir, sp in zip(irreps, specs)}


def cmd_quantum(run: Run) -> dict:
    if run.model.family != "planar_c3":
        raise ScenarioError("model.family: the quantum reference exists for the planar model only")
    spectra = _spectra(run)
    for lab, sp in spectra.items():
        run.write_json(f"spectrum_{lab}.json", sp.to_dict(run.model))
    irreps = [ir for ir in run.irreps if ir.label in spectra]
    kr = kramers_check(spectra, irreps, run.two_s)
    return {"counts": {k: int(v.eigenvalues.size) for k, v in spectra.items()}, "kramers": kr}


def cmd_compare(run: Run) -> dict:
    c = run.sc["compare"]
    hb = run.model.hbar_eff
    orbits = run.orbits()
    spectra = _spectra(run)
    report = {"warnings": [], "irreps": {}}
    if not orbits:
        report["warnings"].append("orbit database is empty: comparison is Weyl-only")
    times = np.linspace(c["T_min"], c["T_max"], c["n_times"])
    for ir in run.physical_irreps():
        eig = spectra[ir.label].eigenvalues
        nbar = run.mean_counting(ir, c["e_min"], c["e_max"])
        n_q = int(np.searchsorted(eig, c["e_max"]) - np.searchsorted(eig, c["e_min"]))
        n_w = float(nbar(c["e_max"]) - nbar(c["e_min"]))
        entry = {"levels_in_window": n_q, "weyl_levels_in_window": n_w,
                 "weyl_relative_error": abs(n_q - n_w) / max(n_q, 1)}
        if orbits:
            ft = windowed_fourier(eig, nbar.density, c["e_min"], c["e_max"], hb, times)
            peaks = local_peaks(times, ft, 0.05)
            pred = [p for p in predicted_peaks(orbits, ir) if c["T_min"] <= p["period"] <= c["T_max"]]
            pred = pred[:c["n_classes"]]
            found = match_peaks(pred, peaks)
            entry["peaks"] = [{"period": p["period"], "predicted_height": p["height"], "orbits": p["labels"],
                               "measured_period": None if f is None else f[0],
                               "measured_height": None if f is None else f[1]}
                              for p, f in zip(pred, found)]
        report["irreps"][ir.label] = entry
    run.write_json("compare_report.json", report)
    return report


def cmd_selftest(run: Run) -> dict:
    """Invariant suite on the scenario: group, spin, transport, folding, Kramers."""
    rep = {"group": cmd_group(run)}
    for two_s in range(0, 4):
        r = spin_checks(two_s)
        if max(r["commutator_error"], r["two_pi_error"]) > 1e-12 or r["T2_sign"] != r["T2_expected"]:
            raise ToleranceFailure(f"spin algebra for 2S={two_s}")
    rep["spin"] = "ok"
    # orthogonality and projectors
    chi = np.array([ir.characters for ir in run.irreps])
    gram = chi.conj() @ chi.T / run.group.order
    if np.max(np.abs(gram - np.eye(len(run.irreps)))) > 1e-10:
        raise ToleranceFailure("character orthogonality")
    # transport on random folded trajectories
    worst_u, worst_f = 0.0, 0.0
    e0 = run.sc["search"]["energy"]
    for _ in range(3):
        q = np.zeros(run.model.dof)
        while True:
            q = run.rng.uniform(-0.6, 0.6, run.model.dof)
            if potential(run.model, q) < e0:
                break
        p = run.rng.normal(size=run.model.dof)
        p *= math.sqrt(2 * run.model.mass * (e0 - potential(run.model, q))) / np.linalg.norm(p)
        q, p, _ = fold_state(run.group, q, p)
        folded = integrate_folded(run.model, run.group, PhaseState(q, p), 20.0)
        df = transport_folded(run.model, folded, run.ctx)
        du = transport_unfolded(run.model, folded, run.ctx)
        worst_u = max(worst_u, df.unitarity_error, du.unitarity_error)
        ug = run.group.spin_lift(folded.accumulated_g)
        worst_f = max(worst_f, float(np.max(np.abs(df.d - ug.conj().T @ du.d))))
    if worst_u > 1e-8 or worst_f > 1e-7:
        raise ToleranceFailure(f"spin transport: unitarity {worst_u:.2e}, folding {worst_f:.2e}")
    rep["transport"] = {"unitarity": worst_u, "folding": worst_f}
    if run.model.family == "planar_c3":
        q = dict(run.sc["quantum"])
        sc_small = copy.deepcopy(run.sc)
        sc_small["quantum"] = {**q, "n_max": min(q["n_max"], 30), "e_max": None}
        small = Run(sc_small, run.out, run.threads)
        spectra = _spectra(small)
        irreps = [ir for ir in run.irreps if ir.label in spectra]
        kr = kramers_check(spectra, irreps, run.two_s)
        if any(v.get("passed") is False for v in kr.values()):
            raise ToleranceFailure(f"Kramers check: {kr}")
        rep["kramers"] = kr
    run.write_json("selftest_report.json", rep)
    return rep


HANDLERS = {"group": cmd_group, "spin": cmd_spin, "orbits": cmd_orbits, "density": cmd_density,
            "specdet": cmd_specdet, "quantum": cmd_quantum, "compare": cmd_compare, "selftest": cmd_selftest}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="spintrace", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--scenario", type=Path, default=None,
                    help="scenario JSON (default: bundled C3, S=1/2 scenario)")
    ap.add_argument("--out", type=Path, default=None, help="artifact directory (overrides scenario.output)")
    ap.add_argument("--seed", type=int, default=None, help="overrides scenario.seed")
    ap.add_argument("--threads", type=int, default=1, help="worker threads for independent eigensolves")
    ap.add_argument("--verbose", "-v", action="store_true")
    return ap


def load_scenario(path: Path) -> dict:
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from exc
    except OSError as exc:
        raise ScenarioError(f"{path}: {exc}") from exc


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        raw = load_scenario(args.scenario or bundled_scenario_path())
        if args.seed is not None:
            raw["seed"] = args.seed
        if args.out is not None:
            raw["output"] = str(args.out)
        sc = resolve_scenario(raw)
        run = Run(sc, Path(sc["output"]), args.threads)
        run.write_json("resolved_scenario.json", sc)
        result = HANDLERS[args.command](run)
    except ScenarioError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return 1
    except (ToleranceFailure, ConventionError) as exc:
        print(f"tolerance failure: {exc}", file=sys.stderr)
        return 2
    if args.verbose:
        print(json.dumps(result, indent=2, sort_keys=True, default=str))
    return 0


if __name__ == "__main__":
    sys.exit(main())
