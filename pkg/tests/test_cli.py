import csv
import json
from pathlib import Path

import pytest

from spintrace import cli
from spintrace.orbits import orbit_record
from spintrace.traceformula import ConventionError

SCENARIO = {
    "model": {"family": "planar_c3", "lambda": 1.0, "beta": 0.1, "kappa": 0.5, "hbar_eff": 0.05},
    "group": {"kind": "Cn", "n": 3},
    "spin": {"two_s": 1},
    "search": {"energy": 0.5, "T_max": 2.0},
    "density": {"e_min": 0.45, "e_max": 0.55, "n_points": 21, "sigma": 0.004},
    "specdet": {"e_min": 0.45, "e_max": 0.55, "n_points": 201},
    "quantum": {"n_max": 30, "omega": 0.67, "e_max": 0.6},
    "compare": {"e_min": 0.35, "e_max": 0.6, "T_min": 0.3, "T_max": 2.5, "n_times": 200, "n_classes": 1},
    "seed": 7,
}


def _write(tmp_path, sc, name="scenario.json"):
    p = tmp_path / name
    p.write_text(json.dumps(sc))
    return p


@pytest.fixture
def with_orbits(tmp_path, short_orbits):
    def make(sub):
        out = tmp_path / sub
        out.mkdir()
        (out / "orbits.jsonl").write_text("".join(json.dumps(orbit_record(o)) + "\n" for o in short_orbits))
        return out
    return make


def test_bundled_scenario_is_valid():
    raw = json.loads(cli.bundled_scenario_path().read_text())
    sc = cli.resolve_scenario(raw)
    assert sc["group"]["double"] is True


def test_group_command_writes_table(tmp_path):
    out = tmp_path / "g"
    assert cli.main(["group", "--scenario", str(_write(tmp_path, SCENARIO)), "--out", str(out)]) == 0
    rows = list(csv.DictReader((out / "character_table.csv").open()))
    fs = {r["irrep"]: int(r["fs"]) for r in rows}
    assert (fs["1"], fs["3"], fs["5"]) == (0, 1, 0)
    assert (out / "resolved_scenario.json").exists()


@pytest.mark.parametrize("patch, field", [
    ({"model": {"family": "planar_c3", "hbar_eff": -1}}, "model.hbar_eff"),
    ({"model": {"family": "spherical", "hbar_eff": 0.1}}, "model.family"),
    ({"spin": {"two_s": 2}, "group": {"kind": "Cn", "n": 3, "double": True}}, "group.double"),
    ({"density": {"e_min": 0.6, "e_max": 0.5}}, "density.e_min"),
    ({"unexpected": 1}, "<root>"),
])
def test_validation_errors_name_the_field(tmp_path, capsys, patch, field):
    sc = {**SCENARIO, **patch}
    assert cli.main(["group", "--scenario", str(_write(tmp_path, sc)), "--out", str(tmp_path / "o")]) == 1
    assert field in capsys.readouterr().err


def test_malformed_json_reports_position(tmp_path, capsys):
    p = tmp_path / "bad.json"
    p.write_text('{"model": {"family": "planar_c3",\n  "hbar_eff": }}')
    assert cli.main(["group", "--scenario", str(p)]) == 1
    assert "line 2" in capsys.readouterr().err


def test_tolerance_failure_exit_code(tmp_path, with_orbits, monkeypatch, capsys):
    def broken(*args, **kwargs):
        raise ConventionError("orbit p0, irrep 1: geometric 1 vs double -1")

    monkeypatch.setattr(cli, "check_conventions", broken)
    out = with_orbits("t")
    assert cli.main(["density", "--scenario", str(_write(tmp_path, SCENARIO)), "--out", str(out)]) == 2
    assert "convention" in capsys.readouterr().err


def test_selftest_passes(tmp_path):
    assert cli.main(["selftest", "--scenario", str(_write(tmp_path, SCENARIO)), "--out", str(tmp_path / "s")]) == 0
    rep = json.loads((tmp_path / "s" / "selftest_report.json").read_text())
    assert rep["transport"]["unitarity"] < 1e-8


def test_density_is_deterministic(tmp_path, with_orbits):
    path = str(_write(tmp_path, SCENARIO))
    a, b = with_orbits("a"), with_orbits("b")
    assert cli.main(["density", "--scenario", path, "--out", str(a)]) == 0
    assert cli.main(["density", "--scenario", path, "--out", str(b)]) == 0
    names = sorted(p.name for p in a.glob("density_*.csv"))
    assert names == ["density_1.csv", "density_3.csv", "density_5.csv"]
    for n in names:
        assert (a / n).read_bytes() == (b / n).read_bytes()


def test_resolved_scenario_round_trips(tmp_path):
    out = tmp_path / "r"
    assert cli.main(["spin", "--scenario", str(_write(tmp_path, SCENARIO)), "--out", str(out)]) == 0
    resolved = json.loads((out / "resolved_scenario.json").read_text())
    assert cli.resolve_scenario(resolved) == resolved
    out2 = tmp_path / "r2"
    assert cli.main(["spin", "--scenario", str(out / "resolved_scenario.json"), "--out", str(out2)]) == 0
    again = json.loads((out2 / "resolved_scenario.json").read_text())
    resolved["output"] = again["output"]
    assert again == resolved


def test_seed_override(tmp_path):
    out = tmp_path / "seed"
    assert cli.main(["spin", "--scenario", str(_write(tmp_path, SCENARIO)), "--out", str(out), "--seed", "99"]) == 0
    assert json.loads((out / "resolved_scenario.json").read_text())["seed"] == 99


def test_specdet_halves_kramers_irrep(tmp_path, with_orbits):
    sc = cli.resolve_scenario({**SCENARIO, "output": str(with_orbits("d"))})
    run = cli.Run(sc, Path(sc["output"]))
    summary = cli.cmd_specdet(run)
    assert summary["3"]["kramers_halved"] and not summary["1"]["kramers_halved"]
    assert summary["3"]["cutoff"] == pytest.approx(0.5 * summary["1"]["cutoff"], rel=1e-12)
    text = (Path(sc["output"]) / "specdet_1.csv").read_text()
    assert text.startswith("E,riemann_siegel,re_plus,im_plus,nbar\n")
    assert "\nzero,bracket\n" in text


def test_quantum_command(tmp_path):
    out = tmp_path / "q"
    assert cli.main(["quantum", "--scenario", str(_write(tmp_path, SCENARIO)), "--out", str(out), "--threads", "2"]) == 0
    spec = json.loads((out / "spectrum_3.json").read_text())
    assert spec["irrep"] == "3" and len(spec["eigenvalues"]) > 0
    assert not (out / "spectrum_0.json").exists()


def test_compare_with_empty_orbit_database(tmp_path):
    out = tmp_path / "c"
    out.mkdir()
    (out / "orbits.jsonl").write_text("")
    assert cli.main(["compare", "--scenario", str(_write(tmp_path, SCENARIO)), "--out", str(out)]) == 0
    rep = json.loads((out / "compare_report.json").read_text())
    assert any("empty" in w for w in rep["warnings"])
    assert "peaks" not in rep["irreps"]["1"]


def test_compare_matches_shortest_orbit(tmp_path, with_orbits):
    out = with_orbits("m")
    sc = {**SCENARIO, "model": {**SCENARIO["model"], "hbar_eff": 0.02},
          "quantum": {"n_max": 90, "omega": 0.67, "e_max": 0.62}}
    assert cli.main(["compare", "--scenario", str(_write(tmp_path, sc)), "--out", str(out)]) == 0
    rep = json.loads((out / "compare_report.json").read_text())
    for lab in ("1", "3", "5"):
        peak = rep["irreps"][lab]["peaks"][0]
        assert peak["measured_period"] == pytest.approx(1.8134, rel=0.02)
        assert rep["irreps"][lab]["weyl_relative_error"] < 0.05
