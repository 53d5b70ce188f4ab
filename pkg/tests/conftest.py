import numpy as np
import pytest

from spintrace.dynamics import ModelSpec
from spintrace.grouprep import build_double_group, build_point_group, character_table, group_from_spec
from spintrace.orbits import SearchConfig, find_orbits
from spintrace.spinalg import SpinContext


RX = np.diag([1.0, -1.0, -1.0])
RY = np.diag([-1.0, 1.0, -1.0])


@pytest.fixture(scope="session")
def c3_double():
    return group_from_spec({"kind": "Cn", "n": 3, "axis": [0, 0, 1], "double": True}, two_s=1)


@pytest.fixture(scope="session")
def c3_irreps(c3_double):
    return character_table(c3_double, rng=np.random.default_rng(0))


@pytest.fixture(scope="session")
def q8():
    return build_double_group(build_point_group({"kind": "custom", "generators": [RX, RY]}), 1)


@pytest.fixture(scope="session")
def c3v_double():
    return group_from_spec({"kind": "Cnv", "n": 3, "double": True}, two_s=1)


@pytest.fixture(scope="session")
def chaotic_model():
    # quartic-confined C3 potential, chaotic above E ~ 0.35
    return ModelSpec(family="planar_c3", lam=1.0, beta=0.1, kappa=0.5, hbar_eff=0.01)


@pytest.fixture(scope="session")
def short_orbits(chaotic_model, c3_double):
    # the time-reversed pair p0/p1 at E = 0.5 (T = 1.8134) with decorations
    cfg = SearchConfig(n_trajectories=2, seed_time=150, max_returns=3, grid_seeds=4)
    return find_orbits(chaotic_model, c3_double, 0.5, 2.0, cfg, ctx=SpinContext(1))


def by_label(irreps, label):
    return next(ir for ir in irreps if ir.label == label)


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "_acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
