import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from spintrace.spinalg import (SpinContext, classify_antiunitary_spin_part, polar_unitary, spin_rotation,
                               time_reversal_matrix, time_reversal_square_sign)

TWO_S = [0, 1, 2, 3]
unit_vectors = st.tuples(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1)).filter(
    lambda v: np.linalg.norm(v) > 1e-2).map(lambda v: np.array(v) / np.linalg.norm(v))


@pytest.mark.parametrize("two_s", TWO_S + [4, 5])
def test_commutators_and_casimir(two_s):
    c = SpinContext(two_s)
    assert np.allclose(c.Sx @ c.Sy - c.Sy @ c.Sx, 1j * c.Sz, atol=1e-12)
    assert np.allclose(c.Sy @ c.Sz - c.Sz @ c.Sy, 1j * c.Sx, atol=1e-12)
    assert np.allclose(c.Sz @ c.Sx - c.Sx @ c.Sz, 1j * c.Sy, atol=1e-12)
    s = two_s / 2
    cas = c.Sx @ c.Sx + c.Sy @ c.Sy + c.Sz @ c.Sz
    assert np.allclose(cas, s * (s + 1) * np.eye(two_s + 1), atol=1e-12)


def test_spin_half_matches_pauli():
    c = SpinContext(1)
    assert np.allclose(2 * c.Sx, [[0, 1], [1, 0]])
    assert np.allclose(2 * c.Sy, [[0, -1j], [1j, 0]])
    assert np.allclose(2 * c.Sz, [[1, 0], [0, -1]])


@pytest.mark.parametrize("two_s", TWO_S)
@settings(max_examples=15, deadline=None)
@given(n=unit_vectors)
def test_full_turn_sign(two_s, n):
    c = SpinContext(two_s)
    assert np.allclose(spin_rotation(c, n, 2 * np.pi), (-1) ** two_s * np.eye(two_s + 1), atol=1e-12)


def test_rotation_examples():
    c = SpinContext(1)
    assert np.allclose(spin_rotation(c, [0, 0, 1], 2 * np.pi), -np.eye(2), atol=1e-12)
    assert np.allclose(spin_rotation(c, [0, 0, 1], np.pi / 2),
                       np.diag([np.exp(-1j * np.pi / 4), np.exp(1j * np.pi / 4)]), atol=1e-14)
    for two_s in TWO_S:
        assert np.allclose(spin_rotation(SpinContext(two_s), [1, 0, 0], 0.0), np.eye(two_s + 1))


def test_rotation_rejects_non_unit_axis():
    with pytest.raises(ValueError):
        spin_rotation(SpinContext(1), [1, 1, 0], 0.3)


@settings(max_examples=25, deadline=None)
@given(n=unit_vectors, theta=st.floats(-7, 7), two_s=st.sampled_from(TWO_S))
def test_rotation_matches_expm(n, theta, two_s):
    c = SpinContext(two_s)
    u = spin_rotation(c, n, theta)
    assert np.allclose(u, expm(-1j * theta * c.dot(n)), atol=1e-12)
    assert np.allclose(u.conj().T @ u, np.eye(two_s + 1), atol=1e-12)


@pytest.mark.parametrize("two_s,sign", [(0, 1), (1, -1), (2, 1), (3, -1)])
def test_time_reversal_square(two_s, sign):
    c = SpinContext(two_s)
    assert time_reversal_square_sign(c) == sign
    t = time_reversal_matrix(c)
    assert np.allclose(t @ t.conj(), sign * np.eye(two_s + 1), atol=1e-12)


def test_time_reversal_examples():
    t = time_reversal_matrix(SpinContext(1))
    assert np.allclose(t, [[0, 1], [-1, 0]], atol=1e-14)
    assert np.allclose(time_reversal_matrix(SpinContext(0)), [[1]])
    c = SpinContext(2)
    m = time_reversal_matrix(c)
    for s in (c.Sx, c.Sy, c.Sz):
        assert np.allclose(m @ s.conj() @ np.linalg.inv(m), -s, atol=1e-12)


def test_antiunitary_examples():
    assert classify_antiunitary_spin_part(0.0, [0, 1, 0]) == "conventional-equivalent"
    assert classify_antiunitary_spin_part(1.0, [0, 0, 0]) == "rotation-removed"
    assert classify_antiunitary_spin_part(0.5, [0.5, 1 / math.sqrt(2), 0]) == "invalid"


@settings(max_examples=60, deadline=None)
@given(st.floats(0, 2 * np.pi), st.floats(0, np.pi), st.floats(0, 2 * np.pi))
def test_antiunitary_branches_exhaust_admissible_cases(chi, theta, phi):
    # parametrize the unit 4-sphere; the classifier result must agree with a direct U U* test
    a0 = math.cos(theta)
    a = math.sin(theta) * np.array([math.cos(chi) * math.sin(phi), math.cos(phi), math.sin(chi) * math.sin(phi)])
    kind = classify_antiunitary_spin_part(a0, a)
    sig = [np.array([[0, 1], [1, 0]]), np.array([[0, -1j], [1j, 0]]), np.diag([1, -1])]
    u = a0 * np.eye(2) + 1j * sum(ai * s for ai, s in zip(a, sig))
    w = u @ u.conj()
    prop = np.allclose(w, w[0, 0] * np.eye(2), atol=1e-10)
    assert (kind != "invalid") == prop
    if kind == "rotation-removed":
        assert abs(a[1]) < 1e-10
    if kind == "conventional-equivalent":
        assert np.allclose([a0, a[0], a[2]], 0, atol=1e-6)


def test_polar_unitary():
    rng = np.random.default_rng(4)
    m = rng.normal(size=(3, 3)) + 1j * rng.normal(size=(3, 3))
    u = polar_unitary(m)
    assert np.allclose(u.conj().T @ u, np.eye(3))
    h = u.conj().T @ m
    assert np.allclose(h, h.conj().T)
    assert np.all(np.linalg.eigvalsh(h) > 0)
