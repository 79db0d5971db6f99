import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from combwalk.boundstates import (bound_state_residual, energy_of_sigma, m_matrix_sigmas,
                                  scan_branch_roots, sigma_of_energy, solve_bound_states, tail_inner)
from combwalk.chainspec import n_e_gt4_formula
from combwalk.comb import CombConfig, sample_comb
from conftest import all_combs


def _sigmas(states):
    return np.array([s.sigma for s in states])


@pytest.mark.parametrize("boundary,sizes", [("open", range(1, 10)), ("periodic", range(3, 10))])
def test_exhaustive_small_combs_against_companion_matrix(boundary, sizes, quiet):
    for n in sizes:
        for comb in all_combs(n, boundary):
            states = solve_bound_states(comb)
            ref = m_matrix_sigmas(comb)
            ref = ref[ref > 1e-6]
            assert len(states) == len(ref) == n_e_gt4_formula(comb), comb
            if len(ref):
                assert np.max(np.abs(_sigmas(states) - ref)) < 1e-8, comb


def test_two_teeth_closed_form():
    (s,) = solve_bound_states(CombConfig.from_string("11"))
    assert math.isclose(s.sigma, math.log(2.0), abs_tol=1e-12)
    assert math.isclose(s.energy, 4.5, abs_tol=1e-12)


def test_single_tooth_has_no_bound_state():
    assert len(solve_bound_states(CombConfig.from_string("1"))) == 0


@pytest.mark.parametrize("n", [5, 8, 12, 30])
def test_uniform_ring_plane_waves(n, quiet):
    k = 2 * np.pi * np.arange(n) / n
    c = -np.cos(k)
    expected = np.sort(np.log(1 + 2 * c[c > 1e-12]))
    got = _sigmas(solve_bound_states(CombConfig(np.ones(n, bool), "periodic")))
    assert len(got) == len(expected)
    assert np.allclose(got, expected, atol=1e-9)


def test_energy_sigma_maps():
    s = np.linspace(0.01, math.log(3), 7)
    assert np.allclose(sigma_of_energy(energy_of_sigma(s)), s)
    assert math.isclose(energy_of_sigma(math.log(3)), 16 / 3)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 1.0), st.integers(1, 64), st.integers(0, 10**6), st.booleans())
def test_states_are_orthonormal_eigenvectors(p, n, seed, periodic):
    boundary = "periodic" if periodic and n >= 3 else "open"
    comb = sample_comb(p, n, boundary, seed)
    states = solve_bound_states(comb)
    assert len(states) == n_e_gt4_formula(comb)
    for a in states:
        assert bound_state_residual(comb, a) < 1e-9
        assert 0 < a.sigma <= math.log(3) + 1e-12
    if len(states) <= 40:
        gram = np.array([[tail_inner(a, b, comb.chi) for b in states] for a in states])
        if gram.size:
            assert np.allclose(gram, np.eye(len(states)), atol=1e-8)


def test_degenerate_cluster_is_resolved():
    # mirror-symmetric comb with two far-apart identical tooth pairs: near-degenerate pair
    comb = CombConfig.from_string("0110" + "0" * 3 + "0110", "open")
    states = solve_bound_states(comb)
    assert len(states) == 2
    assert all(bound_state_residual(comb, s) < 1e-9 for s in states)
    assert abs(tail_inner(states[0], states[1], comb.chi)) < 1e-10


def test_scan_cross_check():
    comb = sample_comb(0.4, 24, "open", 3)
    assert np.allclose(scan_branch_roots(comb), _sigmas(solve_bound_states(comb)), atol=1e-8)


def test_large_ring_count():
    comb = sample_comb(0.5, 500, "periodic", 1)
    assert len(solve_bound_states(comb)) == n_e_gt4_formula(comb)


@pytest.mark.parametrize("n", [12, 21, 40])
def test_uniform_ring_degenerate_pairs_are_orthonormal(n):
    comb = CombConfig.from_string("1" * n, "periodic")
    states = solve_bound_states(comb)
    gram = np.array([[tail_inner(a, b, comb.chi) for b in states] for a in states])
    assert np.allclose(gram, np.eye(len(states)), atol=1e-8)
    # plane waves at +k and -k share one root
    assert len({s.cluster for s in states}) < len(states)
