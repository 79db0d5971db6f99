import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from combwalk.chainspec import (ChainHamiltonian, component_sizes, de_dv_exact, de_dv_fd,
                                eigenvalues, hole_string_spectrum, lemma_invariant_checks, n_e_gt4_formula,
                                penrose, spectral_flow, sturm_count)
from combwalk.comb import CombConfig, sample_comb
from combwalk.errors import DegeneracyError, InvalidArgument

combs = st.builds(lambda occ, per: CombConfig.from_string(occ, "periodic" if per and len(occ) >= 3 else "open"),
                  st.text(alphabet="01", min_size=1, max_size=30), st.booleans())
strengths = st.floats(-12, 12, allow_nan=False)


@settings(max_examples=60, deadline=None)
@given(combs, strengths)
def test_eigenvalues_match_dense(comb, v):
    ch = ChainHamiltonian(comb, v)
    assert np.allclose(eigenvalues(ch), np.linalg.eigvalsh(ch.dense()), atol=1e-10)


@settings(max_examples=60, deadline=None)
@given(combs, strengths, st.floats(-8, 14))
def test_sturm_count(comb, v, x):
    ch = ChainHamiltonian(comb, v)
    vals = np.linalg.eigvalsh(ch.dense())
    if np.min(np.abs(vals - x)) > 1e-8:
        assert sturm_count(ch, x) == int(np.sum(vals < x))


@pytest.mark.parametrize("occ, v, x", [
    ("0000000000000", 0.0, 6.585533234170321e-131),  # tiny pivots in the leading block
    ("101010", -2.0, 1.0),  # x is an eigenvalue of the leading block
    ("000101011", -2.0, 1.0),
])
def test_sturm_count_periodic_hard_cases(occ, v, x):
    ch = ChainHamiltonian(CombConfig.from_string(occ, "periodic"), v)
    vals = np.linalg.eigvalsh(ch.dense())
    assert sturm_count(ch, x) == int(np.sum(vals < x))


def test_matvec_matches_dense():
    c = sample_comb(0.5, 17, "periodic", 2)
    ch = ChainHamiltonian(c, 2.5)
    x = np.random.default_rng(0).standard_normal(17)
    assert np.allclose(ch.matvec(x), ch.dense() @ x)


@settings(max_examples=40, deadline=None)
@given(combs, strengths)
def test_symmetries(comb, v):
    """Bipartite chains: spec H(V) = -spec H(-V) and spec H_c(V) = V - spec H(V)."""
    if comb.periodic and comb.n_sites % 2:
        return
    e = eigenvalues(ChainHamiltonian(comb, v))
    comp = eigenvalues(ChainHamiltonian(comb.complement(), v))
    assert np.allclose(np.sort(v - e), comp, atol=1e-10)
    assert np.allclose(np.sort(-eigenvalues(ChainHamiltonian(comb, -v))), e, atol=1e-10)


def test_slopes_are_in_unit_interval():
    c = sample_comb(0.5, 24, "open", 4)
    flow = spectral_flow(c, np.linspace(-10, 10, 401))
    assert flow.slopes.min() >= -1e-9 and flow.slopes.max() <= 1 + 1e-9


def test_slope_formula_against_finite_difference():
    c = sample_comb(0.4, 20, "open", 1)
    ch = ChainHamiltonian(c, 1.7)
    for k in range(c.n_sites):
        assert abs(de_dv_exact(ch, k) - de_dv_fd(ch, k)) < 1e-6


def test_degenerate_slope_raises():
    ring = ChainHamiltonian(CombConfig.from_string("000000", "periodic"), 0.0)
    with pytest.raises(DegeneracyError):
        de_dv_exact(ring, 1)


@settings(max_examples=40, deadline=None)
@given(combs, st.floats(4.01, 40))
def test_component_sizes(comb, v):
    assert component_sizes(ChainHamiltonian(comb, v)) == (comb.n_holes, comb.n_teeth)


def test_large_v_limit_is_hole_strings():
    c = CombConfig.from_string("0010001101000")
    low = eigenvalues(ChainHamiltonian(c, 1e7))[: c.n_holes]
    assert np.allclose(low, hole_string_spectrum(c), atol=1e-6)


def test_penrose_range():
    v, e = penrose(np.array([-1e9, 0.0, 1e9]), np.array([0.0, 0.0, 0.0]))
    assert np.all(np.abs(v) < math.pi) and np.all(np.abs(e) < math.pi)


def test_flow_needs_increasing_grid():
    with pytest.raises(InvalidArgument):
        spectral_flow(CombConfig.from_string("101"), [1.0, 0.0])
    with pytest.raises(InvalidArgument):
        ChainHamiltonian(CombConfig.from_string("1"), float("inf"))


@pytest.mark.parametrize("occ", ["1", "11", "111", "1011", "110111", "0110", "1101101"])
def test_count_formula_small_cases(occ):
    from combwalk.boundstates import m_matrix_sigmas
    c = CombConfig.from_string(occ)
    assert n_e_gt4_formula(c) == len(m_matrix_sigmas(c))


def test_lemma_checks_pass():
    for occ, b in [("0101010", "open"), ("01010101", "periodic"), ("0010110", "open"), ("100100", "periodic")]:
        rep = lemma_invariant_checks(CombConfig.from_string(occ, b), np.linspace(-6, 6, 25))
        assert rep.passed, rep.failures()[:3]
