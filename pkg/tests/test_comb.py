import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from combwalk.comb import (CombConfig, classify_chain, e_gt4_density, ensemble_manifest, hole_string_density,
                           run_lengths, sample_comb, sample_ensemble, sample_seed, string_density_stats,
                           tooth_even_density, tooth_odd_density, tooth_string_density)
from combwalk.errors import InvalidArgument

occupancies = st.text(alphabet="01", min_size=1, max_size=40)


def test_sampling_is_reproducible():
    a = sample_comb(0.3, 100, "open", 5)
    b = sample_comb(0.3, 100, "open", 5)
    assert a == b and a.digest() == b.digest()
    assert sample_comb(0.3, 100, "open", 6) != a


def test_extreme_probabilities():
    assert sample_comb(0.0, 50).n_teeth == 50
    assert sample_comb(1.0, 50).n_teeth == 0


def test_ensemble_seeds_do_not_depend_on_order():
    ens = sample_ensemble(0.5, 30, "periodic", 9, 5)
    assert ens[3] == sample_comb(0.5, 30, "periodic", sample_seed(9, 3))
    m1 = ensemble_manifest(0.5, 30, "periodic", 9, 5)
    m2 = ensemble_manifest(0.5, 30, "periodic", 9, 5, ens)
    assert m1 == m2


@pytest.mark.parametrize("bad", [dict(p=-0.1), dict(p=1.5), dict(n_sites=0)])
def test_invalid_sampling(bad):
    kw = dict(p=0.5, n_sites=10)
    kw.update(bad)
    with pytest.raises(InvalidArgument):
        sample_comb(**kw)


def test_invalid_configs():
    with pytest.raises(InvalidArgument):
        CombConfig.from_string("012")
    with pytest.raises(InvalidArgument):
        CombConfig.from_string("10", "periodic")
    with pytest.raises(InvalidArgument):
        CombConfig.from_string("101", "twisted")


@given(occupancies)
def test_string_round_trip(occ):
    c = CombConfig.from_string(occ)
    assert c.occupancy() == occ
    assert c.complement().complement() == c
    assert c.n_teeth + c.complement().n_teeth == c.n_sites


@given(occupancies, st.sampled_from(["open", "periodic"]))
def test_run_lengths_cover_the_spine(occ, boundary):
    if boundary == "periodic" and len(occ) < 3:
        return
    c = CombConfig.from_string(occ, boundary)
    rl = run_lengths(c)
    assert sum(rl.tooth_runs) == c.n_teeth
    assert sum(rl.hole_runs) == c.n_holes
    assert rl.n_t_odd + rl.n_t_even == len(rl.tooth_runs)


def test_periodic_runs_wrap():
    rl = run_lengths(CombConfig.from_string("1100111", "periodic"))
    assert rl.tooth_runs == (5,) and rl.hole_runs == (2,)


@pytest.mark.parametrize("occ,boundary,k_tooth,k_hole", [
    ("010", "open", {2}, set()),          # L = 4, the tooth sits at position 2
    ("101", "open", set(), {2}),
    ("0010010", "open", set(), set()),    # L = 8, teeth at 3 and 6: generic
    ("00100100", "open", {3}, set()),     # L = 9, teeth at 3, 6
    ("0101", "periodic", {2}, {2}),
    ("100100", "periodic", {3}, set()),
])
def test_classify_chain(occ, boundary, k_tooth, k_hole):
    cls = classify_chain(CombConfig.from_string(occ, boundary))
    assert set(cls.k_tooth) == k_tooth and set(cls.k_hole) == k_hole


def test_uniform_combs_are_not_generic():
    assert not classify_chain(CombConfig.from_string("1111")).is_generic
    assert not classify_chain(CombConfig.from_string("000", "periodic")).is_generic


def test_density_closed_forms_are_consistent():
    for p in (0.1, 0.5, 0.9):
        ell = np.arange(1, 400)
        # every tooth belongs to one tooth string, every hole to one hole string
        assert np.isclose(np.sum(ell * tooth_string_density(p, ell)), 1 - p)
        assert np.isclose(np.sum(ell * hole_string_density(p, ell)), p)
        odd = np.sum(tooth_string_density(p, ell[ell % 2 == 1]))
        assert np.isclose(odd, tooth_odd_density(p))
        assert np.isclose(np.sum(tooth_string_density(p, ell[ell % 2 == 0])), tooth_even_density(p))
        assert np.isclose(e_gt4_density(p), (1 - p + tooth_odd_density(p)) / 2)


def test_string_densities_match_closed_forms():
    p = 0.4
    s = string_density_stats(p, 400, 200, 3, max_len=6)
    assert abs(s.d_tooth_odd - tooth_odd_density(p)) < 4 * s.d_tooth_odd_err + 1e-3
    assert abs(s.d_tooth_even - tooth_even_density(p)) < 4 * s.d_tooth_even_err + 1e-3
    assert np.all(np.abs(s.d_hole - hole_string_density(p, s.ell)) < 4 * s.d_hole_err + 1e-3)
    assert abs(s.hole_fraction - p) < 0.01


@settings(max_examples=30, deadline=None)
@given(st.floats(0.0, 1.0), st.integers(1, 200), st.integers(0, 2**32))
def test_sampled_probability_is_recorded(p, n, seed):
    c = sample_comb(p, n, "open", seed)
    assert c.hole_prob == p and c.seed == seed and c.n_sites == n
