import math
import warnings

import numpy as np
import pytest
import scipy.sparse.linalg as spla
from hypothesis import given, settings
from hypothesis import strategies as st

from combwalk.boundstates import solve_bound_states
from combwalk.comb import CombConfig, sample_comb
from combwalk.diffusion import (comb_hamiltonian, embedded_profile, ensemble_ploc, escape_amplitude_scaling,
                                evolve_oracle, fit_power_law, p_embedded, p_esc_all, p_esc_tooth, p_loc,
                                p_loc_all, p_loc_profile, p_loc_time, q_envelope)
from combwalk.errors import InvalidArgument

REGULAR_P_LOC = 0.5 - 2 / (3 * math.pi) + math.sqrt(3) / (9 * math.pi) * math.log(2 + math.sqrt(3))


def _total(comb, n0):
    return p_loc(comb, n0) + p_embedded(comb, n0) + float(np.sum(p_esc_all(comb, n0, 1e-11).p_esc))


@settings(max_examples=15, deadline=None)
@given(st.text(alphabet="01", min_size=3, max_size=24), st.booleans(), st.integers(0, 23))
def test_completeness(occ, periodic, n0):
    comb = CombConfig.from_string(occ, "periodic" if periodic else "open")
    n0 = n0 % comb.n_sites
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assert abs(_total(comb, n0) - 1.0) < 1e-8


@pytest.mark.parametrize("occ,boundary", [("010", "open"), ("01000100010", "open"), ("0101", "periodic"),
                                          ("100100100", "periodic"), ("000", "open")])
def test_completeness_with_embedded_states(occ, boundary):
    comb = CombConfig.from_string(occ, boundary)
    for n0 in range(comb.n_sites):
        assert abs(_total(comb, n0) - 1.0) < 1e-8


def test_regular_comb_value():
    comb = CombConfig(np.ones(300, bool), "periodic")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        assert abs(p_loc(comb, 0) - REGULAR_P_LOC) < 2e-3


def test_profiles_sum_to_totals():
    comb = sample_comb(0.4, 40, "periodic", 2)
    st_ = solve_bound_states(comb)
    for n0 in (0, 13):
        prof = p_loc_profile(comb, n0, st_)
        assert math.isclose(prof.sum(), p_loc(comb, n0, st_), rel_tol=1e-10)
        assert math.isclose(embedded_profile(comb, n0).sum(), p_embedded(comb, n0), abs_tol=1e-12)
        assert np.all(prof <= q_envelope(comb, n0, st_) + 1e-12)


def test_time_profile_averages_to_profile():
    comb = sample_comb(0.5, 14, "open", 6)
    st_ = solve_bound_states(comb)
    times = np.linspace(0, 4000, 40001)
    series = p_loc_time(comb, 3, times, st_)
    assert np.all(series <= q_envelope(comb, 3, st_) + 1e-12)
    avg = series.mean(axis=0)
    prof = p_loc_profile(comb, 3, st_)
    assert np.allclose(avg, prof, atol=2e-3)


def test_escape_by_tooth():
    comb = CombConfig.from_string("1101")
    res = p_esc_all(comb, 0)
    assert math.isclose(p_esc_tooth(comb, 0, 1), res.p_esc[1])
    with pytest.raises(InvalidArgument):
        p_esc_tooth(comb, 0, 2)
    with pytest.raises(InvalidArgument):
        p_loc(comb, 7)


def test_p_loc_bounds():
    comb = sample_comb(0.5, 60, "periodic", 9)
    vals = p_loc_all(comb)
    assert np.all((vals >= 0) & (vals <= 1))


def test_power_law_fit():
    d = np.arange(10, 60, 5)
    k, c, cov = fit_power_law(d, 3.0 * d ** -4.0)
    assert math.isclose(k, -4.0, abs_tol=1e-10) and math.isclose(c, 3.0, rel_tol=1e-10)
    assert math.isclose(escape_amplitude_scaling(0.0), 3 / (2 * math.pi))


def test_ensemble_small():
    st_ = ensemble_ploc(0.5, 60, 20, 1, bins=10)
    assert st_.mean <= st_.bound + 3 * st_.stderr
    assert st_.hist_tooth.sum() + st_.hist_hole.sum() == 60 * 20
    assert ensemble_ploc(0.5, 60, 20, 1, bins=10, threads=2).mean == st_.mean


def test_oracle_hamiltonian_and_norm():
    comb = sample_comb(0.5, 10, "open", 1)
    h = comb_hamiltonian(comb, 30)
    assert (h != h.T).nnz == 0
    ev = np.linalg.eigvalsh(h.toarray())
    assert ev.min() > -1e-12 and ev.max() < 6
    run = evolve_oracle(comb, 4, 20.0, tooth_length=200, window=10, dt=0.5)
    assert run.norm_drift < 1e-10
    # same truncated comb propagated by scipy's expm_multiply
    h = comb_hamiltonian(comb, 200).tocsc()
    psi = np.zeros(h.shape[0], complex)
    psi[4] = 1.0
    site = np.abs(spla.expm_multiply(-1j * 20.0 * h, psi)) ** 2
    n = comb.n_sites
    expected = site[:n].copy()
    expected[comb.teeth] += site[n:].reshape(comb.n_teeth, 200).sum(axis=1)
    assert np.allclose(run.site_prob[-1], expected, atol=1e-9)
