import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from combwalk.errors import InvalidArgument, PoleError
from combwalk.riccati import (E_MAX, anderson_params_egt4, chi_flow_attractor, delta_zero, egt4_p1_exact,
                              egt4_sweep, free_chain_gamma, idos_grid, kappa_stationary_cov, lyapunov_binary_chain,
                              lyapunov_egt4, lyapunov_phase_shift, lyapunov_transfer, lyapunov_upsilon,
                              min_lyapunov_egt4, simulate_kappa, small_e_scaling, thouless_check,
                              upsilon_p0_exact, v_of_e_delta)


def test_p1_is_deterministic():
    for e in np.linspace(4.05, E_MAX, 6):
        est = lyapunov_egt4(e, 1.0, 20000, 0)
        assert abs(est.gamma_bar - egt4_p1_exact(e)) < 1e-12
        assert est.eta_bar == 0.0 or abs(est.eta_bar) < 1e-12


def test_p0_column_state_closed_form():
    for th in (0.2, 1.0, 2.5):
        est = lyapunov_upsilon(None, 0.0, 50000, 0, theta=th)
        assert abs(est.gamma_bar - upsilon_p0_exact(th)) < 1e-10


def test_free_chain():
    assert np.allclose(free_chain_gamma(np.array([0.0, 1.9, 2.5])), [0.0, 0.0, math.acosh(1.25)])
    est = lyapunov_binary_chain(2.5, 1.0, 1.0, 20000)
    assert abs(est.gamma_bar - math.acosh(1.25)) < 1e-12


def test_parameter_maps():
    ap = anderson_params_egt4(5.0)
    v = ap.v_strength
    assert math.isclose(ap.energy_chain, v - 1 + 1 / (v - 1))
    e = 1.3
    assert abs(v_of_e_delta(e, delta_zero(e))) < 1e-12
    with pytest.raises(PoleError):
        v_of_e_delta(e, math.pi)
    with pytest.raises(InvalidArgument):
        lyapunov_egt4(3.9, 0.5, 20000)
    with pytest.raises(InvalidArgument):
        lyapunov_egt4(4.5, 1.5, 20000)
    with pytest.raises(InvalidArgument):
        lyapunov_egt4(4.5, 0.5, 1500)


def test_estimators_agree():
    """Riccati and transfer-matrix products on the same disorder."""
    a = lyapunov_binary_chain(0.7, 3.0, 0.5, 200000, 3)
    b = lyapunov_transfer(0.7, 3.0, 0.5, 200000, 3)
    assert abs(a.gamma_bar - b.gamma_bar) < 3 * a.stderr_gamma


def test_egt4_matches_binary_chain():
    e, p = 4.7, 0.4
    ap = anderson_params_egt4(e)
    a = lyapunov_egt4(e, p, 200000, 5)
    b = lyapunov_binary_chain(ap.energy_chain, ap.v_strength, p, 200000, 5)
    assert abs(a.gamma_bar - b.gamma_bar) < 4 * math.hypot(a.stderr_gamma, b.stderr_gamma)


def test_reproducible():
    a = lyapunov_egt4(4.8, 0.3, 50000, 11)
    b = lyapunov_egt4(4.8, 0.3, 50000, 11)
    assert a == b
    assert a.xi == 1 / a.gamma_bar


@settings(max_examples=15, deadline=None)
@given(st.floats(0.05, 0.95), st.floats(4.01, E_MAX))
def test_gamma_positive_above_four(p, e):
    est = lyapunov_egt4(e, p, 30000, 1)
    assert est.gamma_bar > 0


def test_phase_shift_free_point():
    e = 1.5
    est = lyapunov_phase_shift(e, delta_zero(e), 0.5, 200000, 2)
    assert abs(est.gamma_bar) < 5 * est.stderr_gamma + 1e-3


def test_idos_monotone_and_bounded():
    grid = np.linspace(-2.1, 5.1, 40)
    eta = idos_grid(3.0, 0.5, grid, 50000, 0)
    assert np.all(np.diff(eta) >= 0)
    assert eta[0] == 0.0 and eta[-1] == 1.0
    sw = egt4_sweep(0.5, np.linspace(4.01, E_MAX, 10), 50000, 0)
    assert np.all(np.diff(sw.eta) >= -3 * sw.eta_stderr[1:])


def test_thouless_small():
    rep = thouless_check(3.0, 0.5, [0.0, 3.0], points_per_band=200, n_iter=100000, seed=1)
    assert rep.max_deviation < 0.05


def test_min_lyapunov_needs_grid():
    with pytest.raises(InvalidArgument):
        min_lyapunov_egt4(0.5, np.linspace(4.1, 5, 10))
    m = min_lyapunov_egt4(0.5, n_iter=5000)
    assert 4 < m.energy <= E_MAX and m.gamma_min > 0


def test_small_e_scaling_regular_comb():
    fit = small_e_scaling(0.0, np.geomspace(1e-4, 1e-2, 4), 100000, 0)
    assert fit.relative_error < 0.02


def test_kappa_process():
    p = 0.5
    st_ = simulate_kappa(p, seed=3)
    assert abs(st_.attractor - st_.fixed_point) < 1e-6
    assert abs(chi_flow_attractor(0.3) - math.sqrt(0.7) * complex(math.cos(math.pi / 4), -math.sin(math.pi / 4))) < 1e-6
    assert np.allclose(st_.cov, st_.cov_exact, rtol=0.15, atol=2e-3)
    # the stationary covariance scales like p (1 - p) / sqrt(1 - p)
    c1, c2 = kappa_stationary_cov(0.2), kappa_stationary_cov(0.4)
    assert np.allclose(c2 / c1, (0.4 * 0.6 / math.sqrt(0.6)) / (0.2 * 0.8 / math.sqrt(0.8)))
    with pytest.raises(InvalidArgument):
        simulate_kappa(1.0)
