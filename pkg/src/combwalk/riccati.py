"""Riccati Monte Carlo for Lyapunov exponents and integrated densities of states.

All estimators iterate psi_{k+1} = -1/psi_k + v_k - shift over an i.i.d.
tooth/hole sequence (tooth with probability 1 - p), discard a burn-in and
report batch-mean standard errors over 100 equal batches.

Families:
  egt4          E > 4 bound-state chain (staggered), potentials e^s - 1 / e^s + e^-s
  upsilon       E < 4 column states, complex potentials 1 + e^{-i theta} / 2 cos theta
  phase_shift   binary chain at (E - 2, V(E, delta))
  binary_chain  Anderson binary chain, potential V on teeth and 0 on holes
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import solve_continuous_lyapunov
from scipy.signal import lfilter

from . import _kernels
from .errors import InvalidArgument, PoleError

BURN_IN = 1000
N_BATCHES = 100
E_MAX = 16.0 / 3.0


@dataclass(frozen=True)
class RiccatiEstimate:
    gamma_bar: float
    stderr_gamma: float
    eta_bar: float  # nan when undefined (complex recursion)
    stderr_eta: float
    n_iter: int
    burn_in: int
    seed: int
    family: str
    params: dict = field(default_factory=dict)

    @property
    def xi(self) -> float:
        """Localization length 1 / gamma, only for gamma > 0."""
        if not self.gamma_bar > 0:
            raise ValueError("localization length needs gamma > 0")
        return 1.0 / self.gamma_bar


@dataclass(frozen=True)
class AndersonParams:
    energy_chain: float
    v_strength: float


def _check_p(p):
    if not 0.0 <= p <= 1.0:
        raise InvalidArgument(f"hole probability must lie in [0, 1], got {p}")


def _check_iters(n_iter, burn_in):
    if n_iter < burn_in + 1000:
        raise InvalidArgument(f"n_iter must be at least burn_in + 1000 = {burn_in + 1000}")


def tooth_sequence(p, n_iter, seed) -> np.ndarray:
    """i.i.d. occupations, True (tooth) with probability 1 - p."""
    rng = np.random.Generator(np.random.PCG64(seed))
    return rng.random(int(n_iter)) >= p


def _mean_se(batches):
    b = np.asarray(batches, dtype=float)
    return float(b.mean()), float(b.std(ddof=1) / math.sqrt(b.size))


def sigma_of_e(energy):
    if not energy > 4.0:
        raise InvalidArgument(f"E > 4 required, got {energy}")
    return math.acosh((energy - 2.0) / 2.0)


def theta_of_e(energy):
    if not 0.0 < energy < 4.0:
        raise InvalidArgument(f"0 < E < 4 required, got {energy}")
    return math.acos(1.0 - energy / 2.0)


# ---------------------------------------------------------------- parameter maps

def v_of_e_delta(energy, delta):
    """V(E, delta) = E/2 + sqrt(E (1 - E/4)) tan(delta / 2)."""
    if not 0.0 < energy < 4.0:
        raise InvalidArgument(f"0 < E < 4 required, got {energy}")
    if not -math.pi < delta < math.pi:
        raise PoleError(f"delta={delta} is at or beyond the tan(delta/2) pole")
    return energy / 2.0 + math.sqrt(energy * (1.0 - energy / 4.0)) * math.tan(delta / 2.0)


def delta_zero(energy):
    """Phase shift at which V(E, delta) vanishes."""
    return 2.0 * math.atan(-(energy / 2.0) / math.sqrt(energy * (1.0 - energy / 4.0)))


def anderson_params_egt4(energy) -> AndersonParams:
    """(E_chain, V) = (2 cosh s, 1 + e^-s); satisfies E_chain = V - 1 + 1/(V - 1)."""
    s = sigma_of_e(energy)
    return AndersonParams(2.0 * math.cosh(s), 1.0 + math.exp(-s))


def anderson_params_phase_shift(energy, delta) -> AndersonParams:
    return AndersonParams(energy - 2.0, v_of_e_delta(energy, delta))


# ---------------------------------------------------------------- estimators

def lyapunov_egt4(energy, p, n_iter=10**6, seed=0, burn_in=BURN_IN) -> RiccatiEstimate:
    """Lyapunov exponent and IDOS of the E > 4 bound-state chain.

    gamma is the mean of log|psi| of the staggered recursion at s = sigma(E).
    The IDOS counts E > 4 states below E per spine site: the difference of
    negative-psi fractions at s = 0 and s = sigma(E), both driven by the
    same disorder so the two estimates are strongly correlated.
    """
    _check_p(p)
    _check_iters(n_iter, burn_in)
    s = sigma_of_e(energy)
    teeth = tooth_sequence(p, n_iter, seed)
    pot_b = np.where(teeth, math.exp(s) - 1.0, 2.0 * math.cosh(s))
    pot_a = np.where(teeth, 0.0, 2.0)
    dh, g = _kernels.riccati_real_pair(pot_a, pot_b, 1.0, burn_in, N_BATCHES)
    gm, gs = _mean_se(g)
    em, es = _mean_se(dh)
    return RiccatiEstimate(gm, gs, em, es, int(n_iter), burn_in, int(seed), "egt4",
                           {"E": float(energy), "p": float(p), "sigma": s})


def lyapunov_upsilon(energy, p, n_iter=10**6, seed=0, burn_in=BURN_IN, theta=None) -> RiccatiEstimate:
    """Lyapunov exponent of the E < 4 column-state recursion (gamma only).

    ``theta`` may be passed instead of the energy to avoid the loss of
    precision of E = 2 - 2 cos(theta) at tiny theta.
    """
    _check_p(p)
    _check_iters(n_iter, burn_in)
    if theta is None:
        theta = theta_of_e(energy)
    elif not 0.0 < theta < math.pi:
        raise InvalidArgument("theta must lie in (0, pi)")
    teeth = tooth_sequence(p, n_iter, seed)
    pot = np.where(teeth, 1.0 + np.exp(-1j * theta), 2.0 * math.cos(theta) + 0j)
    g = _kernels.riccati_complex(pot, 1.0 + 0j, burn_in, N_BATCHES)
    gm, gs = _mean_se(g)
    return RiccatiEstimate(gm, gs, float("nan"), float("nan"), int(n_iter), burn_in, int(seed), "upsilon",
                           {"E": 2.0 - 2.0 * math.cos(theta), "theta": float(theta), "p": float(p)})


def lyapunov_binary_chain(energy_chain, v_strength, p, n_iter=10**6, seed=0, burn_in=BURN_IN,
                          family="binary_chain", extra=None) -> RiccatiEstimate:
    """psi_{k+1} = -1/psi_k + V chi_k - E; eta is the fraction of psi < 0 (IDOS)."""
    if not (np.isfinite(energy_chain) and np.isfinite(v_strength)):
        raise InvalidArgument("energy and V must be finite")
    _check_p(p)
    _check_iters(n_iter, burn_in)
    teeth = tooth_sequence(p, n_iter, seed)
    pot = np.where(teeth, float(v_strength), 0.0)
    g, h, _ = _kernels.riccati_real(pot, float(energy_chain), 1.0, burn_in, N_BATCHES)
    gm, gs = _mean_se(g)
    hm, hs = _mean_se(h)
    params = {"E_chain": float(energy_chain), "V": float(v_strength), "p": float(p)}
    if extra:
        params.update(extra)
    return RiccatiEstimate(gm, gs, hm, hs, int(n_iter), burn_in, int(seed), family, params)


def lyapunov_phase_shift(energy, delta, p, n_iter=10**6, seed=0, burn_in=BURN_IN) -> RiccatiEstimate:
    ap = anderson_params_phase_shift(energy, delta)
    return lyapunov_binary_chain(ap.energy_chain, ap.v_strength, p, n_iter, seed, burn_in,
                                 family="phase_shift", extra={"E": float(energy), "delta": float(delta)})


def lyapunov_transfer(energy_chain, v_strength, p, n_iter=10**6, seed=0, burn_in=BURN_IN) -> RiccatiEstimate:
    """Renormalized transfer-matrix products for the binary chain (gamma only)."""
    _check_p(p)
    _check_iters(n_iter, burn_in)
    teeth = tooth_sequence(p, n_iter, seed)
    pot = np.where(teeth, float(v_strength), 0.0)
    g = _kernels.transfer_lyapunov(pot, float(energy_chain), burn_in, N_BATCHES)
    gm, gs = _mean_se(g)
    return RiccatiEstimate(gm, gs, float("nan"), float("nan"), int(n_iter), burn_in, int(seed), "binary_chain",
                           {"E_chain": float(energy_chain), "V": float(v_strength), "p": float(p),
                            "method": "transfer"})


# ---------------------------------------------------------------- closed forms

def upsilon_p0_exact(theta):
    """gamma of the regular comb below E = 4: log|w+| with w^2 - (1 + e^{-i theta}) w + 1 = 0.

    w+ is the root of modulus >= 1 (the two roots have product 1).
    """
    theta = np.asarray(theta, dtype=float)
    b = 1.0 + np.exp(-1j * theta)
    disc = np.sqrt(b * b - 4.0 + 0j)
    w = np.maximum(np.abs((b + disc) / 2.0), np.abs((b - disc) / 2.0))
    return np.log(w)


def egt4_p1_exact(energy):
    """Regular chain of holes: gamma = sigma = arcosh((E - 2) / 2)."""
    return np.arccosh((np.asarray(energy, dtype=float) - 2.0) / 2.0)


def free_chain_gamma(energy_chain):
    """V = 0 chain: arcosh(|E| / 2) outside [-2, 2], zero inside."""
    e = np.abs(np.asarray(energy_chain, dtype=float))
    return np.where(e > 2.0, np.arccosh(np.maximum(e, 2.0) / 2.0), 0.0)


# ---------------------------------------------------------------- Thouless

@dataclass
class ThoulessReport:
    energies: np.ndarray
    gamma: np.ndarray
    gamma_stderr: np.ndarray
    gamma_thouless: np.ndarray
    deviation: np.ndarray  # relative, |gamma_T - gamma| / gamma
    grid: np.ndarray
    idos: np.ndarray

    @property
    def max_deviation(self) -> float:
        return float(np.max(self.deviation))


def idos_grid(v_strength, p, grid, n_iter=10**6, seed=0, burn_in=BURN_IN) -> np.ndarray:
    """Binary-chain IDOS on an energy grid with common random numbers."""
    teeth = tooth_sequence(p, n_iter, seed)
    pot = np.where(teeth, float(v_strength), 0.0)
    out = np.empty(len(grid))
    for i, e in enumerate(grid):
        _, h, _ = _kernels.riccati_real(pot, float(e), 1.0, burn_in, N_BATCHES)
        out[i] = h.mean()
    return out


def _mean_log_cell(e, a, b):
    # (1/(b-a)) * integral_a^b log|e - x| dx
    def prim(x):
        u = x - e
        return u * math.log(abs(u)) - u if u != 0.0 else 0.0
    return (prim(b) - prim(a)) / (b - a)


def thouless_integral(energy, grid, idos) -> float:
    """int log|E - E'| d eta(E'), eta taken piecewise linear on the grid."""
    total = 0.0
    for k in range(len(grid) - 1):
        d_eta = idos[k + 1] - idos[k]
        if d_eta != 0.0:
            total += d_eta * _mean_log_cell(energy, grid[k], grid[k + 1])
    return total


def thouless_check(v_strength, p, energies, points_per_band=400, n_iter=10**6, seed=0,
                   burn_in=BURN_IN) -> ThoulessReport:
    """Compare Riccati gamma(E) with the Thouless integral of the Riccati IDOS."""
    lo = min(-2.0, v_strength - 2.0) - 0.05
    hi = max(2.0, v_strength + 2.0) + 0.05
    n_grid = int(math.ceil(points_per_band * (hi - lo) / 4.0)) + 1
    grid = np.linspace(lo, hi, n_grid)
    idos = idos_grid(v_strength, p, grid, n_iter, seed, burn_in)
    energies = np.atleast_1d(np.asarray(energies, dtype=float))
    g = np.empty(len(energies))
    gs = np.empty(len(energies))
    gt = np.empty(len(energies))
    for i, e in enumerate(energies):
        est = lyapunov_binary_chain(e, v_strength, p, n_iter, seed + 1, burn_in)
        g[i], gs[i] = est.gamma_bar, est.stderr_gamma
        gt[i] = thouless_integral(e, grid, idos)
    dev = np.abs(gt - g) / np.maximum(np.abs(g), 1e-300)
    return ThoulessReport(energies, g, gs, gt, dev, grid, idos)


# ---------------------------------------------------------------- sweeps

@dataclass
class SweepResult:
    energies: np.ndarray
    gamma: np.ndarray
    stderr: np.ndarray
    eta: np.ndarray
    eta_stderr: np.ndarray


def egt4_sweep(p, energies, n_iter=10**5, seed=0, burn_in=BURN_IN) -> SweepResult:
    """gamma and IDOS on an energy grid, same disorder at every point."""
    ests = [lyapunov_egt4(e, p, n_iter, seed, burn_in) for e in energies]
    return SweepResult(np.asarray(energies, float), np.array([e.gamma_bar for e in ests]),
                       np.array([e.stderr_gamma for e in ests]), np.array([e.eta_bar for e in ests]),
                       np.array([e.stderr_eta for e in ests]))


@dataclass(frozen=True)
class MinLyapunov:
    gamma_min: float
    stderr: float
    energy: float
    sweep: SweepResult


def min_lyapunov_egt4(p, energies=None, n_iter=10**5, seed=0, burn_in=BURN_IN) -> MinLyapunov:
    if energies is None:
        energies = np.linspace(4.0, E_MAX, 101)[1:]
    energies = np.asarray(energies, dtype=float)
    if energies.size < 100:
        raise InvalidArgument("the energy grid needs at least 100 points")
    sw = egt4_sweep(p, energies, n_iter, seed, burn_in)
    k = int(np.argmin(sw.gamma))
    return MinLyapunov(float(sw.gamma[k]), float(sw.stderr[k]), float(energies[k]), sw)


@dataclass(frozen=True)
class ScalingFit:
    p: float
    prefactor: float
    stderr: float
    target: float
    thetas: np.ndarray
    gamma: np.ndarray
    gamma_stderr: np.ndarray

    @property
    def relative_error(self) -> float:
        return abs(self.prefactor - self.target) / self.target if self.target > 0 else abs(self.prefactor)


def small_e_scaling(p, thetas=None, n_iter=10**6, seed=0, burn_in=BURN_IN) -> ScalingFit:
    """Weighted least-squares fit of gamma(theta) = c sqrt(theta); target sqrt((1 - p) / 2)."""
    if thetas is None:
        thetas = np.geomspace(1e-4, 1e-2, 9)
    thetas = np.asarray(thetas, dtype=float)
    g = np.empty(len(thetas))
    s = np.empty(len(thetas))
    for i, th in enumerate(thetas):
        est = lyapunov_upsilon(None, p, n_iter, seed + i, burn_in, theta=th)
        g[i], s[i] = est.gamma_bar, est.stderr_gamma
    x = np.sqrt(thetas)
    w = 1.0 / np.maximum(s, 1e-15) ** 2
    c = float(np.sum(w * x * g) / np.sum(w * x * x))
    se = float(1.0 / math.sqrt(np.sum(w * x * x)))
    return ScalingFit(float(p), c, se, math.sqrt((1.0 - p) / 2.0), thetas, g, s)


# ---------------------------------------------------------------- kappa process

@dataclass(frozen=True)
class KappaStats:
    p: float
    mean: complex
    mean_stderr: float
    cov: np.ndarray  # 2x2 covariance of (Re kappa, Im kappa)
    cov_exact: np.ndarray  # stationary solution of the Lyapunov equation
    attractor: complex  # endpoint of the noiseless flow
    fixed_point: complex  # e^{-i pi / 4} sqrt(1 - p)


def kappa_drift_matrix(p):
    """Real 2x2 drift of d(x, y) for d kappa = -2 sqrt(1-p) e^{-i pi/4} kappa dt + noise."""
    a = 2.0 * math.sqrt(1.0 - p) * complex(math.cos(math.pi / 4), -math.sin(math.pi / 4))
    return -np.array([[a.real, -a.imag], [a.imag, a.real]])


def kappa_stationary_cov(p) -> np.ndarray:
    """Solves M S + S M^T + B B^T = 0 with the noise acting on Im kappa only."""
    m = kappa_drift_matrix(p)
    q = np.array([[0.0, 0.0], [0.0, p * (1.0 - p)]])
    return solve_continuous_lyapunov(m, -q)


def chi_flow_attractor(p, chi0=0.0 + 0.0j, tau=50.0) -> complex:
    """Endpoint of d chi / d tau = -chi^2 - i (1 - p)."""
    def rhs(_t, y):
        c = complex(y[0], y[1])
        d = -c * c - 1j * (1.0 - p)
        return [d.real, d.imag]
    sol = solve_ivp(rhs, (0.0, tau), [chi0.real, chi0.imag], rtol=1e-10, atol=1e-12)
    return complex(sol.y[0, -1], sol.y[1, -1])


def simulate_kappa(p, dt=None, n_steps=None, seed=0) -> KappaStats:
    """Euler-Maruyama for d kappa = -i sqrt(p(1-p)) dW - 2 sqrt(1-p) e^{-i pi/4} kappa d tau."""
    if not 0.0 <= p < 1.0:
        raise InvalidArgument("simulate_kappa needs 0 <= p < 1")
    rate = 2.0 * math.sqrt(1.0 - p) * math.cos(math.pi / 4)  # relaxation rate of |kappa|
    if dt is None:
        dt = 0.01 / math.sqrt(1.0 - p)
    if n_steps is None:
        n_steps = int(math.ceil(2000.0 / (rate * dt)))
    if dt > 0.01 / math.sqrt(1.0 - p) * (1 + 1e-12):
        raise InvalidArgument("dt must not exceed 0.01 / sqrt(1 - p)")
    if n_steps * dt * rate < 100.0:
        raise InvalidArgument("run shorter than 100 relaxation times")
    a = 2.0 * math.sqrt(1.0 - p) * complex(math.cos(math.pi / 4), -math.sin(math.pi / 4))
    rng = np.random.Generator(np.random.PCG64(seed))
    noise = -1j * math.sqrt(p * (1.0 - p) * dt) * rng.standard_normal(n_steps)
    kappa = lfilter([1.0], [1.0, -(1.0 - a * dt)], noise)
    burn = int(math.ceil(10.0 / (rate * dt)))
    k = kappa[burn:]
    xy = np.vstack([k.real, k.imag])
    cov = np.cov(xy)
    # batch means for the standard error of the mean
    nb = N_BATCHES
    m = (k.size // nb) * nb
    bm = k[:m].reshape(nb, -1).mean(axis=1)
    se = float(math.sqrt((np.var(bm.real, ddof=1) + np.var(bm.imag, ddof=1)) / nb))
    fixed = complex(math.cos(math.pi / 4), -math.sin(math.pi / 4)) * math.sqrt(1.0 - p)
    return KappaStats(float(p), complex(k.mean()), se, cov, kappa_stationary_cov(p),
                      chi_flow_attractor(p), fixed)
