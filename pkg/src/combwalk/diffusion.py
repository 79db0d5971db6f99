"""Localization and escape of a walker started on the spine.

P^loc(n0) is the weight of |n0, 0> on the E > 4 bound states; P^esc(n0, t)
the weight escaping along tooth t, an integral over theta of
|(SS(theta) + 1)_{n0, t}|^2 / 2 pi.  States of 0 <= E <= 4 that vanish on
every tooth (only present on special combs) carry the remaining weight
P^emb, so that P^loc + P^emb + sum_t P^esc = 1.
"""
from __future__ import annotations

import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.integrate import quad_vec
from scipy.linalg import solve_banded
from scipy.special import jv

from .boundstates import BoundStates, banded_operator, solve_bound_states, tail_weights
from .comb import CombConfig, e_gt4_density, sample_ensemble
from .errors import InvalidArgument
from .smatrix import embedded_states, x_diagonal

U_SPLIT = math.sqrt(0.1)  # u = sqrt(theta) on (0, 0.1], theta on [0.1, pi)
ESC_TOL = 1e-10


def _check_site(comb, n0):
    n0 = int(n0)
    if not 0 <= n0 < comb.n_sites:
        raise InvalidArgument(f"start site {n0} outside the spine")
    return n0


def _normalized(states):
    if not len(states):
        return np.empty((0, 0)), np.empty(0), np.empty(0, dtype=int)
    c = np.array([s.normalized() for s in states]).T  # N x M, unit tail-inclusive norm
    sig = np.array([s.sigma for s in states])
    cl = np.array([s.cluster for s in states])
    return c, sig, cl


# ---------------------------------------------------------------- localization

def p_loc_all(comb: CombConfig, states: BoundStates | None = None) -> np.ndarray:
    """P^loc(n0) for every start site at once."""
    if states is None:
        states = solve_bound_states(comb)
    c, _, _ = _normalized(states)
    if c.size == 0:
        return np.zeros(comb.n_sites)
    return np.sum(c * c, axis=1)


def p_loc(comb: CombConfig, n0: int, states: BoundStates | None = None) -> float:
    n0 = _check_site(comb, n0)
    return float(p_loc_all(comb, states)[n0])


def p_embedded(comb: CombConfig, n0: int, emb=None) -> float:
    """Weight of |n0, 0> on the states that vanish on every tooth."""
    n0 = _check_site(comb, n0)
    if emb is None:
        emb = embedded_states(comb)
    return float(np.sum(emb.vectors[n0] ** 2)) if emb.vectors.size else 0.0


def p_loc_profile(comb: CombConfig, n0: int, states: BoundStates | None = None,
                  window: int | None = None) -> np.ndarray:
    """Time-averaged probability on each tooth (whole tooth) or hole, bound part.

    Within a degenerate cluster the oscillating cross terms do not average
    out; the cluster is summed coherently, which equals the diagonal formula
    in the basis where the site projector is diagonal.  With ``window`` only
    the first ``window`` sites of each tooth (base included) are counted.
    """
    n0 = _check_site(comb, n0)
    if states is None:
        states = solve_bound_states(comb)
    c, sig, cl = _normalized(states)
    out = np.zeros(comb.n_sites)
    for g in np.unique(cl):
        idx = np.flatnonzero(cl == g)
        amp = c[:, idx] @ c[n0, idx]  # sum_a C_a(n0) C_a(n)
        w = tail_weights(comb.chi, sig[idx[0]])
        if window is not None:
            w[comb.chi] *= -math.expm1(-2.0 * sig[idx[0]] * window)
        out += w * amp * amp
    return out


def embedded_profile(comb: CombConfig, n0: int, emb=None) -> np.ndarray:
    """Time-averaged probability carried by the tooth-free embedded states."""
    n0 = _check_site(comb, n0)
    if emb is None:
        emb = embedded_states(comb)
    out = np.zeros(comb.n_sites)
    if not emb.vectors.size:
        return out
    e = emb.energies
    i = 0
    while i < len(e):
        j = i + 1
        while j < len(e) and e[j] - e[i] < 1e-9:
            j += 1
        v = emb.vectors[:, i:j]
        amp = v @ v[n0]
        out += amp * amp
        i = j
    return out


def _tooth_overlap(chi, sig):
    # <Gamma_a | P_n | Gamma_b> / (C_a(n) C_b(n)): 1 on holes, 1/(1 - e^{-(s_a + s_b)}) on teeth
    s = sig[:, None] + sig[None, :]
    return 1.0 / (-np.expm1(-s))


def q_envelope(comb: CombConfig, n0: int, states: BoundStates | None = None) -> np.ndarray:
    """sum_{a,b} |<n0|a> <a|P_n|b> <b|n0>|, an upper bound of P^loc(n0, n; T) for all T."""
    n0 = _check_site(comb, n0)
    if states is None:
        states = solve_bound_states(comb)
    c, sig, _ = _normalized(states)
    out = np.zeros(comb.n_sites)
    if c.size == 0:
        return out
    a = np.abs(c * c[n0][None, :])  # |C_a(n0) C_a(n)|
    tooth = _tooth_overlap(comb.chi, sig)
    for n in range(comb.n_sites):
        if comb.chi[n]:
            out[n] = a[n] @ tooth @ a[n]
        else:
            out[n] = a[n].sum() ** 2
    return out


def p_loc_time(comb: CombConfig, n0: int, times, states: BoundStates | None = None) -> np.ndarray:
    """Bound-state part P^loc(n0, n; T) for each T (rows) and site n (columns)."""
    n0 = _check_site(comb, n0)
    if states is None:
        states = solve_bound_states(comb)
    c, sig, _ = _normalized(states)
    times = np.atleast_1d(np.asarray(times, dtype=float))
    out = np.zeros((len(times), comb.n_sites))
    if c.size == 0:
        return out
    energies = 2.0 + 2.0 * np.cosh(sig)
    tooth = _tooth_overlap(comb.chi, sig)
    for k, t in enumerate(times):
        b = (np.exp(-1j * energies * t) * c[n0])[None, :] * c  # N x M
        hole = np.abs(b.sum(axis=1)) ** 2
        teeth = np.real(np.einsum("na,ab,nb->n", b.conj(), tooth, b))
        out[k] = np.where(comb.chi, teeth, hole)
    return out


# ---------------------------------------------------------------- escape

class _RowSolver:
    """Row n0 of SS(theta) = -X^{-1} Y for many theta, banded storage reused."""

    def __init__(self, comb: CombConfig, n0: int):
        self.comb = comb
        self.n0 = n0
        n = comb.n_sites
        self.lu, ab, self.perm = banded_operator(np.zeros(n, dtype=complex), comb.periodic)
        self.ab = ab
        self.mid = self.lu[0]
        self.rhs = np.zeros(n, dtype=complex)
        if self.perm is None:
            self.rhs[n0] = 1.0
        else:
            self.rhs[np.flatnonzero(self.perm == n0)[0]] = 1.0
        self.teeth = comb.teeth
        self.delta = (self.teeth == n0).astype(float)

    def tooth_amplitudes(self, theta):
        """(SS + 1)_{n0, t} for every tooth t."""
        comb = self.comb
        diag = x_diagonal(comb, theta)
        ab = self.ab.copy()
        ab[self.mid] = diag if self.perm is None else diag[self.perm]
        w = solve_banded(self.lu, ab, self.rhs, check_finite=False)
        if self.perm is not None:
            tmp = np.empty_like(w)
            tmp[self.perm] = w
            w = tmp
        # -(Y w) on the teeth, Y = conj(X) tridiagonal
        y = diag.conj() * w
        y[:-1] -= w[1:]
        y[1:] -= w[:-1]
        if comb.periodic:
            y[0] -= w[-1]
            y[-1] -= w[0]
        return -y[self.teeth] + self.delta


@dataclass
class EscapeResult:
    teeth: np.ndarray
    p_esc: np.ndarray
    error: float  # achieved absolute error estimate (max over teeth, summed over the two ranges)
    n_evals: int


def p_esc_all(comb: CombConfig, n0: int, tol: float = ESC_TOL) -> EscapeResult:
    """P^esc(n0, t) for every tooth t by adaptive Gauss-Kronrod quadrature.

    The small-theta range uses u = sqrt(theta) (theta = u^2, d theta = 2u du)
    with geometric initial breakpoints, the rest uniform panels.
    """
    n0 = _check_site(comb, n0)
    teeth = comb.teeth
    if teeth.size == 0:
        return EscapeResult(teeth, np.zeros(0), 0.0, 0)
    solver = _RowSolver(comb, n0)
    count = [0]

    def f_u(u):
        count[0] += 1
        a = solver.tooth_amplitudes(u * u)
        return (2.0 * u / (2.0 * math.pi)) * (a.real ** 2 + a.imag ** 2)

    def f_theta(th):
        count[0] += 1
        a = solver.tooth_amplitudes(th)
        return (a.real ** 2 + a.imag ** 2) / (2.0 * math.pi)

    pts_u = U_SPLIT * np.geomspace(1e-4, 0.5, 14)
    lo, err_lo = quad_vec(f_u, 0.0, U_SPLIT, epsabs=tol / 2, epsrel=0.0, norm="max",
                          points=pts_u, limit=20000)
    pts_t = np.linspace(0.1, math.pi, 33)[1:-1]
    hi, err_hi = quad_vec(f_theta, 0.1, math.pi, epsabs=tol / 2, epsrel=0.0, norm="max",
                          points=pts_t, limit=20000)
    err = float(err_lo + err_hi)
    if err > tol:
        warnings.warn(f"escape quadrature reached error {err:.3g} > {tol:.3g}")
    return EscapeResult(teeth, lo + hi, err, count[0])


def p_esc_tooth(comb: CombConfig, n0: int, tooth: int, tol: float = ESC_TOL) -> float:
    tooth = int(tooth)
    if not 0 <= tooth < comb.n_sites or not comb.chi[tooth]:
        raise InvalidArgument(f"site {tooth} is not a tooth")
    res = p_esc_all(comb, n0, tol)
    return float(res.p_esc[np.flatnonzero(res.teeth == tooth)[0]])


@dataclass
class DiffusionReport:
    comb: CombConfig
    start_site: int
    p_loc: float
    p_embedded: float
    p_esc_by_tooth: dict
    completeness_residual: float
    profile: np.ndarray
    quadrature_error: float


def diffusion_report(comb: CombConfig, n0: int, tol: float = ESC_TOL,
                     states: BoundStates | None = None) -> DiffusionReport:
    n0 = _check_site(comb, n0)
    if states is None:
        states = solve_bound_states(comb)
    pl = p_loc(comb, n0, states)
    pe = p_embedded(comb, n0)
    esc = p_esc_all(comb, n0, tol)
    by_tooth = {int(t): float(v) for t, v in zip(esc.teeth, esc.p_esc)}
    resid = pl + pe + float(np.sum(esc.p_esc)) - 1.0
    return DiffusionReport(comb, n0, pl, pe, by_tooth, resid, p_loc_profile(comb, n0, states), esc.error)


# ---------------------------------------------------------------- ensembles

@dataclass
class EnsembleStats:
    p: float
    length: int
    n_samples: int
    mean: float
    stderr: float
    bound: float  # (1 - p) / (2 - p)
    bins: np.ndarray
    hist_tooth: np.ndarray  # counts of tooth-start values
    hist_hole: np.ndarray
    tooth_values: np.ndarray = field(repr=False, default=None)
    hole_values: np.ndarray = field(repr=False, default=None)

    def gap(self):
        """(low_max, high_min) between the two start-site families, or None when they overlap.

        The family with the larger mean is taken as the upper cluster.
        """
        if self.tooth_values.size == 0 or self.hole_values.size == 0:
            return None
        a, b = self.tooth_values, self.hole_values
        low, high = (a, b) if a.mean() < b.mean() else (b, a)
        if low.max() < high.min():
            return float(low.max()), float(high.min())
        return None


def _quiet_p_loc_all(comb):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return p_loc_all(comb)


def _ordered_map(fn, items, threads):
    # results come back in item order whatever the completion order
    if threads <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def ensemble_ploc(p, length, n_samples, seed, bins=100, threads=1) -> EnsembleStats:
    """P^loc over periodic combs and all start sites, with tooth/hole split."""
    combs = sample_ensemble(p, length, "periodic", seed, n_samples)
    means = np.empty(n_samples)
    tv, hv = [], []
    for i, (comb, vals) in enumerate(zip(combs, _ordered_map(_quiet_p_loc_all, combs, threads))):
        means[i] = vals.mean()
        tv.append(vals[comb.chi])
        hv.append(vals[~comb.chi])
    tv = np.concatenate(tv)
    hv = np.concatenate(hv)
    edges = np.linspace(0.0, 1.0, bins + 1)
    se = float(means.std(ddof=1) / math.sqrt(n_samples)) if n_samples > 1 else float("nan")
    return EnsembleStats(float(p), int(length), int(n_samples), float(means.mean()), se,
                         float(e_gt4_density(p)), edges, np.histogram(tv, edges)[0],
                         np.histogram(hv, edges)[0], tv, hv)


@dataclass
class EscapeFit:
    p: float
    distances: np.ndarray
    mean: np.ndarray
    stderr: np.ndarray
    exponent: float
    coefficient: float
    covariance: np.ndarray  # of (exponent, log coefficient)


def fit_power_law(d, y, se=None):
    """Least squares of log y = log c + k log d; returns (k, c, cov of (k, log c))."""
    d = np.asarray(d, float)
    y = np.asarray(y, float)
    x = np.log(d)
    ly = np.log(y)
    if se is None:
        w = np.ones_like(x)
    else:
        rel = np.asarray(se, float) / y
        w = 1.0 / np.maximum(rel, 1e-12) ** 2
    a = np.vstack([x, np.ones_like(x)]).T
    aw = a * np.sqrt(w)[:, None]
    coef, *_ = np.linalg.lstsq(aw, ly * np.sqrt(w), rcond=None)
    resid = ly - a @ coef
    dof = max(len(x) - 2, 1)
    s2 = float(np.sum(w * resid ** 2) / dof)
    cov = s2 * np.linalg.inv(aw.T @ aw)
    return float(coef[0]), float(math.exp(coef[1])), cov


def escape_asymptotics(p, length, distances, n_samples, seed, tol=1e-13, starts_per_comb=1,
                       threads=1) -> EscapeFit:
    """Ensemble mean of P^esc(n0, t) against the spine distance |t - n0| (periodic combs).

    Each distance d collects the teeth at n0 + d and n0 - d.
    """
    distances = np.asarray(distances, dtype=int)
    if np.any(distances < 1) or np.any(distances > length // 2):
        raise InvalidArgument("distances must lie in [1, L/2]")
    combs = sample_ensemble(p, length, "periodic", seed, n_samples)
    jobs = [(comb, (k * length) // starts_per_comb) for comb in combs for k in range(starts_per_comb)]
    results = _ordered_map(lambda job: p_esc_all(job[0], job[1], tol), jobs, threads)
    per_sample = []
    for (comb, n0), res in zip(jobs, results):
        val = np.full(length, np.nan)
        val[res.teeth] = res.p_esc
        row = np.zeros(len(distances))
        num = np.zeros(len(distances))
        for i, d in enumerate(distances):
            for t in {(n0 + d) % length, (n0 - d) % length}:
                if comb.chi[t]:
                    row[i] += val[t]
                    num[i] += 1
        m = np.where(num > 0, row / np.maximum(num, 1), np.nan)
        per_sample.append(m)
    arr = np.array(per_sample)
    mean = np.nanmean(arr, axis=0)
    nvalid = np.sum(~np.isnan(arr), axis=0)
    se = np.nanstd(arr, axis=0, ddof=1) / np.sqrt(np.maximum(nvalid, 1))
    k, c, cov = fit_power_law(distances, mean, se)
    return EscapeFit(float(p), distances, mean, se, k, c, cov)


def escape_amplitude_scaling(p):
    """Leading small-theta estimate of P^esc(d) d^4: 3 / (2 pi (1 - p)^3).

    From A ~ C exp(-kappa d) with kappa = sqrt(-i theta (1 - p)) and
    |C|^2 = theta / (1 - p), integrated over theta with weight 1 / 2 pi.
    """
    return 3.0 / (2.0 * math.pi * (1.0 - p) ** 3)


# ---------------------------------------------------------------- time evolution oracle

def comb_hamiltonian(comb: CombConfig, tooth_length: int) -> sp.csr_matrix:
    """Sparse minus-Laplacian of the comb with teeth cut after ``tooth_length`` sites.

    Site ordering: spine 0..N-1, then tooth k (k-th tooth) sites 1..J in
    blocks.  Open ends and tooth cuts are Dirichlet (the missing neighbour
    still counts in the diagonal).
    """
    n = comb.n_sites
    teeth = comb.teeth
    jlen = int(tooth_length)
    size = n + len(teeth) * jlen
    diag = np.full(size, 2.0)
    diag[:n] += comb.chi
    rows, cols = [], []
    i = np.arange(n - 1)
    rows.append(i)
    cols.append(i + 1)
    if comb.periodic:
        rows.append(np.array([n - 1]))
        cols.append(np.array([0]))
    for k, t in enumerate(teeth):
        base = n + k * jlen
        chain = base + np.arange(jlen)
        rows.append(np.concatenate([[t], chain[:-1]]))
        cols.append(chain)
    r = np.concatenate(rows)
    c = np.concatenate(cols)
    off = sp.coo_matrix((-np.ones(len(r)), (r, c)), shape=(size, size))
    h = off + off.T + sp.diags(diag)
    return h.tocsr()


@dataclass
class OracleRun:
    comb: CombConfig
    start_site: int
    tooth_length: int
    times: np.ndarray
    site_prob: np.ndarray  # (len(times), N): probability on each hole / whole truncated tooth
    window_prob: np.ndarray  # same, teeth restricted to j <= window
    window: int
    norm_drift: float
    trusted_until: float  # first time the wavefront reached the cut, inf otherwise
    snapshots: list = field(default_factory=list)  # optional (t, |psi|^2 vector)

    def time_average(self, t_from=0.0, windowed=True) -> np.ndarray:
        """Trapezoidal time average over [t_from, T] of the site probabilities."""
        mask = self.times >= t_from
        y = (self.window_prob if windowed else self.site_prob)[mask]
        t = self.times[mask]
        return np.trapz(y, t, axis=0) / (t[-1] - t[0])


def _chebyshev_step(h, psi, dt, center, half, tol=1e-15):
    """exp(-i H dt) psi with H = center + half * Hs, Hs spectrum in [-1, 1]."""
    a = half * dt
    kmax = int(a + 10 * a ** (1 / 3) + 40)
    coef = jv(np.arange(kmax + 1), a)
    k_stop = kmax
    for k in range(kmax, 0, -1):
        if abs(coef[k]) > tol:
            k_stop = min(kmax, k + 2)
            break
    hs = lambda v: (h @ v - center * v) / half  # noqa: E731
    t0 = psi
    t1 = hs(psi)
    acc = coef[0] * t0 + 2.0 * (-1j) * coef[1] * t1
    phase = -1j
    for k in range(2, k_stop + 1):
        t2 = 2.0 * hs(t1) - t0
        phase *= -1j
        acc += 2.0 * phase * coef[k] * t2
        t0, t1 = t1, t2
    return np.exp(-1j * center * dt) * acc


def evolve_oracle(comb: CombConfig, n0: int, total_time: float, tooth_length: int | None = None,
                  dt: float = 0.25, window: int = 60, margin: int = 50, dump_every: int = 0) -> OracleRun:
    """Propagate |n0, 0> under the truncated comb Hamiltonian with Chebyshev steps.

    The cut must lie beyond the light cone: J > 2 * 2 * T + margin (maximal
    group velocity 2).  Records, at every step, the probability on each hole
    and on each tooth, the latter also within the first ``window`` tooth sites.
    """
    n0 = _check_site(comb, n0)
    if tooth_length is None:
        tooth_length = int(math.ceil(4 * total_time)) + margin
    if tooth_length < 2 * 2 * total_time + margin and comb.n_teeth:
        warnings.warn("tooth truncation inside the light cone; late times may be contaminated")
    h = comb_hamiltonian(comb, tooth_length)
    size = h.shape[0]
    n = comb.n_sites
    jlen = tooth_length
    nt = comb.n_teeth
    center, half = 3.0, 3.0  # spectrum of the comb lies in [0, 6]
    psi = np.zeros(size, dtype=complex)
    psi[n0] = 1.0
    n_steps = int(round(total_time / dt))
    times = np.arange(n_steps + 1) * dt
    site = np.zeros((n_steps + 1, n))
    win = np.zeros((n_steps + 1, n))
    teeth = comb.teeth
    w = min(window, jlen)
    trusted = math.inf
    drift = 0.0
    snaps = []

    def record(k, psi):
        prob = psi.real ** 2 + psi.imag ** 2
        site[k] = prob[:n]
        win[k] = prob[:n]
        if nt:
            tail = prob[n:].reshape(nt, jlen)
            site[k, teeth] += tail.sum(axis=1)
            win[k, teeth] += tail[:, :w].sum(axis=1)
            return prob, float(tail[:, -margin:].sum())
        return prob, 0.0

    prob, edge = record(0, psi)
    for k in range(1, n_steps + 1):
        psi = _chebyshev_step(h, psi, dt, center, half)
        prob, edge = record(k, psi)
        drift = max(drift, abs(float(prob.sum()) - 1.0))
        if edge > 1e-12 and trusted == math.inf:
            trusted = times[k]
            warnings.warn(f"wavefront reached the tooth cut at t={times[k]}")
        if dump_every and k % dump_every == 0:
            snaps.append((times[k], prob.copy()))
    return OracleRun(comb, n0, jlen, times, site, win, w, drift, trusted, snaps)


@dataclass
class OracleComparison:
    run: OracleRun
    oracle: np.ndarray  # time-averaged windowed profile
    formula: np.ndarray  # bound + embedded profile, teeth cut at the same window
    mask: np.ndarray  # entries above the threshold
    relative_error: np.ndarray  # on masked entries, nan elsewhere

    @property
    def max_relative_error(self) -> float:
        return float(np.nanmax(self.relative_error)) if self.mask.any() else 0.0


def oracle_comparison(comb: CombConfig, n0: int, total_time: float, window: int = 30,
                      threshold: float = 1e-4, t_from: float = 0.0, **kwargs) -> OracleComparison:
    """Time average over [t_from, T] of the direct evolution against the spectral profile."""
    n0 = _check_site(comb, n0)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        states = solve_bound_states(comb)
    run = evolve_oracle(comb, n0, total_time, window=window, **kwargs)
    avg = run.time_average(t_from, windowed=True)
    formula = p_loc_profile(comb, n0, states, window=run.window) + embedded_profile(comb, n0)
    mask = formula > threshold
    rel = np.full(comb.n_sites, np.nan)
    rel[mask] = np.abs(avg[mask] - formula[mask]) / formula[mask]
    return OracleComparison(run, avg, formula, mask, rel)
