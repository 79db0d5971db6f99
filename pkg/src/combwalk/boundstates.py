"""E > 4 bound states of a finite comb.

A bound state has spine amplitudes C_n and decays as C_n (-1)^j e^{-sigma j}
along tooth n, with E = 2 + 2 cosh(sigma).  On the spine this gives the
nonlinear problem (H0 + W(sigma)) C = E C with H0 the spine Laplacian
(diagonal 2, hopping -1) and W = (1 + e^{-sigma}) chi.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_banded

from . import _kernels
from .chainspec import n_e_gt4_formula
from .comb import CombConfig
from .errors import InternalConsistencyError

SIGMA_MAX = math.log(3.0)
SIGMA_REJECT = 1e-6
SIGMA_FLOOR = 1e-12
ROOT_TOL = 2e-16
CLUSTER_TOL = 1e-7  # counting resolves a double root only to ~sqrt(eps)
SPLIT_TOL = 1e-12


def energy_of_sigma(sigma):
    return 2.0 + 2.0 * np.cosh(sigma)


def sigma_of_energy(energy):
    return np.arccosh((np.asarray(energy) - 2.0) / 2.0)


@dataclass(frozen=True)
class BoundState:
    sigma: float
    energy: float
    spine_amplitudes: np.ndarray  # unit Euclidean norm on the spine
    norm_sq: float  # tail-inclusive squared norm of that vector
    cluster: int = -1  # index of the degenerate group it belongs to

    def normalized(self) -> np.ndarray:
        """Spine amplitudes of the unit-norm state (tails included)."""
        return self.spine_amplitudes / math.sqrt(self.norm_sq)


class BoundStates(list):
    """Sorted list of BoundState with bookkeeping of rejected near-threshold roots."""

    def __init__(self, states=(), rejected=(), predicted=None):
        super().__init__(states)
        self.rejected_sigmas = list(rejected)
        self.predicted = predicted


def tail_weights(chi, sigma, sigma2=None):
    """Per-site weights of the tail-inclusive inner product.

    Teeth carry sum_j e^{-(s + s') j} = 1 / (1 - e^{-(s + s')}), holes 1.
    """
    if sigma2 is None:
        sigma2 = sigma
    w = np.ones(len(chi))
    w[np.asarray(chi, bool)] = 1.0 / (-math.expm1(-(sigma + sigma2)))
    return w


def tail_inner(a: BoundState, b: BoundState, chi) -> float:
    w = tail_weights(chi, a.sigma, b.sigma)
    return float(np.sum(w * a.normalized() * b.normalized()))


def spine_matrix_bands(comb: CombConfig, sigma: float):
    """Diagonal of H0 + W(sigma)."""
    return 2.0 + (1.0 + math.exp(-sigma)) * comb.chi.astype(float)


def _interleave_order(n):
    # ring order 0, n-1, 1, n-2, ... puts ring neighbours within distance 2
    order = np.empty(n, dtype=int)
    order[0::2] = np.arange((n + 1) // 2)
    order[1::2] = n - 1 - np.arange(n // 2)
    return order


def banded_operator(diag, periodic, offdiag=-1.0):
    """Return (l_and_u, ab, perm) for scipy.linalg.solve_banded.

    Open chains are stored tridiagonally.  Periodic chains are permuted into
    an interleaved order where the ring becomes pentadiagonal.
    """
    n = len(diag)
    dtype = np.result_type(diag, offdiag)
    if not periodic:
        ab = np.zeros((3, n), dtype=dtype)
        ab[0, 1:] = offdiag
        ab[1] = diag
        ab[2, :-1] = offdiag
        return (1, 1), ab, None
    perm = _interleave_order(n)
    pos = np.empty(n, dtype=int)
    pos[perm] = np.arange(n)
    ab = np.zeros((5, n), dtype=dtype)
    ab[2] = np.asarray(diag)[perm]
    r = pos
    c = pos[(np.arange(n) + 1) % n]
    ab[2 + r - c, c] = offdiag
    ab[2 + c - r, r] = offdiag
    return (2, 2), ab, perm


def banded_solve(diag, periodic, rhs, offdiag=-1.0):
    """Solve (tridiagonal or cyclic tridiagonal) A x = rhs with partial pivoting."""
    lu, ab, perm = banded_operator(diag, periodic, offdiag)
    if perm is None:
        return solve_banded(lu, ab, rhs, check_finite=False)
    x = solve_banded(lu, ab, rhs[perm], check_finite=False)
    out = np.empty_like(x)
    out[perm] = x
    return out


def _inverse_iteration(comb, sigma, k, seed, start=None, iterations=3):
    """k-dimensional invariant subspace of H0 + W(sigma) at eigenvalue E(sigma)."""
    n = comb.n_sites
    diag = spine_matrix_bands(comb, sigma)
    e = energy_of_sigma(sigma)
    if start is None:
        rng = np.random.Generator(np.random.PCG64(seed))
        q = np.linalg.qr(rng.standard_normal((n, k)))[0]
    else:
        q = start
    shift = e * (1.0 + 4e-16)
    for it in range(iterations):
        try:
            y = banded_solve(diag - shift, comb.periodic, q)
        except np.linalg.LinAlgError:
            shift = e * (1.0 + 1e-13)
            continue
        y = y.reshape(n, k)
        q = y / np.linalg.norm(y) if k == 1 else np.linalg.qr(y)[0]
    return q


def _apply(comb, sigma, c):
    out = spine_matrix_bands(comb, sigma)[:, None] * c
    out[:-1] -= c[1:]
    out[1:] -= c[:-1]
    if comb.periodic:
        out[0] -= c[-1]
        out[-1] -= c[0]
    return out


def _polish(comb, sigma, k, seed, steps=3, start=None):
    """Newton refinement of a (k-fold) root using Ritz values of the subspace.

    g(s) = f(s) - E(s) with f'(s) = -e^{-s} sum_teeth C^2 (unit C).
    """
    chi = comb.chi
    q = _inverse_iteration(comb, sigma, k, seed, start=start, iterations=3 if start is None else 2)
    for _ in range(steps):
        ritz = np.linalg.eigvalsh(q.T @ _apply(comb, sigma, q))
        g = float(np.mean(ritz)) - energy_of_sigma(sigma)
        tooth_w = float(np.sum(q[chi] ** 2)) / k
        slope = -math.exp(-sigma) * tooth_w - 2 * math.sinh(sigma)
        step = g / slope
        if not np.isfinite(step) or abs(step) > 1e-6:
            break
        sigma -= step
        q = _inverse_iteration(comb, sigma, k, seed, start=q, iterations=1)
        if abs(step) < 1e-16:
            break
    return sigma, q


def _split_cluster(comb, sigma, q, seed):
    """Separate a near-degenerate cluster into exactly degenerate parts.

    Each Ritz vector of the cluster subspace is polished on its own root;
    columns whose roots then agree to SPLIT_TOL stay together.
    """
    _, v = np.linalg.eigh(q.T @ _apply(comb, sigma, q))
    q = q @ v
    cols = []
    for j in range(q.shape[1]):
        sj, cj = _polish(comb, sigma, 1, seed, start=q[:, j:j + 1])
        cols.append((sj, cj[:, 0]))
    cols.sort(key=lambda t: t[0])
    parts = []
    for sj, cj in cols:
        if parts and sj - parts[-1][0][-1] < SPLIT_TOL:
            parts[-1][0].append(sj)
            parts[-1][1].append(cj)
        else:
            parts.append(([sj], [cj]))
    return [(float(np.mean(ss)), np.column_stack(cs)) for ss, cs in parts]


def _residual(comb, sigma, c):
    diag = spine_matrix_bands(comb, sigma) - energy_of_sigma(sigma)
    r = diag * c
    r[:-1] -= c[1:]
    r[1:] -= c[:-1]
    if comb.periodic:
        r[0] -= c[-1]
        r[-1] -= c[0]
    return r


def _fix_sign(c):
    i = int(np.argmax(np.abs(c)))
    return -c if c[i] < 0 else c


def solve_bound_states(comb: CombConfig, check: bool = True) -> BoundStates:
    """All E > 4 bound states of a comb, sorted by energy.

    Roots sigma in (0, ln 3] of the secular problem are isolated by bisection
    on the count of eigenvalues of H0 + W(sigma) above 2 + 2 cosh(sigma)
    (this count drops by one at every root), then each eigenvector is
    computed by inverse iteration.  Degenerate roots are resolved as a block
    and made orthonormal in the tail-inclusive inner product.  With
    ``check`` the count is compared with the run-structure formula.
    """
    if comb.n_teeth == 0:
        return BoundStates(predicted=0)
    chi = comb.chi.astype(float)
    # sigma = 0 itself is avoided: uniform rings have exactly singular pivots there
    roots = _kernels.isolate_bound_sigmas(chi, comb.periodic, SIGMA_FLOOR, SIGMA_MAX + 1e-9, ROOT_TOL)
    roots = np.minimum(roots, SIGMA_MAX)
    rejected = [float(s) for s in roots if s < SIGMA_REJECT]
    if rejected:
        warnings.warn(f"{len(rejected)} root(s) with sigma < {SIGMA_REJECT} rejected as threshold artifacts")
    roots = roots[roots >= SIGMA_REJECT]
    # group (near-)equal roots into degenerate clusters
    groups = []
    for s in roots:
        if groups and s - groups[-1][-1] < CLUSTER_TOL:
            groups[-1].append(s)
        else:
            groups.append([s])
    states = []
    seed = int.from_bytes(bytes.fromhex(comb.digest()[:8]), "little")
    gi = 0
    for grp in groups:
        s, q = _polish(comb, float(np.mean(grp)), len(grp), seed + gi)
        parts = [(s, q)]
        if len(grp) > 1:
            parts = _split_cluster(comb, s, q, seed + gi)
        for s, q in parts:
            w = tail_weights(comb.chi, s)
            if q.shape[1] > 1:
                # orthonormalize in the tail-weighted metric (same sigma for all)
                lc = np.linalg.cholesky(q.T @ (w[:, None] * q))
                q = np.linalg.solve(lc, q.T).T
            for j in range(q.shape[1]):
                c = _fix_sign(q[:, j] / np.linalg.norm(q[:, j]))
                states.append(BoundState(s, float(energy_of_sigma(s)), c, float(np.sum(w * c * c)), gi))
            gi += 1
    states.sort(key=lambda st: st.sigma)
    # sigma increasing means energy increasing
    out = BoundStates(states, rejected)
    if check:
        predicted = n_e_gt4_formula(comb)
        out.predicted = predicted
        if predicted != len(out):
            raise InternalConsistencyError(
                f"solved {len(out)} bound states but the run-structure count is {predicted}",
                solved=len(out), predicted=predicted)
        for st in out:
            r = np.max(np.abs(_residual(comb, st.sigma, st.spine_amplitudes)))
            if r > 1e-9:
                raise InternalConsistencyError(f"bound-state residual {r:.3g} at sigma={st.sigma}",
                                               residual=r, sigma=st.sigma)
    return out


def bound_state_residual(comb: CombConfig, state: BoundState) -> float:
    return float(np.max(np.abs(_residual(comb, state.sigma, state.spine_amplitudes))))


def count_bounds_check(comb: CombConfig, count: int | None = None) -> bool:
    """N_t / 2 <= N_{E>4} <= N_t."""
    if count is None:
        count = len(solve_bound_states(comb, check=False))
    nt = comb.n_teeth
    return 2 * count >= nt and count <= nt


def m_matrix(comb: CombConfig) -> np.ndarray:
    """2N x 2N companion matrix whose real eigenvalues in (1, 3] are e^sigma.

    Acts on (C, C~) with C~ = e^{-sigma} C; tooth rows read
    -C_{n-1} - C_{n+1} + C_n = lambda C_n, hole rows
    -C_{n-1} - C_{n+1} - C~_n = lambda C_n.
    """
    n = comb.n_sites
    adj = np.zeros((n, n))
    i = np.arange(n - 1)
    adj[i, i + 1] = adj[i + 1, i] = 1.0
    if comb.periodic:
        adj[0, n - 1] = adj[n - 1, 0] = 1.0
    chi = comb.chi.astype(float)
    top = np.hstack([-adj + np.diag(chi), -np.diag(1.0 - chi)])
    bottom = np.hstack([np.eye(n), np.zeros((n, n))])
    return np.vstack([top, bottom])


def m_matrix_spectrum(comb: CombConfig) -> np.ndarray:
    if comb.n_sites > 512:
        raise ValueError("m_matrix_spectrum is limited to N <= 512")
    return np.linalg.eigvals(m_matrix(comb))


def m_matrix_sigmas(comb: CombConfig, imag_tol=1e-7) -> np.ndarray:
    """ln(lambda) for the real eigenvalues lambda in (1, 3] of the companion matrix."""
    lam = m_matrix_spectrum(comb)
    real = lam[np.abs(lam.imag) < imag_tol].real
    real = real[(real > 1 + 1e-7) & (real < 3 + 1e-9)]
    return np.sort(np.log(np.minimum(real, 3.0)))


def scan_branch_roots(comb: CombConfig, n_grid: int = 400) -> np.ndarray:
    """Root sigmas from sign changes of f_i(sigma) - (2 + 2 cosh sigma) per sorted branch.

    Dense scan on a uniform grid followed by bisection of each bracket.  Slow
    and blind to roots closer than the grid spacing; kept as a cross-check.
    """
    chi = comb.chi.astype(float)
    n = comb.n_sites
    h0 = 2 * np.eye(n)
    i = np.arange(n - 1)
    h0[i, i + 1] = h0[i + 1, i] = -1.0
    if comb.periodic:
        h0[0, n - 1] = h0[n - 1, 0] = -1.0

    def g(s):
        f = np.linalg.eigvalsh(h0 + np.diag((1 + math.exp(-s)) * chi))
        return f - energy_of_sigma(s)

    grid = np.linspace(1e-8, SIGMA_MAX - 1e-8, n_grid)
    vals = np.array([g(s) for s in grid])
    roots = []
    for b in range(n):
        col = vals[:, b]
        for k in np.flatnonzero((col[:-1] > 0) & (col[1:] <= 0)):
            a, c = grid[k], grid[k + 1]
            for _ in range(60):
                m = 0.5 * (a + c)
                if g(m)[b] > 0:
                    a = m
                else:
                    c = m
            roots.append(0.5 * (a + c))
    return np.sort(np.array(roots))
