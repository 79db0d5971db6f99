"""Binary-chain Hamiltonian on the spine and its spectral flow in V.

H phi(n) = -phi(n-1) - phi(n+1) + V chi_n phi(n), in the shifted energy
convention (comb energy minus 2), with Dirichlet or periodic boundary.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import eigh_tridiagonal

from . import _kernels
from .comb import CombConfig, classify_chain, run_lengths
from .errors import DegeneracyError, InvalidArgument

FD_STEP = 1e-5
DEGENERACY_TOL = 1e-9


@dataclass(frozen=True)
class ChainHamiltonian:
    comb: CombConfig
    v_strength: float

    def __post_init__(self):
        if not np.isfinite(self.v_strength):
            raise InvalidArgument("V must be finite")

    @property
    def scale(self) -> float:
        return max(4.0, abs(self.v_strength) + 2.0)

    def diagonal(self) -> np.ndarray:
        return self.v_strength * self.comb.chi.astype(float)

    def offdiagonal(self) -> np.ndarray:
        return -np.ones(self.comb.n_sites - 1)

    def dense(self) -> np.ndarray:
        n = self.comb.n_sites
        h = np.diag(self.diagonal())
        i = np.arange(n - 1)
        h[i, i + 1] = h[i + 1, i] = -1.0
        if self.comb.periodic:
            h[0, n - 1] = h[n - 1, 0] = -1.0
        return h

    def matvec(self, phi):
        out = self.diagonal() * phi
        out[:-1] -= phi[1:]
        out[1:] -= phi[:-1]
        if self.comb.periodic:
            out[0] -= phi[-1]
            out[-1] -= phi[0]
        return out


def sturm_count(chain: ChainHamiltonian, x: float) -> int:
    """Number of eigenvalues strictly below x (LDL^T inertia)."""
    return int(_kernels.count_below(chain.diagonal(), chain.offdiagonal(), -1.0,
                                    chain.comb.periodic, float(x)))


def eigenvalues(chain: ChainHamiltonian, want_vectors: bool = False):
    """Sorted spectrum; eigenvectors as columns when requested.

    Open chains use Sturm bisection (LAPACK stebz) and inverse iteration
    (stein); periodic chains a dense symmetric solve.
    """
    n = chain.comb.n_sites
    if chain.comb.periodic:
        if want_vectors:
            return np.linalg.eigh(chain.dense())
        return np.linalg.eigvalsh(chain.dense())
    if n == 1:
        vals = chain.diagonal().copy()
        return (vals, np.ones((1, 1))) if want_vectors else vals
    tol = 1e-13 * chain.scale
    return eigh_tridiagonal(chain.diagonal(), chain.offdiagonal(), eigvals_only=not want_vectors,
                            lapack_driver="stebz", tol=tol)


def degenerate_clusters(values, scale, tol=DEGENERACY_TOL):
    """Groups of indices whose consecutive sorted values differ by < tol*scale."""
    clusters = []
    cur = [0]
    for i in range(1, len(values)):
        if values[i] - values[i - 1] < tol * scale:
            cur.append(i)
        else:
            clusters.append(cur)
            cur = [i]
    clusters.append(cur)
    return clusters


@dataclass
class SpectralFlow:
    v_grid: np.ndarray
    levels: np.ndarray  # (len(v_grid), N)
    slopes: np.ndarray  # (len(v_grid) - 1, N), forward differences per interval
    crossings: list = field(default_factory=list)  # (grid index, level cluster) near-degeneracies


def spectral_flow(comb: CombConfig, v_grid) -> SpectralFlow:
    v = np.asarray(v_grid, dtype=float)
    if v.ndim != 1 or v.size < 2 or np.any(np.diff(v) <= 0):
        raise InvalidArgument("v_grid must be strictly increasing with at least 2 points")
    levels = np.array([eigenvalues(ChainHamiltonian(comb, vi)) for vi in v])
    slopes = np.diff(levels, axis=0) / np.diff(v)[:, None]
    crossings = []
    for k, vi in enumerate(v):
        for cl in degenerate_clusters(levels[k], max(4.0, abs(vi) + 2)):
            if len(cl) > 1:
                crossings.append((k, tuple(cl)))
    return SpectralFlow(v, levels, slopes, crossings)


def de_dv_exact(chain: ChainHamiltonian, level: int) -> float:
    """dE/dV of one level: the weight of its eigenvector on the teeth."""
    vals, vecs = eigenvalues(chain, want_vectors=True)
    for cl in degenerate_clusters(vals, chain.scale):
        if level in cl and len(cl) > 1:
            raise DegeneracyError(f"level {level} is degenerate at V={chain.v_strength}", cl)
    phi = vecs[:, level]
    return float(np.sum(phi[chain.comb.chi] ** 2) / np.dot(phi, phi))


def de_dv_fd(chain: ChainHamiltonian, level: int, h: float = FD_STEP) -> float:
    up = eigenvalues(ChainHamiltonian(chain.comb, chain.v_strength + h))[level]
    dn = eigenvalues(ChainHamiltonian(chain.comb, chain.v_strength - h))[level]
    return float((up - dn) / (2 * h))


def component_sizes(chain: ChainHamiltonian):
    """For |V| > 4: numbers of eigenvalues in [-2, 2] and in [V - 2, V + 2]."""
    vals = eigenvalues(chain)
    v = chain.v_strength
    tol = 1e-12 * chain.scale
    low = int(np.sum(np.abs(vals) <= 2 + tol))
    high = int(np.sum(np.abs(vals - v) <= 2 + tol))
    return low, high


def hole_string_spectrum(comb: CombConfig) -> np.ndarray:
    """Union of Dirichlet spectra -2 cos(pi k / (l + 1)) of the hole strings.

    This is the V -> +infinity limit of the low spectral component.
    """
    out = []
    for ell in run_lengths(comb).hole_runs:
        k = np.arange(1, ell + 1)
        out.append(-2 * np.cos(np.pi * k / (ell + 1)))
    if comb.periodic and comb.n_teeth == 0:
        # a ring without teeth is not cut into strings
        m = np.arange(comb.n_sites)
        return np.sort(-2 * np.cos(2 * np.pi * m / comb.n_sites))
    return np.sort(np.concatenate(out)) if out else np.empty(0)


def n_e_gt4_formula(comb: CombConfig) -> int:
    """Predicted number of E > 4 bound states from the run structure.

    (N_t + number of odd tooth runs) / 2, minus one when the comb is a
    2-hole chain (for periodic combs only when L is a multiple of 4).  The
    correction comes from the eigenvalue branch pinned to E = V, which
    exists exactly for those combs.  A uniform all-teeth ring is counted
    directly from its plane-wave spectrum.
    """
    nt = comb.n_teeth
    if nt == 0:
        return 0
    if comb.periodic and nt == comb.n_sites:
        n = comb.n_sites
        m = np.arange(n)
        return int(np.sum(np.cos(2 * np.pi * m / n) < -1e-12))
    runs = run_lengths(comb)
    count = nt + runs.n_t_odd
    assert count % 2 == 0
    count //= 2
    cls = classify_chain(comb)
    if 2 in cls.k_hole and (not comb.periodic or comb.length % 4 == 0):
        count -= 1
    return count


def penrose(v_strength, energy):
    """Compactified coordinates (v, e) = (2 atan((V - E)/2), 2 atan(E/2))."""
    v_strength = np.asarray(v_strength, dtype=float)
    energy = np.asarray(energy, dtype=float)
    return 2 * np.arctan((v_strength - energy) / 2), 2 * np.arctan(energy / 2)


@dataclass
class LemmaReport:
    classification: object
    checks: list = field(default_factory=list)  # (name, V, passed, detail)

    @property
    def passed(self) -> bool:
        return all(c[2] for c in self.checks)

    def failures(self):
        return [c for c in self.checks if not c[2]]


def lemma_invariant_checks(comb: CombConfig, v_grid, tol=1e-10, gap=1e-8) -> LemmaReport:
    """Pinned eigenvalues of k-tooth chains and the E = 0 / E = V exclusions.

    (a) k-tooth chain: -2 cos(pi q / k) is an eigenvalue at every V;
    (b) generic chain: no eigenvalue at E = 0 nor at E = V for V > 2;
    (c) 2-tooth periodic chain with L = 0 mod 4: E = 0 at every V.
    Failures are recorded, never raised.
    """
    cls = classify_chain(comb)
    rep = LemmaReport(cls)
    for v in np.asarray(v_grid, dtype=float):
        vals = eigenvalues(ChainHamiltonian(comb, v))
        for k in sorted(cls.k_tooth):
            for q in range(1, k):
                target = -2 * math.cos(math.pi * q / k)
                dist = float(np.min(np.abs(vals - target)))
                rep.checks.append((f"{k}-tooth E={target:.6g}", v, dist < tol, dist))
        if cls.is_generic and v > 2:
            d0 = float(np.min(np.abs(vals)))
            dv = float(np.min(np.abs(vals - v)))
            rep.checks.append(("generic E=0 absent", v, d0 > gap, d0))
            rep.checks.append(("generic E=V absent", v, dv > gap, dv))
        if comb.periodic and 2 in cls.k_tooth and comb.length % 4 == 0:
            d0 = float(np.min(np.abs(vals)))
            rep.checks.append(("2-tooth ring E=0", v, d0 < tol, d0))
    return rep
