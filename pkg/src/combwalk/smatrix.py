"""E < 4 scattering: the matrices X(theta), Y(theta), the extended matrix
SS = -X^{-1} Y mapping incoming tooth waves B to outgoing waves A, its
unitary tooth block S, column (Upsilon) states and phase-shift eigenvectors.

Energies are E = 2 - 2 cos(theta) with 0 < theta < pi.  Tooth rows of X
carry 1 + e^{-i theta} on the diagonal, hole rows 2 cos(theta), hopping -1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import schur

from .boundstates import banded_operator, banded_solve
from .comb import CombConfig
from .errors import InternalConsistencyError, InvalidArgument, SingularThetaError, SpecialThetaError

# formal S-matrix at theta = 0 and theta = pi (no propagating tooth waves there)
S_ENDPOINT = -1.0
COND_LIMIT = 1e12
THETA_NUDGE = 1e-7
INVARIANT_TOL = 1e-9


def _check_theta(theta):
    theta = float(theta)
    if not np.isfinite(theta):
        raise InvalidArgument("theta must be finite")
    if theta <= 0.0 or theta >= math.pi:
        if theta in (0.0, math.pi):
            raise SpecialThetaError(f"theta={theta} is an endpoint; use S_ENDPOINT = -1 there")
        raise InvalidArgument(f"theta must lie in (0, pi), got {theta}")
    return theta


def x_diagonal(comb: CombConfig, theta: float) -> np.ndarray:
    d = np.full(comb.n_sites, 2.0 * math.cos(theta), dtype=complex)
    d[comb.chi] = 1.0 + np.exp(-1j * theta)
    return d


def _dense(diag, periodic):
    n = len(diag)
    m = np.diag(diag).astype(complex)
    i = np.arange(n - 1)
    m[i, i + 1] = m[i + 1, i] = -1.0
    if periodic:
        m[0, n - 1] = m[n - 1, 0] = -1.0
    return m


def assemble_xy(comb: CombConfig, theta: float):
    """Dense X(theta) and Y(theta) = conj(X(theta))."""
    theta = _check_theta(theta)
    x = _dense(x_diagonal(comb, theta), comb.periodic)
    return x, x.conj()


def _tridiag_apply(diag, periodic, v):
    # (tridiagonal with -1 hopping) @ v, v of shape (N,) or (N, k)
    d = diag if v.ndim == 1 else diag[:, None]
    out = d * v
    out[:-1] -= v[1:]
    out[1:] -= v[:-1]
    if periodic:
        out[0] -= v[-1]
        out[-1] -= v[0]
    return out


def _cond1(diag, periodic, x_inv):
    lu, ab, _ = banded_operator(diag, periodic)
    norm_x = np.max(np.sum(np.abs(ab), axis=0))
    return float(norm_x * np.max(np.sum(np.abs(x_inv), axis=0)))


@dataclass(frozen=True)
class ScatterSet:
    theta: float
    comb: CombConfig
    x_matrix: np.ndarray
    y_matrix: np.ndarray
    s_full: np.ndarray
    cond_x: float
    theta_used: float  # differs from theta when the fallback nudge was applied

    @property
    def teeth(self):
        return self.comb.teeth

    @property
    def holes(self):
        return self.comb.holes

    @property
    def s_tooth(self) -> np.ndarray:
        t = self.teeth
        return self.s_full[np.ix_(t, t)]

    @property
    def c_block(self) -> np.ndarray:
        """Hole rows, tooth columns of SS (N_h x N_t)."""
        return self.s_full[np.ix_(self.holes, self.teeth)]

    def residuals(self) -> dict:
        """Max-abs residuals of the algebraic identities of X, Y, SS and S."""
        t, h = self.teeth, self.holes
        s = self.s_tooth
        full = self.s_full
        eye_t = np.eye(len(t))
        proj = np.zeros(self.comb.n_sites)
        proj[t] = 1.0
        th = self.theta_used
        dxy = self.x_matrix - self.y_matrix

        def mx(a):
            return float(np.max(np.abs(a))) if a.size else 0.0

        return {
            "unitarity": mx(s.conj().T @ s - eye_t),
            "symmetry": mx(s - s.T),
            "tooth_hole_block": mx(full[np.ix_(t, h)]),
            "hole_hole_block": mx(full[np.ix_(h, h)] + np.eye(len(h))),
            "y_is_conj_x": mx(self.y_matrix - self.x_matrix.conj()),
            # as derived from the tooth rows: X - Y = -2 i sin(theta) T
            "x_minus_y": mx(dxy + 2j * math.sin(th) * np.diag(proj)),
            "x_minus_y_plus_sign": mx(dxy - 2j * math.sin(th) * np.diag(proj)),
            "inverse_is_conj": mx(full @ full.conj() - np.eye(self.comb.n_sites)),
            "c_block": mx(self.c_block - self.c_block.conj() @ s),
        }


_ASSERTED = ("unitarity", "symmetry", "tooth_hole_block", "hole_hole_block",
             "y_is_conj_x", "x_minus_y", "c_block")


def _solve_full(comb, theta):
    diag = x_diagonal(comb, theta)
    n = comb.n_sites
    x_inv = banded_solve(diag, comb.periodic, np.eye(n, dtype=complex))
    cond = _cond1(diag, comb.periodic, x_inv)
    # SS = -X^{-1} Y with Y tridiagonal and symmetric: (X^{-1} Y) = (Y X^{-1})^T
    s_full = -_tridiag_apply(diag.conj(), comb.periodic, x_inv.T).T
    return s_full, cond


def compute_smatrix(comb: CombConfig, theta: float, check: bool = True) -> ScatterSet:
    """Scattering set at one theta.

    When X is ill conditioned (cond > 1e12) the solve is repeated at
    theta +- 1e-7 and the better conditioned one is kept.
    """
    theta = _check_theta(theta)
    x, y = assemble_xy(comb, theta)
    if comb.n_teeth == 0:
        n = comb.n_sites
        return ScatterSet(theta, comb, x, y, -np.eye(n, dtype=complex), float(np.linalg.cond(x)), theta)
    s_full, cond = _solve_full(comb, theta)
    used = theta
    if not np.isfinite(cond) or cond > COND_LIMIT:
        best = None
        for th in (theta - THETA_NUDGE, theta + THETA_NUDGE):
            if not 0.0 < th < math.pi:
                continue
            sf, c = _solve_full(comb, th)
            if np.isfinite(c) and (best is None or c < best[1]):
                best = (sf, c, th)
        if best is None or best[1] > COND_LIMIT:
            raise SingularThetaError(f"X is singular near theta={theta}; refine the theta grid")
        s_full, cond, used = best
        x, y = assemble_xy(comb, used)
    out = ScatterSet(theta, comb, x, y, s_full, cond, used)
    if check:
        res = out.residuals()
        tol = INVARIANT_TOL * max(1.0, cond * 1e-6)
        bad = {k: res[k] for k in _ASSERTED if res[k] > tol}
        if bad:
            raise InternalConsistencyError(f"S-matrix identities violated at theta={theta}: {bad}", **bad)
    return out


@dataclass(frozen=True)
class UpsilonState:
    theta: float
    source_tooth: int
    a_coeffs: np.ndarray
    comb: CombConfig

    def a_tilde(self) -> np.ndarray:
        out = self.a_coeffs.copy()
        out[self.source_tooth] += 1.0
        return out

    def residual(self) -> float:
        """Max-abs residual of X A + Y B = 0 with B the indicator of the source tooth."""
        diag = x_diagonal(self.comb, self.theta)
        b = np.zeros(self.comb.n_sites, dtype=complex)
        b[self.source_tooth] = 1.0
        r = _tridiag_apply(diag, self.comb.periodic, self.a_coeffs) + \
            _tridiag_apply(diag.conj(), self.comb.periodic, b)
        return float(np.max(np.abs(r)))

    def tooth_flux(self) -> float:
        return float(np.sum(np.abs(self.a_coeffs[self.comb.chi]) ** 2))


def upsilon(comb: CombConfig, theta: float, tooth: int) -> UpsilonState:
    """Column state for a unit incoming wave on ``tooth`` (array index)."""
    theta = _check_theta(theta)
    tooth = int(tooth)
    if not 0 <= tooth < comb.n_sites or not comb.chi[tooth]:
        raise InvalidArgument(f"site {tooth} is not a tooth")
    diag = x_diagonal(comb, theta)
    b = np.zeros(comb.n_sites, dtype=complex)
    b[tooth] = 1.0
    a = banded_solve(diag, comb.periodic, -_tridiag_apply(diag.conj(), comb.periodic, b))
    return UpsilonState(theta, tooth, a, comb)


def smatrix_row(comb: CombConfig, theta: float, site: int) -> np.ndarray:
    """Row ``site`` of SS, from a single solve (X is complex symmetric)."""
    diag = x_diagonal(comb, theta)
    e = np.zeros(comb.n_sites, dtype=complex)
    e[site] = 1.0
    w = banded_solve(diag, comb.periodic, e)
    return -_tridiag_apply(diag.conj(), comb.periodic, w)


def v_of_theta_delta(theta, delta):
    """Tooth potential of the phase-shift chain, 1 - cos(theta) + sin(theta) tan(delta / 2)."""
    return 1.0 - np.cos(theta) + np.sin(theta) * np.tan(np.asarray(delta) / 2.0)


@dataclass(frozen=True)
class PhaseShiftSystem:
    theta: float
    phases: np.ndarray  # delta_k in (-pi, pi]
    eigenvalues: np.ndarray  # e^{i delta_k}
    tooth_vectors: np.ndarray  # columns: eigenvectors of S (N_t x N_t)
    b_vectors: np.ndarray  # columns: extended B on the full spine (N x N_t)
    pi_flags: np.ndarray  # True where delta = pi (hole amplitudes undefined)


def phase_shift_eigensystem(comb: CombConfig, theta: float, pi_tol: float = 1e-8) -> PhaseShiftSystem:
    """Unitary diagonalization of S by complex Schur decomposition."""
    sset = compute_smatrix(comb, theta)
    s = sset.s_tooth
    nt = s.shape[0]
    if nt == 0:
        empty = np.empty(0)
        return PhaseShiftSystem(theta, empty, empty.astype(complex), np.empty((0, 0), complex),
                                np.empty((comb.n_sites, 0), complex), np.empty(0, bool))
    tri, z = schur(s, output="complex")
    lam = np.diag(tri).copy()
    delta = np.angle(lam)
    delta[delta <= -math.pi] = math.pi
    flags = np.abs(1.0 + lam) < pi_tol
    b = np.zeros((comb.n_sites, nt), dtype=complex)
    b[comb.teeth] = z
    c = sset.c_block @ z
    for k in range(nt):
        if flags[k]:
            b[comb.holes, k] = np.nan
        else:
            b[comb.holes, k] = c[:, k] / (1.0 + lam[k])
    return PhaseShiftSystem(theta, delta, lam, z, b, flags)


def phase_shift_residual(comb: CombConfig, system: PhaseShiftSystem) -> np.ndarray:
    """Per-eigenvector residual of the binary-chain equation obeyed by B.

    2 B_n - B_{n-1} - B_{n+1} + V chi_n B_n = E B_n with V = V(E, delta).
    """
    e = 2.0 - 2.0 * math.cos(system.theta)
    out = np.full(len(system.phases), np.nan)
    for k, d in enumerate(system.phases):
        if system.pi_flags[k]:
            continue
        v = v_of_theta_delta(system.theta, d)
        diag = 2.0 + v * comb.chi - e
        r = _tridiag_apply(diag.astype(complex), comb.periodic, system.b_vectors[:, k])
        out[k] = float(np.max(np.abs(r)) / max(1.0, np.max(np.abs(system.b_vectors[:, k]))))
    return out


def flux_check(a, b, comb: CombConfig) -> float:
    """| sum_teeth |A|^2 - sum_teeth |B|^2 |."""
    a = np.asarray(a)
    b = np.asarray(b)
    t = comb.chi
    return float(abs(np.sum(np.abs(a[t]) ** 2) - np.sum(np.abs(b[t]) ** 2)))


# ---------------------------------------------------------------- embedded states

@dataclass(frozen=True)
class EmbeddedStates:
    """Normalizable eigenstates with 0 <= E <= 4 that vanish on every tooth.

    They live on the holes only and are invisible to the scattering
    columns.  energies[k] belongs to the spine vector vectors[:, k].
    """
    energies: np.ndarray
    vectors: np.ndarray


def embedded_states(comb: CombConfig, tol: float = 1e-9) -> EmbeddedStates:
    """Spine eigenvectors supported on holes with zero amplitude on teeth.

    Each hole string carries Dirichlet modes 2 - 2 cos(pi k / (l + 1));
    modes of equal energy are combined so that -psi(n-1) - psi(n+1) = 0
    at every tooth n (the condition for zero tooth amplitude).
    """
    n = comb.n_sites
    if comb.n_teeth == 0:
        # a bare spine has no continuum at all: every spine state counts
        h = _dense(np.full(n, 2.0), comb.periodic).real
        vals, vecs = np.linalg.eigh(h)
        return EmbeddedStates(vals, vecs)
    # hole strings as lists of array indices (wrapping for periodic combs)
    chi = comb.chi
    strings = []
    if comb.periodic:
        start = int(np.flatnonzero(chi)[0])
        order = [(start + i) % n for i in range(n)]
    else:
        order = list(range(n))
    cur = []
    for i in order:
        if chi[i]:
            if cur:
                strings.append(cur)
            cur = []
        else:
            cur.append(i)
    if cur:
        strings.append(cur)
    modes = []  # (energy, vector)
    for s in strings:
        ell = len(s)
        j = np.arange(1, ell + 1)
        for k in range(1, ell + 1):
            v = np.zeros(n)
            v[s] = np.sin(math.pi * k * j / (ell + 1))
            modes.append((2.0 - 2.0 * math.cos(math.pi * k / (ell + 1)), v / np.linalg.norm(v)))
    modes.sort(key=lambda m: m[0])
    energies, vectors = [], []
    teeth = comb.teeth
    i = 0
    while i < len(modes):
        j = i + 1
        while j < len(modes) and modes[j][0] - modes[i][0] < tol:
            j += 1
        basis = np.array([m[1] for m in modes[i:j]]).T  # n x g
        # constraint rows: (psi(t-1) + psi(t+1)) for every tooth t
        cons = np.zeros((len(teeth), basis.shape[1]))
        for r, t in enumerate(teeth):
            for nb in (t - 1, t + 1):
                if comb.periodic:
                    cons[r] += basis[nb % n]
                elif 0 <= nb < n:
                    cons[r] += basis[nb]
        _, sv, vt = np.linalg.svd(cons)
        rank = int(np.sum(sv > 1e-10))
        null = vt[rank:].T
        if null.shape[1]:
            q = np.linalg.qr(basis @ null)[0]
            for col in q.T:
                energies.append(modes[i][0])
                vectors.append(col)
        i = j
    if not energies:
        return EmbeddedStates(np.empty(0), np.empty((n, 0)))
    return EmbeddedStates(np.array(energies), np.array(vectors).T)


