"""Compiled inner loops (numba when available, plain Python otherwise)."""
import math

import numpy as np

try:
    from numba import njit
except ImportError:  # pragma: no cover - numba is a declared dependency
    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]):
            return args[0]
        return lambda f: f

PIVMIN = 1e-290


@njit(cache=True)
def count_below(d, e, corner, periodic, x):
    """Number of eigenvalues < x of a symmetric tridiagonal matrix.

    d: diagonal (N), e: off-diagonal (N-1), corner: the (0, N-1) entry used
    when periodic.  The periodic case uses the inertia of the leading
    (N-1) block plus the sign of its Schur complement; if that block is
    singular to working precision at x, x is moved down by a few ulps.
    """
    count, hit = _count_below(d, e, corner, periodic, x)
    k = 0
    while hit and periodic and k < 8:
        x = x - 1e-13 * max(1.0, abs(x)) * (2.0 ** k)
        count, hit = _count_below(d, e, corner, periodic, x)
        k += 1
    return count


@njit(cache=True)
def _sturm_open(d, e, m, x):
    count = 0
    q = d[0] - x
    if abs(q) < PIVMIN:
        q = -PIVMIN
    if q < 0:
        count += 1
    for i in range(1, m):
        q = d[i] - x - e[i - 1] * (e[i - 1] / q)
        if abs(q) < PIVMIN:
            q = -PIVMIN
        if q < 0:
            count += 1
    return count


@njit(cache=True)
def _border_quadratic(d, e, corner, x):
    """b^T A^{-1} b for the leading block A of a periodic chain minus x.

    A y = b is solved by Gaussian elimination with partial pivoting (the
    gtsv scheme), which stays accurate when the symmetric pivots of A are
    tiny.  Returns (value, singular).
    """
    n = d.shape[0]
    m = n - 1
    dd = d[:m] - x
    du = e[:m - 1].copy()
    dl = e[:m - 1].copy()
    du2 = np.zeros(max(m - 2, 0))
    b = np.zeros(m)
    b[0] += corner
    b[m - 1] += e[m - 1]
    rhs = b.copy()
    # pivots this small mean A is singular to working precision
    tiny = 1e-14 * (1.0 + abs(x) + np.max(np.abs(d)))
    for i in range(m - 1):
        if abs(dd[i]) >= abs(dl[i]):
            if abs(dd[i]) < tiny:
                return 0.0, True
            fact = dl[i] / dd[i]
            dd[i + 1] -= fact * du[i]
            rhs[i + 1] -= fact * rhs[i]
        else:
            fact = dd[i] / dl[i]
            dd[i] = dl[i]
            tmp = dd[i + 1]
            dd[i + 1] = du[i] - fact * tmp
            if i < m - 2:
                du2[i] = du[i + 1]
                du[i + 1] = -fact * du2[i]
            du[i] = tmp
            tmp = rhs[i]
            rhs[i] = rhs[i + 1]
            rhs[i + 1] = tmp - fact * rhs[i + 1]
    if abs(dd[m - 1]) < tiny:
        return 0.0, True
    y = np.empty(m)
    y[m - 1] = rhs[m - 1] / dd[m - 1]
    if m > 1:
        y[m - 2] = (rhs[m - 2] - du[m - 2] * y[m - 1]) / dd[m - 2]
    for i in range(m - 3, -1, -1):
        y[i] = (rhs[i] - du[i] * y[i + 1] - du2[i] * y[i + 2]) / dd[i]
    return np.dot(b, y), False


@njit(cache=True)
def _count_below(d, e, corner, periodic, x):
    n = d.shape[0]
    if not periodic:
        return _sturm_open(d, e, n, x), False
    count = _sturm_open(d, e, n - 1, x)
    quad, hit = _border_quadratic(d, e, corner, x)
    s = d[n - 1] - x - quad
    if s < 0 or (s == 0.0):
        count += 1
    return count, hit


@njit(cache=True)
def _bound_count(chi, periodic, sigma):
    # eigenvalues of H0 + (1 + e^-s) chi strictly above 2 + 2 cosh s
    n = chi.shape[0]
    d = np.empty(n)
    w = 1.0 + math.exp(-sigma)
    for i in range(n):
        d[i] = 2.0 + w * chi[i]
    e = -np.ones(max(n - 1, 1))
    thr = 2.0 + 2.0 * math.cosh(sigma)
    # count of eigenvalues <= thr  ~  count_below(thr) up to ties
    return n - count_below(d, e, -1.0, periodic, thr)


@njit(cache=True)
def bound_count(chi, periodic, sigma):
    return _bound_count(chi, periodic, sigma)


@njit(cache=True)
def isolate_bound_sigmas(chi, periodic, lo, hi, tol):
    """Roots of the bound-state secular problem in (lo, hi] by count bisection.

    The number of eigenvalues of H0 + W(s) above 2 + 2 cosh s is
    non-increasing in s, each root removing (multiplicity) levels.  Returns
    an array of root locations, repeated according to multiplicity.
    """
    g_lo = _bound_count(chi, periodic, lo)
    g_hi = _bound_count(chi, periodic, hi)
    total = g_lo - g_hi
    out = np.empty(max(total, 0))
    if total <= 0:
        return out[:0]
    # explicit stack of (a, b, g(a), g(b))
    sa = np.empty(4 * 64 + 4 * total + 8)
    sb = np.empty_like(sa)
    ga = np.empty(sa.shape[0], dtype=np.int64)
    gb = np.empty(sa.shape[0], dtype=np.int64)
    top = 0
    sa[0] = lo
    sb[0] = hi
    ga[0] = g_lo
    gb[0] = g_hi
    top = 1
    k = 0
    while top > 0:
        top -= 1
        a = sa[top]
        b = sb[top]
        g_a = ga[top]
        g_b = gb[top]
        if g_a == g_b:
            continue
        mid = 0.5 * (a + b)
        if b - a <= tol * max(1.0, abs(b)) or mid <= a or mid >= b:
            for _ in range(g_a - g_b):
                out[k] = mid
                k += 1
            continue
        g_m = _bound_count(chi, periodic, mid)
        # rounding near a multiple root can break monotonicity; keep it
        g_m = min(max(g_m, g_b), g_a)
        if top + 2 > sa.shape[0]:
            # grow the stack
            n2 = 2 * sa.shape[0]
            sa2 = np.empty(n2)
            sb2 = np.empty(n2)
            ga2 = np.empty(n2, dtype=np.int64)
            gb2 = np.empty(n2, dtype=np.int64)
            sa2[:top] = sa[:top]
            sb2[:top] = sb[:top]
            ga2[:top] = ga[:top]
            gb2[:top] = gb[:top]
            sa, sb, ga, gb = sa2, sb2, ga2, gb2
        # push upper half first so that roots come out in increasing order
        sa[top] = mid
        sb[top] = b
        ga[top] = g_m
        gb[top] = g_b
        top += 1
        sa[top] = a
        sb[top] = mid
        ga[top] = g_a
        gb[top] = g_m
        top += 1
    return np.sort(out[:k])


# ---------------------------------------------------------------- Riccati

@njit(cache=True)
def _two_sum(a, b):
    s = a + b
    bp = s - a
    err = (a - (s - bp)) + (b - bp)
    return s, err


@njit(cache=True)
def riccati_real(pot, shift, psi0, burn_in, n_batches):
    """psi_{k+1} = -1/psi_k + pot[k] - shift, real version.

    Returns (batch means of log|psi|, batch means of [psi < 0], n_zero).
    The first ``burn_in`` steps are discarded; the remaining steps are split
    into ``n_batches`` equal batches (a remainder is dropped).
    """
    n = pot.shape[0]
    psi = psi0
    for k in range(burn_in):
        if psi == 0.0:
            psi = 1e-300
        psi = -1.0 / psi + pot[k] - shift
    m = (n - burn_in) // n_batches
    g = np.empty(n_batches)
    h = np.empty(n_batches)
    n_zero = 0
    idx = burn_in
    for b in range(n_batches):
        s = 0.0
        c = 0.0
        neg = 0
        for _ in range(m):
            if psi == 0.0:
                psi = 1e-300
                n_zero += 1
            psi = -1.0 / psi + pot[idx] - shift
            idx += 1
            if psi == 0.0:
                psi = 1e-300
                n_zero += 1
            s, err = _two_sum(s, math.log(abs(psi)))
            c += err
            if psi < 0.0:
                neg += 1
        g[b] = (s + c) / m
        h[b] = neg / m
    return g, h, n_zero


@njit(cache=True)
def riccati_real_pair(pot_a, pot_b, psi0, burn_in, n_batches):
    """Two real recursions driven by the same disorder; batch means of the
    difference of their negative-sign indicators (a minus b), plus the
    log|psi| batch means of recursion b."""
    n = pot_a.shape[0]
    pa = psi0
    pb = psi0
    for k in range(burn_in):
        if pa == 0.0:
            pa = 1e-300
        if pb == 0.0:
            pb = 1e-300
        pa = -1.0 / pa + pot_a[k]
        pb = -1.0 / pb + pot_b[k]
    m = (n - burn_in) // n_batches
    dh = np.empty(n_batches)
    g = np.empty(n_batches)
    idx = burn_in
    for b in range(n_batches):
        s = 0.0
        c = 0.0
        diff = 0
        for _ in range(m):
            if pa == 0.0:
                pa = 1e-300
            if pb == 0.0:
                pb = 1e-300
            pa = -1.0 / pa + pot_a[idx]
            pb = -1.0 / pb + pot_b[idx]
            idx += 1
            if pb == 0.0:
                pb = 1e-300
            s, err = _two_sum(s, math.log(abs(pb)))
            c += err
            if pa < 0.0:
                diff += 1
            if pb < 0.0:
                diff -= 1
        dh[b] = diff / m
        g[b] = (s + c) / m
    return dh, g


@njit(cache=True)
def riccati_complex(pot, psi0, burn_in, n_batches):
    """psi_{k+1} = -1/psi_k + pot[k] with complex potentials; batch means of log|psi|."""
    n = pot.shape[0]
    psi = psi0
    for k in range(burn_in):
        if psi == 0.0:
            psi = 1e-300 + 0j
        psi = -1.0 / psi + pot[k]
    m = (n - burn_in) // n_batches
    g = np.empty(n_batches)
    idx = burn_in
    for b in range(n_batches):
        s = 0.0
        c = 0.0
        for _ in range(m):
            if psi == 0.0:
                psi = 1e-300 + 0j
            psi = -1.0 / psi + pot[idx]
            idx += 1
            if psi == 0.0:
                psi = 1e-300 + 0j
            s, err = _two_sum(s, math.log(abs(psi)))
            c += err
        g[b] = (s + c) / m
    return g


@njit(cache=True)
def transfer_lyapunov(pot, shift, burn_in, n_batches):
    """Renormalized products of [[v - E, -1], [1, 0]]; batch means of log growth."""
    n = pot.shape[0]
    x0 = 1.0
    x1 = 0.0
    for k in range(burn_in):
        y0 = (pot[k] - shift) * x0 - x1
        x1 = x0
        x0 = y0
        r = math.sqrt(x0 * x0 + x1 * x1)
        x0 /= r
        x1 /= r
    m = (n - burn_in) // n_batches
    g = np.empty(n_batches)
    idx = burn_in
    for b in range(n_batches):
        s = 0.0
        c = 0.0
        for _ in range(m):
            y0 = (pot[idx] - shift) * x0 - x1
            x1 = x0
            x0 = y0
            idx += 1
            r = math.sqrt(x0 * x0 + x1 * x1)
            x0 /= r
            x1 /= r
            s, err = _two_sum(s, math.log(r))
            c += err
        g[b] = (s + c) / m
    return g
