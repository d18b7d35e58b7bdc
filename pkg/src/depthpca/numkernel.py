"""Dense linear algebra and special functions.

Nothing in here knows about statistics.  The eigensolver is a cyclic
Jacobi method with round-robin (Brent-Luk) ordering, so all rotations in
one round touch disjoint index pairs and can be applied together.
"""

import math
from typing import NamedTuple

import numpy as np

from .errors import InvalidInput, NotPositiveDefinite, NumericalFailure

SYMMETRY_RTOL = 1e-12
JACOBI_RTOL = 1e-14
JACOBI_MAX_SWEEPS = 100
_SIGN_TIE_RTOL = 1e-12


class SpectralDecomp(NamedTuple):
    eigenvalues: np.ndarray  # descending
    eigenvectors: np.ndarray  # orthonormal columns


def as_symmetric(m):
    """Validate ``m`` as a finite symmetric matrix and return a float copy."""
    a = np.array(m, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1] or a.shape[0] == 0:
        raise InvalidInput(f"expected a non-empty square matrix, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise InvalidInput("matrix has non-finite entries")
    scale = np.linalg.norm(a)
    if np.linalg.norm(a - a.T) > SYMMETRY_RTOL * scale:
        raise InvalidInput("matrix is not symmetric")
    return 0.5 * (a + a.T)


def _round_robin(p):
    """Rounds of disjoint pairs covering every (i, j), i < j, exactly once."""
    m = p + (p % 2)
    players = list(range(m))
    rounds = []
    for _ in range(m - 1):
        pairs = []
        for i in range(m // 2):
            a, b = players[i], players[m - 1 - i]
            if a < p and b < p:
                pairs.append((min(a, b), max(a, b)))
        if pairs:
            idx = np.array(pairs)
            rounds.append((idx[:, 0], idx[:, 1]))
        players = [players[0]] + [players[-1]] + players[1:-1]
    return rounds


def _fix_signs(vecs):
    """Make each column's largest-magnitude entry positive (lowest index on ties)."""
    absv = np.abs(vecs)
    colmax = absv.max(axis=0)
    lead = np.argmax(absv >= colmax * (1.0 - _SIGN_TIE_RTOL), axis=0)
    signs = np.sign(vecs[lead, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def eigh(m):
    """Eigen-decomposition of a symmetric matrix.

    Returns eigenvalues in descending order (ties keep their original
    diagonal order) and orthonormal eigenvectors as columns, each with its
    largest-magnitude coordinate positive.

    Raises
    ------
    InvalidInput
        If ``m`` is not a finite symmetric matrix.
    NumericalFailure
        If the off-diagonal mass does not vanish within the sweep budget.
    """
    a = as_symmetric(m)
    p = a.shape[0]
    v = np.eye(p)
    thresh = JACOBI_RTOL * np.linalg.norm(a)
    if p > 1:
        rounds = _round_robin(p)
        off = ~np.eye(p, dtype=bool)
        for _ in range(JACOBI_MAX_SWEEPS + 1):
            if np.max(np.abs(a[off])) <= thresh:
                break
            for P, Q in rounds:
                apq = a[P, Q]
                live = np.abs(apq) > thresh
                if not live.any():
                    continue
                P, Q, apq = P[live], Q[live], apq[live]
                theta = (a[Q, Q] - a[P, P]) / (2.0 * apq)
                t = np.sign(theta) / (np.abs(theta) + np.sqrt(theta * theta + 1.0))
                t[theta == 0] = 1.0
                c = 1.0 / np.sqrt(t * t + 1.0)
                s = t * c
                aP, aQ = a[:, P].copy(), a[:, Q].copy()
                a[:, P] = c * aP - s * aQ
                a[:, Q] = s * aP + c * aQ
                aP, aQ = a[P, :].copy(), a[Q, :].copy()
                a[P, :] = c[:, None] * aP - s[:, None] * aQ
                a[Q, :] = s[:, None] * aP + c[:, None] * aQ
                a[P, Q] = 0.0
                a[Q, P] = 0.0
                vP, vQ = v[:, P].copy(), v[:, Q].copy()
                v[:, P] = c * vP - s * vQ
                v[:, Q] = s * vP + c * vQ
        else:
            raise NumericalFailure(
                f"Jacobi eigensolver did not converge in {JACOBI_MAX_SWEEPS} sweeps"
            )
    w = np.diag(a).copy()
    order = np.argsort(-w, kind="stable")
    return SpectralDecomp(w[order], _fix_signs(v[:, order]))


def cholesky(m):
    """Lower-triangular ``L`` with ``L @ L.T == m``.

    Raises NotPositiveDefinite when a pivot drops to 1e-14 * trace or below.
    """
    a = as_symmetric(m)
    p = a.shape[0]
    floor = 1e-14 * max(np.trace(a), 0.0)
    L = np.zeros_like(a)
    for j in range(p):
        row = L[j, :j]
        pivot = a[j, j] - row @ row
        if not pivot > floor:
            raise NotPositiveDefinite(f"matrix is not positive definite (pivot {j})")
        d = math.sqrt(pivot)
        L[j, j] = d
        if j + 1 < p:
            L[j + 1:, j] = (a[j + 1:, j] - L[j + 1:, :j] @ row) / d
    return L


def solve_lower(L, b):
    """Forward substitution; ``b`` may be a vector or a matrix of columns."""
    b = np.array(b, dtype=float)
    x = np.empty_like(b)
    for i in range(L.shape[0]):
        x[i] = (b[i] - L[i, :i] @ x[:i]) / L[i, i]
    return x


def solve_upper(U, b):
    b = np.array(b, dtype=float)
    x = np.empty_like(b)
    for i in range(U.shape[0] - 1, -1, -1):
        x[i] = (b[i] - U[i, i + 1:] @ x[i + 1:]) / U[i, i]
    return x


def solve_spd(m, b):
    """Solve ``m x = b`` for symmetric positive definite ``m`` via Cholesky."""
    L = cholesky(m)
    b = np.asarray(b, dtype=float)
    if b.shape[0] != L.shape[0]:
        raise InvalidInput(f"right-hand side has {b.shape[0]} rows, expected {L.shape[0]}")
    return solve_upper(L.T, solve_lower(L, b))


# -- special functions ------------------------------------------------------

_SQRT2 = math.sqrt(2.0)
_TWO_OVER_SQRTPI = 2.0 / math.sqrt(math.pi)


def _erf_series(x):
    # erf(x) = 2/sqrt(pi) exp(-x^2) sum_n 2^n x^(2n+1) / (1*3*...*(2n+1)); all terms positive
    term = x
    total = x
    n = 0
    while abs(term) > 1e-17 * abs(total):
        n += 1
        term *= 2.0 * x * x / (2 * n + 1)
        total += term
    return _TWO_OVER_SQRTPI * math.exp(-x * x) * total


def _erfc_cf(x):
    # continued fraction for erfc, x > 0 (modified Lentz)
    tiny = 1e-300
    f = x if x != 0 else tiny
    c, d = f, 0.0
    k = 1
    while True:
        an = k / 2.0
        d = x + an * d
        d = tiny if d == 0 else d
        c = x + an / c
        c = tiny if c == 0 else c
        d = 1.0 / d
        delta = c * d
        f *= delta
        if abs(delta - 1.0) < 1e-16 or k > 5000:
            break
        k += 1
    return math.exp(-x * x) / (math.sqrt(math.pi) * f)


def erfc(x):
    # the continued fraction avoids cancellation in 1 - erf(x) beyond x = 1
    if x >= 1.0:
        return _erfc_cf(x)
    if x <= -1.0:
        return 2.0 - _erfc_cf(-x)
    return 1.0 - _erf_series(x)


def std_normal_cdf(x):
    return 0.5 * erfc(-x / _SQRT2)


def _check_prob(p):
    if not (0.0 < p < 1.0) or math.isnan(p):
        raise InvalidInput(f"probability must lie in (0, 1), got {p}")


def _bisect(f, lo, hi, target, iters=400):
    # f increasing on [lo, hi], f(lo) <= target <= f(hi)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        if mid == lo or mid == hi:
            break
        if f(mid) < target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def std_normal_quantile(p):
    """Inverse of the standard normal CDF by bisection."""
    _check_prob(p)
    if p == 0.5:
        return 0.0
    if p > 0.5:
        # upper tail: solve Phi(-x) = 1 - p to keep precision
        return _bisect(lambda x: -std_normal_cdf(-x), 0.0, 40.0, -(1.0 - p))
    return _bisect(std_normal_cdf, -40.0, 0.0, p)


def regularized_gamma_p(a, x):
    """Regularized lower incomplete gamma P(a, x)."""
    if a <= 0:
        raise InvalidInput("shape must be positive")
    if x <= 0:
        return 0.0
    lg = math.lgamma(a)
    if x < a + 1.0:
        ap, term = a, 1.0 / a
        total = term
        for _ in range(10000):
            ap += 1.0
            term *= x / ap
            total += term
            if abs(term) < abs(total) * 1e-17:
                break
        return total * math.exp(-x + a * math.log(x) - lg)
    # continued fraction for Q(a, x)
    tiny = 1e-300
    b = x + 1.0 - a
    c = 1.0 / tiny
    d = 1.0 / b
    h = d
    for i in range(1, 10000):
        an = -i * (i - a)
        b += 2.0
        d = an * d + b
        d = tiny if abs(d) < tiny else d
        c = b + an / c
        c = tiny if abs(c) < tiny else c
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < 1e-16:
            break
    return 1.0 - math.exp(-x + a * math.log(x) - lg) * h


def chi2_cdf(x, df):
    return regularized_gamma_p(df / 2.0, x / 2.0)


def chi2_quantile(p, df):
    """Quantile of the chi-square distribution with ``df`` degrees of freedom."""
    _check_prob(p)
    if int(df) != df or df < 1:
        raise InvalidInput(f"degrees of freedom must be a positive integer, got {df}")
    hi = max(1.0, float(df))
    while chi2_cdf(hi, df) < p:
        hi *= 2.0
    return _bisect(lambda x: chi2_cdf(x, df), 0.0, hi, p)
