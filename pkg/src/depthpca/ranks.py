"""Spatial signs, depth-based multivariate ranks and the spatial median."""

from typing import NamedTuple

import numpy as np

from .depth import as_data
from .errors import InvalidInput

SPATIAL_MEDIAN_TOL = 1e-10
SPATIAL_MEDIAN_MAX_ITER = 500
_COINCIDE = 1e-12


class LocationEstimate(NamedTuple):
    value: np.ndarray
    iterations: int
    converged: bool


def spatial_sign(x, mu):
    """``(x - mu) / ||x - mu||``, or zero where ``x == mu``.

    ``x`` may be one point or an (n, p) array of rows.
    """
    x = np.asarray(x, dtype=float)
    mu = np.asarray(mu, dtype=float)
    if x.shape[-1] != mu.shape[-1]:
        raise InvalidInput(f"dimension mismatch: {x.shape[-1]} vs {mu.shape[-1]}")
    diff = x - mu
    norm = np.linalg.norm(diff, axis=-1, keepdims=True)
    safe = np.where(norm > 0, norm, 1.0)
    return np.where(norm > 0, diff / safe, 0.0)


def rank_transform(model, mu, data):
    """Rows ``htped(x_i) * S(x_i - mu)``; every norm is at most ``model.max_depth``."""
    x = as_data(data)
    if x.shape[1] != model.p:
        raise InvalidInput(f"data has {x.shape[1]} columns, depth model expects {model.p}")
    return model.htped(x)[:, None] * spatial_sign(x, mu)


def _objective_grad(x, y):
    diff = x - y
    dist = np.linalg.norm(diff, axis=1)
    return diff, dist


def _newton_or(x, y, fallback, units, inv, r_vec):
    """Safeguarded Newton step; Weiszfeld alone crawls when the minimizer hugs a data point."""
    p = x.shape[1]
    hess = inv.sum() * np.eye(p) - (units.T * inv) @ units
    try:
        cand = y + np.linalg.solve(hess, r_vec)
    except np.linalg.LinAlgError:
        return fallback
    if not np.all(np.isfinite(cand)):
        return fallback
    obj = lambda m: np.linalg.norm(x - m, axis=1).sum()
    return cand if obj(cand) < obj(fallback) else fallback


def spatial_median(data, tol=SPATIAL_MEDIAN_TOL, max_iter=SPATIAL_MEDIAN_MAX_ITER):
    """Minimizer of ``sum_i ||x_i - m||`` by Weiszfeld iteration.

    Convergence is declared when the (sub)gradient norm divided by ``n``
    drops to ``tol``.  Iterates that land on a data point use the
    Vardi-Zhang modified step, and at every iteration the data point
    nearest the iterate is tested for optimality, which is how minimizers
    located at data points are reached exactly.  Away from data points a
    Newton step replaces the Weiszfeld step whenever it lowers the objective.
    """
    x = as_data(data)
    n = x.shape[0]
    y = np.median(x, axis=0)
    if n == 1:
        return LocationEstimate(x[0].copy(), 0, True)
    for it in range(1, max_iter + 1):
        diff, dist = _objective_grad(x, y)
        near = dist < _COINCIDE
        eta = int(near.sum())
        far = ~near
        inv = 1.0 / dist[far]
        r_vec = (diff[far] * inv[:, None]).sum(axis=0)
        r = float(np.linalg.norm(r_vec))
        if max(r - eta, 0.0) / n <= tol:
            return LocationEstimate(y, it - 1, True)
        # optimality of the nearest data point: ||sum_{j != k} S(x_j - x_k)|| <= multiplicity
        k = int(np.argmin(dist))
        dk = np.linalg.norm(x - x[k], axis=1)
        same = dk < _COINCIDE
        rk = float(np.linalg.norm(((x[~same] - x[k]) / dk[~same, None]).sum(axis=0))) if (~same).any() else 0.0
        if rk <= same.sum():
            return LocationEstimate(x[k].copy(), it, True)
        t = (x[far] * inv[:, None]).sum(axis=0) / inv.sum()
        if eta == 0:
            y_new = _newton_or(x, y, t, diff[far] * inv[:, None], inv, r_vec)
        else:
            frac = min(1.0, eta / r)
            y_new = (1.0 - frac) * t + frac * y
        y = y_new
    diff, dist = _objective_grad(x, y)
    near = dist < _COINCIDE
    far = ~near
    r = float(np.linalg.norm((diff[far] / dist[far, None]).sum(axis=0)))
    ok = max(r - near.sum(), 0.0) / n <= tol
    return LocationEstimate(y, max_iter, bool(ok))
