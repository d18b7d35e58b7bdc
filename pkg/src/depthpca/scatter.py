"""Scatter estimators and shape-eigenvalue recovery.

Estimators: sample covariance, spatial sign covariance (SCM), depth
covariance (DCM, mean of ``htped^2 * S S'``), Tyler's M-estimator and
its depth-weighted variant.  All robust kinds default to the spatial
median as center.
"""

from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np

from . import _mc
from . import numkernel as nk
from .depth import DepthKind, as_data, fit_depth, population_htped_radial
from .errors import ConvergenceFailure, DegenerateData, InvalidInput, NotPositiveDefinite
from .ranks import spatial_median, spatial_sign

TYLER_TOL = 1e-8
TYLER_MAX_ITER = 200

_DEPTH_SHORT = {DepthKind.HALFSPACE: "HSD", DepthKind.MAHALANOBIS: "MhD", DepthKind.PROJECTION: "PD"}


@dataclass(frozen=True)
class EstimatorKind:
    """``name`` is one of sample-cov, scm, dcm, tyler, wtyler; depth kinds need ``depth``."""

    name: str
    depth: DepthKind | None = None

    NAMES = ("sample-cov", "scm", "dcm", "tyler", "wtyler")

    def __post_init__(self):
        if self.name not in self.NAMES:
            raise InvalidInput(f"unknown estimator {self.name!r}")
        if self.name in ("dcm", "wtyler"):
            if self.depth is None:
                raise InvalidInput(f"estimator {self.name} needs a depth kind")
            object.__setattr__(self, "depth", DepthKind.parse(self.depth))
        elif self.depth is not None:
            raise InvalidInput(f"estimator {self.name} takes no depth kind")

    @classmethod
    def parse(cls, text):
        """Accepts CLI names such as ``scm``, ``dcm-projection`` or ``wtyler-halfspace``."""
        if isinstance(text, cls):
            return text
        key = str(text).lower()
        for base in ("dcm", "wtyler"):
            if key.startswith(base + "-"):
                return cls(base, DepthKind.parse(key[len(base) + 1:]))
        aliases = {"cov": "sample-cov", "samplecov": "sample-cov", "classical": "sample-cov"}
        return cls(aliases.get(key, key))

    @property
    def cli_name(self):
        return self.name if self.depth is None else f"{self.name}-{self.depth.value}"

    @property
    def label(self):
        """Short column label: SCM, Tyler, PD-CM, HSD-wCM, ..."""
        if self.name == "dcm":
            return f"{_DEPTH_SHORT[self.depth]}-CM"
        if self.name == "wtyler":
            return f"{_DEPTH_SHORT[self.depth]}-wCM"
        return {"sample-cov": "Cov", "scm": "SCM", "tyler": "Tyler"}[self.name]

    @property
    def is_tyler(self):
        return self.name in ("tyler", "wtyler")

    @property
    def uses_depth(self):
        return self.depth is not None


SAMPLE_COV = EstimatorKind("sample-cov")
SCM = EstimatorKind("scm")
TYLER = EstimatorKind("tyler")


@dataclass(frozen=True, eq=False)
class ScatterFit:
    kind: EstimatorKind
    matrix: np.ndarray
    decomp: nk.SpectralDecomp
    center: np.ndarray
    iterations: int = 0
    converged: bool = True
    n_dropped: int = 0
    weights: np.ndarray | None = None  # htped^2 per row for depth-based kinds

    @property
    def eigenvalues(self):
        return self.decomp.eigenvalues

    @property
    def eigenvectors(self):
        return self.decomp.eigenvectors


class ShapeEigenvalues(NamedTuple):
    values: np.ndarray
    iterations: int
    converged: bool


def _make_fit(kind, matrix, center, **meta):
    m = nk.as_symmetric(matrix)
    return ScatterFit(kind, m, nk.eigh(m), np.asarray(center, dtype=float), **meta)


def _htped_sq(kind, x, center, seed, depth_model):
    model = depth_model if depth_model is not None else fit_depth(kind.depth, x, seed=seed)
    if model.p != x.shape[1]:
        raise InvalidInput("depth model dimension does not match data")
    h = model.htped(x)
    return h * h


def fit_scatter(kind, data, center=None, seed=0, depth_model=None,
                tol=TYLER_TOL, max_iter=TYLER_MAX_ITER):
    """Fit a scatter estimator to the rows of ``data``.

    Parameters
    ----------
    kind : EstimatorKind or str
    data : (n, p) array
    center : optional location; defaults to the spatial median (the mean
        for the sample covariance)
    seed : seed for direction sets of sample depths
    depth_model : optional DepthModel overriding the sample depth fitted
        to ``data`` (e.g. a population depth)

    Raises
    ------
    DegenerateData
        Too few rows, singular data for Tyler kinds, or all depth weights zero.
    ConvergenceFailure
        Tyler kinds that do not converge; ``.result`` holds the last fit.
    """
    kind = EstimatorKind.parse(kind)
    x = as_data(data)
    n, p = x.shape
    if n < 2:
        raise DegenerateData("scatter estimation needs at least two rows")
    if kind.is_tyler and n <= p:
        raise DegenerateData(f"{kind.label} needs n > p (n={n}, p={p})")
    if center is None:
        center = x.mean(axis=0) if kind == SAMPLE_COV else spatial_median(x).value
    center = np.asarray(center, dtype=float)
    if center.shape != (p,):
        raise InvalidInput(f"center must have length {p}")

    if kind == SAMPLE_COV:
        d = x - x.mean(axis=0)
        return _make_fit(kind, d.T @ d / (n - 1), center)

    signs = spatial_sign(x, center)
    nonzero = np.any(signs != 0, axis=1)
    dropped = int(n - nonzero.sum())
    w = _htped_sq(kind, x, center, seed, depth_model) if kind.uses_depth else None

    if kind.name in ("scm", "dcm"):
        s = signs if w is None else signs * np.sqrt(w)[:, None]
        return _make_fit(kind, s.T @ s / n, center, n_dropped=dropped, weights=w)

    xc = (x - center)[nonzero]
    ww = np.ones(xc.shape[0]) if w is None else w[nonzero]
    if not np.any(ww > 0):
        raise DegenerateData("all depth weights are zero")
    sigma = np.eye(p)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        new = _tyler_rhs(sigma, xc, ww)
        new *= p / np.trace(new)
        change = np.linalg.norm(new - sigma) / np.linalg.norm(sigma)
        sigma = 0.5 * (new + new.T)
        if change <= tol:
            converged = True
            break
    fit = _make_fit(kind, sigma, center, iterations=it, converged=converged,
                    n_dropped=dropped, weights=w)
    if not converged:
        raise ConvergenceFailure(f"{kind.label} did not converge in {max_iter} iterations", fit)
    return fit


def _tyler_rhs(sigma, xc, w):
    """``p * sum w_i x_i x_i' / (x_i' S^-1 x_i) / sum w_i`` on centered rows."""
    p = sigma.shape[0]
    try:
        L = nk.cholesky(sigma)
    except NotPositiveDefinite as exc:
        raise DegenerateData("Tyler iterate became singular; data may lie in a subspace") from exc
    u = nk.solve_lower(L, xc.T)
    q = np.sum(u * u, axis=0)
    coef = w / q
    return p * (xc.T * coef) @ xc / w.sum()


def tyler_residual(fit, data, matrix=None):
    """Frobenius norm of ``RHS(S) - S`` for the Tyler-type defining equation.

    ``matrix`` overrides ``fit.matrix`` (for probing arbitrary ``S``).
    """
    if not fit.kind.is_tyler:
        raise InvalidInput(f"residual is defined for Tyler kinds, not {fit.kind.label}")
    x = as_data(data)
    s = fit.matrix if matrix is None else nk.as_symmetric(matrix)
    xc = x - fit.center
    keep = np.any(xc != 0, axis=1)
    w = np.ones(x.shape[0]) if fit.weights is None else fit.weights
    return float(np.linalg.norm(_tyler_rhs(s, xc[keep], w[keep]) - s))


def with_matrix(fit, matrix):
    """Copy of ``fit`` with a different matrix (decomposition recomputed)."""
    m = nk.as_symmetric(matrix)
    return replace(fit, matrix=m, decomp=nk.eigh(m))


# -- population quantities ---------------------------------------------------

def _check_mc(mc_n, minimum):
    if int(mc_n) < minimum:
        raise InvalidInput(f"mc_n must be at least {minimum}, got {mc_n}")


def model_eigenvalues(model):
    lam = nk.eigh(model.sigma).eigenvalues
    return lam


def lambda_ds_population(model, depth, mc_n=100_000, seed=0, return_se=False):
    """Diagonal of the population DCM in the eigenbasis of ``model.sigma``.

    ``E[h(z)^2 lam_i z_i^2 / sum_j lam_j z_j^2]`` with ``z`` drawn from the
    standardized spherical law of the model's family and ``h`` its
    population htped.
    """
    _check_mc(mc_n, 10_000)
    depth = DepthKind.parse(depth)
    lam = model_eigenvalues(model)
    acc = _mc.Accumulator()
    for rng, size in _mc.batches(mc_n, seed):
        z = model.spherical(size, rng)
        r = np.linalg.norm(z, axis=1)
        h2 = population_htped_radial(depth, model, r) ** 2
        lz = lam * z * z
        acc.add(h2[:, None] * lz / lz.sum(axis=1, keepdims=True))
    return (acc.mean, acc.se) if return_se else acc.mean


def recover_shape(lambda_ds, model, depth, mc_n=100_000, tol=1e-8, max_iter=500, seed=0):
    """Standardized shape eigenvalues from DCM eigenvalues.

    Iterates ``L_i <- lambda_ds_i / E[h^2 z_i^2 / z' L z]`` on one fixed
    panel of draws, rescaling to unit determinant each step.  The
    expectation matrix is diagonal by symmetry; only its diagonal is
    estimated.

    Raises
    ------
    ConvergenceFailure
        When the relative change stays above ``tol``; ``.result`` holds
        the last iterate as a ShapeEigenvalues.
    """
    _check_mc(mc_n, 10_000)
    depth = DepthKind.parse(depth)
    lds = np.asarray(lambda_ds, dtype=float)
    if lds.ndim != 1 or lds.size != model.p or np.any(lds <= 0):
        raise InvalidInput("lambda_ds must be a positive vector of length p")
    if np.any(np.diff(lds) > 0):
        raise InvalidInput("lambda_ds must be in descending order")
    p = lds.size
    zs, h2s = [], []
    for rng, size in _mc.batches(mc_n, seed):
        z = model.spherical(size, rng)
        zs.append(z * z)
        h2s.append(population_htped_radial(depth, model, np.linalg.norm(z, axis=1)) ** 2)
    z2 = np.vstack(zs)
    h2 = np.concatenate(h2s)

    def standardize(v):
        return v / np.exp(np.mean(np.log(v)))

    cur = standardize(lds)
    for it in range(1, max_iter + 1):
        denom = z2 @ cur
        e = (h2 / denom) @ z2 / z2.shape[0]
        new = standardize(lds / e)
        change = float(np.max(np.abs(new - cur) / cur))
        cur = new
        if change <= tol:
            return ShapeEigenvalues(cur, it, True)
    res = ShapeEigenvalues(cur, max_iter, False)
    raise ConvergenceFailure(f"shape recovery did not converge in {max_iter} iterations", res)
