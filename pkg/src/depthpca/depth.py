"""Depth functions: halfspace, Mahalanobis and projection depth.

A :class:`DepthModel` is either fitted to a sample (empirical depth) or
built from an :class:`EllipticalModel` (population depth, closed form).
Population depths reduce to functions of the Mahalanobis radius
``d = sqrt((x - mu)' Sigma^-1 (x - mu))``:

* Mahalanobis: ``1 / (1 + d^2)``
* halfspace:   ``1 - G(d)``, ``G`` the unit-variance univariate marginal CDF
* projection:  ``1 / (1 + d / q)``, ``q`` the (normal-consistent) MAD of ``G``

Scales in projection depth use the MAD multiplied by ``1 / Phi^-1(3/4)``,
the convention of R's ``mad``.
"""

from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy import special, stats

from . import numkernel as nk
from .errors import DegenerateData, InvalidInput, NotPositiveDefinite

DEFAULT_N_PROJECTIONS = 500
MAD_TO_SD = 1.0 / nk.std_normal_quantile(0.75)
_ZERO_SCALE_ATOL = 1e-12
_HD_CHUNK_CELLS = 2_000_000
_ANGLE_TOL = 1e-12


class DepthKind(str, Enum):
    HALFSPACE = "halfspace"
    MAHALANOBIS = "mahalanobis"
    PROJECTION = "projection"

    @property
    def max_depth(self):
        return 0.5 if self is DepthKind.HALFSPACE else 1.0

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        aliases = {"hd": "halfspace", "hsd": "halfspace", "mhd": "mahalanobis", "pd": "projection"}
        key = str(value).lower()
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise InvalidInput(f"unknown depth kind {value!r}") from None


def as_data(data, name="data"):
    x = np.asarray(data, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2 or x.shape[0] == 0 or x.shape[1] == 0:
        raise InvalidInput(f"{name} must be a non-empty 2-D array, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidInput(f"{name} has non-finite entries")
    return x


def mad(values, axis=0, scale=MAD_TO_SD):
    """Median absolute deviation times ``scale`` (normal-consistent by default)."""
    med = np.median(values, axis=axis, keepdims=True)
    return scale * np.median(np.abs(values - med), axis=axis)


@dataclass(frozen=True, eq=False)
class EllipticalModel:
    """Elliptical law with center ``mu`` and *covariance* ``sigma``.

    ``family`` is ``"normal"`` or ``"t"``; for ``"t"`` the degrees of
    freedom ``df`` must be at least 3 so that the covariance exists.
    """

    mu: np.ndarray
    sigma: np.ndarray
    family: str = "normal"
    df: int | None = None
    _chol: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        mu = np.atleast_1d(np.asarray(self.mu, dtype=float))
        sigma = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        if sigma.shape != (mu.size, mu.size):
            raise InvalidInput(f"sigma shape {sigma.shape} does not match mu of length {mu.size}")
        family = str(self.family).lower()
        if family in ("studentt", "student-t", "student_t"):
            family = "t"
        if family not in ("normal", "t"):
            raise InvalidInput(f"unknown family {self.family!r}")
        df = self.df
        if family == "t":
            if df is None or int(df) != df or df < 3:
                raise InvalidInput(f"Student t needs integer df >= 3, got {df}")
            df = int(df)
        else:
            df = None
        try:
            chol = nk.cholesky(sigma)
        except NotPositiveDefinite as exc:
            raise InvalidInput("sigma must be positive definite") from exc
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", nk.as_symmetric(sigma))
        object.__setattr__(self, "family", family)
        object.__setattr__(self, "df", df)
        object.__setattr__(self, "_chol", chol)

    @classmethod
    def normal(cls, sigma, mu=None):
        sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
        return cls(np.zeros(sigma.shape[0]) if mu is None else mu, sigma)

    @classmethod
    def student_t(cls, df, sigma, mu=None):
        sigma = np.atleast_2d(np.asarray(sigma, dtype=float))
        return cls(np.zeros(sigma.shape[0]) if mu is None else mu, sigma, "t", df)

    @property
    def p(self):
        return self.mu.size

    @property
    def chol(self):
        return self._chol

    @property
    def label(self):
        return "normal" if self.family == "normal" else f"t{self.df}"

    @property
    def kurtosis(self):
        """Elliptical kurtosis parameter; +inf when the fourth moment diverges."""
        if self.family == "normal":
            return 0.0
        return 2.0 / (self.df - 4) if self.df > 4 else np.inf

    def mahalanobis(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        w = nk.solve_lower(self._chol, (x - self.mu).T)
        return np.sqrt(np.sum(w * w, axis=0))

    # unit-variance univariate marginal of the standardized law
    def _t_scale(self):
        return np.sqrt((self.df - 2.0) / self.df)

    def marginal_cdf(self, t):
        t = np.asarray(t, dtype=float)
        if self.family == "normal":
            return special.ndtr(t)
        return special.stdtr(self.df, t / self._t_scale())

    def marginal_pdf(self, t):
        t = np.asarray(t, dtype=float)
        if self.family == "normal":
            return np.exp(-0.5 * t * t) / np.sqrt(2.0 * np.pi)
        s = self._t_scale()
        return stats.t.pdf(t / s, self.df) / s

    def marginal_quantile(self, prob):
        if self.family == "normal":
            return special.ndtri(prob)
        return special.stdtrit(self.df, prob) * self._t_scale()

    @property
    def marginal_mad(self):
        """Raw MAD of the unit-variance marginal."""
        return float(self.marginal_quantile(0.75))

    def spherical(self, n, rng):
        """Draws of the standardized spherical law (identity covariance)."""
        z = rng.standard_normal((n, self.p))
        if self.family == "t":
            w = rng.chisquare(self.df, n)
            z *= np.sqrt((self.df - 2.0) / w)[:, None]
        return z


@dataclass(frozen=True, eq=False)
class DepthModel:
    """A fitted depth evaluator.

    Exactly one of ``data`` (sample depth) and ``population`` is set.
    """

    kind: DepthKind
    max_depth: float
    p: int
    data: np.ndarray | None = None
    population: EllipticalModel | None = None
    n_projections: int = DEFAULT_N_PROJECTIONS
    seed: int = 0
    mad_scale: float = MAD_TO_SD
    directions: np.ndarray | None = field(default=None, repr=False)
    proj_center: np.ndarray | None = field(default=None, repr=False)
    proj_scale: np.ndarray | None = field(default=None, repr=False)
    proj_sorted: np.ndarray | None = field(default=None, repr=False)
    mean: np.ndarray | None = field(default=None, repr=False)
    chol: np.ndarray | None = field(default=None, repr=False)

    @property
    def source(self):
        return "sample" if self.data is not None else "population"

    def depth(self, x):
        """Depth of one point (returns float) or of each row of ``x``."""
        pts = np.asarray(x, dtype=float)
        single = pts.ndim == 1
        pts = np.atleast_2d(pts)
        if pts.shape[1] != self.p or not np.all(np.isfinite(pts)):
            raise InvalidInput(f"points must be finite with dimension {self.p}")
        if self.population is not None:
            out = population_depth_radial(self.kind, self.population, self.population.mahalanobis(pts),
                                          self.mad_scale)
        elif self.kind is DepthKind.MAHALANOBIS:
            w = nk.solve_lower(self.chol, (pts - self.mean).T)
            out = 1.0 / (1.0 + np.sum(w * w, axis=0))
        elif self.kind is DepthKind.PROJECTION:
            out = 1.0 / (1.0 + self._outlyingness(pts))
        elif self.p <= 2:
            out = _halfspace_exact(self.data, pts)
        else:
            out = self._halfspace_directions(pts)
        # sample halfspace depth of a data point may exceed 1/2 (e.g. 3/5 at
        # the middle of five points); it is returned exactly
        out = np.maximum(out, 0.0)
        return float(out[0]) if single else out

    def htped(self, x):
        """``max_depth - depth``, floored at 0: bounded, decreasing in depth."""
        d = self.depth(x)
        return np.maximum(self.max_depth - d, 0.0) if np.ndim(d) else max(self.max_depth - d, 0.0)

    def _outlyingness(self, pts):
        num = np.abs(pts @ self.directions.T - self.proj_center)
        scale = self.proj_scale
        ratio = np.zeros_like(num)
        ok = scale > 0
        ratio[:, ok] = num[:, ok] / scale[ok]
        if not ok.all():
            zero_num = num[:, ~ok] <= _ZERO_SCALE_ATOL * (1.0 + np.abs(self.proj_center[~ok]))
            ratio[:, ~ok] = np.where(zero_num, 0.0, np.inf)
        return ratio.max(axis=1)

    def _halfspace_directions(self, pts):
        n = self.data.shape[0]
        proj = pts @ self.directions.T
        best = np.full(pts.shape[0], n, dtype=np.int64)
        for j in range(self.directions.shape[0]):
            col = self.proj_sorted[:, j]
            below = np.searchsorted(col, proj[:, j], side="right")
            above = n - np.searchsorted(col, proj[:, j], side="left")
            np.minimum(best, np.minimum(below, above), out=best)
        return best / n


def population_depth_radial(kind, model, d, mad_scale=MAD_TO_SD):
    """Population depth of a point at Mahalanobis radius ``d``."""
    kind = DepthKind.parse(kind)
    d = np.asarray(d, dtype=float)
    if kind is DepthKind.MAHALANOBIS:
        return 1.0 / (1.0 + d * d)
    if kind is DepthKind.HALFSPACE:
        return model.marginal_cdf(-d)
    q = mad_scale * model.marginal_mad
    return 1.0 / (1.0 + d / q)


def population_htped_radial(kind, model, d, mad_scale=MAD_TO_SD):
    kind = DepthKind.parse(kind)
    return kind.max_depth - population_depth_radial(kind, model, d, mad_scale)


def population_depth(kind, model, mad_scale=MAD_TO_SD):
    """Depth model evaluating the closed-form population depth of ``model``."""
    kind = DepthKind.parse(kind)
    return DepthModel(kind=kind, max_depth=kind.max_depth, p=model.p, population=model,
                      mad_scale=float(mad_scale))


def _direction_set(data, n_projections, seed):
    """Seeded random unit directions, the coordinate axes, and x_i - median."""
    n, p = data.shape
    rng = np.random.default_rng(seed)
    rand = rng.standard_normal((n_projections, p))
    rand /= np.linalg.norm(rand, axis=1, keepdims=True)
    centered = data - np.median(data, axis=0)
    norms = np.linalg.norm(centered, axis=1)
    keep = norms > 0
    driven = centered[keep] / norms[keep, None]
    return np.vstack([rand, np.eye(p), driven])


def fit_depth(kind, data, seed=0, n_projections=DEFAULT_N_PROJECTIONS, mad_scale=MAD_TO_SD):
    """Fit an empirical depth to ``data`` (rows are observations).

    Mahalanobis depth plugs in the sample mean and the (n - 1) sample
    covariance; projection depth (and halfspace depth for p >= 3) uses a
    fixed, seeded direction set.

    Raises
    ------
    DegenerateData
        Mahalanobis depth on data whose covariance is singular.
    """
    kind = DepthKind.parse(kind)
    x = as_data(data)
    n, p = x.shape
    if n < 2:
        raise DegenerateData("depth needs at least two observations")
    common = dict(kind=kind, max_depth=kind.max_depth, p=p, data=x,
                  n_projections=int(n_projections), seed=int(seed), mad_scale=float(mad_scale))
    if kind is DepthKind.MAHALANOBIS:
        if n < p + 1:
            raise DegenerateData(f"Mahalanobis depth needs n >= p + 1 (n={n}, p={p})")
        mean = x.mean(axis=0)
        cov = np.cov(x, rowvar=False).reshape(p, p)
        try:
            chol = nk.cholesky(cov)
        except NotPositiveDefinite as exc:
            raise DegenerateData("sample covariance is singular") from exc
        return DepthModel(mean=mean, chol=chol, **common)
    if kind is DepthKind.HALFSPACE and p <= 2:
        return DepthModel(**common)
    dirs = _direction_set(x, int(n_projections), seed)
    proj = x @ dirs.T
    if kind is DepthKind.PROJECTION:
        return DepthModel(directions=dirs, proj_center=np.median(proj, axis=0),
                          proj_scale=mad(proj, axis=0, scale=mad_scale), **common)
    return DepthModel(directions=dirs, proj_sorted=np.sort(proj, axis=0), **common)


def depth_at(model, x):
    return model.depth(x)


def htped_at(model, x):
    return model.htped(x)


def _halfspace_exact(data, pts):
    """Exact sample halfspace depth for p = 1 and p = 2."""
    n, p = data.shape
    if p == 1:
        col = np.sort(data[:, 0])
        q = pts[:, 0]
        below = np.searchsorted(col, q, side="right")
        above = n - np.searchsorted(col, q, side="left")
        return np.minimum(below, above) / n
    out = np.empty(pts.shape[0])
    chunk = max(1, _HD_CHUNK_CELLS // n)
    for start in range(0, pts.shape[0], chunk):
        out[start:start + chunk] = _halfspace_2d(data, pts[start:start + chunk])
    return out


def _halfspace_2d(data, pts):
    # A closed half-plane through x with generic normal holds the points
    # outside the opposite open half-circle of directions, so
    # depth = (#coincident + #others - max #angles in a half-open semicircle) / n.
    n = data.shape[0]
    k = pts.shape[0]
    dx = data[None, :, 0] - pts[:, None, 0]
    dy = data[None, :, 1] - pts[:, None, 1]
    coincident = (dx == 0) & (dy == 0)
    theta = np.arctan2(dy, dx)
    theta[theta >= np.pi] -= 2.0 * np.pi
    sentinel = 30.0
    theta[coincident] = sentinel
    theta.sort(axis=1)
    band = 100.0
    offs = band * np.arange(k)[:, None]
    flat = (theta + offs).ravel()
    th = theta + offs

    def count(lo, hi):
        return (np.searchsorted(flat, hi.ravel(), side="left")
                - np.searchsorted(flat, lo.ravel(), side="left")).reshape(k, n)

    # angles of exactly collinear points can differ by an ulp or so; angles
    # closer than _ANGLE_TOL are treated as equal (or exactly opposite)
    e = _ANGLE_TOL
    within = count(th - e, th + np.pi - e) + count(th - 2.0 * np.pi - e, th - np.pi - e)
    within[theta == sentinel] = 0
    c0 = coincident.sum(axis=1)
    best = within.max(axis=1)
    return (n - best) / n
