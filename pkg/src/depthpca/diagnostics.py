"""PCA projection diagnostics: score and orthogonal distances, cutoffs, flags."""

import warnings
from dataclasses import dataclass
from enum import Enum

import numpy as np

from . import numkernel as nk
from .depth import MAD_TO_SD, as_data, mad
from .errors import DegenerateModel, InvalidInput
from .scatter import SAMPLE_COV

CUTOFF_LEVEL = 0.975
_ORTHO_TOL = 1e-10
_OD_RTOL = 1e-10


class Flag(str, Enum):
    REGULAR = "regular"
    SCORE = "score-outlier"
    ORTHOGONAL = "orthogonal-outlier"
    BOTH = "both-outlier"


@dataclass(frozen=True, eq=False)
class PcaModel:
    loading: np.ndarray  # (p, k) orthonormal columns
    eigvals: np.ndarray  # (k,) positive, the squared scales used by score distances
    center: np.ndarray
    k: int

    def __post_init__(self):
        P = np.asarray(self.loading, dtype=float)
        if P.ndim != 2 or P.shape[1] != self.k or self.k < 1:
            raise InvalidInput("loading must be a (p, k) matrix")
        if np.linalg.norm(P.T @ P - np.eye(self.k)) > _ORTHO_TOL * self.k:
            raise InvalidInput("loading columns must be orthonormal")
        if np.any(~(np.asarray(self.eigvals) > 0)):
            raise DegenerateModel("score scales must be positive")


@dataclass(frozen=True, eq=False)
class DiagnosticsReport:
    scores: np.ndarray
    sd: np.ndarray
    od: np.ndarray
    sd_cut: float = np.nan
    od_cut: float = np.nan
    flags: tuple = ()
    warnings: tuple = ()

    def flag_counts(self):
        return {f.value: sum(1 for g in self.flags if g is f) for f in Flag}

    def flagged(self):
        """Indices of observations with any outlier flag."""
        return np.array([i for i, f in enumerate(self.flags) if f is not Flag.REGULAR], dtype=int)


def project(fit, data, k, scale="auto"):
    """Top-``k`` loading matrix of ``fit`` and the scores of ``data``.

    ``scale`` sets the squared scales used by score distances:
    ``"eigen"`` uses the fit's eigenvalues, ``"mad"`` the squared
    normal-consistent MAD of each score column, and ``"auto"`` picks
    ``"eigen"`` for the sample covariance and ``"mad"`` otherwise, since
    robust scatter matrices (sign, depth or Tyler type) are not on the
    variance scale.
    """
    x = as_data(data)
    p = x.shape[1]
    k = int(k)
    if not 1 <= k <= p:
        raise InvalidInput(f"k must lie in 1..{p}")
    if fit.matrix.shape[0] != p:
        raise InvalidInput("fit dimension does not match data")
    lam = fit.eigenvalues[:k]
    if np.any(~(lam > 0)):
        raise DegenerateModel(f"the fit has fewer than {k} positive eigenvalues")
    P = fit.eigenvectors[:, :k]
    scores = (x - fit.center) @ P
    if scale == "auto":
        scale = "eigen" if fit.kind == SAMPLE_COV else "mad"
    if scale == "eigen":
        ev = lam.copy()
    elif scale == "mad":
        ev = mad(scores, axis=0) ** 2
        if np.any(~(ev > 0)):
            raise DegenerateModel("a score column has zero MAD")
    else:
        raise InvalidInput(f"unknown scale {scale!r}")
    return PcaModel(P, ev, fit.center.copy(), k), scores


def distances(model, scores, data):
    """Score distances ``sqrt(sum s_ij^2 / l_j)`` and orthogonal distances ``||x - c - P s||``."""
    x = as_data(data)
    s = np.atleast_2d(np.asarray(scores, dtype=float))
    if s.shape != (x.shape[0], model.k) or x.shape[1] != model.loading.shape[0]:
        raise InvalidInput("scores, data and model are inconsistent")
    sd = np.sqrt(np.sum(s * s / model.eigvals, axis=1))
    d = x - model.center
    od = np.linalg.norm(d - s @ model.loading.T, axis=1)
    # rounding residue of points on the hyperplane would otherwise drive the cutoff
    od[od <= _OD_RTOL * np.linalg.norm(d, axis=1)] = 0.0
    return DiagnosticsReport(s, sd, od)


def cutoffs(report, k, level=CUTOFF_LEVEL, mad_scale=MAD_TO_SD):
    """Attach cutoffs and flags.

    ``sd_cut = sqrt(chi2_{k, level})`` and
    ``od_cut = (median(OD^2/3) + MAD(OD^2/3) Phi^-1(level))^3/2`` with the
    MAD scaled by ``mad_scale`` (normal-consistent by default; pass 1 for
    the raw MAD).  When that MAD is zero the cutoff falls back to
    ``median(OD^2/3)^3/2`` and a warning is recorded.
    """
    n = report.sd.size
    if n < 2:
        raise InvalidInput("cutoffs need at least two observations")
    sd_cut = float(np.sqrt(nk.chi2_quantile(level, int(k))))
    t = report.od ** (2.0 / 3.0)
    med = float(np.median(t))
    spread = float(mad(t, scale=mad_scale))
    notes = []
    if spread == 0:
        msg = "orthogonal distances have zero MAD; cutoff uses the median only"
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
        notes.append(msg)
        od_cut = med ** 1.5
    else:
        od_cut = (med + spread * nk.std_normal_quantile(level)) ** 1.5
    flags = tuple(_flag(a > sd_cut, b > od_cut) for a, b in zip(report.sd, report.od))
    return DiagnosticsReport(report.scores, report.sd, report.od, sd_cut, float(od_cut), flags, tuple(notes))


def _flag(score_out, ortho_out):
    if score_out and ortho_out:
        return Flag.BOTH
    if score_out:
        return Flag.SCORE
    if ortho_out:
        return Flag.ORTHOGONAL
    return Flag.REGULAR


def diagnose(fit, data, k, scale="auto", level=CUTOFF_LEVEL, mad_scale=MAD_TO_SD):
    """Project, measure and flag in one call."""
    model, scores = project(fit, data, k, scale)
    return model, cutoffs(distances(model, scores, data), k, level, mad_scale)


def unexplained_variance(fit, q):
    """Share of the trace left after the top ``q`` eigenvalues."""
    lam = fit.eigenvalues
    q = int(q)
    if not 1 <= q <= lam.size:
        raise InvalidInput(f"q must lie in 1..{lam.size}")
    total = float(lam.sum())
    if total <= 0:
        raise DegenerateModel("fit has no positive variance")
    return float(min(1.0, max(0.0, 1.0 - lam[:q].sum() / total)))


def squared_distance_quantiles(fit, data, k, quantiles):
    """Linear-interpolation (type 7) quantiles of squared orthogonal distances."""
    qs = np.asarray(quantiles, dtype=float)
    if np.any((qs < 0) | (qs > 1)):
        raise InvalidInput("quantiles must lie in [0, 1]")
    # orthogonal distances do not depend on the score scale
    model, scores = project(fit, data, k, scale="eigen")
    od = distances(model, scores, data).od
    return np.quantile(od * od, qs, method="linear")


def planted_outlier_data(n=39, p=226, n_outliers=6, seed=0):
    """Octane-shaped data: a noisy plane plus ``n_outliers`` rows far off it.

    Regular rows have in-plane scores drawn on a 200 x 160 box in
    symmetric pairs (plus the center when their count is odd) and
    residuals of norm uniform on [10, 20] in random directions orthogonal
    to the plane, so their score and orthogonal distances stay bounded.
    The outliers sit on a regular polygon of radius 80 in the plane and
    share one off-plane shift of length 160 (eight times the largest
    regular residual).  The common shift pulls the classical covariance
    towards it and masks the outliers there, while sign and depth based
    fits keep the plane.  The symmetric layout cancels the cross terms
    between the plane and the shift that would otherwise tilt a sign-based
    fit.

    Returns ``(data, outlier_rows)``.
    """
    rng = np.random.default_rng(seed)
    basis, _ = np.linalg.qr(rng.standard_normal((p, 3)))
    plane, shift_dir = basis[:, :2], basis[:, 2]
    center = rng.normal(0.0, 5.0, p)
    n_reg = n - n_outliers
    half = np.column_stack([rng.uniform(-100, 100, n_reg // 2), rng.uniform(-80, 80, n_reg // 2)])
    angles = rng.uniform(0, 2 * np.pi) + 2 * np.pi * np.arange(n_outliers) / n_outliers
    scores = np.vstack([np.zeros((n_reg % 2, 2)), half, -half,
                        80.0 * np.column_stack([np.cos(angles), np.sin(angles)])])
    resid = rng.standard_normal((n, p))
    resid -= resid @ basis @ basis.T
    resid /= np.linalg.norm(resid, axis=1, keepdims=True)
    resid *= rng.uniform(10.0, 20.0, n)[:, None]
    x = center + scores @ plane.T + resid
    x[n_reg:] += 160.0 * shift_dir
    order = rng.permutation(n)
    x = x[order]
    outliers = np.sort(np.nonzero(order >= n_reg)[0])
    return x, outliers


__all__ = [
    "Flag", "PcaModel", "DiagnosticsReport", "project", "distances", "cutoffs", "diagnose",
    "unexplained_variance", "squared_distance_quantiles", "planted_outlier_data", "MAD_TO_SD",
]
