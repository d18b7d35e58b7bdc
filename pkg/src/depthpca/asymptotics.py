"""Influence functions, asymptotic variances and efficiencies of eigenvectors.

Everything is computed in the eigenbasis of the model covariance: with
``Sigma = G diag(lam) G'`` a point ``x0`` maps to
``z0 = diag(lam)^-1/2 G' (x0 - mu)``, a draw of the standardized spherical
law of the model family.  Expectations over ``z`` are seeded Monte Carlo.

Two versions of the depth covariance influence function are available.

``plugin=False``
    The printed closed form ``h(z0)^2 SS(L^1/2 z0) - L_DS``.  This is the
    influence function of the DCM functional with the depth held at its
    population value.

``plugin=True``
    Adds the first-order effect of estimating the depth from the same
    sample: ``c(z0) = E_z[2 h(z) dh(z; z0) SS(L^1/2 z)]`` where
    ``dh(z; z0)`` is the influence of ``x0`` on the htped value at ``z``.
    This term does not vanish, and it is what the sample DCM actually
    follows (finite-sample efficiencies converge to the plug-in values).
    For every depth it reduces to ``E_v[SS(L^1/2 v) phi(v'z0)]`` over unit
    directions ``v`` with a depth-specific ``phi``:

    * Mahalanobis (sample mean and covariance):
      ``phi(t) = E_r[2 h(r) r^2 / (1 + r^2)^2] (1 - t^2)``
    * halfspace: ``phi(t) = E_r[2 h(r) HD(r)] - E_r[h(r) 1{r <= |t|}]``
    * projection (median, scaled MAD ``s = c * MAD``):
      ``phi(t) = -sign(|t| - q) E_r[2 h(r) r / (1 + r / (c q))^2] / (4 c q^2 g(q))``
      with ``q`` the MAD and ``g`` the density of the unit-variance marginal.

    Location terms are odd in ``z`` and integrate to zero.
"""

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import stats

from . import _mc
from . import numkernel as nk
from .depth import MAD_TO_SD, DepthKind, population_depth_radial, population_htped_radial
from .errors import DegenerateModel, InvalidInput
from .scatter import EstimatorKind

ARE_MC_N = 1_000_000
DEFAULT_MC_N = 100_000
ARE_GROUPS = 20
DIRECTIONS_2D = 360
DIRECTIONS_ND = 4000
SIGN_FLIP_MAX_P = 8
_TIE_RTOL = 1e-10
_CHUNK = 10_000


class AREResult(NamedTuple):
    value: float
    mc_std_error: float
    numerator: float
    denominator: float


class VdsElements(NamedTuple):
    """Element types of the asymptotic covariance of the rotated sample DCM.

    ``gamma[a, b] = E[h^4 lam_a lam_b z_a^2 z_b^2 / (z' L z)^2]``; the
    remaining fields combine it with ``lambda_ds``.  Diagonals of the two
    pairwise arrays are NaN (undefined element types).
    """

    var_diag: np.ndarray
    var_offdiag: np.ndarray
    cov_diag_pairs: np.ndarray
    gamma: np.ndarray
    gamma_se: np.ndarray
    lambda_ds: np.ndarray
    var_diag_se: np.ndarray


class EigvecAvar(NamedTuple):
    avar: np.ndarray  # (p, p, p): AVar(g_i) in original coordinates
    avar_trace: np.ndarray  # (p,)
    acov: np.ndarray  # (p, p, p, p): ACov(g_i, g_j), zero for i == j
    eigval_cov: np.ndarray  # (p, p): AVar(l_i) on the diagonal, ACov(l_i, l_j) off it
    eigval_cov_se: np.ndarray
    lambda_ds: np.ndarray


@dataclass(frozen=True)
class IFRequest:
    estimator: EstimatorKind
    model: object
    eigen_index: int
    x0: np.ndarray


# -- model geometry ------------------------------------------------------------

class _Frame(NamedTuple):
    lam: np.ndarray
    gamma: np.ndarray


def _frame(model, require_distinct=True):
    dec = nk.eigh(model.sigma)
    lam = dec.eigenvalues
    if require_distinct and lam.size > 1:
        gaps = -np.diff(lam)
        if np.any(gaps <= _TIE_RTOL * lam[0]):
            raise DegenerateModel("model eigenvalues are tied; eigenvectors are not identifiable")
    return _Frame(lam, dec.eigenvectors)


def _to_z(model, frame, x0):
    x0 = np.atleast_2d(np.asarray(x0, dtype=float))
    if x0.shape[1] != model.p or not np.all(np.isfinite(x0)):
        raise InvalidInput(f"points must be finite with dimension {model.p}")
    return ((x0 - model.mu) @ frame.gamma) / np.sqrt(frame.lam)


def _ss_rot(lam, z):
    """Rows of SS(L^1/2 z) flattened to (n, p*p)."""
    y = z * np.sqrt(lam)
    q = np.sum(y * y, axis=1)
    safe = np.where(q > 0, q, 1.0)
    out = (y[:, :, None] * y[:, None, :]).reshape(len(z), -1) / safe[:, None]
    out[q == 0] = 0.0
    return out


# -- radial law and plug-in correction -----------------------------------------

def _radial_sq_law(model):
    """Distribution of ||z||^2 for the standardized spherical law."""
    p = model.p
    if model.family == "normal":
        return stats.chi2(p)
    nu = model.df
    return stats.f(p, nu, scale=p * (nu - 2.0) / nu)


def _radial_expect(model, fn):
    law = _radial_sq_law(model)
    return float(law.expect(lambda s: fn(np.sqrt(s)), lb=0.0, ub=np.inf, limit=200))


class _PluginCorrection:
    """Evaluates ``c(z0)`` (flattened p*p) for a population model and depth."""

    def __init__(self, model, depth, lam, n_directions=None, seed=0, mad_scale=MAD_TO_SD):
        self.model = model
        self.depth = DepthKind.parse(depth)
        p = model.p
        if p == 2:
            nv = n_directions or DIRECTIONS_2D
            th = (np.arange(nv) + 0.5) * 2.0 * np.pi / nv
            v = np.column_stack([np.cos(th), np.sin(th)])
        else:
            nv = n_directions or DIRECTIONS_ND
            rng = np.random.default_rng(np.random.SeedSequence([int(seed), 7919]))
            if p <= SIGN_FLIP_MAX_P:
                # every coordinate sign pattern of each draw: the off-diagonal terms of
                # E_v[SS] phi cancel exactly wherever phi is even in each coordinate
                flips = np.array(np.meshgrid(*[[1.0, -1.0]] * p, indexing="ij")).reshape(p, -1).T
                base = rng.standard_normal((-(-nv // len(flips)), p))
                v = (base[:, None, :] * flips[None]).reshape(-1, p)
                nv = v.shape[0]
            else:
                v = rng.standard_normal((nv, p))
            v /= np.linalg.norm(v, axis=1, keepdims=True)
        self.v = v
        self.lam = np.asarray(lam, dtype=float)
        self.ssv = _ss_rot(lam, v) / nv
        self.mad_scale = float(mad_scale)
        self._setup(mad_scale)

    def _h(self, r):
        return population_htped_radial(self.depth, self.model, r, self.mad_scale)

    def _setup(self, mad_scale):
        m = self.model
        if self.depth is DepthKind.MAHALANOBIS:
            self.a = _radial_expect(m, lambda r: 2.0 * self._h(r) * r * r / (1.0 + r * r) ** 2)
        elif self.depth is DepthKind.HALFSPACE:
            hd = lambda r: population_depth_radial(DepthKind.HALFSPACE, m, r)
            self.a = _radial_expect(m, lambda r: 2.0 * self._h(r) * hd(r))
            # B(R) = E[h(r) 1{r <= R}]: midpoint rule on a probability grid,
            # then resampled on a uniform r-grid for fast lookup
            law = _radial_sq_law(m)
            k = 400_000
            rp = np.sqrt(law.ppf((np.arange(k) + 0.5) / k))
            bp = np.cumsum(self._h(rp)) / k
            self.r_max = float(np.sqrt(law.ppf(1.0 - 1e-9)))
            self.grid_r = np.linspace(0.0, self.r_max, 8193)
            self.grid_b = np.interp(self.grid_r, rp, bp, left=0.0)
            self.b_total = float(bp[-1])
        else:
            c = float(mad_scale)
            q = m.marginal_mad
            g = float(m.marginal_pdf(q))
            expo = _radial_expect(m, lambda r: 2.0 * self._h(r) * r / (1.0 + r / (c * q)) ** 2)
            self.q = q
            self.a = expo / (4.0 * c * q * q * g)

    def phi(self, t):
        if self.depth is DepthKind.MAHALANOBIS:
            return self.a * (1.0 - t * t)
        if self.depth is DepthKind.HALFSPACE:
            pos = np.abs(t) * ((self.grid_r.size - 1) / self.r_max)
            j = np.minimum(pos.astype(np.int64), self.grid_r.size - 2)
            frac = pos - j
            b = self.grid_b[j] * (1.0 - frac) + self.grid_b[j + 1] * frac
            b = np.where(pos >= self.grid_r.size - 1, self.b_total, b)
            return self.a - b
        return -np.sign(np.abs(t) - self.q) * self.a

    def __call__(self, z0):
        if self.depth is DepthKind.PROJECTION and self.model.p == 2:
            return self._projection_2d(z0)
        out = np.empty((len(z0), self.ssv.shape[1]))
        for s in range(0, len(z0), _CHUNK):
            t = z0[s:s + _CHUNK] @ self.v.T
            out[s:s + _CHUNK] = self.phi(t) @ self.ssv
        return out


    def _projection_2d(self, z0):
        # phi is a step in the direction angle, so a direction grid converges slowly;
        # integrate SS(L^1/2 v) exactly over the arcs where |v'z0| < q instead
        lam = self.lam
        k = np.sqrt(lam[1] / lam[0])

        def anti(th):
            c, s = np.cos(th), np.sin(th)
            if abs(k - 1.0) < 1e-12:
                a11 = th / 2 + np.sin(2 * th) / 4
                a12 = s * s / 2
            else:
                psi = th + np.arctan2((k - 1.0) * c * s, c * c + k * s * s)
                a11 = (th - k * psi) / (1.0 - k * k)
                a12 = k * np.log(c * c + k * k * s * s) / (2.0 * (k * k - 1.0))
            return a11, a12

        total11 = 1.0 / (1.0 + k)
        r = np.linalg.norm(z0, axis=1)
        th0 = np.arctan2(z0[:, 1], z0[:, 0])
        beta = np.arcsin(np.minimum(self.q / np.where(r > 0, r, 1.0), 1.0))
        lo11, lo12 = anti(th0 + np.pi / 2 - beta)
        hi11, hi12 = anti(th0 + np.pi / 2 + beta)
        # two antipodal arcs with equal integrals; SS is pi-periodic
        in11 = (hi11 - lo11) / np.pi
        in12 = (hi12 - lo12) / np.pi
        inside = r <= self.q
        in11 = np.where(inside, total11, in11)
        in12 = np.where(inside, 0.0, in12)
        m11 = self.a * (2.0 * in11 - total11)
        m12 = self.a * 2.0 * in12
        m22 = self.a * (2.0 * (np.where(inside, 1.0, 2.0 * beta / np.pi) - in11) - (1.0 - total11))
        return np.column_stack([m11, m12, m12, m22])


# -- influence functions -------------------------------------------------------

class _EigvecIF:
    """Influence of ``x0`` on the eigenvector functionals of one estimator."""

    def __init__(self, estimator, model, depth=None, lambda_ds=None, mc_n=DEFAULT_MC_N,
                 seed=0, plugin=False, n_directions=None, mad_scale=MAD_TO_SD):
        est = EstimatorKind.parse(estimator)
        if depth is not None and est.name == "dcm" and DepthKind.parse(depth) is not est.depth:
            raise InvalidInput("depth argument disagrees with the estimator's depth")
        if est.name == "wtyler":
            raise InvalidInput("eigenvector influence of the depth-weighted Tyler matrix is not available")
        self.est = est
        self.model = model
        self.frame = _frame(model)
        lam = self.frame.lam
        self.correction = None
        self.mad_scale = float(mad_scale)
        if est.name == "dcm":
            self.eig = (np.asarray(lambda_ds, dtype=float) if lambda_ds is not None
                        else _lambda_ds(model, est.depth, lam, mc_n, seed, mad_scale))
            if plugin:
                self.correction = _PluginCorrection(model, est.depth, lam, n_directions, seed, mad_scale)
        elif est.name == "scm":
            self.eig = _lambda_ds(model, None, lam, mc_n, seed)
        else:
            self.eig = lam
        if np.any(np.abs(np.diff(self.eig)) <= _TIE_RTOL * np.abs(self.eig[0])):
            raise DegenerateModel(f"{est.label} eigenvalues are tied")

    def matrix_if(self, z0):
        """Rotated matrix influence ``M(z0)`` flattened to (n, p*p), up to its diagonal shift."""
        lam = self.frame.lam
        p = lam.size
        name = self.est.name
        if name == "sample-cov":
            y = z0 * np.sqrt(lam)
            return (y[:, :, None] * y[:, None, :]).reshape(len(z0), -1)
        if name == "tyler":
            # (p + 2) z z' / ||z||^2 in the scaled frame; off-diagonal entries give the eigenvector IF
            r2 = np.sum(z0 * z0, axis=1)
            safe = np.where(r2 > 0, r2, 1.0)
            m = (p + 2.0) * (z0[:, :, None] * z0[:, None, :]).reshape(len(z0), -1) / safe[:, None]
            m[r2 == 0] = 0.0
            return m
        ss = _ss_rot(lam, z0)
        if name == "scm":
            return ss
        h = population_htped_radial(self.est.depth, self.model, np.linalg.norm(z0, axis=1), self.mad_scale)
        m = (h * h)[:, None] * ss
        if self.correction is not None:
            m = m + self.correction(z0)
        return m

    def coefficients(self, z0, index):
        """Eigenvector IF coordinates in the model eigenbasis, shape (n, p)."""
        lam = self.frame.lam
        p = lam.size
        i = index
        m = self.matrix_if(z0).reshape(len(z0), p, p)[:, i, :].copy()
        if self.est.name == "tyler":
            # Tyler's display uses sqrt(lam_i lam_k) / (lam_i - lam_k) with the unscaled frame
            denom = (lam[i] - lam) / np.sqrt(lam[i] * lam)
        else:
            denom = self.eig[i] - self.eig
        denom[i] = np.inf
        m[:, i] = 0.0
        return m / denom

    def __call__(self, x0, index=0):
        z0 = _to_z(self.model, self.frame, x0)
        return self.coefficients(z0, index) @ self.frame.gamma.T


def _lambda_ds(model, depth, lam, mc_n, seed, mad_scale=MAD_TO_SD):
    """Diagonal of E[h^2 SS(L^1/2 z)]; ``depth=None`` gives the SCM (h = 1)."""
    acc = _mc.Accumulator()
    for rng, size in _mc.batches(mc_n, seed):
        z = model.spherical(size, rng)
        y2 = lam * z * z
        w = y2 / y2.sum(axis=1, keepdims=True)
        if depth is not None:
            w *= population_htped_radial(depth, model, np.linalg.norm(z, axis=1), mad_scale)[:, None] ** 2
        acc.add(w)
    return acc.mean


def _check_index(index, p):
    if not (0 <= int(index) < p):
        raise InvalidInput(f"eigen_index must lie in 1..{p}")
    return int(index)


def influence_eigvec(req, depth=None, lambda_ds=None, mc_n=DEFAULT_MC_N, seed=0, plugin=False):
    """Influence function of the ``req.eigen_index``-th (1-based) eigenvector at ``req.x0``.

    ``plugin=True`` includes the depth-estimation term for DCM estimators.
    The result is orthogonal to the corresponding model eigenvector.
    """
    model = req.model
    index = _check_index(req.eigen_index - 1, model.p)
    ev = _EigvecIF(req.estimator, model, depth, lambda_ds, mc_n, seed, plugin)
    return ev(req.x0, index)[0]


def influence_grid(estimator, model, depth=None, xlim=(-4.0, 4.0), ylim=(-4.0, 4.0),
                   resolution=41, index=1, mc_n=DEFAULT_MC_N, seed=0, plugin=False):
    """Norm of the eigenvector influence function on a rectangular grid (p = 2).

    Returns ``(xs, ys, norms)`` with ``norms[j, i]`` at ``(xs[i], ys[j])``.
    """
    if model.p != 2:
        raise InvalidInput("influence grids are defined for p = 2 only")
    res = int(resolution)
    if res < 2:
        raise InvalidInput("resolution must be at least 2")
    xs = np.linspace(xlim[0], xlim[1], res)
    ys = np.linspace(ylim[0], ylim[1], res)
    gx, gy = np.meshgrid(xs, ys)
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    ev = _EigvecIF(estimator, model, depth, None, mc_n, seed, plugin)
    vals = np.linalg.norm(ev(pts, _check_index(index - 1, 2)), axis=1)
    return xs, ys, vals.reshape(res, res)


# -- asymptotic covariance of the sample DCM -------------------------------------

def _h4_panel(model, depth, lam, mc_n, seed):
    """Per-element sums for gamma^D and lambda_ds plus the per-draw second moments."""
    p = lam.size
    acc_g = _mc.Accumulator()
    acc_l = _mc.Accumulator()
    acc_l2 = _mc.Accumulator()
    acc_cross = _mc.Accumulator()
    for rng, size in _mc.batches(mc_n, seed):
        z = model.spherical(size, rng)
        y2 = lam * z * z
        w = y2 / y2.sum(axis=1, keepdims=True)
        h2 = population_htped_radial(depth, model, np.linalg.norm(z, axis=1)) ** 2
        u = h2[:, None] * w  # h^2 lam_a z_a^2 / z'Lz
        g = (u[:, :, None] * u[:, None, :]).reshape(size, -1)
        acc_g.add(g)
        acc_l.add(u)
        acc_l2.add(u * u)
        acc_cross.add(u ** 3)
    return acc_g, acc_l, acc_l2, acc_cross, p


def vds_elements(model, depth, mc_n=DEFAULT_MC_N, seed=0):
    """Monte-Carlo element formulas of the rotated asymptotic DCM covariance."""
    if int(mc_n) < 100_000:
        raise InvalidInput(f"mc_n must be at least 1e5, got {mc_n}")
    depth = DepthKind.parse(depth)
    frame = _frame(model, require_distinct=False)
    acc_g, acc_l, acc_l2, acc_cross, p = _h4_panel(model, depth, frame.lam, mc_n, seed)
    gamma = acc_g.mean.reshape(p, p)
    gamma_se = acc_g.se.reshape(p, p)
    lds = acc_l.mean
    var_diag = np.diag(gamma) - lds ** 2
    # delta method for E[u^2] - E[u]^2 with u_a = h^2 lam_a z_a^2 / z'Lz
    n = acc_l.n
    m1, m2 = lds, np.diag(gamma)
    m3 = acc_cross.mean
    m4 = (acc_g.s2.reshape(p, p) / n).diagonal()
    var_u2 = m4 - m2 ** 2
    cov_u2u = m3 - m2 * m1
    var_u = m2 - m1 ** 2
    var_diag_se = np.sqrt(np.maximum(var_u2 - 4 * m1 * cov_u2u + 4 * m1 ** 2 * var_u, 0.0) / n)
    off = ~np.eye(p, dtype=bool)
    var_offdiag = np.where(off, gamma, np.nan)
    cov_diag_pairs = np.where(off, gamma - np.outer(lds, lds), np.nan)
    return VdsElements(var_diag, var_offdiag, cov_diag_pairs, gamma, gamma_se, lds, var_diag_se)


def vds_matrix(elements):
    """Assemble the p^2 x p^2 covariance of ``vec`` (column-major) of the rotated sample DCM.

    Entry ((a,b),(c,d)) is nonzero only when {a,b} = {c,d} or a = b and c = d.
    """
    gamma = elements.gamma
    lds = elements.lambda_ds
    p = lds.size
    v = np.zeros((p * p, p * p))

    def idx(a, b):
        return a + p * b

    for a in range(p):
        for b in range(p):
            for c in range(p):
                for d in range(p):
                    if a == b and c == d:
                        val = gamma[a, c] - lds[a] * lds[c]
                    elif a != b and {a, b} == {c, d}:
                        val = gamma[a, b]
                    else:
                        continue
                    v[idx(a, b), idx(c, d)] = val
    return v


def eigvec_avar(model, depth, mc_n=DEFAULT_MC_N, seed=0):
    """Asymptotic covariances of sample DCM eigenvectors and eigenvalues, as printed.

    These are the formulas with the depth held at its population value
    (see :func:`are_eigvec` with ``plugin=True`` for the estimated-depth version).
    """
    depth = DepthKind.parse(depth)
    frame = _frame(model)
    el = vds_elements(model, depth, mc_n, seed)
    lds = el.lambda_ds
    p = lds.size
    if p > 1 and np.any(np.abs(np.diff(lds)) <= _TIE_RTOL * lds[0]):
        raise DegenerateModel("DCM eigenvalues are tied")
    g = frame.gamma
    avar = np.zeros((p, p, p))
    acov = np.zeros((p, p, p, p))
    trace = np.zeros(p)
    for i in range(p):
        for k in range(p):
            if k == i:
                continue
            coef = el.gamma[i, k] / (lds[k] - lds[i]) ** 2
            avar[i] += coef * np.outer(g[:, k], g[:, k])
            trace[i] += coef
            acov[i, k] = -coef * np.outer(g[:, k], g[:, i])
    eigval_cov = el.gamma - np.outer(lds, lds)
    se = np.where(np.eye(p, dtype=bool), np.diag(el.var_diag_se), el.gamma_se)
    return EigvecAvar(avar, trace, acov, eigval_cov, se, lds)


# -- asymptotic relative efficiency -------------------------------------------

def _baseline_factor(model):
    kappa = model.kurtosis
    if not np.isfinite(kappa):
        raise DegenerateModel("sample covariance eigenvectors have no finite asymptotic variance (df <= 4)")
    return 1.0 + kappa


def are_eigvec(model, estimator, mc_n=ARE_MC_N, seed=0, index=1, plugin=True,
               method="auto", n_directions=None, mad_scale=MAD_TO_SD):
    """Asymptotic efficiency of an eigenvector estimator relative to the sample covariance.

    ``ARE = Tr AVar(sample cov) / Tr AVar(estimator)`` for the ``index``-th
    (1-based) eigenvector, with ``Tr AVar = sum_k E[M_ik^2] / (l_i - l_k)^2``
    over the estimator's rotated matrix influence ``M``.  The sample
    covariance trace carries the elliptical kurtosis factor ``1 + kappa``.

    ``estimator`` may be an EstimatorKind, a CLI name, or a DepthKind (the DCM
    with that depth).  ``method="closed-form"`` (p = 2 only) assembles the
    same Monte-Carlo expectations through the two-dimensional formula in
    ``rho``; ``"trace"`` uses the general trace ratio; ``"auto"`` picks the
    closed form when p = 2.  The standard error comes from batch means over
    ``ARE_GROUPS`` groups of the outer panel.
    """
    if isinstance(estimator, DepthKind) or str(estimator).lower() in ("halfspace", "mahalanobis", "projection", "hd", "mhd", "pd"):
        est = EstimatorKind("dcm", DepthKind.parse(estimator))
    else:
        est = EstimatorKind.parse(estimator)
    frame = _frame(model)
    lam = frame.lam
    p = lam.size
    i = _check_index(index - 1, p)
    if method not in ("auto", "closed-form", "trace"):
        raise InvalidInput(f"unknown method {method!r}")
    if method == "closed-form" and p != 2:
        raise InvalidInput("the closed form is for p = 2")
    closed = method == "closed-form" or (method == "auto" and p == 2)
    factor = _baseline_factor(model)
    others = np.arange(p) != i
    numerator = factor * float(np.sum(lam[i] * lam[others] / (lam[i] - lam[others]) ** 2))
    if est.name == "sample-cov":
        return AREResult(1.0, 0.0, numerator, numerator)
    if est.name == "wtyler":
        raise InvalidInput("asymptotic efficiency of the depth-weighted Tyler matrix is not available")

    correction = None
    if est.name == "dcm" and plugin:
        correction = _PluginCorrection(model, est.depth, lam, n_directions, seed, mad_scale)
    mc_n = int(mc_n)
    group = max(1, -(-mc_n // ARE_GROUPS))
    sums_m2, sums_l, counts = [], [], []
    for rng, size in _mc.batches(mc_n, seed, batch_size=group):
        z = model.spherical(size, rng)
        if est.name == "tyler":
            r2 = np.sum(z * z, axis=1)
            row = (p + 2.0) * z[:, [i]] * z / r2[:, None]
            lvals = np.zeros((size, p))
        else:
            ss = _ss_rot(lam, z)
            if est.name == "dcm":
                h = population_htped_radial(est.depth, model, np.linalg.norm(z, axis=1), mad_scale)
                ss *= (h * h)[:, None]
            lvals = ss.reshape(size, p, p).diagonal(axis1=1, axis2=2)
            mat = ss if correction is None else ss + correction(z)
            row = mat.reshape(size, p, p)[:, i, :]
        sums_m2.append(np.sum(row * row, axis=0))
        sums_l.append(lvals.sum(axis=0))
        counts.append(size)
    sums_m2 = np.array(sums_m2)
    sums_l = np.array(sums_l)
    counts = np.array(counts, dtype=float)

    def ratio(m2, lsum, n):
        e_m2 = m2 / n
        if est.name == "tyler":
            denom_terms = lam[i] * lam[others] / (lam[i] - lam[others]) ** 2 * e_m2[others]
            return float(np.sum(denom_terms))
        l = lsum / n
        if np.any(np.abs(l[i] - l[others]) <= _TIE_RTOL * abs(l[i])):
            raise DegenerateModel(f"{est.label} eigenvalues are tied")
        return float(np.sum(e_m2[others] / (l[i] - l[others]) ** 2))

    denom = ratio(sums_m2.sum(axis=0), sums_l.sum(axis=0), counts.sum())
    if closed:
        value = _closed_form_2d(model, lam, sums_m2.sum(axis=0)[1 - i] / counts.sum(),
                                sums_l.sum(axis=0) / counts.sum(), est, factor)
    else:
        value = numerator / denom
    parts = []
    for g in range(len(counts)):
        d = ratio(sums_m2[g], sums_l[g], counts[g])
        parts.append(numerator / d)
    parts = np.array(parts)
    se = float(parts.std(ddof=1) / np.sqrt(len(parts))) if len(parts) > 1 else float("nan")
    return AREResult(float(value), se, numerator, float(numerator / value))


def _closed_form_2d(model, lam, e_m12_sq, l, est, factor):
    """Two-dimensional form: ``(1 + kappa) rho / (1 - rho)^2 * Delta^2 / E[M12^2]``.

    With eigenvalues (lam, rho lam), ``Delta = l_1 - l_2`` of the estimator's
    matrix and ``E[M12^2]`` the second moment of its rotated off-diagonal
    influence.  In the literal depth case this equals the printed
    ``[E h^2 (z1^2 - rho z2^2) / (z1^2 + rho z2^2)]^2 / ((1 - rho)^2 E[h^4 z1^2 z2^2 / (z1^2 + rho z2^2)^2])``.
    """
    rho = lam[1] / lam[0]
    if est.name == "tyler":
        # M12 is expressed in the unscaled frame: E[M12^2] (lam1 lam2) / (lam1 - lam2)^2 is the trace
        return float(factor * rho / (1 - rho) ** 2 / (e_m12_sq * rho / (1 - rho) ** 2))
    delta = l[0] - l[1]
    return float(factor * rho / (1.0 - rho) ** 2 * delta ** 2 / e_m12_sq)
