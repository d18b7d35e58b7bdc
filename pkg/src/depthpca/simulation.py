"""Elliptical samplers and the finite-sample efficiency (MSPA / FSE) harness."""

import hashlib
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import numkernel as nk
from .depth import EllipticalModel
from .errors import ConvergenceFailure, DegenerateData, InvalidInput, NumericalFailure
from .ranks import spatial_median
from .scatter import SAMPLE_COV, EstimatorKind, fit_scatter

FAILURE_LIMIT = 0.01
CSV_COLUMNS = ("family", "df", "p", "n", "estimator", "mspa", "fse", "mc_se", "failures")


def sample_elliptical(model, n, seed):
    """``n`` draws with mean ``model.mu`` and covariance ``model.sigma``.

    Student t draws use scale matrix ``(df - 2) / df * sigma`` over a
    chi-square mixing variable, so the covariance is ``sigma``.
    ``seed`` may be an integer, a SeedSequence or a Generator.
    """
    n = int(n)
    if n < 1:
        raise InvalidInput(f"n must be positive, got {n}")
    if model.family == "t" and model.df <= 2:
        raise InvalidInput("Student t needs df > 2 for a covariance")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return model.mu + model.spherical(n, rng) @ model.chol.T


def principal_angle(g1, g2):
    """Angle in [0, pi/2] between the lines spanned by ``g1`` and ``g2``."""
    a = np.asarray(g1, dtype=float)
    b = np.asarray(g2, dtype=float)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        raise InvalidInput("principal angle needs nonzero vectors")
    c = abs(float(a @ b)) / (na * nb)
    return float(np.arccos(min(1.0, c)))


@dataclass(frozen=True)
class SimPlan:
    model: EllipticalModel
    estimators: tuple
    sample_sizes: tuple
    replications: int = 1000
    seed: int = 0
    ests: tuple = field(init=False, repr=False)

    def __post_init__(self):
        ests = [EstimatorKind.parse(e) for e in self.estimators]
        if SAMPLE_COV in ests:
            ests.remove(SAMPLE_COV)
        object.__setattr__(self, "ests", (SAMPLE_COV, *ests))
        sizes = tuple(int(n) for n in self.sample_sizes)
        p = self.model.p
        if not sizes or any(n < p + 2 for n in sizes):
            raise InvalidInput(f"sample sizes must be at least p + 2 = {p + 2}")
        object.__setattr__(self, "sample_sizes", sizes)
        if int(self.replications) < 1:
            raise InvalidInput("replications must be at least 1")
        object.__setattr__(self, "replications", int(self.replications))
        if len(set(self.ests)) != len(self.ests):
            raise InvalidInput("duplicate estimators in plan")


class FseRow(NamedTuple):
    family: str
    df: int | None
    p: int
    n: int
    estimator: str
    mspa: float
    fse: float
    mc_se: float
    failures: int


class FseTable(NamedTuple):
    rows: list
    replications: int

    def get(self, estimator, n):
        label = EstimatorKind.parse(estimator).cli_name
        for r in self.rows:
            if r.estimator == label and r.n == n:
                return r
        raise KeyError((label, n))

    def valid(self, row):
        """A cell is valid when fewer than 1% of its replications failed."""
        return row.failures < FAILURE_LIMIT * self.replications

    def to_csv(self):
        lines = [",".join(CSV_COLUMNS)]
        for r in self.rows:
            df = "" if r.df is None else str(r.df)
            lines.append(",".join([r.family, df, str(r.p), str(r.n), r.estimator,
                                   _num(r.mspa), _num(r.fse), _num(r.mc_se), str(r.failures)]))
        return "\n".join(lines) + "\n"


def _num(x):
    return format(float(x), ".17g") if np.isfinite(x) else "nan"


def _replication(model, ests, n, seed, rep):
    """Squared angles of each estimator's leading eigenvector (NaN on failure)."""
    ss = np.random.SeedSequence([int(seed), int(n), int(rep)])
    data_ss, depth_ss = ss.spawn(2)
    x = sample_elliptical(model, n, np.random.default_rng(data_ss))
    depth_seed = int(depth_ss.generate_state(1)[0])
    target = nk.eigh(model.sigma).eigenvectors[:, 0]
    center = spatial_median(x).value
    out = np.empty(len(ests))
    for j, est in enumerate(ests):
        try:
            c = None if est == SAMPLE_COV else center
            fit = fit_scatter(est, x, center=c, seed=depth_seed)
            out[j] = principal_angle(target, fit.eigenvectors[:, 0]) ** 2
        except (ConvergenceFailure, DegenerateData, NumericalFailure):
            out[j] = np.nan
    return out


def _run_chunk(args):
    model, ests, n, seed, reps = args
    return np.array([_replication(model, ests, n, seed, r) for r in reps])


def _cell_angles(plan, n, workers):
    reps = list(range(plan.replications))
    if workers <= 1:
        return _run_chunk((plan.model, plan.ests, n, plan.seed, reps))
    size = -(-len(reps) // (4 * workers))
    chunks = [reps[i:i + size] for i in range(0, len(reps), size)]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        parts = list(pool.map(_run_chunk, [(plan.model, plan.ests, n, plan.seed, c) for c in chunks]))
    return np.vstack(parts)


def _checkpoint_path(directory, plan, n):
    key = json.dumps({
        "family": plan.model.family, "df": plan.model.df,
        "mu": plan.model.mu.tolist(), "sigma": plan.model.sigma.tolist(),
        "estimators": [e.cli_name for e in plan.ests], "n": n,
        "reps": plan.replications, "seed": plan.seed,
    }, sort_keys=True)
    digest = hashlib.sha256(key.encode()).hexdigest()[:16]
    return os.path.join(directory, f"fse_{plan.model.label}_p{plan.model.p}_n{n}_seed{plan.seed}_{digest}.json")


def _load_or_run(plan, n, workers, checkpoint_dir):
    path = None
    if checkpoint_dir is not None:
        os.makedirs(checkpoint_dir, exist_ok=True)
        path = _checkpoint_path(checkpoint_dir, plan, n)
        if os.path.exists(path):
            with open(path) as fh:
                stored = json.load(fh)
            return np.array(stored["angles_sq"], dtype=float)
    angles = _cell_angles(plan, n, workers)
    if path is not None:
        tmp = path + ".tmp"
        with open(tmp, "w") as fh:
            json.dump({"angles_sq": [[None if np.isnan(v) else v for v in row] for row in angles.tolist()]}, fh)
        os.replace(tmp, path)
    return angles


def summarize_cell(plan, n, angles):
    """Rows for one sample size from the (reps, estimators) squared-angle array."""
    rows = []
    base = angles[:, 0]
    for j, est in enumerate(plan.ests):
        a = angles[:, j]
        ok = ~np.isnan(a)
        failures = int((~ok).sum())
        pair = ok & ~np.isnan(base)
        mspa = float(a[ok].mean()) if ok.any() else float("nan")
        if j == 0:
            fse, se = 1.0, 0.0
        elif pair.any():
            b, e = base[pair], a[pair]
            fse = float(b.mean() / e.mean())
            resid = b - fse * e
            # one replication gives a ratio but no spread
            se = float(np.sqrt(resid.var(ddof=1) / pair.sum()) / e.mean()) if pair.sum() >= 2 else float("nan")
        else:
            fse, se = float("nan"), float("nan")
        rows.append(FseRow(plan.model.family, plan.model.df, plan.model.p, n, est.cli_name,
                           mspa, fse, se, failures))
    return rows


def run_fse(plan, workers=1, checkpoint_dir=None):
    """Mean squared prediction angles and efficiencies against the sample covariance.

    Each replication draws its data from ``SeedSequence([seed, n, rep])`` and
    every estimator sees the same data and the same spatial median.  Failed
    fits are excluded and counted; FSE uses replications where both the
    estimator and the sample covariance succeeded.  With ``checkpoint_dir``
    each finished sample size is stored and reused on the next call.
    """
    rows = []
    for n in plan.sample_sizes:
        rows.extend(summarize_cell(plan, n, _load_or_run(plan, n, int(workers), checkpoint_dir)))
    return FseTable(rows, plan.replications)
