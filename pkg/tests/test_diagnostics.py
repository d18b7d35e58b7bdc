import warnings
from dataclasses import replace

import numpy as np
import pytest
from scipy.stats import ortho_group

from depthpca.diagnostics import (DiagnosticsReport, Flag, PcaModel, cutoffs, diagnose, distances, planted_outlier_data,
                                  project, squared_distance_quantiles, unexplained_variance)
from depthpca.errors import DegenerateModel, InvalidInput
from depthpca.scatter import SAMPLE_COV, SCM, fit_scatter, with_matrix


def _cloud(seed=0, n=80, p=4):
    rng = np.random.default_rng(seed)
    return rng.standard_normal((n, p)) @ np.diag(np.linspace(3.0, 0.5, p)) + 1.0


def test_project_examples():
    x = _cloud()
    fit = fit_scatter(SAMPLE_COV, x)
    model, scores = project(fit, np.vstack([fit.center, x]), 2)
    np.testing.assert_array_equal(scores[0], [0.0, 0.0])
    np.testing.assert_allclose(model.loading.T @ model.loading, np.eye(2), atol=1e-12)
    np.testing.assert_array_equal(model.eigvals, fit.eigenvalues[:2])


def test_project_full_basis_reconstructs():
    x = _cloud(1)
    fit = fit_scatter(SCM, x)
    model, scores = project(fit, x, 4)
    np.testing.assert_allclose(model.center + scores @ model.loading.T, x, atol=1e-10)
    rep = distances(model, scores, x)
    np.testing.assert_allclose(rep.od, 0.0, atol=1e-10)
    np.testing.assert_allclose(np.sum(scores ** 2, axis=1), np.sum((x - fit.center) ** 2, axis=1), rtol=1e-10)


def test_project_axis_aligned_scores():
    fit = with_matrix(fit_scatter(SAMPLE_COV, _cloud(2, p=2)), np.diag([2.0, 1.0]))
    x = np.array([[3.0, 1.0], [-1.0, 5.0]])
    _, scores = project(fit, x, 1)
    np.testing.assert_allclose(scores[:, 0], x[:, 0] - fit.center[0])


def test_project_validation():
    x = _cloud()
    fit = fit_scatter(SAMPLE_COV, x)
    with pytest.raises(InvalidInput):
        project(fit, x, 0)
    with pytest.raises(InvalidInput):
        project(fit, x, 5)
    with pytest.raises(InvalidInput):
        project(fit, x, 2, scale="robust")
    with pytest.raises(DegenerateModel):
        project(with_matrix(fit, np.diag([1.0, 0.0, 0.0, 0.0])), x, 2)
    with pytest.raises(InvalidInput):
        PcaModel(np.ones((3, 1)), np.ones(1), np.zeros(3), 1)


def test_distance_examples():
    fit = with_matrix(fit_scatter(SAMPLE_COV, _cloud(3, p=2)), np.diag([4.0, 1.0]))
    c = fit.center
    pts = np.array([c + [2.0, 0.0], c + [-7.0, 0.0], c + [0.0, 3.0]])
    model, scores = project(fit, pts, 1, scale="eigen")
    rep = distances(model, scores, pts)
    np.testing.assert_allclose(rep.sd, [1.0, 3.5, 0.0])
    np.testing.assert_allclose(rep.od, [0.0, 0.0, 3.0])


def test_orthogonal_distance_matches_line_geometry():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((50, 2)) @ np.array([[2.0, 1.0], [0.0, 0.7]])
    fit = fit_scatter(SCM, x)
    model, scores = project(fit, x, 1)
    od = distances(model, scores, x).od
    # distance from a point to the line through c with direction (a, b): |cross product|
    a, b = model.loading[:, 0]
    d = x - model.center
    np.testing.assert_allclose(od, np.abs(d[:, 0] * b - d[:, 1] * a), atol=1e-12)


def test_distances_rotation_invariance():
    x = _cloud(5)
    P = ortho_group.rvs(4, random_state=6)
    fit = fit_scatter(SAMPLE_COV, x)
    m0, s0 = project(fit, x, 2)
    r0 = distances(m0, s0, x)
    rotated = with_matrix(fit_scatter(SAMPLE_COV, x @ P.T), P @ fit.matrix @ P.T)
    m1, s1 = project(rotated, x @ P.T, 2)
    r1 = distances(m1, s1, x @ P.T)
    np.testing.assert_allclose(r1.sd, r0.sd, atol=1e-9)
    np.testing.assert_allclose(r1.od, r0.od, atol=1e-9)


def test_orthogonal_distance_non_increasing_in_k():
    x = _cloud(7, p=5)
    fit = fit_scatter("dcm-projection", x, seed=1)
    prev = None
    for k in range(1, 6):
        model, scores = project(fit, x, k)
        od = distances(model, scores, x).od
        if prev is not None:
            assert np.all(od <= prev + 1e-12)
        prev = od


def test_cutoff_values_and_flag_partition():
    x = _cloud(8)
    fit = fit_scatter(SAMPLE_COV, x)
    _, rep = diagnose(fit, x, 2)
    assert rep.sd_cut == pytest.approx(np.sqrt(7.377759), abs=1e-6)
    assert len(rep.flags) == x.shape[0]
    assert sum(rep.flag_counts().values()) == x.shape[0]
    again = cutoffs(rep, 2)
    assert again.flags == rep.flags
    for f, sd, od in zip(rep.flags, rep.sd, rep.od):
        assert (f in (Flag.SCORE, Flag.BOTH)) == (sd > rep.sd_cut)
        assert (f in (Flag.ORTHOGONAL, Flag.BOTH)) == (od > rep.od_cut)
    t = rep.od ** (2 / 3)
    med = np.median(t)
    mad_raw = np.median(np.abs(t - med))
    want = (med + 1.482602218505602 * mad_raw * 1.959963984540054) ** 1.5
    assert rep.od_cut == pytest.approx(want, rel=1e-9)
    raw = cutoffs(rep, 2, mad_scale=1.0)
    assert raw.od_cut == pytest.approx((med + mad_raw * 1.959963984540054) ** 1.5, rel=1e-9)


def test_points_on_the_plane_have_no_orthogonal_flags():
    rng = np.random.default_rng(9)
    basis = np.linalg.qr(rng.standard_normal((5, 2)))[0]
    x = rng.standard_normal((40, 2)) @ basis.T * 3.0
    fit = fit_scatter(SAMPLE_COV, x)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        _, rep = diagnose(fit, x, 2)
    assert rep.flag_counts()["orthogonal-outlier"] == 0
    assert rep.flag_counts()["both-outlier"] == 0
    np.testing.assert_array_equal(rep.od, 0.0)
    assert rep.warnings and any(issubclass(w.category, RuntimeWarning) for w in caught)
    np.testing.assert_array_equal(squared_distance_quantiles(fit, x, 2, [0.5, 1.0]), 0.0)


def test_zero_mad_fallback_warns():
    scores = np.zeros((5, 1))
    rep = DiagnosticsReport(scores, np.zeros(5), np.array([1.0, 1.0, 1.0, 1.0, 8.0]))
    with pytest.warns(RuntimeWarning):
        out = cutoffs(rep, 1)
    assert out.od_cut == pytest.approx(1.0)
    assert out.warnings and out.flags[-1] is Flag.ORTHOGONAL
    with pytest.raises(InvalidInput):
        cutoffs(DiagnosticsReport(scores[:1], np.zeros(1), np.zeros(1)), 1)


def test_unexplained_variance():
    fit = with_matrix(fit_scatter(SAMPLE_COV, _cloud(10, p=2)), np.diag([2.0, 1.0]))
    assert unexplained_variance(fit, 1) == pytest.approx(1 / 3)
    assert unexplained_variance(fit, 2) == 0.0
    big = fit_scatter(SCM, _cloud(11, p=6))
    vals = [unexplained_variance(big, q) for q in range(1, 7)]
    assert np.all(np.diff(vals) <= 0) and vals[-1] == 0.0
    with pytest.raises(InvalidInput):
        unexplained_variance(fit, 3)


def test_squared_distance_quantile_examples():
    rng = np.random.default_rng(12)
    flat = np.column_stack([rng.standard_normal(20) * 3, rng.standard_normal(20), np.zeros(20)])
    x = np.vstack([flat, [[0.0, 0.0, 2.5]]])
    fit = replace(with_matrix(fit_scatter(SAMPLE_COV, x), np.diag([3.0, 2.0, 1.0])), center=np.zeros(3))
    q = squared_distance_quantiles(fit, x, 2, [0.0, 0.5, 1.0])
    assert q[-1] == pytest.approx(6.25)
    assert q[0] == 0.0 and q[1] == 0.0
    # type-7 order statistics on OD^2 = {1, ..., 5}
    pts = np.column_stack([np.zeros(5), np.zeros(5), np.sqrt([1.0, 2.0, 3.0, 4.0, 5.0])])
    assert squared_distance_quantiles(fit, pts, 2, [0.5])[0] == pytest.approx(3.0)
    assert squared_distance_quantiles(fit, pts, 2, [0.1])[0] == pytest.approx(1.4)
    with pytest.raises(InvalidInput):
        squared_distance_quantiles(fit, pts, 2, [1.5])


def test_planted_outliers_are_detected():
    x, planted = planted_outlier_data(seed=1)
    assert x.shape == (39, 226) and len(planted) == 6
    _, rep = diagnose(fit_scatter("dcm-projection", x, seed=1), x, 2)
    assert sorted(rep.flagged().tolist()) == sorted(planted.tolist())
    _, cov = diagnose(fit_scatter(SAMPLE_COV, x), x, 2)
    assert len(cov.flagged()) < 6
