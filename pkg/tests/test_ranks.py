import numpy as np
import pytest
from scipy.stats import ortho_group

from depthpca.depth import EllipticalModel, fit_depth, population_depth
from depthpca.errors import InvalidInput
from depthpca.ranks import rank_transform, spatial_median, spatial_sign
from oracles import l1_objective, spatial_median_grid

SQUARE = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])


def test_spatial_sign_examples():
    np.testing.assert_allclose(spatial_sign([3.0, 4.0], [0.0, 0.0]), [0.6, 0.8])
    np.testing.assert_array_equal(spatial_sign([1.0, 2.0], [1.0, 2.0]), [0.0, 0.0])
    with pytest.raises(InvalidInput):
        spatial_sign([1.0, 2.0], [0.0, 0.0, 0.0])


def test_spatial_sign_rotation_and_norms():
    P = np.array([[0.0, -1.0], [1.0, 0.0]])
    rng = np.random.default_rng(0)
    x = rng.standard_normal((50, 2))
    mu = np.array([0.3, -0.2])
    s = spatial_sign(x, mu)
    np.testing.assert_allclose(spatial_sign(x @ P.T, P @ mu), s @ P.T, atol=1e-15)
    norms = np.linalg.norm(np.vstack([s, spatial_sign(mu, mu)]), axis=1)
    assert np.all((np.abs(norms - 1) <= 1e-15) | (norms == 0))


def test_rank_transform_examples():
    m = population_depth("mahalanobis", EllipticalModel.normal(np.eye(2)))
    r = rank_transform(m, np.zeros(2), np.array([[1.0, 0.0], [0.0, 0.0], [1e6, -1e6]]))
    np.testing.assert_allclose(r[0], [0.5, 0.0], atol=1e-15)
    np.testing.assert_array_equal(r[1], [0.0, 0.0])
    # a far outlier lands near the boundary of the ball of radius max_depth
    assert np.linalg.norm(r[2]) == pytest.approx(1.0, abs=1e-9)
    np.testing.assert_allclose(r[2] / np.linalg.norm(r[2]), [2 ** -0.5, -(2 ** -0.5)])


def test_rank_transform_dimension_mismatch():
    m = population_depth("mahalanobis", EllipticalModel.normal(np.eye(2)))
    with pytest.raises(InvalidInput):
        rank_transform(m, np.zeros(2), np.zeros((3, 3)))


@pytest.mark.parametrize("kind", ["halfspace", "mahalanobis", "projection"])
def test_rank_norm_bound(kind):
    rng = np.random.default_rng(3)
    x = rng.standard_t(3, size=(80, 3))
    m = fit_depth(kind, x, seed=1)
    r = rank_transform(m, spatial_median(x).value, x)
    assert np.max(np.linalg.norm(r, axis=1)) <= m.max_depth + 1e-9


def test_rank_transform_orthogonal_equivariance():
    rng = np.random.default_rng(4)
    sigma = np.array([[2.0, 0.5, 0.0], [0.5, 1.0, 0.2], [0.0, 0.2, 0.5]])
    mu = np.array([1.0, -1.0, 0.5])
    P = ortho_group.rvs(3, random_state=5)
    x = rng.standard_normal((40, 3)) @ np.linalg.cholesky(sigma).T + mu
    m0 = population_depth("mahalanobis", EllipticalModel.normal(sigma, mu=mu))
    m1 = population_depth("mahalanobis", EllipticalModel.normal(P @ sigma @ P.T, mu=P @ mu))
    r0 = rank_transform(m0, mu, x)
    r1 = rank_transform(m1, P @ mu, x @ P.T)
    np.testing.assert_allclose(r1, r0 @ P.T, atol=1e-9)


def test_spatial_median_examples():
    np.testing.assert_allclose(spatial_median(SQUARE).value, [0.0, 0.0], atol=1e-12)
    res = spatial_median(np.array([[1.0], [2.0], [100.0]]))
    assert res.converged
    assert res.value[0] == pytest.approx(2.0, abs=1e-10)
    one = spatial_median(np.array([[3.0, 4.0]]))
    np.testing.assert_array_equal(one.value, [3.0, 4.0])
    with pytest.raises(InvalidInput):
        spatial_median(np.zeros((0, 2)))


def test_spatial_median_at_a_data_point():
    # a heavy point with multiplicity 4 is the minimizer
    x = np.array([[0.0, 0.0]] * 4 + [[1.0, 0.0], [0.0, 1.0], [-1.0, -1.0]])
    res = spatial_median(x)
    assert res.converged
    np.testing.assert_array_equal(res.value, [0.0, 0.0])


@pytest.mark.parametrize("seed", range(20))
def test_spatial_median_against_grid(seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((30, 2)) * rng.uniform(0.5, 3.0, 2)
    res = spatial_median(x)
    assert res.converged and res.iterations <= 500
    _, grid_obj = spatial_median_grid(x)
    assert l1_objective(x, res.value) <= grid_obj + 1e-6


def test_spatial_median_equivariance():
    rng = np.random.default_rng(11)
    x = rng.standard_normal((60, 3)) @ np.diag([3.0, 1.0, 0.3])
    P = ortho_group.rvs(3, random_state=12)
    b = np.array([5.0, -2.0, 7.0])
    m = spatial_median(x).value
    np.testing.assert_allclose(spatial_median(x @ P.T).value, P @ m, atol=1e-8)
    np.testing.assert_allclose(spatial_median(x + b).value, m + b, atol=1e-8)


def test_spatial_median_max_iter_contract():
    rng = np.random.default_rng(2)
    x = rng.standard_normal((50, 2))
    res = spatial_median(x, tol=0.0, max_iter=3)
    assert res.iterations <= 3
    assert not res.converged
