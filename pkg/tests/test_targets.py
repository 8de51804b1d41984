import math

import numpy as np
import pytest
from scipy import stats

from ahtis import studentt as stt
from ahtis import targets as tg
from ahtis.mathcore import rng_stream


@pytest.mark.parametrize("d", [1, 2, 5, 16])
def test_synthetic_target_spectrum(d):
    params, log_z = tg.make_synthetic_target(tg.SyntheticTargetSpec(d=d, nu_pi=2.0))
    eig = np.linalg.eigvalsh(params.sigma_matrix)
    assert eig.max() / eig.min() == pytest.approx(5.0 if d > 1 else 1.0, rel=1e-10)
    assert np.all(np.abs(params.mu) <= 1.0)
    assert log_z == pytest.approx(stt.log_norm_const(params))


def test_synthetic_target_reproducible():
    a, _ = tg.make_synthetic_target(tg.SyntheticTargetSpec(3, 2.0, location_seed=4, basis_seed=5))
    b, _ = tg.make_synthetic_target(tg.SyntheticTargetSpec(3, 2.0, location_seed=4, basis_seed=5))
    c, _ = tg.make_synthetic_target(tg.SyntheticTargetSpec(3, 2.0, location_seed=4, basis_seed=6))
    np.testing.assert_array_equal(a.sigma_matrix, b.sigma_matrix)
    np.testing.assert_array_equal(a.mu, c.mu)
    assert not np.allclose(a.sigma_matrix, c.sigma_matrix)


def test_synthetic_spec_validation():
    with pytest.raises(ValueError):
        tg.SyntheticTargetSpec(2, 2.0, kappa=0.5)
    with pytest.raises(ValueError):
        tg.SyntheticTargetSpec(0, 2.0)


def test_random_rotation_is_orthogonal():
    q = tg.random_rotation(rng_stream(3), 6)
    np.testing.assert_allclose(q @ q.T, np.eye(6), atol=1e-12)
    assert np.linalg.det(q) == pytest.approx(1.0)


def test_student_target_normalizer():
    params, log_z = tg.make_synthetic_target(tg.SyntheticTargetSpec(2, 3.0))
    t = tg.student_target(params)
    x = np.array([[0.1, 0.2]])
    assert t(x)[0] - log_z == pytest.approx(stt.log_pdf(params, x)[0])


@pytest.fixture
def fixture_model():
    return tg.PosteriorModel(tg.load_regression_csv(tg.fixture_path()))


def test_fixture_loads(fixture_model):
    data = fixture_model.data
    assert data.X.shape == (5, 3)
    np.testing.assert_allclose(data.X[0], [0.71, 0.90, 0.45])
    assert data.y[3] == 0.55
    np.testing.assert_array_equal(data.design[:, -1], 1.0)
    assert fixture_model.dim == 4


@pytest.mark.parametrize("scale", [1.0, 2.0])
def test_log_posterior_matches_scipy(fixture_model, scale):
    model = tg.PosteriorModel(fixture_model.data, likelihood_nu=5.0, likelihood_scale=scale)
    beta = np.array([0.3, -0.2, 0.1, 0.5])
    resid = model.data.y - model.data.design @ beta
    expected = stats.t(df=5.0, scale=math.sqrt(scale)).logpdf(resid).sum()
    expected += stats.multivariate_t(loc=np.zeros(4), shape=np.eye(4), df=1.0).logpdf(beta)
    assert tg.log_posterior_unnorm(model, beta) == pytest.approx(expected, rel=1e-12)
    batch = np.vstack([beta, 2 * beta])
    assert tg.log_posterior_unnorm(model, batch)[0] == pytest.approx(expected, rel=1e-12)


def test_gradient_finite_differences(fixture_model):
    rng = np.random.default_rng(7)
    h = 1e-5
    for _ in range(10):
        beta = rng.normal(scale=2.0, size=4)
        g = tg.log_posterior_grad(fixture_model, beta)
        fd = np.array([
            (tg.log_posterior_unnorm(fixture_model, beta + h * e)
             - tg.log_posterior_unnorm(fixture_model, beta - h * e)) / (2 * h)
            for e in np.eye(4)
        ])
        np.testing.assert_allclose(g, fd, rtol=1e-6, atol=1e-8)


def test_gradient_row_permutation_invariant(fixture_model):
    perm = [3, 0, 4, 1, 2]
    data = fixture_model.data
    shuffled = tg.PosteriorModel(tg.RegressionData(data.X[perm], data.y[perm]))
    beta = np.array([0.5, 0.1, -0.3, 0.2])
    np.testing.assert_allclose(
        tg.log_posterior_grad(shuffled, beta), tg.log_posterior_grad(fixture_model, beta), rtol=1e-13
    )


def test_laplace_gaussian_limit(fixture_model):
    # huge dof: Gaussian likelihood and N(0, I) prior, so the posterior is Gaussian
    model = tg.PosteriorModel(fixture_model.data, likelihood_nu=1e8, prior_nu=1e8)
    A, y = model.data.design, model.data.y
    prec = A.T @ A + np.eye(4)
    res = tg.laplace_init(model)
    np.testing.assert_allclose(res.mu, np.linalg.solve(prec, A.T @ y), atol=1e-5)
    np.testing.assert_allclose(res.sigma.matrix, np.linalg.inv(prec), atol=1e-5)
    assert res.grad_norm < 1e-8
    assert res.hessian_asymmetry < 1e-5


def test_laplace_fixture(fixture_model):
    res = tg.laplace_init(fixture_model)
    assert np.linalg.norm(tg.log_posterior_grad(fixture_model, res.mu)) < 1e-8
    assert np.all(np.linalg.eigvalsh(res.sigma.matrix) > 0)


def test_fd_hessian_quadratic():
    A = np.array([[2.0, 0.5], [0.5, 1.0]])
    H = tg.fd_hessian(lambda x: -A @ x, np.array([1.0, -1.0]))
    np.testing.assert_allclose(H, -A, atol=1e-10)


def test_csv_custom_columns(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("Wt,Scr,Age,CrCl,extra\n1,2,3,4,x\n5,6,7,8,y\n")
    data = tg.load_regression_csv(
        p, {"weight": "Wt", "serum": "Scr", "age": "Age", "response": "CrCl"}
    )
    np.testing.assert_array_equal(data.X, [[1, 2, 3], [5, 6, 7]])
    np.testing.assert_array_equal(data.y, [4, 8])


def test_csv_missing_value_reports_row(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("weight,serum_creatinine,age,clearance\n1,2,3,4\n5,NA,7,8\n")
    with pytest.raises(tg.ParseError, match="row 3.*serum_creatinine"):
        tg.load_regression_csv(p)


def test_csv_missing_column(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("weight,age,clearance\n1,3,4\n")
    with pytest.raises(tg.SchemaError, match="serum_creatinine"):
        tg.load_regression_csv(p)


def test_csv_empty(tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("weight,serum_creatinine,age,clearance\n")
    with pytest.raises(tg.ParseError):
        tg.load_regression_csv(p)
