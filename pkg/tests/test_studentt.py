import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from scipy.optimize import minimize_scalar

from ahtis import studentt as stt
from ahtis.mathcore import SpdMatrix, rng_stream

from conftest import integrate_real_line, t1


def test_log_norm_const_cauchy():
    assert stt.log_norm_const(t1(1.0)) == pytest.approx(math.log(math.pi), rel=1e-12)


@pytest.mark.parametrize("nu", [0.5, 1.0, 2.0, 5.0, 50.0])
@pytest.mark.parametrize("scale", [0.3, 1.0, 4.0])
def test_log_norm_const_quadrature(nu, scale):
    p = t1(nu, mu=0.7, scale=scale)
    z = integrate_real_line(lambda x: np.exp(stt.log_kernel(p, np.array([[x]]))[0]))
    assert stt.log_norm_const(p) == pytest.approx(math.log(z), abs=1e-9)


def test_log_pdf_examples():
    assert stt.log_pdf(t1(1.0), [0.0]) == pytest.approx(-math.log(math.pi), abs=1e-14)
    assert stt.log_pdf(t1(1.0), [1.0]) == pytest.approx(-math.log(2 * math.pi), abs=1e-14)
    # d=2 Cauchy at the origin: 1 / (2 pi)
    p2 = stt.StudentTParams(np.zeros(2), SpdMatrix.identity(2), 1.0)
    assert stt.log_pdf(p2, np.zeros(2)) == pytest.approx(-math.log(2 * math.pi), abs=1e-13)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 6), st.floats(0.3, 60.0), st.integers(0, 2**31))
def test_log_pdf_matches_scipy(d, nu, seed):
    rng = np.random.default_rng(seed)
    B = rng.standard_normal((d, d))
    S = B @ B.T + 0.5 * np.eye(d)
    mu = rng.standard_normal(d)
    p = stt.StudentTParams.from_matrix(mu, S, nu)
    x = rng.standard_normal((5, d)) * 3
    ref = stats.multivariate_t(loc=mu, shape=S, df=nu).logpdf(x)
    np.testing.assert_allclose(stt.log_pdf(p, x), ref, rtol=1e-9, atol=1e-9)


def test_params_validation():
    with pytest.raises(ValueError):
        t1(0.0)
    with pytest.raises(ValueError):
        stt.StudentTParams(np.zeros(3), SpdMatrix.identity(2), 2.0)


def test_sample_shapes():
    p = stt.StudentTParams(np.zeros(3), SpdMatrix.identity(3), 4.0)
    assert stt.sample(p, rng_stream(0)).shape == (3,)
    assert stt.sample(p, rng_stream(0), 7).shape == (7, 3)


def test_sample_cauchy_ks():
    x = stt.sample(t1(1.0, mu=2.0, scale=4.0), rng_stream(5), 20000)[:, 0]
    assert stats.kstest(x, stats.cauchy(loc=2.0, scale=2.0).cdf).pvalue > 0.01
    assert abs(np.median(x) - 2.0) < 0.05


def test_sample_covariance_large_nu():
    S = np.array([[2.0, 0.5], [0.5, 1.0]])
    p = stt.StudentTParams.from_matrix([1.0, -1.0], S, 1000.0)
    x = stt.sample(p, rng_stream(9), 200000)
    np.testing.assert_allclose(x.mean(axis=0), [1.0, -1.0], atol=0.01)
    # covariance of a t is nu / (nu - 2) Sigma
    np.testing.assert_allclose(np.cov(x.T), S * 1000 / 998, atol=0.02)


def test_alpha_of_nu():
    spec = stt.alpha_of_nu(2.0, 1)
    assert spec.alpha == pytest.approx(1 + 2 / 3)
    with pytest.raises(ValueError):
        stt.alpha_of_nu(0.0, 1)


def _escort_pointwise_error(nu_q, nu_outer):
    p = t1(nu_q, mu=0.3, scale=1.7)
    spec = stt.alpha_of_nu(nu_outer, 1)
    a = spec.alpha
    log_int = math.log(integrate_real_line(lambda x: np.exp(a * stt.log_pdf(p, np.array([[x]]))[0])))
    esc = stt.escort_params(p, spec)
    xs = np.linspace(-20, 20, 200)[:, None]
    oracle = np.exp(a * stt.log_pdf(p, xs) - log_int)
    return np.max(np.abs(np.exp(stt.log_pdf(esc, xs)) - oracle))


@pytest.mark.parametrize("nu_q", [0.5, 2.0, 8.0])
@pytest.mark.parametrize("nu_outer", [0.5, 3.0, 8.0])
def test_escort_matches_quadrature(nu_q, nu_outer):
    assert _escort_pointwise_error(nu_q, nu_outer) < 1e-8


@pytest.mark.parametrize("nu", [1.0, 2.0, 5.0])
def test_renyi_entropy_quadrature(nu):
    p = t1(nu, scale=2.5)
    spec = stt.alpha_of_nu(nu, 1)
    a = spec.alpha
    integral = integrate_real_line(lambda x: np.exp(a * stt.log_pdf(p, np.array([[x]]))[0]))
    assert stt.renyi_entropy(p, spec) == pytest.approx(math.log(integral) / (1 - a), abs=1e-9)


def test_optimal_approx_examples():
    q = stt.optimal_approx_of_student_target(t1(2.0, scale=1.0), 2.0)
    assert q.sigma_matrix[0, 0] == pytest.approx(1.0, rel=1e-12)
    # nu_pi=5, nu=5 in d=1: nu_alpha = 5 + 2 = 7, Sigma* = 5 / 5 = 1
    q = stt.optimal_approx_of_student_target(t1(5.0, scale=3.0), 5.0)
    assert q.sigma_matrix[0, 0] == pytest.approx(3.0, rel=1e-12)
    # nu_pi=1, nu=2: nu_alpha = 1 + 4/3, Sigma* = 1 / (1/3) = 3
    q = stt.optimal_approx_of_student_target(t1(1.0), 2.0)
    assert q.sigma_matrix[0, 0] == pytest.approx(3.0, rel=1e-12)
    assert q.nu == 2.0


def test_optimal_approx_infeasible():
    # nu_pi=1, nu=3, d=1: escort dof is exactly 2
    with pytest.raises(stt.InfeasibleEscortMoments):
        stt.optimal_approx_of_student_target(t1(1.0), 3.0)


def _quad_divergence(target, q, alpha):
    def f(x):
        xx = np.array([[x]])
        return np.exp(alpha * stt.log_pdf(target, xx)[0] + (1 - alpha) * stt.log_pdf(q, xx)[0])

    return (integrate_real_line(f) - 1.0) / (alpha * (alpha - 1.0))


@pytest.mark.parametrize("nu_pi, nu", [(2.0, 1.0), (2.0, 2.0), (2.0, 3.0), (2.0, 5.0), (1.0, 2.0), (1.0, 1.0)])
def test_optimal_divergence_quadrature(nu_pi, nu):
    target = t1(nu_pi, scale=1.3)
    q_star = stt.optimal_approx_of_student_target(target, nu)
    alpha = stt.alpha_of_nu(nu, 1).alpha
    assert stt.optimal_alpha_divergence(target, nu) == pytest.approx(
        _quad_divergence(target, q_star, alpha), abs=1e-10
    )


@pytest.mark.parametrize("nu", [1.0, 3.0])
def test_optimal_scale_is_minimizer(nu):
    target = t1(2.0, scale=1.3)
    alpha = stt.alpha_of_nu(nu, 1).alpha

    def obj(log_s):
        return _quad_divergence(target, t1(nu, scale=math.exp(log_s)), alpha)

    res = minimize_scalar(obj, bounds=(-3, 3), method="bounded", options={"xatol": 1e-8})
    expected = stt.optimal_approx_of_student_target(target, nu).sigma_matrix[0, 0]
    assert math.exp(res.x) == pytest.approx(expected, rel=1e-4)


def test_divergence_zero_at_target_dof():
    target = stt.StudentTParams.from_matrix(np.ones(3), np.diag([1.0, 2.0, 3.0]), 4.0)
    assert abs(stt.optimal_alpha_divergence(target, 4.0)) < 1e-12
    assert stt.optimal_alpha_divergence(target, 2.0) > 1e-4
