"""Bayesian optimization of the proposal's degrees of freedom.

A one-dimensional GP with squared-exponential kernel models the transformed
alpha-ESS ``y = log(1 - ESS_alpha / M)`` as a function of ``nu``. Lower ``y``
is better, so the acquisition is a lower confidence bound written as a
maximization: ``-mean + sqrt(beta_t) * std``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.linalg import cho_solve
from scipy.optimize import minimize
from scipy.special import gammaln

NU_MIN = 1.0
ESS_CLAMP = 1e-12


class GramNotPD(np.linalg.LinAlgError):
    pass


def invgamma_from_moments(mean: float, var: float) -> tuple[float, float]:
    """Shape and scale of the inverse-Gamma with the given mean and variance."""
    shape = mean**2 / var + 2.0
    return shape, mean * (shape - 1.0)


# (shape, scale) for lengthscale, signal variance, noise variance
PRIOR_LENGTHSCALE = invgamma_from_moments(5.0, 2.0)
PRIOR_SIGNAL_VAR = invgamma_from_moments(5.0, 2.0)
PRIOR_NOISE_VAR = invgamma_from_moments(3.0, 2.0)


@dataclass(frozen=True)
class GPState:
    nus: tuple = ()
    ys: tuple = ()
    lengthscale: float = 2.0
    signal_var: float = 1.0
    noise_var: float = 0.05
    nu_max: float = 10.0
    hyperopt_enabled: bool = False

    def __post_init__(self):
        if len(self.nus) != len(self.ys):
            raise ValueError("nus and ys differ in length")
        if min(self.lengthscale, self.signal_var, self.noise_var) <= 0:
            raise ValueError("GP hyperparameters must be positive")
        for nu in self.nus:
            if not NU_MIN <= nu <= self.nu_max:
                raise ValueError(f"observed nu={nu} outside [{NU_MIN}, {self.nu_max}]")

    def observe(self, nu: float, y: float) -> "GPState":
        return replace(self, nus=self.nus + (float(nu),), ys=self.ys + (float(y),))

    def with_defaults(self) -> "GPState":
        base = GPState()
        return replace(
            self,
            lengthscale=base.lengthscale,
            signal_var=base.signal_var,
            noise_var=base.noise_var,
        )


@dataclass(frozen=True)
class AcquisitionConfig:
    beta_multiplier: float = 1.0
    search_grid_size: int = 512

    def __post_init__(self):
        if self.beta_multiplier <= 0:
            raise ValueError("beta_multiplier must be positive")
        if self.search_grid_size < 2:
            raise ValueError("search grid needs at least two points")


def transform_ess(alpha_ess_value: float, m: int) -> float:
    ratio = min(max(alpha_ess_value / m, 0.0), 1.0 - ESS_CLAMP)
    return math.log1p(-ratio)


def se_kernel(a, b, lengthscale, signal_var):
    a = np.asarray(a, dtype=float)[:, None]
    b = np.asarray(b, dtype=float)[None, :]
    return signal_var * np.exp(-0.5 * (a - b) ** 2 / lengthscale**2)


def _gram_cholesky(nus, lengthscale, signal_var, noise_var):
    K = se_kernel(nus, nus, lengthscale, signal_var) + noise_var * np.eye(len(nus))
    jitter = 0.0
    for _ in range(8):
        try:
            return np.linalg.cholesky(K + jitter * signal_var * np.eye(len(nus)))
        except np.linalg.LinAlgError:
            jitter = 1e-10 if jitter == 0.0 else jitter * 10.0
            if jitter > 1e-4 * (1 + 1e-9):
                break
    raise GramNotPD("K + noise I is not positive definite even with jitter 1e-4")


def gp_posterior(state: GPState, nu_query):
    """Posterior mean and variance at ``nu_query`` (scalar or array)."""
    if not state.nus:
        raise ValueError("GP posterior needs at least one observation")
    nus = np.asarray(state.nus)
    L = _gram_cholesky(nus, state.lengthscale, state.signal_var, state.noise_var)
    q = np.atleast_1d(np.asarray(nu_query, dtype=float))
    ks = se_kernel(q, nus, state.lengthscale, state.signal_var)
    mean = ks @ cho_solve((L, True), np.asarray(state.ys))
    v = np.linalg.solve(L, ks.T)
    var = np.maximum(state.signal_var - np.sum(v * v, axis=0), 0.0)
    if np.ndim(nu_query) == 0:
        return float(mean[0]), float(var[0])
    return mean, var


def beta_schedule(t: int, nu_max: float = 10.0, multiplier: float = 1.0) -> float:
    if t < 1:
        raise ValueError("beta schedule starts at t = 1")
    width = nu_max - NU_MIN
    return multiplier * math.sqrt(2.0 * math.log((t * t + 1) * width / math.sqrt(2.0 * math.pi)))


def acquisition(state: GPState, nu, t: int, cfg: AcquisitionConfig):
    mean, var = gp_posterior(state, nu)
    beta = beta_schedule(t, state.nu_max, cfg.beta_multiplier)
    return -mean + math.sqrt(beta) * np.sqrt(var)


def search_grid(state: GPState, cfg: AcquisitionConfig) -> np.ndarray:
    return np.linspace(NU_MIN, state.nu_max, cfg.search_grid_size)


def propose_nu(state: GPState, t: int, cfg: AcquisitionConfig) -> float:
    grid = search_grid(state, cfg)
    # argmax returns the first maximizer, i.e. the smallest nu on ties
    return float(grid[int(np.argmax(acquisition(state, grid, t, cfg)))])


def _log_invgamma(x, shape, scale):
    return shape * math.log(scale) - gammaln(shape) - (shape + 1.0) * math.log(x) - scale / x


def log_marginal_likelihood(state: GPState, lengthscale, signal_var, noise_var) -> float:
    nus = np.asarray(state.nus)
    y = np.asarray(state.ys)
    L = _gram_cholesky(nus, lengthscale, signal_var, noise_var)
    a = cho_solve((L, True), y)
    n = len(y)
    return float(-0.5 * y @ a - np.sum(np.log(np.diag(L))) - 0.5 * n * math.log(2.0 * math.pi))


def log_map_objective(state: GPState, log_params) -> float:
    lengthscale, signal_var, noise_var = np.exp(log_params)
    try:
        lml = log_marginal_likelihood(state, lengthscale, signal_var, noise_var)
    except GramNotPD:
        return -np.inf
    return (
        lml
        + _log_invgamma(lengthscale, *PRIOR_LENGTHSCALE)
        + _log_invgamma(signal_var, *PRIOR_SIGNAL_VAR)
        + _log_invgamma(noise_var, *PRIOR_NOISE_VAR)
    )


# deterministic multi-start offsets in log space around the prior means
_START_OFFSETS = np.array(
    [
        [0.0, 0.0, 0.0],
        [-0.5, 0.0, 0.0],
        [0.5, 0.0, 0.0],
        [0.0, -0.5, 0.0],
        [0.0, 0.5, 0.0],
        [0.0, 0.0, -0.5],
        [0.0, 0.0, 0.5],
        [-0.5, 0.5, -0.5],
    ]
)


def hyperopt_map(state: GPState, n_starts: int = 8, max_evals: int = 200) -> GPState:
    """MAP estimate of (lengthscale, signal variance, noise variance).

    Inverse-Gamma priors on all three; Nelder-Mead in log space from
    ``n_starts`` fixed starting points. Falls back to the prior means if no
    start produces a finite objective. With fewer than three observations
    the state is returned unchanged.
    """
    if not state.hyperopt_enabled or len(state.nus) < 3:
        return state
    prior_means = np.log(
        [
            PRIOR_LENGTHSCALE[1] / (PRIOR_LENGTHSCALE[0] - 1),
            PRIOR_SIGNAL_VAR[1] / (PRIOR_SIGNAL_VAR[0] - 1),
            PRIOR_NOISE_VAR[1] / (PRIOR_NOISE_VAR[0] - 1),
        ]
    )

    def neg(p):
        v = log_map_objective(state, p)
        return -v if np.isfinite(v) else 1e300

    best_x, best_f = None, np.inf
    for offset in _START_OFFSETS[:n_starts]:
        res = minimize(
            neg,
            prior_means + offset,
            method="Nelder-Mead",
            options={"maxfev": max_evals, "xatol": 1e-6, "fatol": 1e-9},
        )
        if np.isfinite(res.fun) and res.fun < best_f:
            best_x, best_f = res.x, res.fun
    if best_x is None or best_f >= 1e300:
        best_x = prior_means
    ls, sv, nv = np.exp(best_x)
    return replace(state, lengthscale=float(ls), signal_var=float(sv), noise_var=float(nv))


def tail_adapt_step(
    state: GPState, nu_t: float, alpha_ess_t: float, m: int, t: int, cfg: AcquisitionConfig
) -> tuple[float, GPState]:
    """Record ``(nu_t, transformed alpha-ESS)`` and propose the next ``nu``."""
    if t < 1:
        raise ValueError("tail adaptation starts at t = 1")
    nu_obs = min(max(nu_t, NU_MIN), state.nu_max)
    state = state.observe(nu_obs, transform_ess(alpha_ess_t, m))
    state = hyperopt_map(state)
    try:
        return propose_nu(state, t, cfg), state
    except GramNotPD:
        state = state.with_defaults()
        return propose_nu(state, t, cfg), state
