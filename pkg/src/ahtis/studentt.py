"""Multivariate Student-t family and its escort transform.

All densities are handled in log space. Besides density evaluation and
sampling, this module carries the closed-form results for Student-t
targets: the escort of a Student-t is again Student-t, which yields the
Rényi entropy and the optimal (location, scale) approximation of a
Student-t target at any fixed degrees of freedom. Those closed forms are
the analytic oracles used to test the sampler.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mathcore import RngStream, SpdMatrix, cholesky, log_gamma, sample_chi2, solve_lower


class InfeasibleEscortMoments(ValueError):
    """The escort distribution has no finite second moment."""


@dataclass(frozen=True)
class StudentTParams:
    """Location ``mu``, scale ``sigma`` (as an :class:`SpdMatrix`), dof ``nu``."""

    mu: np.ndarray
    sigma: SpdMatrix
    nu: float

    def __post_init__(self):
        mu = np.array(self.mu, dtype=float).reshape(-1)
        if not np.isfinite(self.nu) or self.nu <= 0:
            raise ValueError(f"nu must be positive, got {self.nu}")
        if mu.shape[0] != self.sigma.dim:
            raise ValueError(f"mu has dim {mu.shape[0]}, sigma has dim {self.sigma.dim}")
        mu.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "nu", float(self.nu))

    @classmethod
    def from_matrix(cls, mu, sigma, nu) -> "StudentTParams":
        return cls(mu, cholesky(sigma), nu)

    @property
    def dim(self) -> int:
        return self.sigma.dim

    @property
    def sigma_matrix(self) -> np.ndarray:
        return self.sigma.matrix


@dataclass(frozen=True)
class EscortSpec:
    alpha: float
    nu_outer: float
    d: int


def alpha_of_nu(nu: float, d: int) -> EscortSpec:
    """Escort exponent ``1 + 2 / (nu + d)`` paired with a Student-t family."""
    if not np.isfinite(nu) or nu <= 0:
        raise ValueError(f"nu must be positive, got {nu}")
    if d < 1:
        raise ValueError("dimension must be >= 1")
    return EscortSpec(alpha=1.0 + 2.0 / (nu + d), nu_outer=float(nu), d=int(d))


def log_norm_const(p: StudentTParams) -> float:
    """Log of the normalizer of the unnormalized kernel ``(1 + m / nu)^(-(nu + d) / 2)``."""
    d, nu = p.dim, p.nu
    return (
        log_gamma(0.5 * nu)
        - log_gamma(0.5 * (nu + d))
        + 0.5 * d * (np.log(nu) + np.log(np.pi))
        + 0.5 * p.sigma.logdet()
    )


def mahalanobis_sq(p: StudentTParams, x) -> np.ndarray:
    y = solve_lower(p.sigma, np.asarray(x, dtype=float) - p.mu)
    return np.sum(y * y, axis=-1)


def log_kernel(p: StudentTParams, x):
    """Unnormalized log density; ``log_pdf + log_norm_const``."""
    m = mahalanobis_sq(p, x)
    return -0.5 * (p.nu + p.dim) * np.log1p(m / p.nu)


def log_pdf(p: StudentTParams, x):
    """Log density at ``x`` (a point of shape ``(d,)`` or a batch ``(n, d)``)."""
    return log_kernel(p, x) - log_norm_const(p)


def sample(p: StudentTParams, rng: RngStream, n: int | None = None) -> np.ndarray:
    """Draw from ``p`` through its Gaussian scale-mixture representation.

    Returns shape ``(d,)`` when ``n`` is None, else ``(n, d)``.
    """
    size = 1 if n is None else n
    z = rng.standard_normal((size, p.dim))
    u = sample_chi2(rng, p.nu, size=size)
    x = p.mu + (z @ p.sigma.lower_cholesky.T) * np.sqrt(p.nu / u)[:, None]
    return x[0] if n is None else x


def escort_params(p: StudentTParams, spec: EscortSpec) -> StudentTParams:
    """Parameters of the escort ``p^alpha / int p^alpha``, itself a Student-t."""
    d = p.dim
    nu_a = p.nu + 2.0 * (p.nu + d) / (spec.nu_outer + d)
    return StudentTParams(p.mu, p.sigma.scaled(p.nu / nu_a), nu_a)


def renyi_entropy(p: StudentTParams, spec: EscortSpec) -> float:
    """Rényi entropy of order ``spec.alpha``: ``log(int p^alpha) / (1 - alpha)``."""
    esc = escort_params(p, spec)
    return -0.5 * (spec.nu_outer + p.dim) * (log_norm_const(esc) - spec.alpha * log_norm_const(p))


def optimal_approx_of_student_target(target: StudentTParams, nu: float) -> StudentTParams:
    """Best Student-t approximation with dof ``nu`` of a Student-t target.

    Minimizes the alpha-divergence over location and scale at
    ``alpha = 1 + 2 / (nu + d)``; the minimizer matches the escort moments.

    Raises
    ------
    InfeasibleEscortMoments
        When the escort of the target has infinite covariance.
    """
    spec = alpha_of_nu(nu, target.dim)
    esc = escort_params(target, spec)
    if esc.nu <= 2.0:
        raise InfeasibleEscortMoments(
            f"escort dof {esc.nu:.6g} <= 2 for target nu={target.nu}, nu={nu}"
        )
    return StudentTParams(target.mu, target.sigma.scaled(target.nu / (esc.nu - 2.0)), nu)


def optimal_alpha_divergence(target: StudentTParams, nu: float) -> float:
    """Closed-form ``min_{mu, Sigma} D_alpha(target, q_{mu, Sigma, nu})``."""
    spec = alpha_of_nu(nu, target.dim)
    q_star = optimal_approx_of_student_target(target, nu)
    a = spec.alpha
    gap = renyi_entropy(q_star, spec) - renyi_entropy(target, spec)
    return float(np.expm1((a - 1.0) * gap) / (a * (a - 1.0)))
