"""Escort moment matching: the location/scale update of the proposal."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .diagnostics import DegenerateWeights, WeightSet, ess
from .mathcore import NotPositiveDefinite, SpdMatrix, cholesky

JITTER_START = 1e-8
JITTER_MAX = 1e-2


@dataclass(frozen=True)
class MomentUpdate:
    mu_next: np.ndarray
    sigma_next: SpdMatrix
    repaired: bool
    raw_min_eigen_estimate: float


def weighted_moments(wbar, x):
    """Weighted mean and (centered) weighted covariance."""
    wbar = np.asarray(wbar, dtype=float)
    x = np.asarray(x, dtype=float)
    mu = wbar @ x
    xc = x - mu
    cov = (xc * wbar[:, None]).T @ xc
    return mu, 0.5 * (cov + cov.T)


def repair_spd(cov, previous: SpdMatrix | None = None) -> tuple[SpdMatrix, bool]:
    """Cholesky with escalating diagonal jitter.

    Adds ``eps * tr(cov) / d * I`` for ``eps = 1e-8, 1e-7, ..., 1e-2``. If that
    still fails, ``previous`` is returned; without one, the failure is raised.
    """
    cov = np.asarray(cov, dtype=float)
    try:
        return cholesky(cov), False
    except NotPositiveDefinite:
        pass
    d = cov.shape[0]
    level = np.trace(cov) / d
    if not np.isfinite(level) or level <= 0:
        level = 1.0
    eps = JITTER_START
    while eps <= JITTER_MAX * (1 + 1e-9):
        try:
            return cholesky(cov + eps * level * np.eye(d)), True
        except NotPositiveDefinite:
            eps *= 10.0
    if previous is not None:
        return previous, True
    raise NotPositiveDefinite("covariance could not be repaired with jitter up to 1e-2")


def escort_moment_match(
    weights: WeightSet,
    samples,
    previous_sigma: SpdMatrix | None = None,
    min_ess: float | None = None,
) -> MomentUpdate:
    """New location and scale from jointly normalized weights over all samples.

    Escort weights give the alpha-divergence-optimal update; plain weights
    give ordinary moment matching. With ``min_ess`` set, raises
    :class:`DegenerateWeights` when ``ess(weights) < min_ess`` so the caller
    can keep the current proposal.
    """
    x = np.asarray(samples, dtype=float)
    if x.shape[0] != weights.n:
        raise ValueError(f"{x.shape[0]} samples but {weights.n} weights")
    if min_ess is not None:
        e = ess(weights)
        if e < min_ess:
            raise DegenerateWeights(f"ESS {e:.3g} below {min_ess}")
    mu, cov = weighted_moments(weights.normalized, x)
    if not np.all(np.isfinite(cov)):
        raise DegenerateWeights("non-finite weighted covariance")
    min_eig = float(np.linalg.eigvalsh(cov)[0])
    sigma, repaired = repair_spd(cov, previous_sigma)
    return MomentUpdate(mu, sigma, repaired, min_eig)
