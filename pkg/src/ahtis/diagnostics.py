"""Importance weights and the diagnostics built on them.

Weights are always formed as log-weights and normalized with a single
log-sum-exp; escort targets raise the unnormalized density to powers up to
3, which on heavy tails spans far more than the double-precision range.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.special import logsumexp

from . import studentt
from .studentt import StudentTParams


class DegenerateWeights(RuntimeError):
    """No sample carries a finite, positive weight."""


class TargetKind(enum.Enum):
    PLAIN = "plain"
    ESCORT = "escort"


@dataclass(frozen=True)
class SampleBatch:
    """Draws of one iteration together with the index of their proposal."""

    x: np.ndarray
    proposal_index: int


@dataclass(frozen=True)
class WeightSet:
    """Log-domain unnormalized weights and their simplex normalization.

    ``alpha`` is the escort exponent for ``TargetKind.ESCORT`` and ``1.0``
    for plain weights.
    """

    log_unnormalized: np.ndarray
    normalized: np.ndarray
    log_sum_unnormalized: float
    target_kind: TargetKind = TargetKind.PLAIN
    alpha: float = 1.0

    @classmethod
    def from_log_weights(cls, logw, target_kind=TargetKind.PLAIN, alpha=1.0) -> "WeightSet":
        logw = np.asarray(logw, dtype=float).reshape(-1)
        logw = np.where(np.isnan(logw), -np.inf, logw)
        if np.any(logw == np.inf):
            raise DegenerateWeights("infinite log-weight")
        lse = logsumexp(logw)
        if not np.isfinite(lse):
            raise DegenerateWeights("all importance weights are zero or non-finite")
        wbar = np.exp(logw - lse)
        return cls(logw, wbar, float(lse), target_kind, float(alpha))

    @property
    def unnormalized(self) -> np.ndarray:
        return np.exp(self.log_unnormalized)

    @property
    def n(self) -> int:
        return self.log_unnormalized.shape[0]


ProposalHistory = Sequence[StudentTParams]


def log_mixture_density(history: ProposalHistory, x) -> np.ndarray:
    """Log of the equal-weight mixture ``(1 / K) sum_k q_k(x)``."""
    if len(history) == 0:
        raise ValueError("empty proposal history")
    logq = np.stack([studentt.log_pdf(q, x) for q in history])
    return logsumexp(logq, axis=0) - np.log(len(history))


def dm_log_weights(
    log_target: Callable[[np.ndarray], np.ndarray],
    history: ProposalHistory,
    samples: Sequence[SampleBatch],
    alpha: float | None = None,
) -> WeightSet:
    """Deterministic-mixture weights over every batch, jointly normalized.

    ``log_target`` returns the log of the unnormalized target for a batch of
    points. With ``alpha`` given, the escort ``alpha * log_target`` is used.
    """
    for batch in samples:
        if not 0 <= batch.proposal_index < len(history):
            raise ValueError(f"batch generated by unknown proposal {batch.proposal_index}")
    x = np.concatenate([np.atleast_2d(b.x) for b in samples])
    lt = np.asarray(log_target(x), dtype=float)
    if alpha is None:
        return WeightSet.from_log_weights(lt - log_mixture_density(history, x))
    return WeightSet.from_log_weights(
        alpha * lt - log_mixture_density(history, x), TargetKind.ESCORT, alpha
    )


def ess(w: WeightSet) -> float:
    return float(1.0 / np.sum(w.normalized**2))


def log_alpha_ess(w: WeightSet, alpha: float) -> float:
    if alpha <= 0 or alpha == 1:
        raise ValueError("alpha must be positive and != 1")
    logwbar = w.log_unnormalized - w.log_sum_unnormalized
    return float(logsumexp(alpha * logwbar) / (1.0 - alpha))


def alpha_ess(w: WeightSet, alpha: float) -> float:
    """Generalized ESS ``(sum wbar^alpha)^(1 / (1 - alpha))``, clipped to ``[1, N]``."""
    return float(np.clip(np.exp(log_alpha_ess(w, alpha)), 1.0, w.n))


def discrete_alpha_divergence(w: WeightSet, alpha: float) -> float:
    """Discrete alpha-divergence between ``w.normalized`` and uniform weights.

    Computed through the alpha-ESS; see :func:`discrete_alpha_divergence_direct`
    for the simplex form.
    """
    m = w.n
    log_e = log_alpha_ess(w, alpha)
    return float(
        m ** (alpha - 1.0)
        * (np.exp((1.0 - alpha) * log_e) - m ** (1.0 - alpha))
        / (alpha * (alpha - 1.0))
    )


def discrete_alpha_divergence_direct(wbar, alpha: float) -> float:
    wbar = np.asarray(wbar, dtype=float)
    m = wbar.shape[0]
    return float((m ** (alpha - 1.0) * np.sum(wbar**alpha) - 1.0) / (alpha * (alpha - 1.0)))


def snis_alpha_divergence(log_target_unnorm, q: StudentTParams, x, alpha: float):
    """Self-normalized estimate of ``D_alpha(pi, q)`` from draws ``x ~ q``.

    Returns ``(estimate, variance)``. The variance is the delta-method
    plug-in for the ratio ``mean(w^alpha) / mean(w)^alpha``, divided by M,
    so ``sqrt(variance)`` is the standard error of the estimate. It does not
    depend on the scale of ``log_target_unnorm``.
    """
    x = np.atleast_2d(x)
    logw = np.asarray(log_target_unnorm(x), dtype=float) - studentt.log_pdf(q, x)
    w = WeightSet.from_log_weights(logw)
    m = w.n
    est = discrete_alpha_divergence(w, alpha)
    # rescale weights to mean 1; both sums are then O(1)
    r = np.exp(logw - w.log_sum_unnormalized + np.log(m))
    ra = r**alpha
    a_mean = np.mean(ra)
    grad_a, grad_b = 1.0, -alpha * a_mean
    infl = grad_a * (ra - a_mean) + grad_b * (r - 1.0)
    var = np.mean(infl**2) / (alpha * (alpha - 1.0)) ** 2 / m
    return float(est), float(var)


def z_estimate(w: WeightSet) -> float:
    """Evidence estimate: the mean unnormalized plain weight."""
    if w.target_kind is not TargetKind.PLAIN:
        raise ValueError("evidence estimate needs plain-target weights")
    return float(np.exp(w.log_sum_unnormalized - np.log(w.n)))


def log_z_estimate(w: WeightSet) -> float:
    if w.target_kind is not TargetKind.PLAIN:
        raise ValueError("evidence estimate needs plain-target weights")
    return float(w.log_sum_unnormalized - np.log(w.n))


def snis_expectation(w: WeightSet, h_values) -> float:
    h = np.asarray(h_values, dtype=float)
    if h.shape[0] != w.n:
        raise ValueError("h_values length does not match the weights")
    return float(np.tensordot(w.normalized, h, axes=(0, 0)))
