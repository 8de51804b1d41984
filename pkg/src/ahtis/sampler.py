"""AHTIS and the AMIS baseline.

Both algorithms share one loop: draw from the current Student-t proposal,
re-weight every sample drawn so far against the equal-weight mixture of all
past proposals (deterministic-mixture weights), then refit location and
scale by weighted moments. AHTIS weights against the escort of the target
and can adapt the degrees of freedom by Bayesian optimization; AMIS uses
the plain target and a fixed ``nu``.

The log target and the log mixture denominator of every sample are cached,
so each iteration only evaluates the new proposal on old samples and all
proposals on the new samples.
"""

from __future__ import annotations

import enum
import logging
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import studentt
from .adapt import escort_moment_match
from .diagnostics import DegenerateWeights, TargetKind, WeightSet, alpha_ess
from .mathcore import RngStream, SpdMatrix, rng_stream
from .studentt import StudentTParams, alpha_of_nu
from .tailbo import AcquisitionConfig, GPState, tail_adapt_step

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    pass


class SamplerError(RuntimeError):
    pass


class Mode(str, enum.Enum):
    AHTIS_ADAPTIVE = "ahtis-adaptive"
    AHTIS_FIXED = "ahtis-fixed"
    AMIS_FIXED = "amis-fixed"


@dataclass(frozen=True)
class SamplerConfig:
    """Settings of one adaptive run.

    ``nu`` is the fixed degrees of freedom for the fixed-``nu`` modes.
    With ``mu0=None`` the initial location is drawn uniformly from
    ``[-mu0_range, mu0_range]^d`` using the run's generator. ``sigma0``
    overrides the default initial scale ``sigma0_scale * I``. An iteration
    whose adaptation weights have ESS below ``min_ess`` keeps the current
    location and scale.
    """

    T: int = 20
    M: int = 10_000
    mode: Mode = Mode.AHTIS_ADAPTIVE
    nu: float | None = None
    nu0: float = 1.0
    mu0: np.ndarray | None = None
    mu0_range: float = 5.0
    sigma0_scale: float = 10.0
    sigma0: SpdMatrix | None = None
    acquisition: AcquisitionConfig = field(default_factory=AcquisitionConfig)
    gp: GPState = field(default_factory=GPState)
    amis_scale_correction: bool = False
    min_ess: float = 2.0

    def __post_init__(self):
        object.__setattr__(self, "mode", Mode(self.mode))
        if self.T < 1:
            raise ConfigError("T must be >= 1")
        if self.M < 2:
            raise ConfigError("M must be >= 2")
        if self.mode is Mode.AHTIS_ADAPTIVE:
            if self.nu0 <= 0:
                raise ConfigError("nu0 must be positive")
        else:
            if self.nu is None or self.nu <= 0:
                raise ConfigError(f"mode {self.mode.value} needs a positive fixed nu")
        if self.mode is Mode.AMIS_FIXED and self.nu <= 2:
            raise ConfigError(f"AMIS moment matching is undefined for nu={self.nu} <= 2")
        if self.sigma0_scale <= 0:
            raise ConfigError("sigma0_scale must be positive")

    @property
    def initial_nu(self) -> float:
        return self.nu0 if self.mode is Mode.AHTIS_ADAPTIVE else float(self.nu)

    def validate_for(self, d: int):
        if self.M < d + 1:
            raise ConfigError(f"M={self.M} must be at least d + 1 = {d + 1}")
        if self.mu0 is not None and np.shape(self.mu0) != (d,):
            raise ConfigError(f"mu0 must have shape ({d},)")
        if self.sigma0 is not None and self.sigma0.dim != d:
            raise ConfigError(f"sigma0 must be {d}x{d}")


CSV_COLUMNS = (
    "t",
    "nu_t",
    "alpha_t",
    "alpha_ess_t",
    "dm_alpha_ess_t",
    "z_hat_t",
    "mu_norm",
    "sigma_trace",
    "sigma_logdet",
)


@dataclass
class RunRecord:
    """Per-iteration metrics of one run (``T + 1`` entries each)."""

    method: str
    d: int
    M: int
    nu: list = field(default_factory=list)
    alpha: list = field(default_factory=list)
    alpha_ess: list = field(default_factory=list)
    dm_alpha_ess: list = field(default_factory=list)
    z_hat: list = field(default_factory=list)
    log_z_hat: list = field(default_factory=list)
    mu: list = field(default_factory=list)
    sigma_trace: list = field(default_factory=list)
    sigma_logdet: list = field(default_factory=list)
    skipped: list = field(default_factory=list)
    repaired: list = field(default_factory=list)
    wall_time: list = field(default_factory=list)

    def __len__(self):
        return len(self.nu)

    def rows(self):
        for t in range(len(self)):
            yield (
                t,
                self.nu[t],
                self.alpha[t],
                self.alpha_ess[t],
                self.dm_alpha_ess[t],
                self.z_hat[t],
                float(np.linalg.norm(self.mu[t])),
                self.sigma_trace[t],
                self.sigma_logdet[t],
            )

    def to_dict(self) -> dict:
        out = {k: v for k, v in self.__dict__.items() if k != "mu"}
        out["mu"] = [list(map(float, m)) for m in self.mu]
        return out

    @property
    def final_nu(self) -> float:
        return self.nu[-1]


@dataclass
class RunResult:
    record: RunRecord
    samples: np.ndarray
    weights: WeightSet
    final_proposal: StudentTParams
    gp: GPState | None = None


def _weights_or_none(logw, kind=TargetKind.PLAIN, alpha=1.0):
    try:
        return WeightSet.from_log_weights(logw, kind, alpha)
    except DegenerateWeights:
        return None


def _run(target, cfg: SamplerConfig, rng: RngStream, method: str) -> RunResult:
    d = target.dim
    cfg.validate_for(d)
    T, M = cfg.T, cfg.M
    escort = cfg.mode is not Mode.AMIS_FIXED
    adaptive = cfg.mode is Mode.AHTIS_ADAPTIVE

    mu = rng.uniform(-cfg.mu0_range, cfg.mu0_range, size=d) if cfg.mu0 is None else np.asarray(cfg.mu0, float)
    sigma = cfg.sigma0 if cfg.sigma0 is not None else SpdMatrix.identity(d, cfg.sigma0_scale)
    nu = cfg.initial_nu
    gp = cfg.gp

    n_total = (T + 1) * M
    xs = np.empty((n_total, d))
    log_pi = np.empty(n_total)
    # log sum_k q_k(x) over the proposals so far
    log_mix_sum = np.empty(n_total)
    history: list[StudentTParams] = []
    rec = RunRecord(method=method, d=d, M=M)
    plain = None
    consecutive_skips = 0

    for t in range(T + 1):
        tic = time.perf_counter()
        q = StudentTParams(mu, sigma, nu)
        history.append(q)
        lo, hi = t * M, (t + 1) * M
        x = studentt.sample(q, rng, M)
        xs[lo:hi] = x
        log_pi[lo:hi] = target(x)
        if t > 0:
            log_mix_sum[:lo] = np.logaddexp(log_mix_sum[:lo], studentt.log_pdf(q, xs[:lo]))
        logq_new = np.stack([studentt.log_pdf(qk, x) for qk in history])
        log_mix_sum[lo:hi] = logsumexp(logq_new, axis=0)
        n = hi
        assert n == len(history) * M
        log_mix = log_mix_sum[:n] - np.log(t + 1)
        lp = log_pi[:n]

        alpha_t = alpha_of_nu(nu, d).alpha
        current = _weights_or_none(log_pi[lo:hi] - logq_new[-1])
        aess_t = alpha_ess(current, alpha_t) if current is not None else 1.0
        plain = _weights_or_none(lp - log_mix)
        esc_t = _weights_or_none(alpha_t * lp - log_mix, TargetKind.ESCORT, alpha_t)
        dm_aess_t = alpha_ess(esc_t, alpha_t) if esc_t is not None else 1.0

        if adaptive and t > 0:
            nu_next, gp = tail_adapt_step(gp, nu, aess_t, M, t, cfg.acquisition)
        else:
            nu_next = nu

        if escort:
            alpha_next = alpha_of_nu(nu_next, d).alpha
            if alpha_next == alpha_t:
                w_fit = esc_t
            else:
                w_fit = _weights_or_none(alpha_next * lp - log_mix, TargetKind.ESCORT, alpha_next)
        else:
            w_fit = plain

        skipped, repaired = False, False
        mu_next, sigma_next = mu, sigma
        try:
            if w_fit is None:
                raise DegenerateWeights("all weights vanish")
            upd = escort_moment_match(w_fit, xs[:n], previous_sigma=sigma, min_ess=cfg.min_ess)
            mu_next, sigma_next, repaired = upd.mu_next, upd.sigma_next, upd.repaired
            if not escort and cfg.amis_scale_correction:
                sigma_next = sigma_next.scaled((nu_next - 2.0) / nu_next)
            consecutive_skips = 0
        except DegenerateWeights as exc:
            skipped = True
            consecutive_skips += 1
            log.debug("iteration %d: adaptation skipped (%s)", t, exc)
            if consecutive_skips >= T:
                raise SamplerError(f"{consecutive_skips} consecutive degenerate iterations") from exc

        rec.nu.append(float(nu))
        rec.alpha.append(float(alpha_t))
        rec.alpha_ess.append(float(aess_t))
        rec.dm_alpha_ess.append(float(dm_aess_t))
        lz = plain.log_sum_unnormalized - np.log(n) if plain is not None else -np.inf
        rec.log_z_hat.append(float(lz))
        rec.z_hat.append(float(np.exp(lz)))
        rec.mu.append(np.array(mu))
        rec.sigma_trace.append(sigma.trace())
        rec.sigma_logdet.append(sigma.logdet())
        rec.skipped.append(skipped)
        rec.repaired.append(bool(repaired))
        rec.wall_time.append(time.perf_counter() - tic)

        mu, sigma, nu = mu_next, sigma_next, nu_next

    if plain is None:
        raise SamplerError("final plain weights are degenerate")
    return RunResult(rec, xs, plain, StudentTParams(mu, sigma, nu), gp if adaptive else None)


def run_ahtis(target, cfg: SamplerConfig, rng: RngStream | int, method: str | None = None) -> RunResult:
    """Adaptive heavy-tailed importance sampling.

    ``target`` is a callable returning the unnormalized log density of a
    batch of points and exposing ``dim``. Returns the run record, all
    samples and their plain-target deterministic-mixture weights.
    """
    if cfg.mode is Mode.AMIS_FIXED:
        raise ConfigError("use run_amis for the AMIS baseline")
    if not isinstance(rng, np.random.Generator):
        rng = rng_stream(rng)
    return _run(target, cfg, rng, method or cfg.mode.value)


def run_amis(target, cfg: SamplerConfig, rng: RngStream | int, method: str | None = None) -> RunResult:
    """AMIS with Student-t proposals: plain-target weights and moments, fixed nu."""
    if cfg.mode is not Mode.AMIS_FIXED:
        raise ConfigError("run_amis needs mode amis-fixed")
    if not isinstance(rng, np.random.Generator):
        rng = rng_stream(rng)
    return _run(target, cfg, rng, method or cfg.mode.value)


def run(target, cfg: SamplerConfig, rng, method: str | None = None) -> RunResult:
    fn = run_amis if cfg.mode is Mode.AMIS_FIXED else run_ahtis
    return fn(target, cfg, rng, method)


def compare_runs(records, true_z: float | None = None, log_true_z: float | None = None) -> dict:
    """Mean and std of the final alpha-ESS and the relative root-MSE of Z.

    ``std`` is the population standard deviation. Pass ``log_true_z`` when
    the evidence is too small or large for a float.
    """
    records = list(records)
    if not records:
        raise ValueError("no records to compare")
    final = np.array([r.dm_alpha_ess[-1] for r in records])
    final_cur = np.array([r.alpha_ess[-1] for r in records])
    out = {
        "n_reps": len(records),
        "mean_final_aess": float(final.mean()),
        "std_final_aess": float(final.std()),
        "mean_final_current_aess": float(final_cur.mean()),
        "mean_final_nu": float(np.mean([r.nu[-1] for r in records])),
        "std_final_nu": float(np.std([r.nu[-1] for r in records])),
    }
    if log_true_z is None and true_z is not None:
        log_true_z = float(np.log(true_z))
    if log_true_z is not None:
        ratio = np.exp(np.array([r.log_z_hat[-1] for r in records]) - log_true_z)
        out["rel_sqrt_mse_z"] = float(np.sqrt(np.mean((ratio - 1.0) ** 2)))
    return out
