"""Special functions, small dense linear algebra and random variates.

Everything else in the package goes through these helpers, so the numeric
contracts (log-gamma accuracy, Cholesky failure signalling, seeded streams)
live in one place.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular

# Lanczos approximation, g = 7, n = 9.
_LANCZOS_G = 7.0
_LANCZOS_COEF = np.array(
    [
        0.99999999999980993,
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ]
)
_HALF_LOG_2PI = 0.5 * np.log(2.0 * np.pi)


class NotPositiveDefinite(np.linalg.LinAlgError):
    """Raised when a Cholesky pivot is not strictly positive."""


def _log_gamma_lanczos(x: np.ndarray) -> np.ndarray:
    # valid for x >= 0.5
    z = x - 1.0
    series = np.full_like(z, _LANCZOS_COEF[0])
    for k in range(1, len(_LANCZOS_COEF)):
        series = series + _LANCZOS_COEF[k] / (z + k)
    t = z + _LANCZOS_G + 0.5
    return _HALF_LOG_2PI + (z + 0.5) * np.log(t) - t + np.log(series)


def log_gamma(x):
    """Natural log of the gamma function for positive arguments.

    Uses the Lanczos approximation (g=7, 9 terms), with the reflection
    formula below 0.5. Accepts scalars or arrays.

    Raises
    ------
    ValueError
        If any argument is non-positive or non-finite.
    """
    arr = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
        raise ValueError(f"log_gamma requires finite x > 0, got {x!r}")
    small = arr < 0.5
    out = np.empty_like(arr)
    out[~small] = _log_gamma_lanczos(arr[~small])
    if np.any(small):
        xs = arr[small]
        # Gamma(x) Gamma(1-x) = pi / sin(pi x), sin(pi x) > 0 on (0, 0.5)
        out[small] = np.log(np.pi / np.sin(np.pi * xs)) - _log_gamma_lanczos(1.0 - xs)
    if out.ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class SpdMatrix:
    """Symmetric positive-definite matrix stored by its lower Cholesky factor."""

    lower_cholesky: np.ndarray

    def __post_init__(self):
        L = np.asarray(self.lower_cholesky, dtype=float)
        if L.ndim != 2 or L.shape[0] != L.shape[1]:
            raise ValueError("lower_cholesky must be a square matrix")
        if not np.all(np.diag(L) > 0):
            raise NotPositiveDefinite("Cholesky diagonal must be strictly positive")
        L = np.tril(L)
        L.setflags(write=False)
        object.__setattr__(self, "lower_cholesky", L)

    @property
    def dim(self) -> int:
        return self.lower_cholesky.shape[0]

    @property
    def matrix(self) -> np.ndarray:
        L = self.lower_cholesky
        return L @ L.T

    def logdet(self) -> float:
        return 2.0 * float(np.sum(np.log(np.diag(self.lower_cholesky))))

    def trace(self) -> float:
        return float(np.sum(self.lower_cholesky**2))

    def scaled(self, c: float) -> "SpdMatrix":
        """Return the factor of ``c * A`` for ``c > 0``."""
        if c <= 0:
            raise ValueError("scale factor must be positive")
        return SpdMatrix(np.sqrt(c) * self.lower_cholesky)

    @classmethod
    def identity(cls, dim: int, scale: float = 1.0) -> "SpdMatrix":
        return cls(np.sqrt(scale) * np.eye(dim))


def cholesky(sym, rtol: float = 1e-10) -> SpdMatrix:
    """Cholesky-factor a symmetric matrix.

    Raises
    ------
    ValueError
        If the input is not square or not symmetric to ``rtol``.
    NotPositiveDefinite
        If the matrix is not positive definite.
    """
    A = np.atleast_2d(np.asarray(sym, dtype=float))
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"expected a square matrix, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise NotPositiveDefinite("matrix has non-finite entries")
    scale = max(np.linalg.norm(A), np.finfo(float).tiny)
    if np.linalg.norm(A - A.T) > rtol * scale:
        raise ValueError("matrix is not symmetric")
    try:
        L = np.linalg.cholesky(0.5 * (A + A.T))
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite(str(exc)) from None
    if not np.all(np.diag(L) > 0):
        raise NotPositiveDefinite("zero pivot")
    return SpdMatrix(L)


def solve_lower(L: SpdMatrix, b) -> np.ndarray:
    """Forward substitution ``L y = b``.

    ``b`` may be a vector of length ``dim`` or an ``(n, dim)`` batch of
    right-hand sides (one per row, any leading batch shape).
    """
    b = np.asarray(b, dtype=float)
    if b.shape[-1] != L.dim:
        raise ValueError(f"dimension mismatch: L is {L.dim}, b has trailing {b.shape[-1]}")
    if b.ndim == 1:
        return solve_triangular(L.lower_cholesky, b, lower=True, check_finite=False)
    flat = b.reshape(-1, L.dim)
    if L.dim == 1:
        return b / L.lower_cholesky[0, 0]
    y = solve_triangular(L.lower_cholesky, flat.T, lower=True, check_finite=False).T
    return y.reshape(b.shape)


RngStream = np.random.Generator


def rng_stream(seed: int, *keys: int) -> RngStream:
    """Independent generator for ``(seed, *keys)``.

    Replications derive their own stream from a base seed and their indices,
    so no generator is ever shared between workers.
    """
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(k) for k in keys))
    return np.random.Generator(np.random.PCG64(ss))


def sample_std_normal(rng: RngStream, n) -> np.ndarray:
    if np.prod(n) < 1:
        raise ValueError("need at least one draw")
    return rng.standard_normal(n)


def sample_chi2(rng: RngStream, dof: float, size=None):
    """Chi-squared variates as Gamma(dof / 2, scale 2); any ``dof > 0``."""
    if not np.isfinite(dof) or dof <= 0:
        raise ValueError(f"chi-squared dof must be positive, got {dof}")
    return rng.gamma(0.5 * dof, 2.0, size=size)
