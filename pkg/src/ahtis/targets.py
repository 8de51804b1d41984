"""Target distributions for the experiments.

Two families: synthetic Student-t targets with a prescribed condition
number, and the posterior of a robust (Student-t likelihood) linear
regression with a Cauchy-type prior. Targets expose an unnormalized
log density over batches of points.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from . import studentt
from .adapt import repair_spd
from .mathcore import SpdMatrix, cholesky, rng_stream
from .studentt import StudentTParams


class ParseError(ValueError):
    pass


class SchemaError(ValueError):
    pass


class OptimizerDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class Target:
    """Unnormalized log density of dimension ``dim`` (vectorized over rows)."""

    dim: int
    log_density: object
    log_z: float | None = None
    name: str = "target"

    def __call__(self, x):
        return self.log_density(x)


@dataclass(frozen=True)
class SyntheticTargetSpec:
    d: int
    nu_pi: float
    kappa: float = 5.0
    location_seed: int = 0
    basis_seed: int = 1

    def __post_init__(self):
        if self.kappa < 1:
            raise ValueError("condition number must be >= 1")
        if self.nu_pi <= 0:
            raise ValueError("nu_pi must be positive")
        if self.d < 1:
            raise ValueError("dimension must be >= 1")


def random_rotation(rng, d: int) -> np.ndarray:
    """Haar-distributed rotation (det = +1) from the QR of a Gaussian matrix."""
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def make_synthetic_target(spec: SyntheticTargetSpec) -> tuple[StudentTParams, float]:
    """Student-t target with eigenvalues geometrically spaced on [1, kappa].

    Returns the parameters and the exact log normalizer of the kernel
    ``(1 + m / nu)^(-(nu + d) / 2)``.
    """
    d = spec.d
    mu = rng_stream(spec.location_seed).uniform(-1.0, 1.0, size=d)
    if d == 1:
        eig = np.array([1.0])
    else:
        eig = spec.kappa ** (np.arange(d) / (d - 1))
    q = random_rotation(rng_stream(spec.basis_seed), d)
    sigma = (q * eig) @ q.T
    params = StudentTParams(mu, cholesky(0.5 * (sigma + sigma.T)), spec.nu_pi)
    return params, studentt.log_norm_const(params)


def student_target(params: StudentTParams, name: str = "student-t") -> Target:
    return Target(
        params.dim,
        lambda x: studentt.log_kernel(params, x),
        studentt.log_norm_const(params),
        name,
    )


# --- robust regression ----------------------------------------------------

CREATININE_COLUMNS = {
    "weight": "weight",
    "serum": "serum_creatinine",
    "age": "age",
    "response": "clearance",
}


@dataclass(frozen=True)
class RegressionData:
    """Covariates ``X`` (N x p, no intercept) and responses ``y``."""

    X: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        X = np.atleast_2d(np.asarray(self.X, dtype=float))
        y = np.asarray(self.y, dtype=float).reshape(-1)
        if X.shape[0] == 0 and y.shape[0] == 0:
            X = X.reshape(0, X.shape[-1] if X.ndim == 2 else 0)
        if X.shape[0] != y.shape[0]:
            raise ValueError("X and y have different numbers of rows")
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise ValueError("regression data must be finite")
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def design(self) -> np.ndarray:
        """Covariates with the intercept column appended last."""
        return np.hstack([self.X, np.ones((self.n, 1))])


@dataclass(frozen=True)
class PosteriorModel:
    data: RegressionData
    likelihood_nu: float = 5.0
    likelihood_scale: float = 1.0
    prior_nu: float = 1.0

    @property
    def dim(self) -> int:
        return self.data.X.shape[1] + 1

    @property
    def prior(self) -> StudentTParams:
        return StudentTParams(np.zeros(self.dim), SpdMatrix.identity(self.dim), self.prior_nu)

    @property
    def noise(self) -> StudentTParams:
        return StudentTParams([0.0], SpdMatrix.identity(1, self.likelihood_scale), self.likelihood_nu)


def log_posterior_unnorm(model: PosteriorModel, beta) -> np.ndarray | float:
    """Log likelihood plus log prior at ``beta`` (shape ``(p+1,)`` or ``(n, p+1)``)."""
    beta = np.asarray(beta, dtype=float)
    single = beta.ndim == 1
    b = np.atleast_2d(beta)
    lp = studentt.log_pdf(model.prior, b)
    if model.data.n:
        resid = model.data.y[None, :] - b @ model.data.design.T
        lp = lp + np.sum(studentt.log_pdf(model.noise, resid[..., None]), axis=-1)
    return float(lp[0]) if single else lp


def log_posterior_grad(model: PosteriorModel, beta) -> np.ndarray:
    beta = np.asarray(beta, dtype=float)
    d = model.dim
    nu0 = model.prior_nu
    g = -(nu0 + d) / nu0 * beta / (1.0 + beta @ beta / nu0)
    if model.data.n:
        A = model.data.design
        s2 = model.likelihood_scale
        nu = model.likelihood_nu
        r = model.data.y - A @ beta
        g = g + A.T @ ((nu + 1.0) / nu * (r / s2) / (1.0 + r * r / (s2 * nu)))
    return g


def regression_target(model: PosteriorModel) -> Target:
    return Target(model.dim, lambda x: log_posterior_unnorm(model, x), None, "regression")


def fd_hessian(grad, x, h: float = 1e-4) -> np.ndarray:
    """Central finite differences of ``grad``; returns the raw (unsymmetrized) matrix."""
    x = np.asarray(x, dtype=float)
    d = x.shape[0]
    H = np.empty((d, d))
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        H[:, j] = (grad(x + e) - grad(x - e)) / (2.0 * h)
    return H


@dataclass(frozen=True)
class LaplaceResult:
    mu: np.ndarray
    sigma: SpdMatrix
    grad_norm: float
    hessian_asymmetry: float
    iterations: int


def laplace_init(
    model: PosteriorModel, tol: float = 1e-8, max_iter: int = 500, h: float = 1e-4
) -> LaplaceResult:
    """Mode of the posterior and the inverse negative Hessian there.

    BFGS from the origin, then Newton polishing with the finite-difference
    Hessian until ``||grad|| < tol``.

    Raises
    ------
    OptimizerDiverged
        If the gradient tolerance is not met within ``max_iter`` iterations.
    """
    f = lambda b: -log_posterior_unnorm(model, b)
    g = lambda b: -log_posterior_grad(model, b)
    res = minimize(f, np.zeros(model.dim), jac=g, method="BFGS",
                   options={"gtol": tol, "maxiter": max_iter})
    beta = res.x
    iters = int(res.nit)
    grad = lambda b: log_posterior_grad(model, b)
    while np.linalg.norm(grad(beta)) >= tol and iters < max_iter:
        H = fd_hessian(grad, beta, h)
        H = 0.5 * (H + H.T)
        try:
            step = np.linalg.solve(-H, grad(beta))
        except np.linalg.LinAlgError:
            break
        beta = beta + step
        iters += 1
    gn = float(np.linalg.norm(grad(beta)))
    if not gn < tol:
        raise OptimizerDiverged(f"gradient norm {gn:.3g} after {iters} iterations")
    H = fd_hessian(grad, beta, h)
    asym = float(np.max(np.abs(H - H.T)))
    H = 0.5 * (H + H.T)
    cov = np.linalg.inv(-H)
    sigma, _ = repair_spd(0.5 * (cov + cov.T))
    return LaplaceResult(beta, sigma, gn, asym, iters)


def load_regression_csv(path, columns: dict | None = None) -> RegressionData:
    """Read covariates and response from a headed CSV file.

    ``columns`` maps the roles ``weight``, ``serum``, ``age`` and ``response``
    to header names; the defaults match the bundled fixture.
    """
    cols = dict(CREATININE_COLUMNS)
    if columns:
        cols.update({k: v for k, v in columns.items() if v})
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        missing = [c for c in cols.values() if c not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {', '.join(missing)}")
        idx = {role: header.index(name) for role, name in cols.items()}
        X, y = [], []
        for rowno, row in enumerate(reader, start=2):
            if not row or all(not c.strip() for c in row):
                continue
            vals = {}
            for role, j in idx.items():
                raw = row[j].strip() if j < len(row) else ""
                try:
                    v = float(raw)
                except ValueError:
                    v = math.nan
                if not math.isfinite(v):
                    raise ParseError(f"{path}: row {rowno}, column {cols[role]!r}: bad value {raw!r}")
                vals[role] = v
            X.append([vals["weight"], vals["serum"], vals["age"]])
            y.append(vals["response"])
    if not y:
        raise ParseError(f"{path}: no data rows")
    return RegressionData(np.array(X), np.array(y))


def fixture_path() -> Path:
    return Path(__file__).parent / "data" / "creatinine_fixture.csv"
