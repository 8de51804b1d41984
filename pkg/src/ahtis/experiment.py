"""Batch experiments: configuration, replication fan-out, CSV output, aggregation.

A run directory holds one raw CSV per (method, cell, replication), a JSON
record next to each (with wall-clock timings, which are kept out of the CSV
so reruns are byte-identical), ``manifest.json`` describing the cells and
their ground-truth evidence, and ``summary.csv`` computed from the raw
CSVs alone.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import targets as tg
from .mathcore import rng_stream
from .sampler import CSV_COLUMNS, ConfigError, Mode, SamplerConfig, run
from .tailbo import AcquisitionConfig, GPState

log = logging.getLogger(__name__)

PRESET_DIR = Path(__file__).parent / "presets"
SUMMARY_COLUMNS = ("method", "cell", "mean_final_aess", "std_final_aess", "rel_sqrt_mse_z", "n_reps")


@dataclass(frozen=True)
class MethodSpec:
    name: str
    mode: Mode
    nu: float | None = None
    nu0: float = 1.0
    amis_scale_correction: bool = False


@dataclass(frozen=True)
class ReferencePolicy:
    T: int = 25
    M: int = 100_000
    nu: float = 5.0
    seed: int = 20240101


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    methods: tuple
    T: int
    M: tuple
    replications: int
    base_seed: int
    output: Path
    d: tuple = ()
    nu_pi: float | None = None
    kappa: float = 5.0
    csv_path: Path | None = None
    columns: dict = field(default_factory=dict)
    mu0_range: float = 5.0
    sigma0_scale: float = 10.0
    min_ess: float = 2.0
    acquisition: AcquisitionConfig = field(default_factory=AcquisitionConfig)
    gp: GPState = field(default_factory=GPState)
    reference: ReferencePolicy | None = None
    workers: int | None = None

    def cells(self):
        """``(label, d or None, M)`` for every cell, in a fixed order."""
        if self.experiment == "synthetic":
            return [(f"d{d}-M{m}", d, m) for d in self.d for m in self.M]
        return [(f"M{m}", None, m) for m in self.M]


def _as_tuple(v):
    return tuple(v) if isinstance(v, (list, tuple)) else (v,)


def _method_name(mode: Mode, nu) -> str:
    if mode is Mode.AHTIS_ADAPTIVE:
        return "ahtis-adaptive"
    prefix = "ahtis" if mode is Mode.AHTIS_FIXED else "amis"
    return f"{prefix}-nu{nu:g}"


def parse_config(raw: dict, base_dir: Path | None = None) -> ExperimentConfig:
    """Validate a decoded TOML document and build an :class:`ExperimentConfig`.

    Raises :class:`ConfigError` on anything invalid, before any run starts.
    """
    base_dir = base_dir or Path.cwd()
    try:
        experiment = str(raw.get("experiment", "synthetic")).lower()
        if experiment not in ("synthetic", "regression"):
            raise ConfigError(f"unknown experiment {experiment!r}")
        T = int(raw.get("T", 20))
        M = tuple(int(m) for m in _as_tuple(raw.get("M", 10_000)))
        reps = int(raw.get("replications", 1))
        if reps < 1:
            raise ConfigError("replications must be >= 1")
        if T < 1 or any(m < 2 for m in M):
            raise ConfigError("T must be >= 1 and every M >= 2")

        methods = []
        for entry in raw.get("methods", []):
            mode = Mode(entry["mode"])
            nu = entry.get("nu")
            if mode is not Mode.AHTIS_ADAPTIVE:
                if nu is None:
                    raise ConfigError(f"method {mode.value} needs nu")
                nu = float(nu)
                if mode is Mode.AMIS_FIXED and nu <= 2:
                    raise ConfigError(f"AMIS updates are undefined for nu={nu:g} <= 2")
            methods.append(
                MethodSpec(
                    name=str(entry.get("name", _method_name(mode, nu))),
                    mode=mode,
                    nu=nu,
                    nu0=float(entry.get("nu0", 1.0)),
                    amis_scale_correction=bool(entry.get("amis_scale_correction", False)),
                )
            )
        if not methods:
            raise ConfigError("method list is empty")
        names = [m.name for m in methods]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate method names: {names}")

        target = raw.get("target", {})
        init = raw.get("init", {})
        bo = raw.get("bo", {})
        acq = AcquisitionConfig(
            beta_multiplier=float(bo.get("beta_multiplier", 1.0)),
            search_grid_size=int(bo.get("grid", 512)),
        )
        gp = GPState(
            lengthscale=float(bo.get("lengthscale", 2.0)),
            signal_var=float(bo.get("signal_var", 1.0)),
            noise_var=float(bo.get("noise_var", 0.05)),
            nu_max=float(bo.get("nu_max", 10.0)),
            hyperopt_enabled=bool(bo.get("hyperopt", False)),
        )
        common = dict(
            experiment=experiment,
            methods=tuple(methods),
            T=T,
            M=M,
            replications=reps,
            base_seed=int(raw.get("base_seed", 0)),
            output=Path(raw.get("output", "runs")),
            mu0_range=float(init.get("mu0_range", 5.0)),
            sigma0_scale=float(init.get("sigma0_scale", 10.0 if experiment == "synthetic" else 4.0)),
            min_ess=float(init.get("min_ess", 2.0)),
            acquisition=acq,
            gp=gp,
            workers=raw.get("workers"),
        )
        if experiment == "synthetic":
            ds = tuple(int(d) for d in _as_tuple(target.get("d", 2)))
            if "nu_pi" not in target:
                raise ConfigError("synthetic target needs nu_pi")
            nu_pi = float(target["nu_pi"])
            kappa = float(target.get("kappa", 5.0))
            if nu_pi <= 0 or kappa < 1 or any(d < 1 for d in ds):
                raise ConfigError("need nu_pi > 0, kappa >= 1 and d >= 1")
            return ExperimentConfig(d=ds, nu_pi=nu_pi, kappa=kappa, **common)

        csv_path = target.get("csv")
        csv_path = tg.fixture_path() if csv_path in (None, "fixture") else (base_dir / csv_path)
        ref = raw.get("reference")
        if ref is None:
            raise ConfigError("regression experiments need a [reference] section")
        policy = ReferencePolicy(
            T=int(ref.get("T", 25)),
            M=int(ref.get("M", 100_000)),
            nu=float(ref.get("nu", 5.0)),
            seed=int(ref.get("seed", 20240101)),
        )
        if policy.nu <= 2:
            raise ConfigError("reference AMIS run needs nu > 2")
        return ExperimentConfig(
            csv_path=Path(csv_path),
            columns=dict(target.get("columns", {})),
            reference=policy,
            **common,
        )
    except ConfigError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from exc


def resolve_config_path(name: str) -> Path:
    p = Path(name)
    if p.exists():
        return p
    preset = PRESET_DIR / f"{name}.toml"
    if preset.exists():
        return preset
    raise ConfigError(f"no config file or preset named {name!r}")


def load_config(name: str, overrides: dict | None = None) -> ExperimentConfig:
    path = resolve_config_path(name)
    try:
        raw = tomllib.loads(path.read_text(encoding="utf-8"))
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key == "columns":
            raw.setdefault("target", {}).setdefault("columns", {}).update(value)
        else:
            raw[key] = value
    base = Path.cwd() if path.parent == PRESET_DIR else path.parent
    return parse_config(raw, base)


def derive_seed(base_seed: int, method_index: int, cell_index: int, rep: int):
    return rng_stream(base_seed, method_index, cell_index, rep)


def _target_seeds(base_seed: int, d: int) -> tuple[int, int]:
    a, b = np.random.SeedSequence([base_seed, d, 7]).generate_state(2)
    return int(a), int(b)


def synthetic_target(cfg: ExperimentConfig, d: int):
    loc, basis = _target_seeds(cfg.base_seed, d)
    params, log_z = tg.make_synthetic_target(
        tg.SyntheticTargetSpec(d, cfg.nu_pi, cfg.kappa, loc, basis)
    )
    return tg.student_target(params), log_z


def regression_model(cfg: ExperimentConfig) -> tg.PosteriorModel:
    return tg.PosteriorModel(tg.load_regression_csv(cfg.csv_path, cfg.columns))


def sampler_config(cfg: ExperimentConfig, method: MethodSpec, M: int) -> SamplerConfig:
    return SamplerConfig(
        T=cfg.T,
        M=M,
        mode=method.mode,
        nu=method.nu,
        nu0=method.nu0,
        mu0_range=cfg.mu0_range,
        sigma0_scale=cfg.sigma0_scale,
        min_ess=cfg.min_ess,
        acquisition=cfg.acquisition,
        gp=cfg.gp,
        amis_scale_correction=method.amis_scale_correction,
    )


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return repr(float(v))


def record_csv_text(record) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for row in record.rows():
        w.writerow([_fmt(v) for v in row])
    return buf.getvalue()


def raw_filename(method: str, cell: str, rep: int) -> str:
    return f"raw_{method}_{cell}_{rep}.csv"


def _run_job(job):
    cfg, mi, ci, rep = job
    method = cfg.methods[mi]
    label, d, M = cfg.cells()[ci]
    if cfg.experiment == "synthetic":
        target, _ = synthetic_target(cfg, d)
    else:
        target = tg.regression_target(regression_model(cfg))
    res = run(target, sampler_config(cfg, method, M), derive_seed(cfg.base_seed, mi, ci, rep), method.name)
    out = Path(cfg.output)
    name = raw_filename(method.name, label, rep)
    with open(out / name, "w", encoding="utf-8", newline="") as fh:
        fh.write(record_csv_text(res.record))
    with open(out / name.replace("raw_", "record_").replace(".csv", ".json"), "w", encoding="utf-8") as fh:
        json.dump(res.record.to_dict(), fh)
    return name


def _jobs(cfg: ExperimentConfig):
    return [
        (cfg, mi, ci, rep)
        for mi in range(len(cfg.methods))
        for ci in range(len(cfg.cells()))
        for rep in range(cfg.replications)
    ]


def write_manifest(cfg: ExperimentConfig, log_true_z: dict):
    manifest = {
        "experiment": cfg.experiment,
        "T": cfg.T,
        "replications": cfg.replications,
        "base_seed": cfg.base_seed,
        "methods": [m.name for m in cfg.methods],
        "cells": [
            {"label": label, "d": d, "M": m, "log_true_z": log_true_z.get(label)}
            for label, d, m in cfg.cells()
        ],
    }
    with open(Path(cfg.output) / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def run_experiment(cfg: ExperimentConfig) -> tuple[int, list]:
    """Run every (method, cell, replication) and aggregate.

    Returns ``(exit_code, errors)``; failed replications are reported but do
    not discard the others.
    """
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    errors = []
    if cfg.experiment == "synthetic":
        log_true_z = {label: synthetic_target(cfg, d)[1] for label, d, _ in cfg.cells()}
    else:
        try:
            lz = make_reference_log_z(cfg)
        except Exception as exc:
            errors.append({"stage": "reference-z", "error": repr(exc)})
            _write_errors(out, errors)
            return 3, errors
        log_true_z = {label: lz for label, _, _ in cfg.cells()}
    write_manifest(cfg, log_true_z)

    jobs = _jobs(cfg)
    workers = cfg.workers or os.cpu_count() or 1
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run_job, job) for job in jobs]
            results = []
            for job, fut in zip(jobs, futures):
                try:
                    results.append(fut.result())
                except Exception as exc:
                    errors.append(_job_error(job, exc))
    else:
        for job in jobs:
            try:
                _run_job(job)
            except Exception as exc:
                errors.append(_job_error(job, exc))
    aggregate(out)
    if errors:
        _write_errors(out, errors)
        return 3, errors
    return 0, errors


def _job_error(job, exc) -> dict:
    cfg, mi, ci, rep = job
    return {
        "method": cfg.methods[mi].name,
        "cell": cfg.cells()[ci][0],
        "replication": rep,
        "error": repr(exc),
        "traceback": "".join(traceback.format_exception(type(exc), exc, exc.__traceback__)),
    }


def _write_errors(out: Path, errors: list):
    with open(out / "errors.json", "w", encoding="utf-8") as fh:
        json.dump(errors, fh, indent=2)


def read_raw_csv(path) -> dict:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    return {k: np.array([float(r[k]) for r in rows]) for k in CSV_COLUMNS}


def aggregate(run_dir) -> list[dict]:
    """Recompute ``summary.csv`` from the raw CSVs and the manifest."""
    run_dir = Path(run_dir)
    manifest = json.loads((run_dir / "manifest.json").read_text(encoding="utf-8"))
    rows = []
    for method in manifest["methods"]:
        for cell in manifest["cells"]:
            label = cell["label"]
            finals_aess, finals_z = [], []
            for rep in range(manifest["replications"]):
                p = run_dir / raw_filename(method, label, rep)
                if not p.exists():
                    continue
                data = read_raw_csv(p)
                finals_aess.append(data["dm_alpha_ess_t"][-1])
                finals_z.append(data["z_hat_t"][-1])
            if not finals_aess:
                continue
            a = np.array(finals_aess)
            lz = cell.get("log_true_z")
            if lz is None:
                rmse = ""
            else:
                ratio = np.array(finals_z) / np.exp(lz)
                rmse = repr(float(np.sqrt(np.mean((ratio - 1.0) ** 2))))
            rows.append(
                {
                    "method": method,
                    "cell": label,
                    "mean_final_aess": repr(float(a.mean())),
                    "std_final_aess": repr(float(a.std())),
                    "rel_sqrt_mse_z": rmse,
                    "n_reps": str(len(a)),
                }
            )
    with open(run_dir / "summary.csv", "w", encoding="utf-8", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_COLUMNS, lineterminator="\n")
        w.writeheader()
        w.writerows(rows)
    return rows


def _reference_key(cfg: ExperimentConfig) -> str:
    h = hashlib.sha256()
    h.update(Path(cfg.csv_path).read_bytes())
    h.update(json.dumps(cfg.columns, sort_keys=True).encode())
    ref = cfg.reference
    h.update(f"{ref.T}|{ref.M}|{ref.nu!r}|{ref.seed}".encode())
    return h.hexdigest()[:16]


def make_reference_log_z(cfg: ExperimentConfig, cache_dir=None) -> float:
    """Ground-truth log evidence for the regression posterior.

    AMIS with fixed ``nu`` started from the Laplace approximation; cached in
    ``cache_dir`` (default: the output directory) under a key built from the
    dataset bytes and the reference settings.
    """
    if cfg.experiment != "regression" or cfg.reference is None:
        raise ConfigError("reference evidence only applies to regression experiments")
    cache_dir = Path(cache_dir or cfg.output)
    cache_dir.mkdir(parents=True, exist_ok=True)
    key = _reference_key(cfg)
    cache = cache_dir / f"reference_z_{key}.json"
    if cache.exists():
        return float(json.loads(cache.read_text(encoding="utf-8"))["log_z"])
    model = regression_model(cfg)
    lap = tg.laplace_init(model)
    ref = cfg.reference
    scfg = SamplerConfig(
        T=ref.T, M=ref.M, mode=Mode.AMIS_FIXED, nu=ref.nu, mu0=lap.mu, sigma0=lap.sigma
    )
    res = run(tg.regression_target(model), scfg, rng_stream(ref.seed), "reference")
    log_z = res.record.log_z_hat[-1]
    with open(cache, "w", encoding="utf-8") as fh:
        json.dump({"log_z": log_z, "key": key, "T": ref.T, "M": ref.M, "nu": ref.nu, "seed": ref.seed}, fh)
    return float(log_z)
