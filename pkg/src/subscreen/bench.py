"""Experiment harness: population sweeps, selector/estimator grids, output.

One task is a (sweep point, seed) pair: it generates a population, runs
every requested selector, fits every requested estimator on each selected
subset, and scores the recovered basis against the truth.  Baseline
selectors are size-matched to the screening output so that methods compete
at equal subset sizes.
"""

from __future__ import annotations

import csv
import json
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace, asdict

import numpy as np

from .estimators import ESTIMATORS, build_moment_proxies
from .linalg import principal_angle_distance
from .screening import (
    REASON_ALREADY_ADMISSIBLE,
    ScreeningConfig,
    balanced_baseline,
    empirical_search,
    genie_search,
    power_of_choice_baseline,
    random_baseline,
)
from .simulate import PopulationConfig, generate_population

METHODS = ("full", "random", "power_of_choice", "balanced", "genie", "empirical")
_METHOD_STREAM = {name: 7000 + i for i, name in enumerate(METHODS)}
ABLATION_PARAMS = ("k", "d", "M", "g", "N")

CSV_COLUMNS = ("method", "estimator", "regime", "seed", "swept_param", "swept_value",
               "error_sin_theta", "subset_size", "wall_ms", "screening_reason")


class ConfigError(ValueError):
    """Invalid experiment configuration."""


@dataclass
class ExperimentConfig:
    population: PopulationConfig = field(default_factory=PopulationConfig)
    methods: list[str] = field(default_factory=lambda: ["full", "random",
                                                        "power_of_choice",
                                                        "balanced", "empirical"])
    estimators: list[str] = field(default_factory=lambda: ["split_averaging", "mom"])
    screening: ScreeningConfig = field(default_factory=ScreeningConfig)
    seeds: list[int] = field(default_factory=lambda: list(range(20)))
    ablation: dict | None = None
    record_wall_ms: bool = True

    def __post_init__(self):
        if not self.methods or not self.estimators or not self.seeds:
            raise ConfigError("methods, estimators, and seeds must be nonempty")
        for m in self.methods:
            if m not in METHODS:
                raise ConfigError(f"unknown method {m!r}; expected one of {METHODS}")
        for e in self.estimators:
            if e not in ESTIMATORS:
                raise ConfigError(f"unknown estimator {e!r}")
        if self.ablation is not None:
            param = self.ablation.get("param")
            values = self.ablation.get("values")
            if param not in ABLATION_PARAMS:
                raise ConfigError(f"ablation parameter must be one of {ABLATION_PARAMS}")
            if not values:
                raise ConfigError("ablation values must be nonempty")
        if "balanced" in self.methods and self.population.regime == "hetero_gaussian":
            raise ConfigError(
                "the balanced selector needs group labels; use the clustered or "
                "orthogonal regime")


@dataclass
class ExperimentRecord:
    method: str
    estimator: str
    regime: str
    seed: int
    swept_param: str
    swept_value: str
    error_sin_theta: float
    subset_size: int
    wall_ms: float
    screening_reason: str


def _apply_sweep(base: PopulationConfig, param: str | None, value) -> PopulationConfig:
    if param is None:
        return base
    if param == "k":
        # multiplicities are tied to k; re-derive them for the new value
        return replace(base, k=int(value), orthogonal_multiplicities=None)
    if param == "d":
        # the default sample-size range follows the dimension
        return replace(base, d=int(value), n_range=None)
    if param == "M":
        return replace(base, M=int(value), orthogonal_multiplicities=None)
    if param == "g":
        return replace(base, cluster_prob=float(value))
    if param == "N":
        n = max(2, round(int(value) / base.M))
        return replace(base, n_range=(n, n))
    raise ConfigError(f"unknown ablation parameter {param!r}")


def default_ablation_grid(param: str) -> list:
    """Sweep values used when a config requests a parameter without a grid."""
    grids = {
        "k": [2, 4, 6, 8, 10],
        "d": [20, 30, 40, 60],
        "M": [40, 70, 100, 200],
        "g": [0.1, 0.2, 0.3, 0.5],
        "N": [2_000, 8_000, 32_000, 128_000],
    }
    return grids[param]


def _fit_error(estimator_name: str, datasets, k: int, basis_true) -> float:
    try:
        est = ESTIMATORS[estimator_name](datasets, k)
        return principal_angle_distance(est.basis, basis_true)
    except Exception:
        # a failed fit scores the worst possible distance; the run continues
        return 1.0


def _power_of_choice_losses(datasets, basis) -> np.ndarray:
    """Per-source mean squared residual after refitting the head on a basis."""
    losses = np.zeros(len(datasets))
    for i, ds in enumerate(datasets):
        design = ds.covariates @ basis
        coef, *_ = np.linalg.lstsq(design, ds.responses, rcond=None)
        resid = ds.responses - design @ coef
        losses[i] = float(np.mean(resid ** 2))
    return losses


def _select(method: str, gt, datasets, proxies, screening: ScreeningConfig,
            seed: int, matched_size: int | None, round1_estimator: str):
    """Run one selector; only genie and balanced may look at the truth."""
    m = len(datasets)
    k = gt.shared_basis.shape[1]
    rng = np.random.default_rng([seed, _METHOD_STREAM[method]])
    reason = ""
    if method == "full":
        indices = list(range(m))
    elif method == "empirical":
        sel = empirical_search(proxies, k, screening, rng)
        reason = sel.terminated_reason
        indices = sel.selected
        if not indices:
            # nothing certified: fall back to no screening at all
            indices = list(range(m))
            reason += ";fallback=full"
    elif method == "genie":
        sel = genie_search(gt.heads, screening, rng)
        reason = sel.terminated_reason
        indices = sel.selected
        if not indices:
            indices = list(range(m))
            reason += ";fallback=full"
    elif method == "random":
        indices = random_baseline(m, matched_size if matched_size is not None else m, rng)
    elif method == "power_of_choice":
        losses = _power_of_choice_losses(
            datasets, ESTIMATORS[round1_estimator](datasets, k).basis)
        indices = power_of_choice_baseline(
            losses, matched_size if matched_size is not None else m)
    elif method == "balanced":
        labels = gt.cluster_labels
        if labels is None:
            raise ConfigError("balanced selection needs cluster labels")
        counts = np.bincount(labels)[np.unique(labels)]
        quota = int(counts.min())
        if matched_size is not None:
            quota = max(1, min(quota, matched_size // len(counts)))
        indices = balanced_baseline(labels, quota, rng)
    else:
        raise ConfigError(f"unknown method {method!r}")
    return indices, reason


def _run_task(cfg: ExperimentConfig, pop_cfg: PopulationConfig, seed: int,
              swept_param: str, swept_value: str) -> list[ExperimentRecord]:
    pop_cfg = replace(pop_cfg, seed=seed)
    gt, datasets = generate_population(pop_cfg)
    proxies = build_moment_proxies(datasets)
    k = pop_cfg.k
    round1 = cfg.estimators[0]

    # screening first: baselines are size-matched to its output, with the
    # empirical screener taking precedence when both screeners run
    ordered = sorted(cfg.methods,
                     key=lambda name: {"empirical": 0, "genie": 1}.get(name, 2))
    matched_size = None
    records = []
    for method in ordered:
        t0 = time.perf_counter()
        indices, reason = _select(method, gt, datasets, proxies, cfg.screening,
                                  seed, matched_size, round1)
        select_ms = (time.perf_counter() - t0) * 1e3
        if method in ("empirical", "genie") and matched_size is None:
            matched_size = len(indices)
        subset = [datasets[i] for i in indices]
        for estimator in cfg.estimators:
            if estimator == "dfht":
                continue
            t1 = time.perf_counter()
            err = _fit_error(estimator, subset, k, gt.shared_basis)
            fit_ms = (time.perf_counter() - t1) * 1e3
            wall = select_ms + fit_ms if cfg.record_wall_ms else 0.0
            records.append(ExperimentRecord(
                method=method, estimator=estimator, regime=pop_cfg.regime,
                seed=seed, swept_param=swept_param, swept_value=swept_value,
                error_sin_theta=float(err), subset_size=len(indices),
                wall_ms=float(wall), screening_reason=reason))
    return records


def run_experiment(cfg: ExperimentConfig, workers: int = 1) -> list[ExperimentRecord]:
    """Run the full grid and return records in a deterministic order.

    Tasks fan out over (sweep point, seed); each owns derived random
    streams, so results do not depend on the worker count.
    """
    if "dfht" in cfg.estimators:
        warnings.warn("the dfht estimator slot is unimplemented and will be skipped",
                      RuntimeWarning)
        if all(e == "dfht" for e in cfg.estimators):
            raise ConfigError("no implemented estimator requested")
    if cfg.ablation is not None:
        param = cfg.ablation["param"]
        values = list(cfg.ablation.get("values") or default_ablation_grid(param))
        sweep = [(param, v) for v in values]
    else:
        sweep = [(None, None)]

    tasks = []
    for sweep_idx, (param, value) in enumerate(sweep):
        pop_cfg = _apply_sweep(cfg.population, param, value)
        for seed in cfg.seeds:
            tasks.append((sweep_idx, pop_cfg, seed,
                          param or "", "" if value is None else str(value)))

    def run_one(task):
        _, pop_cfg, seed, sp, sv = task
        return _run_task(cfg, pop_cfg, seed, sp, sv)

    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(_task_entry,
                                   [(cfg, t) for t in tasks]))
    else:
        chunks = [run_one(t) for t in tasks]

    records = [r for chunk in chunks for r in chunk]
    sweep_order = {("" if v is None else str(v)): i for i, (_, v) in enumerate(sweep)}
    records.sort(key=lambda r: (sweep_order[r.swept_value], r.seed, r.method, r.estimator))
    return records


def _task_entry(packed):
    cfg, task = packed
    _, pop_cfg, seed, sp, sv = task
    return _run_task(cfg, pop_cfg, seed, sp, sv)


def _format_value(v) -> str:
    if isinstance(v, float):
        return repr(v)
    return str(v)


def emit_results(records: list[ExperimentRecord], path, format: str = "csv") -> None:
    """Write records to CSV (fixed column order) or a JSON mirror."""
    if not records:
        raise ValueError("no records to write")
    if format == "csv":
        with open(str(path), "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(CSV_COLUMNS)
            for r in records:
                writer.writerow([_format_value(getattr(r, c)) for c in CSV_COLUMNS])
    elif format == "json":
        with open(str(path), "w") as fh:
            json.dump([asdict(r) for r in records], fh, indent=2)
    else:
        raise ValueError(f"unknown output format {format!r}")


def parse_results(path) -> list[ExperimentRecord]:
    """Read a results CSV back into records."""
    records = []
    with open(str(path), newline="") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            records.append(ExperimentRecord(
                method=row["method"], estimator=row["estimator"],
                regime=row["regime"], seed=int(row["seed"]),
                swept_param=row["swept_param"], swept_value=row["swept_value"],
                error_sin_theta=float(row["error_sin_theta"]),
                subset_size=int(row["subset_size"]),
                wall_ms=float(row["wall_ms"]),
                screening_reason=row["screening_reason"]))
    return records


def emit_plotdata(records: list[ExperimentRecord], group_by: list[str], path) -> None:
    """Aggregate the error column per group into long-format plot data.

    Emits one row per group with the group size, mean error, and standard
    error of the mean; single-observation groups are flagged.
    """
    if not records:
        raise ValueError("no records to aggregate")
    for column in group_by:
        if column not in CSV_COLUMNS:
            raise ValueError(f"unknown grouping column {column!r}")
    groups: dict[tuple, list[float]] = {}
    for r in records:
        key = tuple(str(getattr(r, c)) for c in group_by)
        groups.setdefault(key, []).append(r.error_sin_theta)
    with open(str(path), "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(list(group_by) + ["n", "mean_error", "stderr_error", "note"])
        for key in sorted(groups):
            errs = np.asarray(groups[key])
            n = errs.size
            stderr = float(errs.std(ddof=1) / np.sqrt(n)) if n > 1 else 0.0
            note = "single_sample" if n == 1 else ""
            writer.writerow(list(key) + [n, repr(float(errs.mean())), repr(stderr), note])
