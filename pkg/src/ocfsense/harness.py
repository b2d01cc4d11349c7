"""Monte Carlo sweeps over incentive intensity and population size."""
from __future__ import annotations

import csv
import dataclasses
import hashlib
import json
import logging
import math
import subprocess
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import __version__
from .channel import SubcarrierAssignment, allocate_priority, allocate_random
from .ocf import run_ocf
from .optimizers import FOLLOWERS, PREDICTORS, run_centralized, run_noncooperative
from .outcome import MODES, MechanismOutcome
from .scenario import GlobalParams, Scenario, generate_scenario

log = logging.getLogger(__name__)

SWEEP_VARS = ("alpha1", "alpha2", "users", "tasks")
OCF_MODES = ("ocf-random", "ocf-priority")
ALPHA_MODES = {"alpha1": ("noncoop",), "alpha2": OCF_MODES}
METRICS = ("platform_utility", "pfm", "user_utility", "iterations")
DEFAULT_ALPHA_GRID = tuple(round(0.1 * i, 10) for i in range(21))
RANDOM_ALLOCATION_STREAM = 0x5EED  # keeps random allocation draws apart from scenario draws


def derive_seed(base: int, *keys: int) -> int:
    """63-bit seed for one (point, instance, stream) cell, independent across cells."""
    words = np.random.SeedSequence([int(base), *map(int, keys)]).generate_state(2, np.uint32)
    return int((int(words[0]) << 31) ^ int(words[1]))


def _strictly_increasing(values) -> bool:
    return all(b > a for a, b in zip(values, values[1:]))


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment: what to sweep, over which instances, with which mechanisms.

    ``grid`` holds the values of ``sweep_var``; for an alpha sweep it may be
    left empty to use ``alpha_grid``. Population sweeps pick each
    mechanism's best alpha from ``alpha_grid`` on ``tune_instances`` separate
    instances per point (0 tunes on the evaluation instances themselves).
    """

    modes: tuple[str, ...] = MODES
    sweep_var: str = "alpha2"
    grid: tuple[float, ...] = ()
    instances_per_point: int = 100
    tune_instances: int = 20
    n_users: int = 60
    n_tasks: int = 30
    params: GlobalParams = field(default_factory=GlobalParams)
    alpha_grid: tuple[float, ...] = DEFAULT_ALPHA_GRID
    seed_base: int = 0
    output_dir: str = "results"
    leader_restarts: int = 1
    centralized_restarts: int = 1
    follower: str = "relaxation"
    predictor: str = "prefix"
    max_rounds: int = 10_000

    def __post_init__(self):
        object.__setattr__(self, "modes", tuple(self.modes))
        object.__setattr__(self, "grid", tuple(self.grid))
        object.__setattr__(self, "alpha_grid", tuple(float(a) for a in self.alpha_grid))
        if isinstance(self.params, dict):
            object.__setattr__(self, "params", GlobalParams.from_dict(self.params))
        bad = [m for m in self.modes if m not in MODES]
        if bad or not self.modes:
            raise ValueError(f"modes must be a non-empty subset of {MODES}, got {list(self.modes)}")
        if self.sweep_var not in SWEEP_VARS:
            raise ValueError(f"sweep_var must be one of {SWEEP_VARS}, got {self.sweep_var!r}")
        if not self.alpha_grid or not _strictly_increasing(self.alpha_grid):
            raise ValueError("alpha_grid must be non-empty and strictly increasing")
        if min(self.alpha_grid) < 0:
            raise ValueError("alpha_grid values must be >= 0")
        grid = self.sweep_grid
        if not grid or not _strictly_increasing(grid):
            raise ValueError("grid must be non-empty and strictly increasing")
        if self.sweep_var in ("users", "tasks"):
            if any(int(v) != v or v < 1 for v in grid):
                raise ValueError("population grids must hold positive integers")
        elif min(grid) < 0:
            raise ValueError("alpha grids must be >= 0")
        if self.instances_per_point < 1:
            raise ValueError("instances_per_point must be >= 1")
        if self.tune_instances < 0:
            raise ValueError("tune_instances must be >= 0")
        if self.n_users < 1 or self.n_tasks < 1:
            raise ValueError("n_users and n_tasks must be >= 1")
        if self.follower not in FOLLOWERS:
            raise ValueError(f"follower must be one of {FOLLOWERS}")
        if self.predictor not in PREDICTORS:
            raise ValueError(f"predictor must be one of {PREDICTORS}")

    @property
    def sweep_grid(self) -> tuple:
        if self.grid:
            return self.grid
        return self.alpha_grid if self.sweep_var in ALPHA_MODES else ()

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict[str, Any]:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        d["params"] = self.params.to_dict()
        for key in ("modes", "grid", "alpha_grid"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "ExperimentConfig":
        """Build from a flat or nested mapping.

        GlobalParams fields may sit under ``params`` or at the top level.
        """
        own = {f.name for f in dataclasses.fields(cls)}
        param_names = {f.name for f in dataclasses.fields(GlobalParams)}
        params = dict(data.get("params", {}))
        kwargs = {}
        for key, value in data.items():
            if key == "params":
                continue
            if key in own:
                kwargs[key] = value
            elif key in param_names:
                params[key] = value
            else:
                raise ValueError(f"unknown config key {key!r}")
        kwargs["params"] = GlobalParams.from_dict(params)
        return cls(**kwargs)

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def ocf_assignment(mode: str, scenario: Scenario) -> SubcarrierAssignment:
    """Phase-one allocation for an OCF mode; random draws depend only on the scenario seed."""
    if mode == "ocf-priority":
        return allocate_priority(scenario)
    if mode == "ocf-random":
        return allocate_random(scenario, np.random.default_rng([scenario.seed, RANDOM_ALLOCATION_STREAM]))
    raise ValueError(f"{mode!r} is not an OCF mode")


def run_single(
    mode: str,
    scenario: Scenario,
    alpha: float | None = None,
    config: ExperimentConfig | None = None,
    assignment: SubcarrierAssignment | None = None,
) -> MechanismOutcome:
    """Run one mechanism on one scenario; the config hash lands in the diagnostics."""
    config = ExperimentConfig() if config is None else config
    if mode == "centralized":
        out = run_centralized(scenario, restarts=config.centralized_restarts)
    elif mode == "noncoop":
        out = run_noncooperative(
            scenario, alpha, follower=config.follower, restarts=config.leader_restarts,
            predictor=config.predictor,
        )
    elif mode in OCF_MODES:
        if assignment is None:
            assignment = ocf_assignment(mode, scenario)
        out, _ = run_ocf(scenario, assignment, alpha, mode=mode, max_rounds=config.max_rounds)
    else:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    out.diagnostics["config_hash"] = config.config_hash()
    return out


def iterations_of(outcome: MechanismOutcome) -> int:
    d = outcome.diagnostics
    return int(d["iterations_to_converge"] if outcome.mode in OCF_MODES else d["iterations"])


def _sample(outcome: MechanismOutcome) -> dict[str, float]:
    u = outcome.utilities
    return {
        "platform_utility": u.platform_utility,
        "pfm": u.pfm,
        "user_utility": u.total_user_utility,
        "iterations": float(iterations_of(outcome)),
    }


def mean_se(values) -> tuple[float, float]:
    v = np.asarray(values, dtype=float)
    if v.size == 0:
        return math.nan, math.nan
    se = float(v.std(ddof=1) / math.sqrt(v.size)) if v.size > 1 else 0.0
    return float(v.mean()), se


@dataclass
class SweepResult:
    """Per-point summaries plus every instance that produced them.

    ``best_alpha`` maps mode to a single value for alpha sweeps and to one
    value per grid point for population sweeps.
    """

    sweep_var: str
    grid: tuple
    rows: list[dict[str, Any]]
    samples: list[dict[str, Any]]
    best_alpha: dict[str, Any] = field(default_factory=dict)

    def series(self, mode: str, metric: str = "platform_utility") -> tuple[np.ndarray, np.ndarray]:
        """Means and standard errors of ``metric`` for ``mode`` along the grid."""
        rows = [r for r in self.rows if r["mode"] == mode]
        return (
            np.array([r[f"mean_{metric}"] for r in rows]),
            np.array([r[f"se_{metric}"] for r in rows]),
        )

    def values(self, mode: str, point: int, metric: str = "platform_utility") -> np.ndarray:
        return np.array([
            s[metric] for s in self.samples if s["mode"] == mode and s["point"] == point
        ])

    def paired_gap(self, better: str, worse: str, metric: str = "platform_utility"):
        """Mean and standard error of per-instance differences at each point."""
        out = []
        for p in range(len(self.grid)):
            diff = self.values(better, p, metric) - self.values(worse, p, metric)
            out.append(mean_se(diff))
        return np.array(out)


def _summaries(sweep_var, grid, samples, config, extra=None) -> list[dict]:
    rows = []
    for p, value in enumerate(grid):
        for mode in dict.fromkeys(s["mode"] for s in samples):
            group = [s for s in samples if s["point"] == p and s["mode"] == mode]
            if not group:
                continue
            row = {"point": p, sweep_var: value, "mode": mode, "alpha": group[0]["alpha"], "n": len(group)}
            for metric in METRICS:
                row[f"mean_{metric}"], row[f"se_{metric}"] = mean_se([s[metric] for s in group])
            row["seed_base"] = config.seed_base
            if extra:
                row.update(extra(p, mode))
            rows.append(row)
    return rows


def _alpha_modes(config: ExperimentConfig, var: str) -> tuple[str, ...]:
    modes = tuple(m for m in config.modes if m in ALPHA_MODES[var])
    if not modes:
        raise ValueError(f"a {var} sweep needs one of {ALPHA_MODES[var]} in modes")
    return modes


def _alpha_runs(config, scenario, modes, alphas):
    """Yield (mode, alpha, outcome) with OCF allocations computed once per scenario."""
    for mode in modes:
        assignment = ocf_assignment(mode, scenario) if mode in OCF_MODES else None
        for a in alphas:
            yield mode, a, run_single(mode, scenario, a, config, assignment)


def sweep_alpha(config: ExperimentConfig) -> SweepResult:
    """Mean utilities along an incentive-intensity grid.

    Every grid point reuses the same instances (common random numbers), so
    differences between points are not blurred by instance noise.
    """
    var = config.sweep_var
    if var not in ALPHA_MODES:
        raise ValueError(f"sweep_alpha needs sweep_var alpha1 or alpha2, got {var!r}")
    modes = _alpha_modes(config, var)
    grid = tuple(float(a) for a in config.sweep_grid)
    samples = []
    for inst in range(config.instances_per_point):
        seed = derive_seed(config.seed_base, 0, inst, 0)
        scenario = generate_scenario(config.params.replace(rng_seed=seed), config.n_tasks, config.n_users)
        for mode, a, out in _alpha_runs(config, scenario, modes, grid):
            samples.append({"point": grid.index(a), var: a, "mode": mode, "alpha": a,
                            "instance": inst, "seed": seed, **_sample(out)})
        log.debug("instance %d done", inst)
    samples.sort(key=lambda s: (s["point"], modes.index(s["mode"]), s["instance"]))
    rows = _summaries(var, grid, samples, config)
    best = {}
    for mode in modes:
        means = [r["mean_platform_utility"] for r in rows if r["mode"] == mode]
        best[mode] = grid[int(np.argmax(means))]
    return SweepResult(var, grid, rows, samples, best)


def _population_sizes(config: ExperimentConfig, value) -> tuple[int, int]:
    if config.sweep_var == "users":
        return config.n_tasks, int(value)
    return int(value), config.n_users


def _tune(config, point, n_tasks, n_users, modes):
    """Best alpha per mode from the alpha grid, judged on tuning instances."""
    totals = {m: np.zeros(len(config.alpha_grid)) for m in modes}
    stream = 1 if config.tune_instances else 0
    count = config.tune_instances or config.instances_per_point
    for inst in range(count):
        seed = derive_seed(config.seed_base, point, inst, stream)
        scenario = generate_scenario(config.params.replace(rng_seed=seed), n_tasks, n_users)
        for mode, a, out in _alpha_runs(config, scenario, modes, config.alpha_grid):
            totals[mode][config.alpha_grid.index(a)] += out.platform_utility
    return {m: config.alpha_grid[int(np.argmax(t))] for m, t in totals.items()}


def sweep_population(config: ExperimentConfig) -> SweepResult:
    """Mean utilities along a user- or task-count grid, each mechanism at its best alpha."""
    var = config.sweep_var
    if var not in ("users", "tasks"):
        raise ValueError(f"sweep_population needs sweep_var users or tasks, got {var!r}")
    grid = tuple(int(v) for v in config.sweep_grid)
    tuned = tuple(m for m in config.modes if m != "centralized")
    samples = []
    best = {m: [] for m in tuned}
    for p, value in enumerate(grid):
        n_tasks, n_users = _population_sizes(config, value)
        alphas = _tune(config, p, n_tasks, n_users, tuned) if tuned else {}
        for m in tuned:
            best[m].append(alphas[m])
        for inst in range(config.instances_per_point):
            seed = derive_seed(config.seed_base, p, inst, 0)
            scenario = generate_scenario(config.params.replace(rng_seed=seed), n_tasks, n_users)
            for mode in config.modes:
                out = run_single(mode, scenario, alphas.get(mode), config)
                samples.append({"point": p, var: value, "mode": mode, "alpha": out.alpha,
                                "instance": inst, "seed": seed, **_sample(out)})
        log.debug("point %s=%s done", var, value)
    samples.sort(key=lambda s: (s["point"], config.modes.index(s["mode"]), s["instance"]))
    rows = _summaries(var, grid, samples, config)
    return SweepResult(var, grid, rows, samples, best)


def run_sweep(config: ExperimentConfig) -> SweepResult:
    if config.sweep_var in ALPHA_MODES:
        return sweep_alpha(config)
    return sweep_population(config)


@dataclass
class IterationCdf:
    """Empirical CDFs of iterations-to-converge, one per user count."""

    n_tasks: int
    mode: str
    samples: dict[int, np.ndarray]
    seeds: dict[int, list[int]]

    def cdf(self, n_users: int, y) -> np.ndarray:
        """``P(iterations <= y)`` for each value in ``y``."""
        v = np.sort(self.samples[n_users])
        return np.searchsorted(v, np.asarray(y, dtype=float), side="right") / v.size

    def table(self) -> list[dict[str, Any]]:
        rows = []
        for m, v in self.samples.items():
            values, counts = np.unique(v, return_counts=True)
            for y, c in zip(values, np.cumsum(counts)):
                rows.append({"n_users": m, "iterations": int(y), "cdf": float(c / v.size)})
        return rows

    def summary(self) -> list[dict[str, Any]]:
        rows = []
        for m, v in self.samples.items():
            mean, se = mean_se(v)
            rows.append({
                "n_users": m, "n_tasks": self.n_tasks, "mode": self.mode, "n": int(v.size),
                "mean": mean, "se": se, "p99": float(np.percentile(v, 99)), "max": int(v.max()),
            })
        return rows


def iteration_cdf(config: ExperimentConfig, mode: str | None = None) -> IterationCdf:
    """Iterations-to-converge over instances for each user count in the grid.

    Uses the config's ``alpha2`` and priority allocation unless ``modes``
    lists only the random variant.
    """
    if mode is None:
        only_random = "ocf-random" in config.modes and "ocf-priority" not in config.modes
        mode = "ocf-random" if only_random else "ocf-priority"
    if mode not in OCF_MODES:
        raise ValueError(f"iteration CDFs need an OCF mode, got {mode!r}")
    grid = config.grid if config.sweep_var == "users" and config.grid else (config.n_users,)
    samples, seeds = {}, {}
    for p, m in enumerate(int(v) for v in grid):
        vals, used = [], []
        for inst in range(config.instances_per_point):
            seed = derive_seed(config.seed_base, p, inst, 0)
            scenario = generate_scenario(config.params.replace(rng_seed=seed), config.n_tasks, m)
            out = run_single(mode, scenario, config.params.incentive_alpha2, config)
            vals.append(iterations_of(out))
            used.append(seed)
        samples[m] = np.array(vals)
        seeds[m] = used
    return IterationCdf(config.n_tasks, mode, samples, seeds)


def git_describe() -> str:
    try:
        res = subprocess.run(
            ["git", "describe", "--always", "--dirty"], cwd=Path(__file__).parent,
            capture_output=True, text=True, timeout=10,
        )
    except (OSError, subprocess.SubprocessError):
        return "unknown"
    return res.stdout.strip() if res.returncode == 0 and res.stdout.strip() else "unknown"


def write_csv(path: Path, rows: Sequence[dict[str, Any]]):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        if not rows:
            return
        w = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        w.writeheader()
        w.writerows(rows)


def write_metadata(path: Path, config: ExperimentConfig, **extra):
    meta = {
        "config": config.to_dict(),
        "config_hash": config.config_hash(),
        "seed_base": config.seed_base,
        "git_describe": git_describe(),
        "version": __version__,
        **extra,
    }
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")


def write_sweep(result: SweepResult, config: ExperimentConfig, out_dir=None, stem=None) -> list[Path]:
    """Summary CSV, per-instance CSV and sidecar JSON for one sweep."""
    out = Path(out_dir or config.output_dir)
    stem = stem or f"sweep_{result.sweep_var}"
    paths = [out / f"{stem}.csv", out / f"{stem}_instances.csv", out / f"{stem}.json"]
    write_csv(paths[0], result.rows)
    write_csv(paths[1], result.samples)
    write_metadata(paths[2], config, best_alpha=result.best_alpha, grid=list(result.grid))
    return paths


def write_cdf(cdf: IterationCdf, config: ExperimentConfig, out_dir=None, stem="cdf_iterations") -> list[Path]:
    out = Path(out_dir or config.output_dir)
    paths = [out / f"{stem}.csv", out / f"{stem}_summary.csv", out / f"{stem}.json"]
    write_csv(paths[0], cdf.table())
    write_csv(paths[1], cdf.summary())
    write_metadata(paths[2], config, mode=cdf.mode, seeds={str(k): v for k, v in cdf.seeds.items()})
    return paths
