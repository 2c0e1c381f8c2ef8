"""Large-data experiment driver.

For every sample size ``N`` the driver draws a noiseless (or noisy) dataset from
the teacher, solves the regularised problem with ``beta`` taken from the
schedule, and records how far the solution is from the teacher.  Convergence is
only guaranteed towards *some* minimal-norm interpolant, so each row also
carries the norm comparison ``G(mu_hat) <= G(teacher)``, which is what the
comparison argument actually yields.
"""
from __future__ import annotations

import datetime as _dt
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .datasets import InputDistribution, generate_dataset
from .errors import InvalidParameter
from .io import read_json, read_measure, resolve, write_csv, write_json
from .measure import DiscreteMeasure, canonicalize
from .network import Activation, uniform_error
from .problem import Problem, objective
from .regularizer import RegParams, g_alpha_beta
from .solver import conditional_gradient_solve
from .transport import kru_distance

ROW_FIELDS = ("N", "beta", "kru_distance_to_reference", "uniform_error_R", "solution_norm",
              "teacher_norm", "objective", "atoms", "iterations", "stop_reason", "status", "error")


@dataclass(frozen=True)
class BetaSchedule:
    """``constant``: ``beta = c``; ``power``: ``beta = c * N^(-gamma)`` with ``gamma`` in (0, 1]."""

    kind: str = "power"
    c: float = 0.1
    gamma: float = 0.5

    def __post_init__(self):
        if self.kind not in ("constant", "power"):
            raise InvalidParameter(f"beta schedule must be constant or power, got {self.kind!r}")
        if not (np.isfinite(self.c) and self.c > 0):
            raise InvalidParameter(f"schedule constant must be positive, got {self.c}")
        if self.kind == "power" and not 0.0 < self.gamma <= 1.0:
            raise InvalidParameter(f"gamma must lie in (0, 1], got {self.gamma}")

    def __call__(self, N: int) -> float:
        return self.c if self.kind == "constant" else self.c * float(N) ** (-self.gamma)

    @classmethod
    def parse(cls, value) -> "BetaSchedule":
        if isinstance(value, cls):
            return value
        if isinstance(value, (int, float)):
            return cls("constant", float(value))
        if isinstance(value, dict):
            return cls(value.get("kind", "power"), float(value.get("c", 0.1)),
                       float(value.get("gamma", 0.5)))
        raise InvalidParameter(f"cannot parse beta schedule {value!r}")


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    teacher: DiscreteMeasure | str
    N_grid: tuple[int, ...]
    beta_schedule: BetaSchedule = field(default_factory=BetaSchedule)
    noise_std: float = 0.0
    input_distribution: InputDistribution = field(default_factory=InputDistribution)
    radius_R: float = 1.0
    grid_size: int = 4096
    output_dir: str | None = None
    activation: Activation = field(default_factory=lambda: Activation("relu"))
    alpha: float = 0.0
    p: float = 2.0
    max_outer: int = 200

    def __post_init__(self):
        grid = tuple(int(n) for n in self.N_grid)
        if not grid or any(n < 1 for n in grid):
            raise InvalidParameter("N_grid must be a non-empty list of positive sizes")
        if any(b <= a for a, b in zip(grid, grid[1:])):
            raise InvalidParameter(f"N_grid must be strictly increasing, got {list(grid)}")
        object.__setattr__(self, "N_grid", grid)
        object.__setattr__(self, "beta_schedule", BetaSchedule.parse(self.beta_schedule))
        object.__setattr__(self, "input_distribution",
                           InputDistribution.parse(self.input_distribution))
        if isinstance(self.activation, str):
            object.__setattr__(self, "activation", Activation.parse(self.activation))
        if not (np.isfinite(self.noise_std) and self.noise_std >= 0):
            raise InvalidParameter("noise_std must be >= 0")
        if not self.radius_R > 0 or int(self.grid_size) < 1:
            raise InvalidParameter("radius_R must be positive and grid_size >= 1")
        if isinstance(self.teacher, (str, os.PathLike)):
            object.__setattr__(self, "teacher", read_measure(self.teacher))
        object.__setattr__(self, "teacher", canonicalize(self.teacher))

    @classmethod
    def from_dict(cls, data: dict, base_dir: Path | str = ".") -> "ExperimentConfig":
        base = Path(base_dir)
        data = dict(data)
        try:
            teacher = data.pop("teacher")
            if isinstance(teacher, str):
                teacher = resolve(base, teacher)
            out = data.pop("output_dir", None)
            if out is not None:
                out = str(resolve(base, out))
            return cls(teacher=teacher if not isinstance(teacher, Path) else str(teacher),
                       output_dir=out, **data)
        except (KeyError, TypeError) as exc:
            raise InvalidParameter(f"bad experiment config: {exc}") from exc

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        return cls.from_dict(read_json(path), Path(path).parent)


def row_seeds(seed: int, count: int) -> list[int]:
    """Independent per-row seeds by fixed splitting of the master seed."""
    children = np.random.SeedSequence(int(seed)).spawn(count)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]


def _thread_cap(n_rows: int) -> int:
    raw = os.environ.get("KRU_THREADS")
    cap = os.cpu_count() or 1
    if raw:
        try:
            cap = max(1, int(raw))
        except ValueError as exc:
            raise InvalidParameter(f"KRU_THREADS must be an integer, got {raw!r}") from exc
    return max(1, min(cap, n_rows))


def _run_row(cfg: ExperimentConfig, N: int, seed: int) -> dict:
    beta = cfg.beta_schedule(N)
    row = {k: float("nan") for k in ROW_FIELDS}
    row.update(N=N, beta=beta, atoms=-1, iterations=-1, stop_reason="", status="ok", error="")
    try:
        params = RegParams(alpha=cfg.alpha, beta=beta, p=cfg.p)
        data = generate_dataset(cfg.teacher, cfg.activation, N, cfg.noise_std,
                                cfg.input_distribution, seed)
        prob = Problem(data, cfg.activation, "squared", params, space=cfg.teacher.space)
        rep = conditional_gradient_solve(prob, cfg.max_outer, seed=seed % (2 ** 32))
        mu = rep.measure
        row.update(
            kru_distance_to_reference=kru_distance(mu, cfg.teacher),
            uniform_error_R=uniform_error(mu, cfg.teacher, cfg.activation, cfg.radius_R,
                                          int(cfg.grid_size)),
            solution_norm=g_alpha_beta(mu, params),
            teacher_norm=g_alpha_beta(cfg.teacher, params),
            objective=objective(mu, prob),
            atoms=mu.size, iterations=rep.iterations, stop_reason=rep.stop_reason)
    except Exception as exc:  # a failed row is recorded and the sweep continues
        row.update(status="failed", error=f"{type(exc).__name__}: {exc}")
    return row


def large_data_experiment(config: ExperimentConfig) -> list[dict]:
    """Run the sweep and, when ``output_dir`` is set, persist ``large_data.csv``.

    Rows are returned in ``N_grid`` order whatever the thread count, so the CSV
    is byte-identical across runs; the timestamp lives only in the metadata JSON.
    """
    seeds = row_seeds(config.seed, len(config.N_grid))
    workers = _thread_cap(len(config.N_grid))
    start = _dt.datetime.now(tz=_dt.timezone.utc)
    if workers == 1:
        rows = [_run_row(config, N, s) for N, s in zip(config.N_grid, seeds)]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(lambda a: _run_row(config, *a), zip(config.N_grid, seeds)))
    if config.output_dir is not None:
        out = Path(config.output_dir)
        write_csv(out / "large_data.csv", ROW_FIELDS, ([r[k] for k in ROW_FIELDS] for r in rows))
        write_json(out / "large_data_meta.json", {
            "metadata": {"started": start.isoformat(), "threads": workers},
            "seed": int(config.seed),
            "row_seeds": seeds,
            "beta_schedule": {"kind": config.beta_schedule.kind, "c": config.beta_schedule.c,
                              "gamma": config.beta_schedule.gamma},
        })
    return rows
