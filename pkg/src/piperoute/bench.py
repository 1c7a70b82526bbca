"""Benchmark harness: run routing methods over scene tasks and tabulate path metrics."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .export import path_to_json
from .geometry import NurbsPath
from .learner import TrainConfig, train
from .potential import PotentialTable
from .qpso import SwarmConfig, optimize
from .routing_env import EnvConfig, RoutingEnv, evaluate_path
from .scene import Scene, build_scene_table

log = logging.getLogger(__name__)

METHODS = ("slpr", "qpso")
REPORT_SCHEMA = "piperoute-bench/1"
CSV_COLUMNS = (
    "task", "method", "seed", "success", "length_mm", "avg_potential",
    "violation_points", "n_control_points", "time_s",
)


@dataclass(frozen=True)
class BenchSettings:
    episodes: int = 5000
    iterations: int = 1000
    swarm_size: int = 30
    timing: bool = False
    workers: int = 1


@dataclass
class BenchRow:
    task: str
    method: str
    seed: int
    completed: bool
    success: bool
    length_mm: float = math.nan
    avg_potential: float = math.nan
    violation_points: int = -1
    n_control_points: int = -1
    time_s: Optional[float] = None
    path_file: Optional[str] = None
    error: Optional[str] = None

    def csv_values(self) -> list[str]:
        def num(x):
            return "" if x is None or (isinstance(x, float) and math.isnan(x)) else repr(float(x))

        return [
            self.task, self.method, str(self.seed), str(int(self.success)),
            num(self.length_mm), num(self.avg_potential),
            str(self.violation_points) if self.completed else "",
            str(self.n_control_points) if self.completed else "",
            num(self.time_s),
        ]

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        for k in ("length_mm", "avg_potential"):
            if isinstance(d[k], float) and math.isnan(d[k]):
                d[k] = None
        return d


@dataclass
class BenchReport:
    scene: str
    seeds: list[int]
    methods: list[str]
    rows: list[BenchRow] = field(default_factory=list)
    table_build_s: Optional[float] = None

    def aggregates(self) -> dict:
        out = {}
        n_tasks = len({r.task for r in self.rows})
        for m in self.methods:
            rows = [r for r in self.rows if r.method == m]
            done = [r for r in rows if r.completed]

            def mean(key):
                vals = [getattr(r, key) for r in done]
                return float(np.mean(vals)) if vals else None

            times = [r.time_s for r in rows if r.time_s is not None]
            out[m] = {
                "runs": len(rows),
                "completed": len(done),
                "successes": sum(r.success for r in rows),
                "tasks": n_tasks,
                "mean_length_mm": mean("length_mm"),
                "mean_avg_potential": mean("avg_potential"),
                "mean_violation_points": mean("violation_points"),
                "mean_n_control_points": mean("n_control_points"),
                "mean_time_s": float(np.mean(times)) if times else None,
            }
        return out

    def header(self) -> str:
        return f"piperoute bench scene={self.scene} seeds={','.join(map(str, self.seeds))}"

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write(f"# {self.header()}\n")
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow(r.csv_values())
        return buf.getvalue()

    def to_json(self) -> str:
        doc = {
            "schema": REPORT_SCHEMA,
            "scene": self.scene,
            "seeds": self.seeds,
            "methods": self.methods,
            "table_build_s": self.table_build_s,
            "rows": [r.to_dict() for r in self.rows],
            "aggregates": self.aggregates(),
        }
        return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def run_slpr(env: RoutingEnv, seed: int, episodes: int) -> Optional[NurbsPath]:
    result = train(lambda: env, TrainConfig(seed=seed, episodes=episodes))
    return result.best_path


def run_qpso(scene_table: PotentialTable, env: RoutingEnv, seed: int, settings: BenchSettings) -> NurbsPath:
    cfg = SwarmConfig(swarm_size=settings.swarm_size, iterations=settings.iterations, seed=seed)
    return optimize(env.task, scene_table, cfg).path


def _run_job(args) -> tuple[BenchRow, Optional[str]]:
    scene, table, task_idx, method, seed, settings = args
    task = scene.tasks[task_idx]
    name = task.name or str(task_idx)
    env = RoutingEnv(task, table, scene.space, EnvConfig())
    t0 = time.perf_counter()
    try:
        if method == "slpr":
            path = run_slpr(env, seed, settings.episodes)
        elif method == "qpso":
            path = run_qpso(table, env, seed, settings)
        else:
            raise ValueError(f"unknown method {method!r}")
    except Exception as exc:  # a failed method is recorded, the run continues
        log.warning("%s on task %s seed %d failed: %s", method, name, seed, exc)
        return BenchRow(name, method, seed, False, False, error=str(exc)), None
    elapsed = time.perf_counter() - t0 if settings.timing else None
    if path is None:
        return BenchRow(name, method, seed, False, False, time_s=elapsed), None
    m = evaluate_path(path, table, env.config.dl)
    row = BenchRow(
        name, method, seed, True, m.violation_count == 0, m.length, m.avg_potential,
        m.violation_count, m.n_control_points, elapsed,
    )
    meta = {"task": name, "method": method, "seed": seed}
    return row, path_to_json(path, meta)


def run_benchmark(
    scene: Scene,
    methods,
    seeds,
    settings: BenchSettings = BenchSettings(),
    out_dir: Path | None = None,
    table: PotentialTable | None = None,
) -> BenchReport:
    """Every (task, method, seed) combination; optional CSV/JSON/path files in ``out_dir``."""
    methods = list(methods)
    seeds = [int(s) for s in seeds]
    for m in methods:
        if m not in METHODS:
            raise ValueError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
    report = BenchReport(scene.name, seeds, methods)
    if table is None:
        t0 = time.perf_counter()
        table = build_scene_table(scene)
        if settings.timing:
            report.table_build_s = time.perf_counter() - t0
    jobs = [(scene, table, ti, m, s, settings) for ti in range(len(scene.tasks)) for m in methods for s in seeds]
    if settings.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(settings.workers) as pool:
            results = list(pool.map(_run_job, jobs))
    else:
        results = [_run_job(j) for j in jobs]
    if out_dir is not None:
        out_dir = Path(out_dir)
        (out_dir / "paths").mkdir(parents=True, exist_ok=True)
    for row, text in results:
        if out_dir is not None and text is not None:
            rel = f"paths/{row.task}_{row.method}_seed{row.seed}.json"
            (out_dir / rel).write_text(text)
            row.path_file = rel
        report.rows.append(row)
    if out_dir is not None:
        (out_dir / "report.csv").write_text(report.to_csv())
        (out_dir / "report.json").write_text(report.to_json())
    return report
