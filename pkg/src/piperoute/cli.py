"""``piperoute`` command line.

Exit status: 0 success, 1 usage error, 2 data error (bad or missing files,
invalid scenes, failed routing).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .bench import METHODS, BenchSettings, run_benchmark
from .environment import SceneError, build_octree, load_point_cloud
from .export import FORMATS, load_path, render_path
from .learner import TrainConfig, finetune, greedy_path, load_checkpoint, save_checkpoint, train
from .potential import PotentialTable
from .routing_env import EnvConfig, RoutingEnv, evaluate_path
from .scene import Scene, build_scene_table, load_scene

log = logging.getLogger("piperoute")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _write(out: str | None, text: str) -> None:
    if out is None or out == "-":
        sys.stdout.write(text)
    else:
        Path(out).write_text(text)


def _dumps(doc) -> str:
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def _scene_and_table(args) -> tuple[Scene, PotentialTable]:
    scene = load_scene(args.scene)
    if getattr(args, "table", None):
        table = PotentialTable.load(args.table)
    else:
        table = build_scene_table(scene)
    return scene, table


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def cmd_voxelize(args) -> int:
    cloud = load_point_cloud(args.cloud)
    oct_ = build_octree(cloud, args.depth)
    r = oct_.root
    doc = {
        "cloud": str(args.cloud),
        "n_points": int(len(cloud)),
        "max_depth": oct_.max_depth,
        "root": {"z": [r.z_lo, r.z_hi], "rho": [r.rho_lo, r.rho_hi], "theta": [r.theta_lo, r.theta_hi]},
        "occupied_leaves": oct_.n_leaves,
        "nodes_per_depth": [int(n) for n in oct_.nodes_per_depth],
        "occupied_volume_mm3": oct_.occupied_volume(),
    }
    _write(args.out, _dumps(doc))
    return EXIT_OK


def cmd_build_table(args) -> int:
    scene = load_scene(args.scene)
    table = build_scene_table(scene)
    table.save(args.out)
    log.info("table %s dims=%s written to %s", scene.name, table.dims, args.out)
    return EXIT_OK


def _history_csv(result) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["episode", "return", "running_max", "steps", "success", "clean", "length_mm", "violations"])
    for rec, rm in zip(result.records, result.running_max):
        length = "" if np.isnan(rec.length) else repr(rec.length)
        w.writerow([rec.episode, repr(rec.ret), repr(rm), rec.steps, int(rec.success), int(rec.clean), length, rec.violations])
    return buf.getvalue()


def _finish_training(args, scene, task, result, config) -> int:
    save_checkpoint(args.out, result.learner, config, result.episodes_run, result.rng_state)
    if args.history:
        Path(args.history).write_text(f"# seed={config.seed} task={task.name}\n" + _history_csv(result))
    if args.path_out and result.best_path is not None:
        meta = {"task": task.name, "seed": config.seed, "method": "slpr"}
        Path(args.path_out).write_text(render_path(result.best_path, "json", meta=meta))
    summary = {
        "task": task.name,
        "seed": config.seed,
        "episodes": result.episodes_run,
        "first_success": result.first_success,
        "first_clean": result.first_clean,
        "best": result.best_metrics.to_dict() if result.best_metrics else None,
    }
    sys.stdout.write(_dumps(summary))
    return EXIT_OK


def cmd_train(args) -> int:
    scene, table = _scene_and_table(args)
    task = scene.task(args.task)
    config = TrainConfig(seed=args.seed, episodes=args.episodes)
    result = train(lambda: RoutingEnv(task, table, scene.space, EnvConfig()), config)
    return _finish_training(args, scene, task, result, config)


def cmd_finetune(args) -> int:
    if not Path(args.checkpoint).is_file():
        raise DataError(f"checkpoint not found: {args.checkpoint}")
    learner, saved, _ = load_checkpoint(args.checkpoint)
    scene, table = _scene_and_table(args)
    task = scene.task(args.task)
    config = TrainConfig(**{**saved.__dict__, "seed": args.seed})
    result = finetune(learner, lambda: RoutingEnv(task, table, scene.space, EnvConfig()), config, args.episodes)
    return _finish_training(args, scene, task, result, config)


def cmd_route(args) -> int:
    if not Path(args.checkpoint).is_file():
        raise DataError(f"checkpoint not found: {args.checkpoint}")
    learner, config, _ = load_checkpoint(args.checkpoint)
    scene, table = _scene_and_table(args)
    task = scene.task(args.task)
    state = greedy_path(RoutingEnv(task, table, scene.space, EnvConfig()), learner)
    if not state.success:
        raise DataError(f"policy in {args.checkpoint} did not reach the target of task {task.name!r}")
    meta = {"task": task.name, "checkpoint": Path(args.checkpoint).name, "seed": config.seed}
    _write(args.out, render_path(state.path, args.format, args.dl, meta))
    return EXIT_OK


def cmd_eval(args) -> int:
    path, _ = load_path(args.path)
    if args.table:
        table = PotentialTable.load(args.table)
    elif args.scene:
        table = build_scene_table(load_scene(args.scene))
    else:
        raise UsageError("eval needs --scene or --table")
    m = evaluate_path(path, table, args.dl)
    _write(args.out, _dumps(m.to_dict()))
    return EXIT_OK


def cmd_bench(args) -> int:
    scene = load_scene(args.scene)
    methods = _method_list(args.method)
    seeds = args.seed if args.seed else [0]
    settings = BenchSettings(args.episodes, args.iterations, timing=args.timing, workers=args.workers)
    report = run_benchmark(scene, methods, seeds, settings, Path(args.out))
    sys.stdout.write(report.to_csv())
    return EXIT_OK


def _method_list(values) -> list[str]:
    """Repeated and comma-separated ``--method`` values; ``--method ""`` selects none."""
    if values is None:
        return list(METHODS)
    names = [m.strip() for v in values for m in v.split(",") if m.strip()]
    for m in names:
        if m not in METHODS:
            raise UsageError(f"unknown method {m!r}; choose from {', '.join(METHODS)}")
    return names


def cmd_export(args) -> int:
    path, meta = load_path(args.path)
    _write(args.out, render_path(path, args.format, args.dl, meta or None))
    return EXIT_OK


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="piperoute", description="Pipe routing in an annular layout space.")
    sub = p.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    def scene_args(sp, table=True):
        sp.add_argument("--scene", required=True, help="scene JSON file")
        if table:
            sp.add_argument("--table", help="prebuilt potential table (skips rebuilding)")

    v = sub.add_parser("voxelize", help="octree statistics for a point cloud")
    v.add_argument("--cloud", required=True, help="xyz text or ASCII PLY file")
    v.add_argument("--depth", type=int, default=5)
    v.add_argument("--out")
    v.set_defaults(func=cmd_voxelize)

    b = sub.add_parser("build-table", help="write the potential table binary for a scene")
    scene_args(b, table=False)
    b.add_argument("--out", required=True)
    b.set_defaults(func=cmd_build_table)

    for name, func, help_ in (("train", cmd_train, "train a routing policy"), ("finetune", cmd_finetune, "adapt a trained policy to a changed scene")):
        t = sub.add_parser(name, help=help_)
        scene_args(t)
        t.add_argument("--task", default="0", help="task name or index")
        t.add_argument("--seed", type=int, default=0)
        t.add_argument("--episodes", type=int, default=5000 if name == "train" else 100)
        t.add_argument("--out", required=True, help="checkpoint JSON to write")
        t.add_argument("--history", help="per-episode CSV")
        t.add_argument("--path-out", help="best finalized path JSON")
        if name == "finetune":
            t.add_argument("--checkpoint", required=True)
        t.set_defaults(func=func)

    r = sub.add_parser("route", help="greedy rollout of a checkpoint, exported as a path")
    scene_args(r)
    r.add_argument("--checkpoint", required=True)
    r.add_argument("--task", default="0")
    r.add_argument("--format", choices=FORMATS, default="json")
    r.add_argument("--dl", type=float, default=5.0)
    r.add_argument("--out")
    r.set_defaults(func=cmd_route)

    e = sub.add_parser("eval", help="metrics of a path against a table")
    e.add_argument("--path", required=True)
    e.add_argument("--scene")
    e.add_argument("--table")
    e.add_argument("--dl", type=float, default=5.0)
    e.add_argument("--out")
    e.set_defaults(func=cmd_eval)

    be = sub.add_parser("bench", help="compare methods on every scene task")
    scene_args(be, table=False)
    be.add_argument("--method", action="append", help=f"one of {', '.join(METHODS)}; repeatable or comma-separated (default: all)")
    be.add_argument("--seed", type=int, action="append")
    be.add_argument("--episodes", type=int, default=5000)
    be.add_argument("--iterations", type=int, default=1000)
    be.add_argument("--workers", type=int, default=1)
    be.add_argument("--timing", action="store_true", help="record wall-clock seconds (reports stop being byte-reproducible)")
    be.add_argument("--out", required=True, help="output directory")
    be.set_defaults(func=cmd_bench)

    x = sub.add_parser("export", help="convert a path JSON to CSV or line-object text")
    x.add_argument("--path", required=True)
    x.add_argument("--format", choices=FORMATS, required=True)
    x.add_argument("--dl", type=float, default=5.0)
    x.add_argument("--out")
    x.set_defaults(func=cmd_export)
    return p


def _configure_logging() -> None:
    level = os.environ.get("PIPEROUTE_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


def main(argv=None) -> int:
    _configure_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if getattr(args, "workers", 1) < 1:
            raise UsageError("--workers must be at least 1")
        return args.func(args)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (DataError, SceneError, FileNotFoundError, ValueError, OSError, json.JSONDecodeError) as exc:
        print(f"piperoute: error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
