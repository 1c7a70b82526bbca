"""Quantum-behaved particle swarm baseline for pipe routing.

A particle holds ten free control points as ``(x, y, z, w)`` quadruples; the
weight channel is decoded through ``exp`` so every weight is positive.  The
decoded curve is clamped at both ends between the start and target port
points.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .geometry import NurbsPath, sample_with_length
from .potential import PotentialTable
from .routing_env import DEGREE, REWARD_WEIGHTS, RoutingTask, score_samples

N_FREE = 10
PARTICLE_DIM = 4 * N_FREE
# beyond this the rational curve degenerates numerically
MAX_LOG_WEIGHT = 30.0


@dataclass(frozen=True)
class SwarmConfig:
    swarm_size: int = 30
    iterations: int = 1000
    beta_start: float = 1.0
    beta_end: float = 0.5
    seed: int = 0
    dl: float = 5.0

    def __post_init__(self):
        if self.swarm_size < 2:
            raise ValueError("swarm_size must be at least 2")
        if self.iterations < 1:
            raise ValueError("iterations must be at least 1")

    def beta(self, it: int) -> float:
        if self.iterations == 1:
            return self.beta_start
        return self.beta_start + (self.beta_end - self.beta_start) * it / (self.iterations - 1)


@dataclass
class Swarm:
    positions: np.ndarray
    fitness: np.ndarray
    pbest: np.ndarray
    pbest_fitness: np.ndarray

    @property
    def gbest_index(self) -> int:
        return int(np.argmin(self.pbest_fitness))

    @property
    def gbest(self) -> np.ndarray:
        return self.pbest[self.gbest_index]

    @property
    def gbest_fitness(self) -> float:
        return float(self.pbest_fitness[self.gbest_index])


def decode_particle(particle, task: RoutingTask) -> NurbsPath:
    """16-point clamped cubic: three start points, ten free points, three target points."""
    q = np.asarray(particle, dtype=float).reshape(N_FREE, 4)
    P = np.concatenate([task.start_points, q[:, :3], task.target_points])
    w = np.concatenate([np.ones(3), np.exp(q[:, 3]), np.ones(3)])
    return NurbsPath.build(P, w, DEGREE, "clamped_both")


def path_fitness(path: NurbsPath, table: PotentialTable, dl: float = 5.0, weights=REWARD_WEIGHTS) -> float:
    lo, hi = path.domain
    pts, _, length = sample_with_length(path, lo, hi, dl)
    neg_sum, tendency, _ = score_samples(table.query(pts), table)
    return weights[1] * length - weights[2] * neg_sum - weights[3] * tendency


def fitness(particle, task: RoutingTask, table: PotentialTable, dl: float = 5.0) -> float:
    """Lower is better: length, violation depth and distance from the best potential.

    Particles whose weights overflow or underflow to a non-decodable curve score ``inf``.
    """
    w = np.asarray(particle, dtype=float).reshape(N_FREE, 4)[:, 3]
    if not np.all(np.abs(w) < MAX_LOG_WEIGHT):
        return float("inf")
    with np.errstate(all="ignore"):
        f = path_fitness(decode_particle(particle, task), table, dl)
    return f if np.isfinite(f) else float("inf")


def _coarse_length(path: NurbsPath, per_span: int = 4) -> float:
    """Inscribed polyline length; never exceeds the true arc length."""
    lo, hi = path.domain
    pts = path.evaluate_dense(np.linspace(lo, hi, per_span * int(round(hi - lo)) + 1))
    return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())


class RoutingObjective:
    """Particle fitness for one task, with an optional early exit.

    Called as ``objective(particle, cutoff)``, it may return any value
    ``>= cutoff`` instead of the exact fitness once a cheap lower bound
    (length term only, the potential terms are non-negative) reaches the
    cutoff.  The swarm only compares against personal bests, so pruned
    evaluations never change its trajectory.
    """

    bounded = True

    def __init__(self, task: RoutingTask, table: PotentialTable, dl: float = 5.0):
        self.task, self.table, self.dl = task, table, dl

    def __call__(self, particle, cutoff: float = float("inf")) -> float:
        if np.isfinite(cutoff):
            w = np.asarray(particle, dtype=float).reshape(N_FREE, 4)[:, 3]
            if not np.all(np.abs(w) < MAX_LOG_WEIGHT):
                return float("inf")
            with np.errstate(all="ignore"):
                bound = REWARD_WEIGHTS[1] * _coarse_length(decode_particle(particle, self.task))
            if np.isfinite(bound) and bound >= cutoff:
                return bound
        return fitness(particle, self.task, self.table, self.dl)


def init_swarm(objective: Callable[[np.ndarray], float], lower, upper, n: int, rng: np.random.Generator) -> Swarm:
    lower = np.asarray(lower, dtype=float)
    upper = np.asarray(upper, dtype=float)
    x = lower + (upper - lower) * rng.random((n, len(lower)))
    f = np.array([objective(p) for p in x])
    return Swarm(x, f, x.copy(), f.copy())


def qpso_step(swarm: Swarm, beta: float, rng: np.random.Generator, objective: Callable[[np.ndarray], float]) -> Swarm:
    """One mean-best attractor update followed by re-evaluation.

    With a ``bounded`` objective, ``fitness`` entries of particles that did not
    improve on their personal best may hold a lower bound instead of the exact value.
    """
    x = swarm.positions
    n, d = x.shape
    mbest = swarm.pbest.mean(axis=0)
    phi = rng.random((n, d))
    attractor = phi * swarm.pbest + (1.0 - phi) * swarm.gbest
    u = 1.0 - rng.random((n, d))  # (0, 1]
    sign = np.where(rng.random((n, d)) < 0.5, -1.0, 1.0)
    new_x = attractor + sign * beta * np.abs(mbest - x) * np.log(1.0 / u)
    if getattr(objective, "bounded", False):
        new_f = np.array([objective(p, c) for p, c in zip(new_x, swarm.pbest_fitness)])
    else:
        new_f = np.array([objective(p) for p in new_x])
    better = new_f < swarm.pbest_fitness
    pbest = np.where(better[:, None], new_x, swarm.pbest)
    pbest_f = np.where(better, new_f, swarm.pbest_fitness)
    return Swarm(new_x, new_f, pbest, pbest_f)


def minimize(objective, lower, upper, config: SwarmConfig = SwarmConfig(), rng: np.random.Generator | None = None):
    """Generic QPSO minimiser; returns ``(best_position, best_fitness, trace)``."""
    rng = np.random.default_rng(config.seed) if rng is None else rng
    swarm = init_swarm(objective, lower, upper, config.swarm_size, rng)
    trace = []
    for it in range(config.iterations):
        swarm = qpso_step(swarm, config.beta(it), rng, objective)
        trace.append(swarm.gbest_fitness)
    return swarm.gbest.copy(), swarm.gbest_fitness, np.array(trace)


def search_bounds(table: PotentialTable) -> tuple[np.ndarray, np.ndarray]:
    """Cartesian bounding box of the table with ``w`` channels in [-1, 1]."""
    n_z, n_r, _ = table.dims
    r_out = table.rho_min + n_r * table.s
    z_hi = table.z_min + n_z * table.s
    lo = np.tile([-r_out, -r_out, table.z_min, -1.0], N_FREE)
    hi = np.tile([r_out, r_out, z_hi, 1.0], N_FREE)
    return lo, hi


@dataclass(frozen=True)
class QpsoResult:
    path: NurbsPath
    particle: np.ndarray
    fitness: float
    trace: np.ndarray


def optimize(task: RoutingTask, table: PotentialTable, config: SwarmConfig = SwarmConfig(), rng: np.random.Generator | None = None) -> QpsoResult:
    lo, hi = search_bounds(table)
    best, f, trace = minimize(RoutingObjective(task, table, config.dl), lo, hi, config, rng)
    return QpsoResult(decode_particle(best, task), best, f, trace)


def sphere(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(np.dot(x, x))


__all__ = [
    "SwarmConfig", "Swarm", "RoutingObjective", "QpsoResult", "decode_particle", "fitness", "path_fitness", "qpso_step",
    "minimize", "optimize", "search_bounds", "sphere", "init_swarm", "PARTICLE_DIM",
]
