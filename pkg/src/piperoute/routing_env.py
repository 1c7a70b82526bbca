"""Sequential pipe-routing MDP on an open cubic NURBS curve.

An episode starts from three forced control points leaving the start port
along its normal.  Every action appends one control point (a displacement
from the previous one plus a weight); the open-end knot vector then grows by
one span, so each step lays exactly one new curve segment.  Once the curve
end comes within ``d_max`` of the target's approach point the three target
port points are appended and the curve is clamped shut.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .environment import LayoutSpace
from .geometry import NurbsPath, knot_vector, local_frame, sample_with_length
from .potential import PotentialTable

DEGREE = 3
N_FORCED = 6
OBS_DIM = 16
ACT_DIM = 4

# Table 1 reward weights for (progress, length, violation, tendency, success)
REWARD_WEIGHTS = (0.01, 0.002, 0.05, 1.0, 10.0)


class TaskError(ValueError):
    """Routing task that cannot be set up in the layout space."""


class EpisodeError(RuntimeError):
    """Operation not allowed in the current episode state."""


def _unit(v, what: str) -> np.ndarray:
    v = np.asarray(v, dtype=float).reshape(3)
    n = np.linalg.norm(v)
    if not np.isfinite(n) or n == 0.0:
        raise TaskError(f"{what} must be a non-zero vector")
    if abs(n - 1.0) > 1e-6:
        raise TaskError(f"{what} must be a unit vector (norm {n:.6g})")
    return v / n


@dataclass(frozen=True)
class RoutingTask:
    """Start and target ports.  ``target_normal`` points into the target port."""

    start: np.ndarray
    start_normal: np.ndarray
    target: np.ndarray
    target_normal: np.ndarray
    diameter: float
    name: str = ""

    def __post_init__(self):
        object.__setattr__(self, "start", np.asarray(self.start, dtype=float).reshape(3))
        object.__setattr__(self, "target", np.asarray(self.target, dtype=float).reshape(3))
        object.__setattr__(self, "start_normal", _unit(self.start_normal, "start_normal"))
        object.__setattr__(self, "target_normal", _unit(self.target_normal, "target_normal"))
        if not self.diameter > 0:
            raise TaskError("pipe diameter must be positive")
        if np.allclose(self.start, self.target):
            raise TaskError("start and target coincide")

    @property
    def start_points(self) -> np.ndarray:
        """``P_s, P_0, P_1``."""
        d, n = self.diameter, self.start_normal
        return np.stack([self.start, self.start + d * n, self.start + 2 * d * n])

    @property
    def target_points(self) -> np.ndarray:
        """``P_{t-2}, P_{t-1}, P_t``."""
        d, n = self.diameter, self.target_normal
        return np.stack([self.target - 2 * d * n, self.target - d * n, self.target])

    @property
    def approach_point(self) -> np.ndarray:
        return self.target - 2 * self.diameter * self.target_normal

    @property
    def span(self) -> float:
        return float(np.linalg.norm(self.target - self.start))

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "start": self.start.tolist(),
            "start_normal": self.start_normal.tolist(),
            "target": self.target.tolist(),
            "target_normal": self.target_normal.tolist(),
            "diameter": self.diameter,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RoutingTask":
        return cls(
            np.asarray(d["start"], dtype=float),
            np.asarray(d["start_normal"], dtype=float),
            np.asarray(d["target"], dtype=float),
            np.asarray(d["target_normal"], dtype=float),
            float(d["diameter"]),
            d.get("name", ""),
        )


@dataclass(frozen=True)
class EnvConfig:
    max_steps: int = 20
    d_max: float = 100.0
    dl: float = 5.0
    a_max: float = 200.0
    ray_max: float = 500.0
    reward_weights: tuple[float, ...] = REWARD_WEIGHTS


@dataclass(frozen=True)
class EpisodeState:
    control_points: np.ndarray
    weights: np.ndarray
    agent_pos: np.ndarray
    step_index: int = 0
    prev_domain_end: float = 0.0
    done: bool = False
    success: bool = False
    path: Optional[NurbsPath] = None

    @property
    def n_agent_points(self) -> int:
        return len(self.control_points) - 3


@dataclass(frozen=True)
class StepOutcome:
    reward: float
    components: tuple[float, float, float, float, float]
    done: bool
    success: bool
    segment_length: float = 0.0
    n_violations: int = 0


@dataclass(frozen=True)
class PathMetrics:
    length: float
    avg_potential: float
    violation_count: int
    n_control_points: int

    def to_dict(self) -> dict:
        return {
            "length_mm": self.length,
            "avg_potential": self.avg_potential,
            "violation_points": self.violation_count,
            "n_control_points": self.n_control_points,
        }


# ---------------------------------------------------------------------------


def init_episode(task: RoutingTask, space: LayoutSpace | None = None, table: PotentialTable | None = None) -> EpisodeState:
    """Fresh episode: control points ``[P_s, P_0, P_1]`` with unit weights."""
    forced = np.concatenate([task.start_points[1:], task.target_points[:2]])
    if space is not None:
        ok = space.contains_cart(forced)
    elif table is not None:
        ok = table.indices(forced)[3]
    else:
        ok = np.ones(len(forced), dtype=bool)
    if not np.all(ok):
        bad = forced[np.argmin(ok)]
        raise TaskError(f"forced port point {np.round(bad, 3).tolist()} lies outside the layout space")
    pts = task.start_points
    return EpisodeState(pts.copy(), np.ones(3), pts[2].copy())


def decode_action(action, config: EnvConfig) -> tuple[np.ndarray, float]:
    a = np.asarray(action, dtype=float).reshape(ACT_DIM)
    if np.any(np.abs(a) > 1.0 + 1e-9) or not np.all(np.isfinite(a)):
        raise ValueError("action components must lie in [-1, 1]")
    return a[:3] * config.a_max, float(math.exp(a[3]))


def _ray_directions(p) -> np.ndarray:
    e_r, e_t, e_z = local_frame(p)
    s = 1.0 / math.sqrt(2.0)
    return np.stack(
        [e_r, -e_r, e_t, -e_t, e_z, -e_z, s * (e_t + e_z), s * (e_t - e_z), s * (-e_t + e_z), s * (-e_t - e_z)]
    )


def ray_distances(p, dirs, table: PotentialTable, r_max: float) -> np.ndarray:
    """Marched distance along each direction to the first negative cell."""
    p = np.asarray(p, dtype=float)
    dirs = np.atleast_2d(np.asarray(dirs, dtype=float))
    step = table.s / 2.0
    ts = np.arange(0.0, r_max + 1e-9, step)
    pts = p[None, None, :] + ts[None, :, None] * dirs[:, None, :]
    neg = table.query(pts.reshape(-1, 3)).reshape(len(dirs), len(ts)) < 0.0
    hit = neg.any(axis=1)
    first = ts[np.argmax(neg, axis=1)]
    return np.where(hit, np.minimum(first, r_max), r_max)


def ray_distance(p, direction, table: PotentialTable, r_max: float = 500.0) -> float:
    return float(ray_distances(p, np.asarray(direction, dtype=float)[None, :], table, r_max)[0])


def _scales(table: PotentialTable) -> tuple[np.ndarray, np.ndarray]:
    n_z, n_r, _ = table.dims
    half_z = 0.5 * n_z * table.s
    r_out = table.rho_min + n_r * table.s
    centre = np.array([0.0, 0.0, table.z_min + half_z])
    return centre, np.array([r_out, r_out, half_z])


def observe(state: EpisodeState, task: RoutingTask, table: PotentialTable, config: EnvConfig = EnvConfig()) -> np.ndarray:
    """16-vector: scaled position, scaled offset to target, ten ray distances."""
    centre, scale = _scales(table)
    pos = (state.agent_pos - centre) / scale
    to_target = (task.target - state.agent_pos) / scale
    rays = ray_distances(state.agent_pos, _ray_directions(state.agent_pos), table, config.ray_max) / config.ray_max
    return np.concatenate([pos, to_target, rays])


def score_samples(potentials: np.ndarray, table: PotentialTable) -> tuple[float, float, int]:
    """(violation sum, tendency term, violation count) of sampled potentials."""
    neg = potentials < 0.0
    r3 = float(potentials[neg].sum())
    ok = potentials[~neg]
    r4 = float(ok.mean() - table.max_value) if len(ok) else 0.0
    return r3, r4, int(neg.sum())


def progress_reward(approach, old_pos, new_pos) -> float:
    """Reduction in distance to the approach point."""
    approach = np.asarray(approach, dtype=float)
    return float(np.linalg.norm(approach - np.asarray(old_pos, dtype=float)) - np.linalg.norm(approach - np.asarray(new_pos, dtype=float)))


def success_reward(distance: float, d_max: float) -> float:
    return 1.0 if distance <= d_max else 0.0


def weighted_reward(components, weights=REWARD_WEIGHTS) -> float:
    if len(components) != len(weights):
        raise ValueError("need one weight per reward component")
    return float(sum(m * r for m, r in zip(weights, components)))


def _segment(path: NurbsPath, u_a: float, u_b: float, table: PotentialTable, dl: float):
    pts, _, length = sample_with_length(path, u_a, u_b, dl)
    return length, table.query(pts)


def close_path(control_points, weights, task: RoutingTask) -> NurbsPath:
    P = np.concatenate([control_points, task.target_points])
    w = np.concatenate([weights, np.ones(3)])
    return NurbsPath.build(P, w, DEGREE, "clamped_both")


def step(state: EpisodeState, action, task: RoutingTask, table: PotentialTable, config: EnvConfig = EnvConfig()):
    """Apply one action; returns ``(new_state, StepOutcome)``."""
    if state.done:
        raise EpisodeError("episode already finished")
    delta, w_new = decode_action(action, config)
    P = np.concatenate([state.control_points, (state.control_points[-1] + delta)[None, :]])
    w = np.append(state.weights, w_new)
    path = NurbsPath(P, w, knot_vector(len(P), DEGREE, "open_end"), DEGREE, "open_end")
    u_end = path.domain[1]
    length, pot = _segment(path, state.prev_domain_end, u_end, table, config.dl)
    new_pos = path.evaluate_dense(np.array([u_end]))[0]

    approach = task.approach_point
    r1 = progress_reward(approach, state.agent_pos, new_pos)
    r2 = -length
    r3, r4, n_bad = score_samples(pot, table)
    r5 = success_reward(float(np.linalg.norm(approach - new_pos)), config.d_max)
    success = r5 == 1.0

    final = None
    if success:
        final = close_path(P, w, task)
        lo, hi = final.domain
        # the closed curve coincides with the open one up to u_end
        c_len, c_pot = _segment(final, u_end, hi, table, config.dl)
        c3, c4, c_bad = score_samples(c_pot, table)
        r2 -= c_len
        r3 += c3
        r4 += c4
        n_bad += c_bad
        length += c_len

    idx = state.step_index + 1
    done = success or idx >= config.max_steps
    comps = (r1, r2, r3, r4, r5)
    reward = weighted_reward(comps, config.reward_weights)
    new_state = EpisodeState(P, w, new_pos, idx, u_end, done, success, final)
    return new_state, StepOutcome(reward, comps, done, success, length, n_bad)


def finalize_path(state: EpisodeState, task: RoutingTask) -> NurbsPath:
    """Closed curve through the target port; only valid after success."""
    if not state.success:
        raise EpisodeError("target not reached; nothing to finalize")
    if state.path is not None:
        return state.path
    return close_path(state.control_points, state.weights, task)


def evaluate_path(path: NurbsPath, table: PotentialTable, dl: float = 5.0, n_forced: int = N_FORCED) -> PathMetrics:
    lo, hi = path.domain
    pts, _, length = sample_with_length(path, lo, hi, dl)
    pot = table.query(pts)
    ok = pot[pot >= 0.0]
    return PathMetrics(
        length=float(length),
        avg_potential=float(ok.mean()) if len(ok) else 0.0,
        violation_count=int(np.sum(pot < 0.0)),
        n_control_points=path.n_ctrl - n_forced,
    )


# ---------------------------------------------------------------------------


@dataclass
class RoutingEnv:
    """Stateful wrapper around the pure episode functions."""

    task: RoutingTask
    table: PotentialTable
    space: Optional[LayoutSpace] = None
    config: EnvConfig = field(default_factory=EnvConfig)
    state: Optional[EpisodeState] = field(default=None, init=False)

    def __post_init__(self):
        self._initial = init_episode(self.task, self.space, self.table)

    def reset(self) -> np.ndarray:
        self.state = self._initial
        return observe(self.state, self.task, self.table, self.config)

    def step(self, action):
        if self.state is None:
            raise EpisodeError("call reset() first")
        self.state, out = step(self.state, action, self.task, self.table, self.config)
        obs = observe(self.state, self.task, self.table, self.config)
        return obs, out.reward, out.done, out

    def with_table(self, table: PotentialTable, space: LayoutSpace | None = None) -> "RoutingEnv":
        return RoutingEnv(self.task, table, space or self.space, self.config)


def episode_rollout(env: RoutingEnv, policy) -> tuple[EpisodeState, list[StepOutcome]]:
    """Run one episode with ``policy(obs) -> action``."""
    obs = env.reset()
    outs = []
    done = False
    while not done:
        obs, _, done, out = env.step(policy(obs))
        outs.append(out)
    return env.state, outs


__all__ = [
    "RoutingTask", "EnvConfig", "EpisodeState", "StepOutcome", "PathMetrics", "RoutingEnv",
    "init_episode", "observe", "step", "finalize_path", "evaluate_path", "ray_distance",
    "ray_distances", "decode_action", "close_path", "score_samples", "episode_rollout",
    "progress_reward", "success_reward", "weighted_reward", "TaskError", "EpisodeError",
]
