"""Numpy actor-critic stack: MLPs with manual backprop, PPO, GAE and Adam.

The actor is a tanh-squashed diagonal Gaussian whose mean comes from an MLP
and whose log standard deviation is a free, state-independent vector.  The
critic is a separate MLP with a scalar output.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from .geometry import NurbsPath
from .routing_env import ACT_DIM, OBS_DIM, PathMetrics, RoutingEnv, evaluate_path

log = logging.getLogger(__name__)

LOG_STD_MIN, LOG_STD_MAX = -5.0, 1.0
_LOG_2PI = math.log(2.0 * math.pi)
CHECKPOINT_SCHEMA = "piperoute-checkpoint/1"


# ---------------------------------------------------------------------------
# MLP
# ---------------------------------------------------------------------------


@dataclass
class Mlp:
    """Fully connected net with tanh hidden layers and a linear output."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @property
    def sizes(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def params(self) -> list[np.ndarray]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def forward(self, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.weights[0].shape[0]:
            raise ValueError(f"input dimension {x.shape[-1]} != {self.weights[0].shape[0]}")
        acts = [x]
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = h @ w + b
            if i < last:
                h = np.tanh(h)
            acts.append(h)
        return h, acts

    def __call__(self, x: np.ndarray) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, acts: list[np.ndarray], grad_out: np.ndarray) -> list[np.ndarray]:
        """Gradients of ``sum(grad_out * output)`` w.r.t. ``params()``."""
        grads: list[np.ndarray] = []
        g = grad_out
        for i in range(len(self.weights) - 1, -1, -1):
            h_in = acts[i]
            grads = [h_in.T @ g, g.sum(axis=0)] + grads
            if i > 0:
                g = (g @ self.weights[i].T) * (1.0 - acts[i] ** 2)
        return grads

    def copy(self) -> "Mlp":
        return Mlp([w.copy() for w in self.weights], [b.copy() for b in self.biases])


def init_mlp(sizes, rng: np.random.Generator, out_scale: float = 1.0) -> Mlp:
    """Fan-in scaled uniform initialisation; biases start at zero."""
    ws, bs = [], []
    for i, (fan_in, fan_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        bound = 1.0 / math.sqrt(fan_in)
        if i == len(sizes) - 2:
            bound *= out_scale
        ws.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        bs.append(np.zeros(fan_out))
    return Mlp(ws, bs)


def mlp_forward(params: Mlp, x) -> np.ndarray:
    return params(x)


# ---------------------------------------------------------------------------
# Policy
# ---------------------------------------------------------------------------


@dataclass
class Actor:
    """Gaussian policy network.

    With ``log_std`` set, the net outputs only means and the log standard
    deviation is a free parameter vector.  With ``log_std=None`` the net has
    ``2 * act_dim`` outputs: means followed by log standard deviations.
    """

    net: Mlp
    log_std: Optional[np.ndarray] = None

    @property
    def act_dim(self) -> int:
        out = self.net.sizes[-1]
        return out if self.log_std is not None else out // 2

    @property
    def std_head(self) -> bool:
        return self.log_std is None

    def params(self) -> list[np.ndarray]:
        return self.net.params() + ([] if self.std_head else [self.log_std])

    def distribution(self, obs) -> tuple[np.ndarray, np.ndarray, list[np.ndarray]]:
        """``(mean, log_std, activations)`` for a batch of observations."""
        out, acts = self.net.forward(np.atleast_2d(obs))
        if not self.std_head:
            return out, np.broadcast_to(self.log_std, out.shape), acts
        k = self.act_dim
        return out[:, :k], np.clip(out[:, k:], LOG_STD_MIN, LOG_STD_MAX), acts

    def copy(self) -> "Actor":
        return Actor(self.net.copy(), None if self.std_head else self.log_std.copy())


@dataclass
class Critic:
    net: Mlp

    def params(self) -> list[np.ndarray]:
        return self.net.params()

    def value(self, obs) -> np.ndarray:
        return self.net(np.atleast_2d(obs))[:, 0]

    def copy(self) -> "Critic":
        return Critic(self.net.copy())


def make_actor(rng, hidden=(256, 256), obs_dim=OBS_DIM, act_dim=ACT_DIM, std_head: bool = False) -> Actor:
    """Output layer scaled down so initial means and log-stds are near 0."""
    if std_head:
        return Actor(init_mlp([obs_dim, *hidden, 2 * act_dim], rng, out_scale=0.01))
    return Actor(init_mlp([obs_dim, *hidden, act_dim], rng, out_scale=0.01), np.zeros(act_dim))


def make_critic(rng, hidden=(256, 256), obs_dim=OBS_DIM) -> Critic:
    return Critic(init_mlp([obs_dim, *hidden, 1], rng))


def _log1m_tanh2(u: np.ndarray) -> np.ndarray:
    """``log(1 - tanh(u)**2)`` without cancellation."""
    return 2.0 * (math.log(2.0) - u - np.logaddexp(0.0, -2.0 * u))


def gaussian_log_prob(raw, mean, log_std) -> np.ndarray:
    z = (raw - mean) * np.exp(-log_std)
    return np.sum(-0.5 * z * z - log_std - 0.5 * _LOG_2PI, axis=-1)


def squashed_log_prob(raw, mean, log_std) -> np.ndarray:
    """Log density of ``tanh(raw)`` under the squashed Gaussian."""
    return gaussian_log_prob(raw, mean, log_std) - np.sum(_log1m_tanh2(raw), axis=-1)


def policy_sample(actor: Actor, obs, rng: np.random.Generator, deterministic: bool = False):
    """Returns ``(action in (-1,1)^k, raw pre-squash sample, log_prob)``."""
    mean, log_std, _ = actor.distribution(obs)
    mean, log_std = mean[0], log_std[0]
    if deterministic:
        raw = mean.copy()
    else:
        raw = mean + np.exp(log_std) * rng.standard_normal(mean.shape)
    logp = float(squashed_log_prob(raw, mean, log_std))
    return np.tanh(raw), raw, logp


# ---------------------------------------------------------------------------
# Advantages
# ---------------------------------------------------------------------------


def compute_gae(rewards, values, dones, gamma: float, lam: float, last_value: float = 0.0):
    """Generalized advantage estimates and value targets ``A + V``.

    The bootstrap value after a ``done`` step is 0; ``last_value`` is used
    only when the final transition is not terminal.
    """
    r = np.asarray(rewards, dtype=float)
    v = np.asarray(values, dtype=float)
    d = np.asarray(dones, dtype=bool)
    if not (len(r) == len(v) == len(d)):
        raise ValueError("rewards, values and dones must have equal length")
    T = len(r)
    adv = np.zeros(T)
    running = 0.0
    for t in range(T - 1, -1, -1):
        if d[t]:
            next_v, running = 0.0, 0.0
        else:
            next_v = v[t + 1] if t + 1 < T else last_value
        delta = r[t] + gamma * next_v - v[t]
        running = delta + gamma * lam * running
        adv[t] = running
    return adv, adv + v


@dataclass
class RolloutBuffer:
    obs: list = field(default_factory=list)
    raw_actions: list = field(default_factory=list)
    log_probs: list = field(default_factory=list)
    rewards: list = field(default_factory=list)
    values: list = field(default_factory=list)
    dones: list = field(default_factory=list)
    advantages: Optional[np.ndarray] = None
    targets: Optional[np.ndarray] = None

    def add(self, obs, raw, logp, reward, value, done) -> None:
        self.obs.append(np.asarray(obs, dtype=float))
        self.raw_actions.append(np.asarray(raw, dtype=float))
        self.log_probs.append(float(logp))
        self.rewards.append(float(reward))
        self.values.append(float(value))
        self.dones.append(bool(done))
        self.advantages = self.targets = None

    def __len__(self) -> int:
        return len(self.rewards)

    def finish(self, gamma: float, lam: float) -> None:
        self.advantages, self.targets = compute_gae(self.rewards, self.values, self.dones, gamma, lam)

    def clear(self) -> None:
        self.__init__()

    def arrays(self) -> dict[str, np.ndarray]:
        if self.advantages is None:
            raise RuntimeError("advantages not computed; call finish() first")
        return {
            "obs": np.array(self.obs),
            "raw": np.array(self.raw_actions),
            "logp": np.array(self.log_probs),
            "adv": self.advantages,
            "targets": self.targets,
        }


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def normalize_advantages(adv: np.ndarray) -> np.ndarray:
    if len(adv) < 2:
        return adv - adv.mean()
    return (adv - adv.mean()) / (adv.std() + 1e-8)


def clipped_surrogate(ratio, adv, eps: float) -> np.ndarray:
    return np.minimum(ratio * adv, np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv)


def actor_loss_and_grads(actor: Actor, obs, raw, old_logp, adv, eps: float, ent_coef: float):
    """Negated clipped objective plus entropy bonus, and its parameter gradients."""
    mean, log_std, acts = actor.distribution(obs)
    logp = squashed_log_prob(raw, mean, log_std)
    ratio = np.exp(logp - old_logp)
    surr = clipped_surrogate(ratio, adv, eps)
    # entropy of the pre-squash Gaussian, averaged over the batch
    entropy = float(np.mean(np.sum(log_std + 0.5 * (1.0 + _LOG_2PI), axis=-1)))
    B = len(adv)
    loss = -float(surr.mean()) - ent_coef * entropy

    # d surr / d logp = ratio * adv where the unclipped branch is selected
    unclipped = ratio * adv <= np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv
    g_logp = np.where(unclipped, -ratio * adv / B, 0.0)
    inv_var = np.exp(-2.0 * log_std)
    diff = raw - mean
    g_mean = g_logp[:, None] * diff * inv_var
    g_log_std = g_logp[:, None] * (diff * diff * inv_var - 1.0) - ent_coef / B
    if actor.std_head:
        k = actor.act_dim
        raw_head = acts[-1][:, k:]
        g_log_std = np.where((raw_head > LOG_STD_MIN) & (raw_head < LOG_STD_MAX), g_log_std, 0.0)
        grads = actor.net.backward(acts, np.concatenate([g_mean, g_log_std], axis=1))
    else:
        grads = actor.net.backward(acts, g_mean) + [g_log_std.sum(axis=0)]
    stats = {
        "actor_loss": loss,
        "entropy": entropy,
        "clip_frac": float(np.mean(np.abs(ratio - 1.0) > eps)),
        "approx_kl": float(np.mean(old_logp - logp)),
    }
    return loss, grads, stats


def critic_loss_and_grads(critic: Critic, obs, targets):
    v, acts = critic.net.forward(obs)
    err = v[:, 0] - targets
    loss = float(np.mean(err * err))
    g = (2.0 / len(targets)) * err[:, None]
    return loss, critic.net.backward(acts, g)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def like(cls, params) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(state: AdamState, params: list[np.ndarray], grads: list[np.ndarray], lr: float) -> list[np.ndarray]:
    """Bias-corrected Adam update applied in place; returns ``params``."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("params, grads and optimizer state are misaligned")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params


# ---------------------------------------------------------------------------
# PPO
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    episodes: int = 5000
    max_steps: int = 20
    gamma: float = 0.9
    lam: float = 0.98
    clip_eps: float = 0.2
    lr_actor: float = 1e-4
    lr_critic: float = 5e-4
    update_every: int = 20
    epochs: int = 10
    minibatch: int = 64
    entropy_coeff: float = 0.01
    hidden: tuple[int, ...] = (256, 256)
    std_head: bool = True
    seed: int = 0
    greedy_eval: bool = True

    def __post_init__(self):
        if not 0.0 <= self.gamma <= 1.0 or not 0.0 <= self.lam <= 1.0:
            raise ValueError("gamma and lambda must lie in [0, 1]")
        if not self.clip_eps > 0.0:
            raise ValueError("clip epsilon must be positive")
        if self.episodes < 0 or self.update_every < 1 or self.epochs < 1 or self.minibatch < 1:
            raise ValueError("invalid episode/update settings")


@dataclass
class Learner:
    """Actor, critic and their optimizer states."""

    actor: Actor
    critic: Critic
    adam_actor: AdamState
    adam_critic: AdamState

    @classmethod
    def fresh(cls, config: TrainConfig, rng: np.random.Generator) -> "Learner":
        actor = make_actor(rng, config.hidden, std_head=config.std_head)
        critic = make_critic(rng, config.hidden)
        return cls(actor, critic, AdamState.like(actor.params()), AdamState.like(critic.params()))

    def reset_optimizers(self) -> None:
        self.adam_actor = AdamState.like(self.actor.params())
        self.adam_critic = AdamState.like(self.critic.params())


def ppo_update(buffer: RolloutBuffer, learner: Learner, config: TrainConfig, rng: np.random.Generator) -> dict:
    """Several epochs of minibatch clipped-PPO and critic regression."""
    if len(buffer) == 0:
        raise ValueError("empty rollout buffer")
    if buffer.advantages is None:
        buffer.finish(config.gamma, config.lam)
    data = buffer.arrays()
    adv = normalize_advantages(data["adv"])
    n = len(adv)
    stats: dict[str, list] = {"actor_loss": [], "critic_loss": [], "clip_frac": [], "approx_kl": []}
    for _ in range(config.epochs):
        order = rng.permutation(n)
        for start in range(0, n, config.minibatch):
            idx = order[start : start + config.minibatch]
            a_loss, a_grads, a_stats = actor_loss_and_grads(
                learner.actor, data["obs"][idx], data["raw"][idx], data["logp"][idx], adv[idx],
                config.clip_eps, config.entropy_coeff,
            )
            adam_step(learner.adam_actor, learner.actor.params(), a_grads, config.lr_actor)
            if not learner.actor.std_head:
                np.clip(learner.actor.log_std, LOG_STD_MIN, LOG_STD_MAX, out=learner.actor.log_std)
            c_loss, c_grads = critic_loss_and_grads(learner.critic, data["obs"][idx], data["targets"][idx])
            adam_step(learner.adam_critic, learner.critic.params(), c_grads, config.lr_critic)
            stats["actor_loss"].append(a_loss)
            stats["critic_loss"].append(c_loss)
            stats["clip_frac"].append(a_stats["clip_frac"])
            stats["approx_kl"].append(a_stats["approx_kl"])
    return {k: float(np.mean(v)) for k, v in stats.items()}


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------


@dataclass
class EpisodeRecord:
    episode: int
    ret: float
    steps: int
    success: bool
    clean: bool
    length: float
    violations: int


@dataclass
class TrainResult:
    learner: Learner
    returns: list[float] = field(default_factory=list)
    running_max: list[float] = field(default_factory=list)
    records: list[EpisodeRecord] = field(default_factory=list)
    best_path: Optional[NurbsPath] = None
    best_metrics: Optional[PathMetrics] = None
    first_success: Optional[int] = None
    first_clean: Optional[int] = None
    episodes_run: int = 0
    rng_state: dict = field(default_factory=dict)

    def success_rate(self, last: int = 100) -> float:
        tail = self.records[-last:]
        return float(np.mean([r.success for r in tail])) if tail else 0.0


def _better(m: PathMetrics, best: Optional[PathMetrics]) -> bool:
    if best is None:
        return True
    return (m.violation_count, m.length) < (best.violation_count, best.length)


def run_episode(env: RoutingEnv, learner: Learner, rng, deterministic: bool = False, buffer: RolloutBuffer | None = None):
    """One episode; transitions go to ``buffer`` when given."""
    obs = env.reset()
    done = False
    ret = 0.0
    steps = 0
    while not done:
        action, raw, logp = policy_sample(learner.actor, obs, rng, deterministic)
        if buffer is not None:
            value = float(learner.critic.value(obs)[0])
        next_obs, reward, done, _ = env.step(action)
        if buffer is not None:
            buffer.add(obs, raw, logp, reward, value, done)
        obs = next_obs
        ret += reward
        steps += 1
    return env.state, ret, steps


def train(
    env_factory: Callable[[], RoutingEnv],
    config: TrainConfig = TrainConfig(),
    rng: np.random.Generator | None = None,
    learner: Learner | None = None,
    stop: Callable[[TrainResult], bool] | None = None,
    episodes: int | None = None,
) -> TrainResult:
    """PPO training loop; deterministic for a given seed and single worker.

    ``stop`` is consulted after every episode and may end training early.
    """
    rng = np.random.default_rng(config.seed) if rng is None else rng
    if learner is None:
        learner = Learner.fresh(config, rng)
    env = env_factory()
    n_episodes = config.episodes if episodes is None else episodes
    result = TrainResult(learner)
    buffer = RolloutBuffer()
    best_ret = -math.inf
    dl = env.config.dl

    def consider(state, ep: int) -> Optional[PathMetrics]:
        if not state.success:
            return None
        metrics = evaluate_path(state.path, env.table, dl)
        if _better(metrics, result.best_metrics):
            result.best_path, result.best_metrics = state.path, metrics
        if metrics.violation_count == 0 and result.first_clean is None:
            result.first_clean = ep
        return metrics

    for ep in range(n_episodes):
        state, ret, steps = run_episode(env, learner, rng, buffer=buffer)
        metrics = consider(state, ep)
        if state.success and result.first_success is None:
            result.first_success = ep
        best_ret = max(best_ret, ret)
        result.returns.append(ret)
        result.running_max.append(best_ret)
        result.records.append(
            EpisodeRecord(
                ep, ret, steps, state.success,
                metrics is not None and metrics.violation_count == 0,
                metrics.length if metrics else float("nan"),
                metrics.violation_count if metrics else -1,
            )
        )
        result.episodes_run = ep + 1
        last = ep == n_episodes - 1
        if (ep + 1) % config.update_every == 0 or (last and len(buffer)):
            buffer.finish(config.gamma, config.lam)
            stats = ppo_update(buffer, learner, config, rng)
            buffer.clear()
            if config.greedy_eval:
                g_state, _, _ = run_episode(env, learner, rng, deterministic=True)
                consider(g_state, ep)
            log.debug("episode %d return %.3f stats %s", ep, ret, stats)
        if stop is not None and stop(result):
            break
    result.rng_state = rng.bit_generator.state
    return result


def finetune(
    learner: Learner,
    env_factory: Callable[[], RoutingEnv],
    config: TrainConfig = TrainConfig(),
    episodes: int = 100,
    rng: np.random.Generator | None = None,
    stop: Callable[[TrainResult], bool] | None = None,
) -> TrainResult:
    """Continue PPO from transferred weights against a changed environment.

    The weights are copied and the Adam moments restarted.
    """
    hidden = tuple(w.shape[1] for w in learner.actor.net.weights[:-1])
    if hidden != tuple(config.hidden) or learner.actor.net.sizes[0] != OBS_DIM:
        raise ValueError(f"checkpoint architecture {hidden} does not match config {config.hidden}")
    if learner.actor.std_head != config.std_head:
        raise ValueError("checkpoint log-std parameterisation does not match config")
    adapted = Learner(learner.actor.copy(), learner.critic.copy(), None, None)
    adapted.reset_optimizers()
    return train(env_factory, config, rng, adapted, stop=stop, episodes=episodes)


def greedy_path(env: RoutingEnv, learner: Learner):
    """Deterministic rollout; returns the final episode state."""
    state, _, _ = run_episode(env, learner, np.random.default_rng(0), deterministic=True)
    return state


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def _arrays_to_json(arrs) -> list:
    return [{"shape": list(a.shape), "data": [float(x) for x in a.ravel()]} for a in arrs]


def _arrays_from_json(items) -> list[np.ndarray]:
    return [np.array(it["data"], dtype=float).reshape(it["shape"]) for it in items]


def save_checkpoint(path, learner: Learner, config: TrainConfig, episodes: int = 0, rng_state: dict | None = None) -> None:
    doc = {
        "schema": CHECKPOINT_SCHEMA,
        "architecture": {
            "obs_dim": OBS_DIM,
            "act_dim": ACT_DIM,
            "hidden": list(config.hidden),
            "activation": "tanh",
            "policy": "tanh-squashed diagonal gaussian, " + ("log-std head" if learner.actor.std_head else "state-independent log-std"),
        },
        "config": asdict(config),
        "actor": _arrays_to_json(learner.actor.params()),
        "critic": _arrays_to_json(learner.critic.params()),
        "adam_actor": {"t": learner.adam_actor.t, "m": _arrays_to_json(learner.adam_actor.m), "v": _arrays_to_json(learner.adam_actor.v)},
        "adam_critic": {"t": learner.adam_critic.t, "m": _arrays_to_json(learner.adam_critic.m), "v": _arrays_to_json(learner.adam_critic.v)},
        "episodes": episodes,
        "seed": config.seed,
        "rng_state": rng_state or {},
    }
    Path(path).write_text(json.dumps(doc, indent=1, sort_keys=True))


def load_checkpoint(path) -> tuple[Learner, TrainConfig, dict]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    doc = json.loads(path.read_text())
    if doc.get("schema") != CHECKPOINT_SCHEMA:
        raise ValueError(f"{path}: unsupported checkpoint schema {doc.get('schema')!r}")
    cfg = dict(doc["config"])
    cfg["hidden"] = tuple(cfg["hidden"])
    config = TrainConfig(**cfg)
    a = _arrays_from_json(doc["actor"])
    c = _arrays_from_json(doc["critic"])
    if config.std_head:
        actor = Actor(Mlp(a[0::2], a[1::2]))
    else:
        actor = Actor(Mlp(a[0:-1:2], a[1:-1:2]), a[-1])
    critic = Critic(Mlp(c[0::2], c[1::2]))
    adam_a = AdamState(_arrays_from_json(doc["adam_actor"]["m"]), _arrays_from_json(doc["adam_actor"]["v"]), doc["adam_actor"]["t"])
    adam_c = AdamState(_arrays_from_json(doc["adam_critic"]["m"]), _arrays_from_json(doc["adam_critic"]["v"]), doc["adam_critic"]["t"])
    return Learner(actor, critic, adam_a, adam_c), config, doc
