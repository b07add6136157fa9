"""Advisor policies producing the suggested position d_ai in [0, 500].

ORACLE peeks at the next close (buy the maximum iff the price goes up),
the naive strategies buy on the forecast argmax (top-1: BULL only,
top-2: BULL or NEUTRAL), and the RL policy is a deterministic actor-critic
(DDPG-style) trained on daily asset deltas with discount 0.6, observing
the forecast vectors of the last three days plus the current position.

Networks are 2-layer perceptrons (hidden 32, tanh) written in numpy with
hand-derived gradients and Adam updates; everything is seeded and
bit-reproducible.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .constants import MAX_SHARES
from .errors import DivergenceError, OutOfRangeError, ParameterError
from .market import PriceSeries
from .predictor import ClassProbabilities
from .seeding import rng_for

OBS_DIM = 10  # three 3-class forecast vectors + normalized position
_UNIFORM_P = np.full(3, 1.0 / 3.0)


@dataclass(frozen=True)
class PolicyObservation:
    """Forecast vectors for the last three days plus the current position."""

    p_days: np.ndarray       # (3, 3); oldest first, padded with uniform
    position_frac: float     # current position / 500

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.p_days.reshape(-1), [self.position_frac]])


def build_observation(p_history, position: float) -> PolicyObservation:
    """Observation from the episode's forecast history (most recent last)."""
    rows = [p.as_array() if isinstance(p, ClassProbabilities) else np.asarray(p, dtype=float)
            for p in p_history[-3:]]
    while len(rows) < 3:
        rows.insert(0, _UNIFORM_P.copy())
    return PolicyObservation(p_days=np.stack(rows), position_frac=float(position) / MAX_SHARES)


@dataclass
class PolicyContext:
    """Everything a policy may look at when suggesting a position for day t."""

    series: PriceSeries
    t: int
    p_history: list            # ClassProbabilities up to and including day t
    position: float            # position before today's order


def oracle_decide(series: PriceSeries, t: int) -> float:
    """Max position iff tomorrow's close is strictly higher, else flat."""
    if t < 0 or t + 1 >= len(series):
        raise OutOfRangeError(f"day {t}: next-day close unavailable")
    return float(MAX_SHARES) if series.close(t + 1) > series.close(t) else 0.0


def naive_decide(p: ClassProbabilities, variant: str) -> float:
    """top1 buys on a BULL argmax; top2 buys on BULL or NEUTRAL. Ties resolve
    to the conservative class, so a tied forecast never buys."""
    if variant not in ("top1", "top2"):
        raise ParameterError(f"variant must be top1 or top2, got {variant!r}")
    top = p.argmax_class()
    if variant == "top1":
        return float(MAX_SHARES) if top == "BULL" else 0.0
    return float(MAX_SHARES) if top in ("BULL", "NEUTRAL") else 0.0


class OraclePolicy:
    strategy_id = "oracle"

    def decide(self, ctx: PolicyContext) -> float:
        return oracle_decide(ctx.series, ctx.t)


class NaivePolicy:
    def __init__(self, variant: str):
        if variant not in ("top1", "top2"):
            raise ParameterError(f"variant must be top1 or top2, got {variant!r}")
        self.variant = variant
        self.strategy_id = variant

    def decide(self, ctx: PolicyContext) -> float:
        return naive_decide(ctx.p_history[-1], self.variant)


# ---------------------------------------------------------------------------
# DDPG actor-critic in numpy.
# ---------------------------------------------------------------------------


def _init_mlp(rng, n_in: int, hidden: int, n_out: int) -> dict[str, np.ndarray]:
    return {
        "w1": rng.standard_normal((n_in, hidden)) / math.sqrt(n_in),
        "b1": np.zeros(hidden),
        "w2": rng.standard_normal((hidden, n_out)) / math.sqrt(hidden),
        "b2": np.zeros(n_out),
    }


def _copy_net(net: dict[str, np.ndarray]) -> dict[str, np.ndarray]:
    return {k: v.copy() for k, v in net.items()}


def actor_forward(net, obs: np.ndarray):
    """Raw action in share units, bounded to [-50, 550] via 250 + 300*tanh."""
    h = np.tanh(obs @ net["w1"] + net["b1"])
    z = h @ net["w2"] + net["b2"]
    action = 250.0 + 300.0 * np.tanh(z)
    return action[..., 0], (h, z)


def critic_forward(net, obs: np.ndarray, action: np.ndarray):
    """Q value for (observation, action); action enters normalized by 500."""
    x = np.concatenate([obs, action[..., None] / MAX_SHARES], axis=-1)
    h = np.tanh(x @ net["w1"] + net["b1"])
    q = h @ net["w2"] + net["b2"]
    return q[..., 0], (x, h)


def critic_loss_and_grad(net, obs, actions, targets):
    """Mean squared TD error and its gradient w.r.t. the critic parameters."""
    q, (x, h) = critic_forward(net, obs, actions)
    err = q - targets
    loss = float(np.mean(err**2))
    dq = (2.0 * err / err.shape[0])[:, None]
    grads = {
        "w2": h.T @ dq,
        "b2": dq.sum(axis=0),
    }
    dh = (dq @ net["w2"].T) * (1.0 - h**2)
    grads["w1"] = x.T @ dh
    grads["b1"] = dh.sum(axis=0)
    return loss, grads


def critic_action_grad(net, obs, actions) -> np.ndarray:
    """dQ/da at the given actions (share units)."""
    _, (x, h) = critic_forward(net, obs, actions)
    dh = net["w2"][:, 0][None, :] * (1.0 - h**2)
    dx = dh @ net["w1"].T
    return dx[:, -1] / MAX_SHARES


def actor_loss_grad(actor, critic, obs):
    """Gradient of -mean Q(s, actor(s)) w.r.t. the actor parameters."""
    actions, (h, z) = actor_forward(actor, obs)
    dq_da = critic_action_grad(critic, obs, actions)
    # ascend Q: dJ/da = -dQ/da averaged over the batch
    da = (-dq_da / obs.shape[0])[:, None]
    dz = da * 300.0 * (1.0 - np.tanh(z) ** 2)
    grads = {
        "w2": h.T @ dz,
        "b2": dz.sum(axis=0),
    }
    dh = (dz @ actor["w2"].T) * (1.0 - h**2)
    grads["w1"] = obs.T @ dh
    grads["b1"] = dh.sum(axis=0)
    return grads


class Adam:
    def __init__(self, net, lr, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = {k: np.zeros_like(v) for k, v in net.items()}
        self.v = {k: np.zeros_like(v) for k, v in net.items()}
        self.t = 0

    def step(self, net, grads):
        self.t += 1
        b1c = 1.0 - self.beta1**self.t
        b2c = 1.0 - self.beta2**self.t
        for key, grad in grads.items():
            self.m[key] = self.beta1 * self.m[key] + (1.0 - self.beta1) * grad
            self.v[key] = self.beta2 * self.v[key] + (1.0 - self.beta2) * grad**2
            net[key] -= self.lr * (self.m[key] / b1c) / (np.sqrt(self.v[key] / b2c) + self.eps)


@dataclass
class RLHyperparams:
    gamma: float = 0.6
    hidden: int = 32
    actor_lr: float = 1e-3
    critic_lr: float = 1e-3
    noise_scale: float = 50.0     # shares; decays linearly to 0 over training
    replay_size: int = 10_000
    batch_size: int = 64
    episodes: int = 200
    tau: float = 0.01
    reward_scale: float = 1e-4
    warmup_steps: int = 200
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ParameterError(f"gamma must be in [0, 1), got {self.gamma}")
        if self.replay_size < self.batch_size:
            raise ParameterError("replay_size must be >= batch_size")


class ReplayBuffer:
    def __init__(self, capacity: int, obs_dim: int):
        self.capacity = capacity
        self.obs = np.zeros((capacity, obs_dim))
        self.actions = np.zeros(capacity)
        self.rewards = np.zeros(capacity)
        self.next_obs = np.zeros((capacity, obs_dim))
        self.dones = np.zeros(capacity)
        self.size = 0
        self._cursor = 0

    def add(self, obs, action, reward, next_obs, done):
        i = self._cursor
        self.obs[i] = obs
        self.actions[i] = action
        self.rewards[i] = reward
        self.next_obs[i] = next_obs
        self.dones[i] = float(done)
        self._cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, rng: np.random.Generator, batch_size: int):
        idx = rng.integers(0, self.size, size=batch_size)
        return (self.obs[idx], self.actions[idx], self.rewards[idx],
                self.next_obs[idx], self.dones[idx])


@dataclass
class RLPolicy:
    """Deterministic trained actor; inference applies no exploration noise."""

    actor: dict
    hidden: int
    strategy_id: str = "rl"

    def decide(self, obs) -> float:
        return rl_decide(self, obs)

    def to_json(self) -> dict:
        return {"kind": "rl", "hidden": self.hidden,
                "actor": {k: v.tolist() for k, v in self.actor.items()}}

    @classmethod
    def from_json(cls, doc: dict) -> "RLPolicy":
        return cls(actor={k: np.array(v, dtype=float) for k, v in doc["actor"].items()},
                   hidden=int(doc["hidden"]))

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "RLPolicy":
        with open(path, encoding="utf-8") as fh:
            return cls.from_json(json.load(fh))


class RLAdvisor:
    """Adapter exposing the episode-policy interface for a trained actor."""

    def __init__(self, policy: RLPolicy, strategy_id: str = "rl"):
        self.policy = policy
        self.strategy_id = strategy_id

    def decide(self, ctx: PolicyContext) -> float:
        obs = build_observation(ctx.p_history, ctx.position)
        return rl_decide(self.policy, obs)


def rl_decide(policy: RLPolicy, obs) -> float:
    """Deterministic mean action, clipped to [0, 500]."""
    if isinstance(obs, PolicyObservation):
        obs = obs.as_array()
    obs = np.asarray(obs, dtype=float)
    action, _ = actor_forward(policy.actor, obs[None, :])
    return float(np.clip(action[0], 0.0, MAX_SHARES))


@dataclass
class RLTrainResult:
    policy: RLPolicy
    episode_returns: list = field(default_factory=list)
    critic_losses: list = field(default_factory=list)


def train_rl_policy(env, hp: RLHyperparams | None = None) -> RLTrainResult:
    """Train a DDPG-style policy against a trading environment.

    ``env`` must expose ``reset() -> obs`` and
    ``step(action_shares) -> (obs, reward_jpy, done)``. Training is
    deterministic for a fixed seed (one generator drives exploration noise
    and replay sampling; the env owns its own seeded stream).
    """
    hp = hp or RLHyperparams()
    rng = rng_for(hp.seed, "ddpg-train")
    actor = _init_mlp(rng, OBS_DIM, hp.hidden, 1)
    critic = _init_mlp(rng, OBS_DIM + 1, hp.hidden, 1)
    actor_target = _copy_net(actor)
    critic_target = _copy_net(critic)
    actor_opt = Adam(actor, hp.actor_lr)
    critic_opt = Adam(critic, hp.critic_lr)
    buffer = ReplayBuffer(hp.replay_size, OBS_DIM)

    episode_returns: list[float] = []
    critic_losses: list[float] = []
    total_steps = 0
    for episode in range(hp.episodes):
        obs = env.reset()
        decay = 1.0 - episode / max(hp.episodes, 1)
        sigma = hp.noise_scale * decay
        done = False
        ep_return = 0.0
        while not done:
            mean_action, _ = actor_forward(actor, obs[None, :])
            action = float(np.clip(mean_action[0] + rng.normal(0.0, sigma), 0.0, MAX_SHARES))
            next_obs, reward, done = env.step(action)
            ep_return += reward
            buffer.add(obs, action, reward * hp.reward_scale, next_obs, done)
            obs = next_obs
            total_steps += 1

            if buffer.size >= max(hp.batch_size, hp.warmup_steps):
                b_obs, b_act, b_rew, b_next, b_done = buffer.sample(rng, hp.batch_size)
                next_actions, _ = actor_forward(actor_target, b_next)
                next_actions = np.clip(next_actions, 0.0, MAX_SHARES)
                q_next, _ = critic_forward(critic_target, b_next, next_actions)
                targets = b_rew + hp.gamma * (1.0 - b_done) * q_next
                loss, c_grads = critic_loss_and_grad(critic, b_obs, b_act, targets)
                if not math.isfinite(loss):
                    raise DivergenceError(f"non-finite critic loss at step {total_steps}")
                critic_opt.step(critic, c_grads)
                a_grads = actor_loss_grad(actor, critic, b_obs)
                actor_opt.step(actor, a_grads)
                for key in actor:
                    actor_target[key] += hp.tau * (actor[key] - actor_target[key])
                for key in critic:
                    critic_target[key] += hp.tau * (critic[key] - critic_target[key])
                critic_losses.append(loss)
        episode_returns.append(ep_return)
    return RLTrainResult(policy=RLPolicy(actor=actor, hidden=hp.hidden),
                         episode_returns=episode_returns, critic_losses=critic_losses)


def make_policy(kind: str, series: PriceSeries | None = None, path=None):
    """Policy factory used by the harness and service configs."""
    kind = kind.lower()
    if kind == "oracle":
        return OraclePolicy()
    if kind in ("top1", "top2"):
        return NaivePolicy(kind)
    if kind == "rl":
        if path is None:
            raise ParameterError("rl policy needs a saved parameters path")
        return RLAdvisor(RLPolicy.load(path))
    raise ParameterError(f"unknown policy kind {kind!r}")
