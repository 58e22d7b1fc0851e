"""Goal-conditioned soft actor-critic with hindsight relabelling.

The policy and both critics read the 12-number observation vector whose
first three entries are the goal, so conditioning on a different goal is just
a matter of overwriting those entries (see :func:`with_goal`).
"""
from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .env import (
    ACHIEVED_SLICE,
    ACTION_DIM,
    GOAL_SLICE,
    OBS_DIM,
    GraspGoal,
    Observation,
    RewardParams,
    reward_from_arrays,
)
from .geometry import Pose2
from .nn import Adam, Mlp

LOG_STD_MIN, LOG_STD_MAX = -20.0, 2.0
_HALF_LOG_2PI = 0.5 * math.log(2 * math.pi)
_LOG2 = math.log(2.0)


class NonFiniteLoss(RuntimeError):
    pass


class CheckpointMismatch(ValueError):
    pass


class CheckpointVersionError(ValueError):
    pass


@dataclass(frozen=True)
class SacConfig:
    gamma: float = 0.99
    tau: float = 0.005
    lr_policy: float = 1e-3
    lr_q: float = 5e-4
    batch_size: int = 256
    buffer_capacity: int = 1_000_000
    her_rollout_goal_fraction: float = 0.4
    hidden: tuple[int, ...] = (512, 512, 512)
    target_entropy: float | None = None  # None means -action_dim
    initial_alpha: float = 1.0
    updates_per_step: int = 1
    clamp_targets: bool = True
    reward_max: float = 100.0
    policy_final_scale: float = 0.01

    def __post_init__(self) -> None:
        if not 0.0 < self.gamma < 1.0:
            raise ValueError("gamma must be in (0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must be in (0, 1]")
        if not 0.0 <= self.her_rollout_goal_fraction <= 1.0:
            raise ValueError("her_rollout_goal_fraction must be in [0, 1]")
        if self.batch_size < 1 or self.buffer_capacity < 1 or self.updates_per_step < 0:
            raise ValueError("batch_size and buffer_capacity must be positive")

    @property
    def entropy_target(self) -> float:
        return -float(ACTION_DIM) if self.target_entropy is None else float(self.target_entropy)

    @property
    def target_floor(self) -> float:
        return -self.reward_max / (1.0 - self.gamma)


# ------------------------------------------------------------------ networks


class SacNetworks:
    def __init__(self, cfg: SacConfig, rng: np.random.Generator, dtype=np.float32,
                 obs_dim: int = OBS_DIM, action_dim: int = ACTION_DIM) -> None:
        self.obs_dim, self.action_dim = obs_dim, action_dim
        self.hidden = tuple(cfg.hidden)
        self.dtype = np.dtype(dtype)
        self.policy = Mlp([obs_dim, *cfg.hidden, 2 * action_dim], rng, dtype, final_scale=cfg.policy_final_scale)
        self.q1 = Mlp([obs_dim + action_dim, *cfg.hidden, 1], rng, dtype)
        self.q2 = Mlp([obs_dim + action_dim, *cfg.hidden, 1], rng, dtype)
        self.q1_target = Mlp([obs_dim + action_dim, *cfg.hidden, 1], rng, dtype)
        self.q2_target = Mlp([obs_dim + action_dim, *cfg.hidden, 1], rng, dtype)
        self.q1_target.copy_from(self.q1)
        self.q2_target.copy_from(self.q2)
        self.log_alpha = Tensor(np.array(math.log(cfg.initial_alpha), dtype=dtype), requires_grad=True)

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        out = []
        for name in ("policy", "q1", "q2", "q1_target", "q2_target"):
            net: Mlp = getattr(self, name)
            out += [(f"{name}.{i}", p) for i, p in enumerate(net.params)]
        out.append(("log_alpha", self.log_alpha))
        return out

    def architecture(self) -> dict[str, Any]:
        return {
            "obs_dim": self.obs_dim,
            "action_dim": self.action_dim,
            "hidden": list(self.hidden),
            "tensors": [[n, list(t.shape)] for n, t in self.named_tensors()],
        }

    def snapshot(self) -> SacNetworks:
        """Deep copy used as a read-only view by evaluation and rollout workers."""
        import copy

        return copy.deepcopy(self)


def with_goal(obs: np.ndarray, goal: np.ndarray) -> np.ndarray:
    out = np.array(obs, copy=True)
    out[..., GOAL_SLICE] = goal
    return out


def _obs_vector(obs: Observation | np.ndarray, goal: GraspGoal | Pose2 | np.ndarray | None) -> np.ndarray:
    x = obs.as_array() if isinstance(obs, Observation) else np.asarray(obs, dtype=np.float64)
    if goal is not None:
        if isinstance(goal, GraspGoal):
            goal = goal.pose_in_object
        g = goal.wrapped().as_array() if isinstance(goal, Pose2) else np.asarray(goal)
        x = with_goal(x, g)
    return x


def policy_head(policy: Mlp, obs: Tensor | np.ndarray) -> tuple[Tensor, Tensor]:
    out = policy(obs)
    a = out.shape[-1] // 2
    mean = out[:, :a]
    log_std = ad.clip(out[:, a:], LOG_STD_MIN, LOG_STD_MAX)
    return mean, log_std


def squashed_sample(mean: Tensor, log_std: Tensor, eps: np.ndarray) -> tuple[Tensor, Tensor]:
    """Reparameterized tanh-Gaussian sample and its log-density (summed over action dims)."""
    eps = eps.astype(mean.dtype)
    u = mean + ad.exp(log_std) * eps
    a = ad.tanh(u)
    logp_gauss = ad.sum(-log_std - (0.5 * eps * eps + _HALF_LOG_2PI), axis=1)
    # log(1 - tanh(u)^2) = 2 * (log 2 - u - softplus(-2u))
    corr = ad.sum(2.0 * (_LOG2 - u - ad.softplus(-2.0 * u)), axis=1)
    return a, logp_gauss - corr


def policy_act(
    obs: Observation | np.ndarray,
    goal: GraspGoal | Pose2 | np.ndarray | None,
    deterministic: bool,
    policy: Mlp,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Action in (-1, 1)^3: tanh of the mean, or a squashed-Gaussian sample."""
    x = _obs_vector(obs, goal)
    batched = x.ndim == 2
    out = policy.forward_numpy(np.atleast_2d(x)).astype(np.float64)
    a_dim = out.shape[1] // 2
    mean = out[:, :a_dim]
    if deterministic:
        act = np.tanh(mean)
    else:
        if rng is None:
            raise ValueError("stochastic actions need an rng")
        log_std = np.clip(out[:, a_dim:], LOG_STD_MIN, LOG_STD_MAX)
        act = np.tanh(mean + np.exp(log_std) * rng.standard_normal(mean.shape))
        # keep strictly inside the open interval even when tanh rounds to 1
        act = np.clip(act, -1 + 1e-7, 1 - 1e-7)
    return act if batched else act[0]


def q_value(obs: Observation | np.ndarray, action: np.ndarray, goal, critic: Mlp) -> float | np.ndarray:
    x = _obs_vector(obs, goal)
    a = np.asarray(action, dtype=np.float64)
    batched = x.ndim == 2
    q = critic.forward_numpy(np.concatenate([np.atleast_2d(x), np.atleast_2d(a)], axis=1))[:, 0]
    return q if batched else float(q[0])


def min_q(obs, action, goal, nets: SacNetworks) -> float | np.ndarray:
    return np.minimum(q_value(obs, action, goal, nets.q1), q_value(obs, action, goal, nets.q2))


# --------------------------------------------------------------------- losses


def critic_targets(nets: SacNetworks, batch: dict[str, np.ndarray], eps_next: np.ndarray, cfg: SacConfig) -> np.ndarray:
    dt = nets.dtype
    o2 = batch["next_obs"].astype(dt)
    mean, log_std = policy_head(nets.policy, o2)
    a2, logp2 = squashed_sample(mean, log_std, eps_next)
    x2 = np.concatenate([o2, a2.data], axis=1)
    qt = np.minimum(nets.q1_target.forward_numpy(x2), nets.q2_target.forward_numpy(x2))[:, 0]
    alpha = math.exp(float(nets.log_alpha.data))
    y = batch["reward"] + cfg.gamma * (1.0 - batch["done"]) * (qt - alpha * logp2.data)
    if cfg.clamp_targets:
        y = np.clip(y, cfg.target_floor, 0.0)
    return y.astype(dt)


def critic_losses(nets: SacNetworks, batch: dict[str, np.ndarray], y: np.ndarray) -> tuple[Tensor, Tensor]:
    dt = nets.dtype
    x = Tensor(np.concatenate([batch["obs"], batch["action"]], axis=1).astype(dt))
    yt = Tensor(y.reshape(-1, 1).astype(dt))
    l1 = ad.mean(ad.square(nets.q1(x) - yt))
    l2 = ad.mean(ad.square(nets.q2(x) - yt))
    return l1, l2


def policy_loss(nets: SacNetworks, obs: np.ndarray, eps: np.ndarray) -> tuple[Tensor, Tensor]:
    """``mean(alpha * log pi - min Q)`` with alpha held constant; also returns log pi."""
    dt = nets.dtype
    o = Tensor(obs.astype(dt))
    mean, log_std = policy_head(nets.policy, o)
    a, logp = squashed_sample(mean, log_std, eps)
    x = ad.concat([o, a], axis=1)
    q = ad.minimum(nets.q1(x), nets.q2(x))
    alpha = np.asarray(math.exp(float(nets.log_alpha.data)), dtype=dt)
    return ad.mean(ad.mul(logp, alpha) - q[:, 0]), logp


def alpha_loss(log_alpha: Tensor, logp: np.ndarray, target_entropy: float) -> Tensor:
    return ad.neg(ad.mean(ad.mul(log_alpha, np.asarray(logp + target_entropy, dtype=log_alpha.dtype))))


# --------------------------------------------------------------------- replay


@dataclass
class Transition:
    obs: np.ndarray
    action: np.ndarray
    reward: float
    next_obs: np.ndarray
    done: bool
    goal: GraspGoal
    t: int = 0
    table_z: float = 0.0


class ReplayBuffer:
    """Fixed-capacity ring buffer with uniform sampling."""

    def __init__(self, capacity: int, obs_dim: int = OBS_DIM, action_dim: int = ACTION_DIM) -> None:
        if capacity < 1:
            raise ValueError("capacity must be positive")
        self.capacity = int(capacity)
        self.obs = np.zeros((capacity, obs_dim), dtype=np.float32)
        self.action = np.zeros((capacity, action_dim), dtype=np.float32)
        self.reward = np.zeros(capacity, dtype=np.float32)
        self.next_obs = np.zeros((capacity, obs_dim), dtype=np.float32)
        self.done = np.zeros(capacity, dtype=np.float32)
        self.size = 0
        self.ptr = 0

    def __len__(self) -> int:
        return self.size

    def add(self, tr: Transition) -> None:
        i = self.ptr
        self.obs[i] = tr.obs
        self.action[i] = tr.action
        self.reward[i] = tr.reward
        self.next_obs[i] = tr.next_obs
        self.done[i] = float(tr.done)
        self.ptr = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def extend(self, trs: Sequence[Transition]) -> None:
        for tr in trs:
            self.add(tr)

    def sample_indices(self, n: int, rng: np.random.Generator) -> np.ndarray:
        if self.size == 0:
            raise ValueError("empty buffer")
        return rng.integers(0, self.size, size=n)

    def sample(self, n: int, rng: np.random.Generator) -> dict[str, np.ndarray]:
        idx = self.sample_indices(n, rng)
        return {
            "obs": self.obs[idx],
            "action": self.action[idx],
            "reward": self.reward[idx],
            "next_obs": self.next_obs[idx],
            "done": self.done[idx],
        }


def her_relabel(
    episode: Sequence[Transition],
    fraction: float,
    rng: np.random.Generator,
    reward_params: RewardParams = RewardParams(),
    sparse: bool = False,
) -> list[Transition]:
    """Hindsight relabelling with the "future" strategy.

    Each transition independently, with probability ``fraction``, gets the
    goal actually achieved (``^O E`` after the step) at a uniformly chosen
    step ``f >= t`` of the same episode, and its reward is recomputed.
    """
    if not episode:
        raise ValueError("empty episode")
    T = len(episode)
    out: list[Transition] = []
    for t, tr in enumerate(episode):
        if fraction <= 0.0 or rng.random() >= fraction:
            out.append(tr)
            continue
        f = int(rng.integers(t, T))
        achieved = np.array(episode[f].next_obs[ACHIEVED_SLICE], dtype=np.float64)
        obs = with_goal(tr.obs, achieved)
        nxt = with_goal(tr.next_obs, achieved)
        r = reward_from_arrays(nxt, achieved, tr.table_z, reward_params, sparse)
        out.append(replace(tr, obs=obs, next_obs=nxt, reward=r,
                           goal=GraspGoal(Pose2.from_array(achieved), math.nan)))
    return out


# -------------------------------------------------------------------- trainer


@dataclass
class UpdateReport:
    q1_loss: float
    q2_loss: float
    policy_loss: float
    alpha: float
    entropy: float

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


class SacAgent:
    """Networks plus optimizers and counters; the single writer of its parameters."""

    def __init__(self, cfg: SacConfig, rng: np.random.Generator, dtype=np.float32) -> None:
        self.cfg = cfg
        self.nets = SacNetworks(cfg, rng, dtype)
        self.opt_policy = Adam(self.nets.policy.params, cfg.lr_policy)
        self.opt_q = Adam(self.nets.q1.params + self.nets.q2.params, cfg.lr_q)
        self.opt_alpha = Adam([self.nets.log_alpha], cfg.lr_policy)
        self.updates = 0

    @property
    def alpha(self) -> float:
        return math.exp(float(self.nets.log_alpha.data))


def sac_update(buffer: ReplayBuffer, config: SacConfig, agent: SacAgent, rng: np.random.Generator) -> UpdateReport:
    """One gradient step on both critics, the policy and the temperature, then Polyak averaging."""
    if len(buffer) < config.batch_size:
        raise ValueError("buffer holds fewer transitions than one batch")
    nets = agent.nets
    batch = buffer.sample(config.batch_size, rng)
    n, a_dim = config.batch_size, nets.action_dim
    eps_next = rng.standard_normal((n, a_dim))
    eps_pi = rng.standard_normal((n, a_dim))

    # critics
    y = critic_targets(nets, batch, eps_next, config)
    nets.q1.zero_grad()
    nets.q2.zero_grad()
    l1, l2 = critic_losses(nets, batch, y)
    (l1 + l2).backward()

    # policy, with critic parameters frozen (read at their pre-update values)
    nets.q1.set_requires_grad(False)
    nets.q2.set_requires_grad(False)
    nets.policy.zero_grad()
    lp, logp = policy_loss(nets, batch["obs"], eps_pi)
    lp.backward()
    nets.q1.set_requires_grad(True)
    nets.q2.set_requires_grad(True)

    nets.log_alpha.grad = None
    la = alpha_loss(nets.log_alpha, logp.data, config.entropy_target)
    la.backward()

    losses = (float(l1.data), float(l2.data), float(lp.data), float(la.data))
    if not all(math.isfinite(v) for v in losses):
        raise NonFiniteLoss(f"non-finite loss at update {agent.updates}: q1={losses[0]} q2={losses[1]} "
                            f"policy={losses[2]} alpha={losses[3]}")
    agent.opt_q.step()
    agent.opt_policy.step()
    agent.opt_alpha.step()
    nets.q1_target.polyak_from(nets.q1, config.tau)
    nets.q2_target.polyak_from(nets.q2, config.tau)
    for _, t in nets.named_tensors():
        if not np.all(np.isfinite(t.data)):
            raise NonFiniteLoss(f"non-finite parameters after update {agent.updates}")
    agent.updates += 1
    return UpdateReport(losses[0], losses[1], losses[2], agent.alpha, float(-np.mean(logp.data)))


# ----------------------------------------------------------------- checkpoint

MAGIC = b"OGCK"
CHECKPOINT_VERSION = 1


def save_checkpoint(path: str | Path, agent: SacAgent, counters: dict[str, Any] | None = None,
                    config: dict[str, Any] | None = None, extra: dict[str, Any] | None = None) -> None:
    """Write a checkpoint.

    Layout: ``b"OGCK"``, u32 version, u32 header length, UTF-8 JSON header,
    then every tensor listed in ``header["architecture"]["tensors"]`` followed by
    the Adam moments listed in ``header["optimizer"]``, each as little-endian
    float32 in C order.
    """
    nets = agent.nets
    opt_arrays: list[np.ndarray] = []
    opt_meta = {}
    for name, opt in (("policy", agent.opt_policy), ("q", agent.opt_q), ("alpha", agent.opt_alpha)):
        st = opt.state()
        opt_meta[name] = {"t": opt.t, "shapes": [list(a.shape) for a in st]}
        opt_arrays += st
    header = {
        "architecture": nets.architecture(),
        "counters": {"updates": agent.updates, **(counters or {})},
        "config": config or {},
        "sac": {k: (list(v) if isinstance(v, tuple) else v) for k, v in asdict(agent.cfg).items()},
        "optimizer": opt_meta,
        "extra": extra or {},
    }
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<II", CHECKPOINT_VERSION, len(hb)))
    buf.write(hb)
    for _, t in nets.named_tensors():
        buf.write(np.ascontiguousarray(t.data, dtype="<f4").tobytes())
    for a in opt_arrays:
        buf.write(np.ascontiguousarray(a, dtype="<f4").tobytes())
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(buf.getvalue())
    tmp.replace(path)


def read_checkpoint(path: str | Path) -> tuple[dict[str, Any], memoryview]:
    raw = Path(path).read_bytes()
    if len(raw) < 12 or raw[:4] != MAGIC:
        raise CheckpointMismatch("not a checkpoint file")
    version, hlen = struct.unpack("<II", raw[4:12])
    if version > CHECKPOINT_VERSION:
        raise CheckpointVersionError(f"checkpoint version {version} is newer than supported {CHECKPOINT_VERSION}")
    try:
        header = json.loads(raw[12:12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointMismatch(f"corrupt header: {e}") from e
    return header, memoryview(raw)[12 + hlen:]


def load_checkpoint(path: str | Path, agent: SacAgent) -> dict[str, Any]:
    """Restore parameters and optimizer state into ``agent``; returns the header."""
    header, body = read_checkpoint(path)
    expected = agent.nets.architecture()
    if header.get("architecture") != expected:
        raise CheckpointMismatch("architecture descriptor does not match the agent")
    off = 0

    def take(shape: Sequence[int]) -> np.ndarray:
        nonlocal off
        n = int(np.prod(shape)) if len(shape) else 1
        if off + 4 * n > len(body):
            raise CheckpointMismatch("checkpoint truncated")
        a = np.frombuffer(body, dtype="<f4", count=n, offset=off).reshape(shape)
        off += 4 * n
        return a

    for (_, t), (_, shape) in zip(agent.nets.named_tensors(), expected["tensors"]):
        t.data = take(shape).astype(agent.nets.dtype)
    for name, opt in (("policy", agent.opt_policy), ("q", agent.opt_q), ("alpha", agent.opt_alpha)):
        meta = header["optimizer"][name]
        opt.load_state([take(s) for s in meta["shapes"]], int(meta["t"]))
    if off != len(body):
        raise CheckpointMismatch("trailing bytes after the last tensor")
    agent.updates = int(header["counters"].get("updates", 0))
    return header


def agent_from_checkpoint(path: str | Path) -> tuple[SacAgent, dict[str, Any]]:
    header, _ = read_checkpoint(path)
    sac = dict(header.get("sac", {}))
    sac["hidden"] = tuple(sac.get("hidden", (512, 512, 512)))
    cfg = SacConfig(**sac)
    agent = SacAgent(cfg, np.random.default_rng(0))
    return agent, load_checkpoint(path, agent)
