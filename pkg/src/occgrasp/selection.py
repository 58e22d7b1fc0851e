"""Choosing which grasp to condition the policy on from a candidate set."""
from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .env import DomainParams, GraspGoal, Observation, RewardParams, grasp_from_id, pose_distance
from .curriculum import GraspRange
from .sac import SacNetworks, min_q, policy_act, with_goal


class EmptyCandidateSet(ValueError):
    pass


class Strategy(str, enum.Enum):
    ARGMAX_Q = "ArgmaxQ"
    ARGMAX_Q_T0 = "ArgmaxQ-t0"
    POSE_DIFF = "PoseDiff"
    POSE_DIFF_T0 = "PoseDiff-t0"
    UNIFORM = "Uniform"

    @property
    def frozen(self) -> bool:
        return self in (Strategy.ARGMAX_Q_T0, Strategy.POSE_DIFF_T0)

    @property
    def needs_critics(self) -> bool:
        return self in (Strategy.ARGMAX_Q, Strategy.ARGMAX_Q_T0)

    @classmethod
    def parse(cls, s: str | Strategy) -> Strategy:
        if isinstance(s, Strategy):
            return s
        for m in cls:
            if m.value.lower() == s.lower() or m.name.lower() == s.lower().replace("-", "_"):
                return m
        raise ValueError(f"unknown selection strategy {s!r}; choose from {[m.value for m in cls]}")


def sample_candidates(domain: DomainParams, grasp_range: GraspRange, n: int,
                      rng: np.random.Generator) -> list[GraspGoal]:
    """``n`` grasps with IDs drawn uniformly from ``grasp_range``."""
    if n < 1:
        raise EmptyCandidateSet("need at least one candidate")
    return [grasp_from_id(domain, grasp_range.sample(rng)) for _ in range(n)]


def q_scores(candidates: Sequence[GraspGoal], obs: Observation, nets: SacNetworks) -> np.ndarray:
    """Min-twin Q of the deterministic action for each candidate, batched."""
    base = obs.as_array()
    x = np.stack([with_goal(base, g.pose_in_object.wrapped().as_array()) for g in candidates])
    a = policy_act(x, None, True, nets.policy)
    return np.asarray(min_q(x, a, None, nets), dtype=np.float64)


def pose_scores(candidates: Sequence[GraspGoal], obs: Observation, params: RewardParams = RewardParams()) -> np.ndarray:
    e = obs.ee_in_object
    out = np.empty(len(candidates))
    for i, g in enumerate(candidates):
        dt, dth = pose_distance(g.pose_in_object, e)
        out[i] = params.alpha1 * dt + params.alpha2 * dth
    return out


def select(strategy: Strategy | str, candidates: Sequence[GraspGoal], obs: Observation,
           nets: SacNetworks | None, rng: np.random.Generator | None,
           reward_params: RewardParams = RewardParams()) -> int:
    """Index of the chosen candidate. Ties go to the lowest index."""
    strategy = Strategy.parse(strategy)
    if not candidates:
        raise EmptyCandidateSet("candidate set is empty")
    if strategy.needs_critics:
        if nets is None:
            raise ValueError(f"{strategy.value} needs trained critics")
        return int(np.argmax(q_scores(candidates, obs, nets)))
    if strategy in (Strategy.POSE_DIFF, Strategy.POSE_DIFF_T0):
        return int(np.argmin(pose_scores(candidates, obs, reward_params)))
    if rng is None:
        raise ValueError("Uniform selection needs an rng")
    return int(rng.integers(len(candidates)))


@dataclass
class Selector:
    """Per-episode selection state: re-selects every step unless the strategy is frozen."""

    strategy: Strategy
    candidates: list[GraspGoal]
    nets: SacNetworks | None = None
    rng: np.random.Generator | None = None
    reward_params: RewardParams = RewardParams()
    choice: int | None = None
    history: list[int] = field(default_factory=list)

    def __post_init__(self) -> None:
        self.strategy = Strategy.parse(self.strategy)
        if not self.candidates:
            raise EmptyCandidateSet("candidate set is empty")

    def __call__(self, obs: Observation) -> GraspGoal:
        if self.choice is None or not self.strategy.frozen:
            self.choice = select(self.strategy, self.candidates, obs, self.nets, self.rng, self.reward_params)
        self.history.append(self.choice)
        return self.candidates[self.choice]

    @property
    def switches(self) -> int:
        return sum(1 for a, b in zip(self.history, self.history[1:]) if a != b)
