"""Evaluation protocols: batched rollouts, open-loop replay, sensitivity sweeps and the lift check."""
from __future__ import annotations

import csv
import io
import json
import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import IO, Any, Callable, Iterable, Protocol, Sequence

import numpy as np

from . import physics2d as p2
from .arm import ControllerConfig
from .curriculum import GraspRange
from .env import (
    DOMAIN_FIELDS,
    FINGER_GAP,
    FINGER_LENGTH,
    TRACE_VERSION,
    DomainParams,
    EnvConfig,
    GraspGoal,
    Observation,
    OccludedGraspEnv,
    grasp_from_id,
    grasp_world,
    wall_face_x,
)
from .geometry import Pose2, wrap_angle
from .sac import SacNetworks, policy_act
from .selection import Selector, Strategy, sample_candidates

OUTCOMES = ("success", "missed_contact", "dropped", "timeout")
NOISE_DIMS = {"object_x": 0, "object_z": 1, "object_theta": 2}


class TraceVersionMismatch(ValueError):
    pass


class TruncatedTrace(ValueError):
    pass


class UnknownParameter(KeyError):
    pass


# ------------------------------------------------------------------- policies


class Policy(Protocol):
    def reset(self, env: OccludedGraspEnv, rng: np.random.Generator) -> None: ...

    def __call__(self, obs: Observation, goal: GraspGoal, rng: np.random.Generator) -> np.ndarray: ...


@dataclass
class SacPolicy:
    """Read-only view of trained networks."""

    nets: SacNetworks
    deterministic: bool = True

    def reset(self, env: OccludedGraspEnv, rng: np.random.Generator) -> None:
        pass

    def __call__(self, obs: Observation, goal: GraspGoal, rng: np.random.Generator) -> np.ndarray:
        return policy_act(obs, goal, self.deterministic, self.nets.policy, rng)


class RandomPolicy:
    def reset(self, env: OccludedGraspEnv, rng: np.random.Generator) -> None:
        pass

    def __call__(self, obs: Observation, goal: GraspGoal, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(-1.0, 1.0, size=3)


@dataclass
class OpenLoopPolicy:
    actions: Sequence[np.ndarray]
    _t: int = 0

    def reset(self, env: OccludedGraspEnv, rng: np.random.Generator) -> None:
        self._t = 0

    def __call__(self, obs: Observation, goal: GraspGoal, rng: np.random.Generator) -> np.ndarray:
        a = self.actions[min(self._t, len(self.actions) - 1)]
        self._t += 1
        return np.asarray(a, dtype=np.float64)


class ScriptedPushPolicy:
    """Hand-written push, pivot and regrasp for side grasps near ID 1.5.

    Pushes the box against the wall from its robot-facing end, rolls it up on
    the wall-side bottom edge until it leans on the wall, lifts clear and then
    approaches the (now upward facing) grasp from above. It reads the
    controller target from the environment, so it is a privileged baseline
    for testing, not a learned policy.
    """

    def __init__(self, tolerance: float = 1e-3) -> None:
        self.tolerance = tolerance
        self._env: OccludedGraspEnv | None = None
        self._k = 0
        self._fixed: list[Pose2] = []

    def reset(self, env: OccludedGraspEnv, rng: np.random.Generator) -> None:
        d = env.domain
        assert d is not None
        xe = wall_face_x(d) - d.object_size_x - d.initial_distance_to_wall
        tz = d.table_offset_z
        self._env, self._k = env, 0
        self._fixed = [
            Pose2(xe - 0.05, tz + 0.055, 0.0),
            Pose2(xe + 0.005, tz + 0.055, 0.0),
            Pose2(xe + 0.025, tz + 0.08, 0.0),
            Pose2(xe + 0.04, tz + 0.12, 0.3),
            Pose2(xe + 0.05, tz + 0.15, 0.6),
            Pose2(xe + 0.07, tz + 0.18, 0.3),
            Pose2(xe + 0.10, tz + 0.18, 0.0),
            Pose2(xe + 0.12, tz + 0.18, -0.3),
            Pose2(xe + 0.14, tz + 0.17, -0.3),
            Pose2(xe + 0.14, tz + 0.23, -0.3),
        ]

    def _waypoint(self, obs: Observation, goal: GraspGoal) -> Pose2:
        if self._k < len(self._fixed):
            return self._fixed[self._k]
        g = grasp_world(goal.pose_in_object, obs.object_world)
        pre = g @ Pose2(-0.035, 0.0, 0.0)
        stages = [Pose2(pre.x - 0.015, pre.z + 0.02, -1.0), pre, g]
        return stages[min(self._k - len(self._fixed), len(stages) - 1)]

    def __call__(self, obs: Observation, goal: GraspGoal, rng: np.random.Generator) -> np.ndarray:
        env = self._env
        assert env is not None and env.desired is not None and env.domain is not None
        cur = env.desired.target
        last = len(self._fixed) + 2
        while True:
            tgt = self._waypoint(obs, goal)
            dw = np.array([tgt.x - cur.x, tgt.z - cur.z, wrap_angle(tgt.theta - cur.theta)])
            if np.abs(dw).max() >= self.tolerance or self._k >= last:
                break
            self._k += 1
        c, s = math.cos(cur.theta), math.sin(cur.theta)
        local = np.array([c * dw[0] + s * dw[1], -s * dw[0] + c * dw[1], dw[2]])
        d = env.domain
        scale = np.array([d.action_translation_scale, d.action_translation_scale, d.action_rotation_scale])
        a = np.clip(local / scale, -1.0, 1.0)
        return a


# -------------------------------------------------------------------- results


@dataclass
class EpisodeResult:
    seed_index: int
    episode: int
    seed: int
    grasp_id: float
    success: bool
    outcome: str
    final_distance: float
    episode_return: float
    steps: int
    domain: dict[str, float]
    lift: bool | None = None
    selection_switches: int = 0
    config: str = "default"

    def row(self) -> dict[str, Any]:
        d = asdict(self)
        dom = d.pop("domain")
        d.update({f"domain.{k}": v for k, v in dom.items()})
        return d


@dataclass
class EvalReport:
    episodes: list[EpisodeResult] = field(default_factory=list)
    wall_time: float = 0.0
    label: str = "eval"

    @property
    def n_episodes(self) -> int:
        return len(self.episodes)

    @property
    def n_seeds(self) -> int:
        return len({e.seed_index for e in self.episodes})

    @property
    def success_rate(self) -> float:
        """Mean success, 0.0 for an empty report."""
        return sum(e.success for e in self.episodes) / len(self.episodes) if self.episodes else 0.0

    def per_seed(self) -> dict[int, float]:
        out: dict[int, list[bool]] = {}
        for e in self.episodes:
            out.setdefault(e.seed_index, []).append(e.success)
        return {k: sum(v) / len(v) for k, v in sorted(out.items())}

    def outcome_counts(self) -> dict[str, int]:
        counts = {o: 0 for o in OUTCOMES}
        for e in self.episodes:
            counts[e.outcome] += 1
        return counts

    def lift_rate(self) -> float | None:
        checked = [e.lift for e in self.episodes if e.success and e.lift is not None]
        return sum(checked) / len(checked) if checked else None

    def merge(self, other: EvalReport) -> EvalReport:
        return EvalReport(self.episodes + other.episodes, self.wall_time + other.wall_time, self.label)

    def summary(self) -> dict[str, Any]:
        seeds = self.per_seed()
        rates = list(seeds.values())
        return {
            "label": self.label,
            "episodes": self.n_episodes,
            "seeds": self.n_seeds,
            "success_rate": self.success_rate,
            "success_rate_seed_std": float(np.std(rates)) if rates else 0.0,
            "per_seed": {str(k): v for k, v in seeds.items()},
            "outcomes": self.outcome_counts(),
            "lift_rate": self.lift_rate(),
            "wall_time_s": self.wall_time,
            "wall_time_per_episode_s": self.wall_time / self.n_episodes if self.episodes else 0.0,
        }

    def csv_rows(self) -> list[dict[str, Any]]:
        """One row per (config, seed)."""
        groups: dict[tuple[str, int], list[EpisodeResult]] = {}
        for e in self.episodes:
            groups.setdefault((e.config, e.seed_index), []).append(e)
        rows = []
        for (cfg, seed), eps in sorted(groups.items()):
            row = {"config": cfg, "seed": seed, "episodes": len(eps), "successes": sum(e.success for e in eps),
                   "success_rate": sum(e.success for e in eps) / len(eps)}
            for o in OUTCOMES:
                row[o] = sum(e.outcome == o for e in eps)
            rows.append(row)
        return rows


# ------------------------------------------------------------------ rollouts


DomainSource = DomainParams | Sequence[DomainParams] | Callable[[np.random.Generator], DomainParams]
GoalSource = float | GraspRange | Sequence[float] | Callable[[DomainParams, np.random.Generator], GraspGoal]


def _domain_for(src: DomainSource, i: int, rng: np.random.Generator) -> DomainParams:
    if isinstance(src, DomainParams):
        return src
    if callable(src):
        return src(rng)
    return src[i]


def _goal_for(src: GoalSource, domain: DomainParams, i: int, rng: np.random.Generator) -> GraspGoal:
    if isinstance(src, (int, float)):
        return grasp_from_id(domain, float(src))
    if isinstance(src, GraspRange):
        return grasp_from_id(domain, src.sample(rng))
    if callable(src):
        return src(domain, rng)
    return grasp_from_id(domain, float(src[i]))


def episode_seeds(master_seed: int, n: int) -> list[int]:
    """Per-episode integer seeds from a master seed; independent of worker count."""
    return [int(s.generate_state(1, np.uint64)[0] >> np.uint64(1)) for s in np.random.SeedSequence(master_seed).spawn(n)]


@dataclass
class EpisodeSpec:
    index: int
    seed: int
    domain: DomainParams
    goal: GraspGoal


def run_episode(
    policy: Policy,
    spec: EpisodeSpec,
    env_config: EnvConfig = EnvConfig(),
    *,
    selector: Selector | None = None,
    obs_noise: tuple[int, float] | None = None,
    check_lift: bool = False,
    trace: IO[str] | None = None,
    seed_index: int = 0,
    config_label: str = "default",
) -> EpisodeResult:
    env = OccludedGraspEnv(env_config)
    ss = np.random.SeedSequence(spec.seed)
    env_ss, pol_ss, noise_ss = ss.spawn(3)
    pol_rng = np.random.Generator(np.random.Philox(pol_ss))
    noise_rng = np.random.Generator(np.random.Philox(noise_ss))
    obs = env.reset(spec.domain, spec.goal, seed=spec.seed, trace=trace)
    policy.reset(env, pol_rng)
    goal = spec.goal
    total, res = 0.0, None
    for _ in range(env_config.episode_steps):
        seen = obs
        if obs_noise is not None and obs_noise[1] > 0.0:
            dim, sigma = obs_noise
            o = obs.object_world.as_array()
            o[dim] += noise_rng.normal(0.0, sigma)
            seen = replace(obs, object_world=Pose2.from_array(o))
        if selector is not None:
            goal = selector(seen)
            env.set_goal(goal)
            seen = replace(seen, goal=goal.pose_in_object.wrapped())
        res = env.step(policy(seen, goal, pol_rng))
        total += res.reward
        obs = res.observation
        if res.done:
            break
    assert res is not None
    ok = bool(res.info["success"])
    lift = verify_lift(env) if (check_lift and ok) else None
    return EpisodeResult(
        seed_index=seed_index, episode=spec.index, seed=spec.seed, grasp_id=float(goal.grasp_id), success=ok,
        outcome=env.outcome(ok), final_distance=float(res.info["distance"]), episode_return=total, steps=env.t,
        domain=spec.domain.to_dict(), lift=lift,
        selection_switches=selector.switches if selector is not None else 0, config=config_label,
    )


def run_eval(
    policy_snapshot: Policy | SacNetworks,
    domain_source: DomainSource = DomainParams(),
    goal_source: GoalSource = 1.5,
    n_episodes: int = 10,
    strategy: Strategy | str | None = None,
    *,
    seed: int = 0,
    env_config: EnvConfig = EnvConfig(),
    workers: int = 1,
    n_candidates: int = 50,
    check_lift: bool = False,
    obs_noise: tuple[int, float] | None = None,
    seed_index: int = 0,
    label: str = "eval",
    config_label: str = "default",
    trace_dir: str | Path | None = None,
) -> EvalReport:
    """Roll out ``n_episodes`` episodes; deterministic for a given ``seed`` regardless of ``workers``.

    With a ``strategy`` the goal source must be a :class:`GraspRange`; each
    episode draws ``n_candidates`` grasps from it and the strategy picks the
    goal fed to the policy.
    """
    if n_episodes < 0:
        raise ValueError("n_episodes must be non-negative")
    policy: Policy = SacPolicy(policy_snapshot) if isinstance(policy_snapshot, SacNetworks) else policy_snapshot
    strat = Strategy.parse(strategy) if strategy is not None else None
    if strat is not None and not isinstance(goal_source, GraspRange):
        raise ValueError("grasp selection needs a GraspRange goal source")
    seeds = episode_seeds(seed, n_episodes)
    specs: list[tuple[EpisodeSpec, Selector | None]] = []
    for i, s in enumerate(seeds):
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([s, 1])))
        dom = _domain_for(domain_source, i, rng)
        selector = None
        if strat is not None:
            assert isinstance(goal_source, GraspRange)
            cands = sample_candidates(dom, goal_source, n_candidates, rng)
            nets = policy.nets if isinstance(policy, SacPolicy) else None
            selector = Selector(strat, cands, nets, rng)
            goal = cands[0]
        else:
            goal = _goal_for(goal_source, dom, i, rng)
        specs.append((EpisodeSpec(i, s, dom, goal), selector))

    def one(item: tuple[EpisodeSpec, Selector | None]) -> EpisodeResult:
        spec, sel = item
        # scripted and open-loop policies keep per-episode state, so each episode gets its own copy
        pol = policy if isinstance(policy, (SacPolicy, RandomPolicy)) else _clone(policy)
        if trace_dir is None:
            return run_episode(pol, spec, env_config, selector=sel, obs_noise=obs_noise, check_lift=check_lift,
                               seed_index=seed_index, config_label=config_label)
        path = Path(trace_dir) / f"{label}-s{seed_index}-e{spec.index:04d}.jsonl"
        with path.open("w") as fh:
            return run_episode(pol, spec, env_config, selector=sel, obs_noise=obs_noise, check_lift=check_lift,
                               trace=fh, seed_index=seed_index, config_label=config_label)

    if trace_dir is not None:
        Path(trace_dir).mkdir(parents=True, exist_ok=True)
    t0 = time.perf_counter()
    if workers > 1 and len(specs) > 1:
        with ThreadPoolExecutor(max_workers=workers) as ex:
            results = list(ex.map(one, specs))
    else:
        results = [one(s) for s in specs]
    return EvalReport(results, time.perf_counter() - t0, label)


def _clone(policy: Any) -> Any:
    import copy

    return copy.copy(policy) if not isinstance(policy, ScriptedPushPolicy) else ScriptedPushPolicy(policy.tolerance)


# --------------------------------------------------------------------- replay


@dataclass
class Trace:
    header: dict[str, Any]
    records: list[dict[str, Any]]

    @property
    def actions(self) -> list[np.ndarray]:
        return [np.asarray(r["action"], dtype=np.float64) for r in self.records]

    @property
    def success(self) -> bool:
        return bool(self.records[-1]["info"]["success"]) if self.records else False


def read_trace(src: str | Path | IO[str] | Iterable[str]) -> Trace:
    """Parse a line-delimited trace; raises on version mismatch or truncation."""
    if isinstance(src, (str, Path)):
        lines = Path(src).read_text().splitlines()
    else:
        lines = list(src.read().splitlines() if hasattr(src, "read") else src)
    lines = [ln for ln in lines if ln.strip()]
    if not lines:
        raise TruncatedTrace("empty trace")
    try:
        header = json.loads(lines[0])
        records = [json.loads(ln) for ln in lines[1:]]
    except json.JSONDecodeError as e:
        raise TruncatedTrace(f"malformed trace line: {e}") from e
    if header.get("version") != TRACE_VERSION:
        raise TraceVersionMismatch(f"trace version {header.get('version')} != {TRACE_VERSION}")
    expected = int(header.get("episode_steps", 0))
    for i, r in enumerate(records, start=1):
        if r.get("t") != i:
            raise TruncatedTrace(f"record {i} out of sequence")
    ended_early = bool(records) and bool(records[-1]["info"].get("nonfinite"))
    if len(records) < expected and not ended_early:
        raise TruncatedTrace(f"trace has {len(records)} of {expected} steps")
    return Trace(header, records)


def replay_open_loop(trace: Trace | str | Path | IO[str], domain: DomainParams | None = None,
                     env_config: EnvConfig | None = None, *, label: str = "open_loop") -> EvalReport:
    """Re-execute the recorded actions, ignoring observations, in ``domain`` (default: the recording domain)."""
    tr = trace if isinstance(trace, Trace) else read_trace(trace)
    h = tr.header
    rec_domain = DomainParams.from_dict(h["domain"])
    dom = domain or rec_domain
    if env_config is None:
        from .env import AblationConfig

        env_config = EnvConfig(ablation=AblationConfig(**h.get("ablation", {})),
                               episode_steps=int(h.get("episode_steps", 40)))
    gid = float(h["goal"]["grasp_id"])
    goal = grasp_from_id(dom, gid) if dom != rec_domain and math.isfinite(gid) else \
        GraspGoal(Pose2.from_array(np.asarray(h["goal"]["pose"])), gid)
    seed = h.get("seed")
    seed = int(seed) if isinstance(seed, (int, float)) else 0
    spec = EpisodeSpec(0, seed, dom, goal)
    t0 = time.perf_counter()
    res = run_episode(OpenLoopPolicy(tr.actions), spec, env_config, config_label=label)
    return EvalReport([res], time.perf_counter() - t0, label)


# ---------------------------------------------------------------------- sweeps


@dataclass
class SweepCurve:
    param: str
    mode: str  # "value" or "noise"
    values: list[float]
    mean: list[float]
    std: list[float]
    per_seed: list[dict[int, float]]

    def as_dict(self) -> dict[str, Any]:
        return asdict(self)


def sensitivity_sweep(
    policies: Policy | SacNetworks | Sequence[Policy | SacNetworks],
    param_name: str,
    values: Sequence[float] | None = None,
    noise_sigmas: Sequence[float] | None = None,
    *,
    base_domain: DomainParams = DomainParams(),
    goal_source: GoalSource = 1.5,
    n_episodes: int = 10,
    seed: int = 0,
    env_config: EnvConfig = EnvConfig(),
    workers: int = 1,
) -> SweepCurve:
    """Success versus one physical parameter or versus observation noise on one object-pose dimension.

    ``policies`` may hold one policy per training seed; the curve reports the
    mean and standard deviation across them.
    """
    pols = list(policies) if isinstance(policies, (list, tuple)) else [policies]
    if (values is None) == (noise_sigmas is None):
        raise ValueError("give exactly one of values or noise_sigmas")
    if values is not None:
        if param_name not in DOMAIN_FIELDS:
            raise UnknownParameter(param_name)
        mode, xs = "value", list(values)
    else:
        if param_name not in NOISE_DIMS:
            raise UnknownParameter(param_name)
        mode, xs = "noise", list(noise_sigmas or [])
    means, stds, per = [], [], []
    for x in xs:
        rates = {}
        for si, pol in enumerate(pols):
            if mode == "value":
                rep = run_eval(pol, replace(base_domain, **{param_name: float(x)}), goal_source, n_episodes,
                               seed=seed, env_config=env_config, workers=workers, seed_index=si)
            else:
                rep = run_eval(pol, base_domain, goal_source, n_episodes, seed=seed, env_config=env_config,
                               workers=workers, obs_noise=(NOISE_DIMS[param_name], float(x)), seed_index=si)
            rates[si] = rep.success_rate
        v = list(rates.values())
        means.append(float(np.mean(v)))
        stds.append(float(np.std(v)))
        per.append(rates)
    return SweepCurve(param_name, mode, [float(x) for x in xs], means, stds, per)


# ------------------------------------------------------------------ lift check

WELD_SLACK = 0.005
LIFT_HEIGHT = 0.10
LIFT_DURATION = 2.0
LIFT_MIN_GAIN = 0.05


def _clip_band(poly: np.ndarray, lo: float, hi: float) -> np.ndarray:
    """Sutherland-Hodgman clip of a polygon to ``lo <= x <= hi``."""
    def clip(pts: list[np.ndarray], keep: Callable[[np.ndarray], float]) -> list[np.ndarray]:
        out = []
        for i in range(len(pts)):
            a, b = pts[i], pts[(i + 1) % len(pts)]
            fa, fb = keep(a), keep(b)
            if fa >= 0:
                out.append(a)
            if (fa >= 0) != (fb >= 0):
                out.append(a + (b - a) * (fa / (fa - fb)))
        return out

    pts = [p for p in poly]
    pts = clip(pts, lambda p: p[0] - lo) if pts else pts
    pts = clip(pts, lambda p: hi - p[0]) if pts else pts
    return np.array(pts).reshape(-1, 2)


def _body_shapes(world: p2.World2, i: int) -> list[np.ndarray]:
    return [world.verts[world.shape_start[k]:world.shape_start[k] + world.shape_count[k]].copy()
            for k in range(len(world.shape_body)) if world.shape_body[k] == i]


def weld_check(world: p2.World2, obj: int, grip: int) -> bool:
    """True if closing the fingers would clamp the object between both pads."""
    ee = world.body_pose(grip)
    op = world.body_pose(obj)
    rel = ee.inverse() @ op
    shapes = _body_shapes(world, obj)
    if len(shapes) != 1:
        return False
    local = np.array([rel.transform_point(*v) for v in shapes[0]])
    band = _clip_band(local, -FINGER_LENGTH, 0.0)
    if len(band) < 3 or band[:, 0].max() - band[:, 0].min() < 0.005:
        return False
    zmin, zmax = band[:, 1].min(), band[:, 1].max()
    half = FINGER_GAP / 2
    if zmin < -half - 0.002 or zmax > half + 0.002:
        return False  # does not fit between the open pads
    # thickness along the object axis closest to the closing direction
    ext = shapes[0].max(axis=0) - shapes[0].min(axis=0)
    ca = abs(math.cos(rel.theta))
    thickness = ext[1] if ca >= math.sqrt(0.5) else ext[0]
    return (zmax - zmin) <= thickness + WELD_SLACK


def _welded_world(world: p2.World2, obj: int, grip: int) -> tuple[p2.World2, int]:
    """Copy of ``world`` with the object merged into the gripper and its mass moved onto the last link."""
    assert world.arm is not None
    ee, op = world.body_pose(grip), world.body_pose(obj)
    rel = ee.inverse() @ op
    obj_shape = _body_shapes(world, obj)[0]
    in_grip = np.array([rel.transform_point(*v) for v in obj_shape])
    bodies = []
    new_tip = -1
    for i in range(world.n_bodies):
        if i == obj:
            continue
        shapes = _body_shapes(world, i)
        if i == grip:
            shapes = shapes + [in_grip]
            new_tip = len(bodies)
        static = world.dyn[i] == 0
        bodies.append(p2.RigidBody2(world.body_pose(i), shapes, mass=world.mass[i] if not static else 1.0,
                                    inertia=world.inertia[i] if not static else 1.0,
                                    velocity=tuple(world.vel[i]), friction_coeff=world.friction[i],
                                    is_static=bool(static), name=world.names[i]))
    chain = world.arm.chain.copy()
    L3, m3, d3, I3 = chain[4], chain[7], chain[10], chain[13]
    mo = float(world.mass[obj])
    io_ = float(world.inertia[obj])
    po = L3 + rel.x  # object centre along the last link, measured from its joint
    m = m3 + mo
    d = (m3 * d3 + mo * po) / m
    chain[7], chain[10] = m, d
    chain[13] = I3 + m3 * (d3 - d) ** 2 + io_ + mo * ((po - d) ** 2 + rel.z ** 2)
    arm = p2.ArmBinding(chain, world.arm.q.copy(), world.arm.qd.copy(), tip=new_tip)
    return p2.World2(bodies, arm=arm), new_tip


def verify_lift(env_or_world: OccludedGraspEnv | p2.World2, obj: int | None = None, grip: int | None = None,
                controller: ControllerConfig = ControllerConfig()) -> bool:
    """Close the gripper, lift 10 cm over 2 s and report whether the object rose at least 5 cm."""
    try:
        if isinstance(env_or_world, OccludedGraspEnv):
            world, obj, grip = env_or_world.world, env_or_world.obj, env_or_world.grip
        else:
            world = env_or_world
        if world is None or obj is None or grip is None or world.arm is None:
            return False
        if not world.dyn[obj] or not weld_check(world, obj, grip):
            return False  # pinned objects cannot be carried
        z0 = world.pose[obj, 1]
        rel = world.body_pose(grip).inverse() @ world.body_pose(obj)
        w, tip = _welded_world(world, obj, grip)
        start = w.body_pose(tip)
        gains = controller.gain_vector()
        segments = 20
        per = int(round(LIFT_DURATION * 1000 / segments / 10))
        for k in range(1, segments + 1):
            tgt = Pose2(start.x, start.z + LIFT_HEIGHT * k / segments, start.theta)
            p2.run_osc(w, tgt.as_array(), gains, per, 10)
        p2.run_osc(w, Pose2(start.x, start.z + LIFT_HEIGHT, start.theta).as_array(), gains, 50, 10)
        z1 = (w.body_pose(tip) @ rel).z
        return bool(math.isfinite(z1) and z1 - z0 >= LIFT_MIN_GAIN)
    except (p2.NonFiniteState, p2.InvalidWorld, ValueError):
        return False


# --------------------------------------------------------------------- reports


def write_report(report: EvalReport, out_dir: str | Path, name: str | None = None) -> dict[str, Path]:
    """CSV (one row per config and seed), episode CSV and a summary JSON."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    name = name or report.label
    paths = {"csv": out / f"{name}.csv", "episodes": out / f"{name}_episodes.csv", "summary": out / f"{name}_summary.json"}
    rows = report.csv_rows()
    fields_ = ["config", "seed", "episodes", "successes", "success_rate", *OUTCOMES]
    with paths["csv"].open("w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=fields_)
        w.writeheader()
        w.writerows(rows)
    ep_rows = [e.row() for e in report.episodes]
    with paths["episodes"].open("w", newline="") as fh:
        if ep_rows:
            w = csv.DictWriter(fh, fieldnames=list(ep_rows[0].keys()))
            w.writeheader()
            w.writerows(ep_rows)
    paths["summary"].write_text(json.dumps(report.summary(), indent=2, sort_keys=True))
    return paths


def write_curve_svg(curves: Sequence[SweepCurve] | SweepCurve, path: str | Path, *, title: str = "",
                    xlabel: str | None = None, labels: Sequence[str] | None = None) -> Path:
    """Static line plot of success versus value with a one-std band."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    cs = [curves] if isinstance(curves, SweepCurve) else list(curves)
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for i, c in enumerate(cs):
        x, m, s = np.array(c.values), np.array(c.mean), np.array(c.std)
        ax.plot(x, m, marker="o", label=labels[i] if labels else c.param)
        ax.fill_between(x, np.clip(m - s, 0, 1), np.clip(m + s, 0, 1), alpha=0.2)
    ax.set_ylim(-0.02, 1.02)
    ax.set_xlabel(xlabel or cs[0].param if cs else "")
    ax.set_ylabel("success rate")
    if title:
        ax.set_title(title)
    if len(cs) > 1 or labels:
        ax.legend()
    fig.tight_layout()
    path = Path(path)
    fig.savefig(path, format="svg")
    plt.close(fig)
    return path
