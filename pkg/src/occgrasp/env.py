"""The occluded-grasping task in the XZ plane.

A box lies flat on a table next to a bin wall. The goal is a grasp pose
``^O g`` attached to the box whose lower finger starts below the table
surface, so the arm has to reorient the box (typically by pinning it against
the wall) before the gripper can reach it. The policy acts at 2 Hz with
end-effector delta poses; an operational-space controller tracks the
resulting target at 100 Hz on a 1 kHz physics tick.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import IO, Any

import numpy as np

from . import physics2d as p2
from .arm import (
    ArmDynamics,
    ArmState,
    ControllerConfig,
    DesiredPose,
    inverse_kinematics,
    joint_limit_guard,
)
from .geometry import Pose2, angle_diff, box_polygon, relative, wrap_angle

FLOOR, WALL = 0, 1
OBJECT_DEPTH = 0.2  # m, out-of-plane extent used for the object mass
GRASP_INSET = 0.02
WALL_HALF_WIDTH = 0.025
WALL_HEIGHT = 0.10
WALL_OFFSET = 0.2  # inner wall face sits this far beyond table_offset_x
ROBOT_BASE = (0.0, 0.45)
LINK_LENGTHS = (0.4, 0.4, 0.2)
JOINT_LIMITS = ((-1.0, 1.8), (-2.9, -0.15), (-2.9, 2.9))
HOME_EE = Pose2(0.42, 0.15, 0.0)
FINGER_GAP = 0.08
FINGER_LENGTH = 0.05
FINGER_THICKNESS = 0.01
PALM_THICKNESS = 0.02
TRACE_VERSION = 1
RESET_ATTEMPTS = 100


class InvalidScene(ValueError):
    pass


class OutOfRange(ValueError):
    pass


@dataclass(frozen=True)
class DomainParams:
    object_size_x: float = 0.15
    object_size_z: float = 0.05
    table_friction: float = 0.3
    gripper_friction: float = 3.0
    object_density: float = 86.0  # kg/m^3
    action_translation_scale: float = 0.03
    action_rotation_scale: float = 0.2
    initial_distance_to_wall: float = 0.0
    table_offset_x: float = 0.5
    table_offset_z: float = 0.07

    def validate(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v):
                raise InvalidScene(f"{f.name} must be finite")
        if self.object_size_x <= 0 or self.object_size_z <= 0 or self.object_density <= 0:
            raise InvalidScene("object sizes and density must be positive")
        if self.table_friction < 0 or self.gripper_friction < 0:
            raise InvalidScene("friction must be non-negative")
        if self.initial_distance_to_wall < 0:
            raise InvalidScene("initial_distance_to_wall must be non-negative")

    @property
    def object_mass(self) -> float:
        return self.object_density * self.object_size_x * self.object_size_z * OBJECT_DEPTH

    def to_dict(self) -> dict[str, float]:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> DomainParams:
        return cls(**{k: float(v) for k, v in d.items()})


DOMAIN_FIELDS = tuple(f.name for f in fields(DomainParams))


@dataclass(frozen=True)
class AblationConfig:
    no_wall: bool = False
    no_occlusion_penalty: bool = False
    sparse_reward: bool = False
    high_gain_osc: bool = False
    open_loop: bool = False


@dataclass(frozen=True)
class RewardParams:
    alpha1: float = 50.0
    alpha2: float = 2.0
    beta: float = 200.0
    eps_T: float = 0.03
    eps_theta: float = math.radians(10.0)
    # fingertips and knuckles of the goal gripper, in the grasp frame
    markers: tuple[tuple[float, float], ...] = ((0.0, 0.05), (0.0, -0.05), (-0.05, 0.05), (-0.05, -0.05))

    def __post_init__(self) -> None:
        if min(self.alpha1, self.alpha2, self.beta) < 0:
            raise ValueError("reward weights must be non-negative")
        if self.eps_T <= 0 or self.eps_theta <= 0:
            raise ValueError("success thresholds must be positive")
        if len(self.markers) < 3:
            raise ValueError("need at least three markers")


@dataclass(frozen=True)
class GraspGoal:
    pose_in_object: Pose2
    grasp_id: float

    def __post_init__(self) -> None:
        if not self.pose_in_object.is_finite():
            raise ValueError("grasp pose must be finite")


@dataclass(frozen=True)
class Observation:
    goal: Pose2
    ee_world: Pose2
    object_world: Pose2

    @property
    def ee_in_object(self) -> Pose2:
        return relative(self.object_world, self.ee_world)

    def as_array(self) -> np.ndarray:
        e = self.ee_in_object
        return np.array(
            [
                self.goal.x, self.goal.z, wrap_angle(self.goal.theta),
                self.ee_world.x, self.ee_world.z, wrap_angle(self.ee_world.theta),
                self.object_world.x, self.object_world.z, wrap_angle(self.object_world.theta),
                e.x, e.z, e.theta,
            ],
            dtype=np.float64,
        )

    @classmethod
    def from_array(cls, a: np.ndarray) -> Observation:
        a = np.asarray(a, dtype=np.float64)
        return cls(Pose2.from_array(a[0:3]), Pose2.from_array(a[3:6]), Pose2.from_array(a[6:9]))


OBS_DIM = 12
ACTION_DIM = 3
GOAL_SLICE = slice(0, 3)
ACHIEVED_SLICE = slice(9, 12)
OBJECT_SLICE = slice(6, 9)


@dataclass
class StepResult:
    observation: Observation
    reward: float
    done: bool
    info: dict[str, Any]


# ------------------------------------------------------------------ grasps


def grasp_from_id(domain: DomainParams, grasp_id: float) -> GraspGoal:
    """Map a grasp ID in [0, 4] onto the box cross-section.

    IDs up to 2 sweep the robot-facing side face bottom to top, reaching its
    middle at 1.5, with the gripper approaching horizontally. Between 1.5 and
    2.5 the approach turns from horizontal to vertical, and IDs from 2 to 4
    slide along the top face from the near corner to its centre.
    """
    if not (0.0 <= grasp_id <= 4.0) or not math.isfinite(grasp_id):
        raise OutOfRange(f"grasp id {grasp_id} outside [0, 4]")
    hx = domain.object_size_x / 2
    hz = domain.object_size_z / 2
    ax = max(hx - GRASP_INSET, 0.0)
    az = max(hz - GRASP_INSET, 0.0)
    if grasp_id <= 1.5:
        x, z = -ax, -az * (1.0 - grasp_id / 1.5)
    elif grasp_id <= 2.0:
        x, z = -ax, az * (grasp_id - 1.5) / 0.5
    else:
        x, z = -ax * (4.0 - grasp_id) / 2.0, az
    if grasp_id <= 1.5:
        pitch = 0.0
    elif grasp_id >= 2.5:
        pitch = -math.pi / 2
    else:
        pitch = -math.pi / 2 * (grasp_id - 1.5)
    return GraspGoal(Pose2(x, z, pitch), float(grasp_id))


# ------------------------------------------------------------------ reward


def grasp_world(goal_in_object: Pose2, object_world: Pose2) -> Pose2:
    return object_world @ goal_in_object


def occlusion_penalty(goal_in_object: Pose2, object_world: Pose2, table_z: float, params: RewardParams) -> float:
    g = grasp_world(goal_in_object, object_world)
    total = 0.0
    for mx, mz in params.markers:
        _, z = g.transform_point(mx, mz)
        total += max(0.0, table_z - z)
    return total


def pose_distance(goal_in_object: Pose2, ee_in_object: Pose2) -> tuple[float, float]:
    return goal_in_object.translation_distance(ee_in_object), angle_diff(goal_in_object.theta, ee_in_object.theta)


def compute_reward(
    goal: GraspGoal | Pose2,
    obs: Observation,
    table_z: float,
    params: RewardParams = RewardParams(),
    *,
    sparse: bool = False,
) -> tuple[float, float, float]:
    """Return ``(reward, D, occlusion)``; ``D`` is the weighted pose distance.

    ``goal`` may differ from ``obs.goal`` (relabelling); the occlusion markers
    ride on ``goal`` attached to the current object pose.
    """
    g = goal.pose_in_object if isinstance(goal, GraspGoal) else goal
    dT, dth = pose_distance(g, obs.ee_in_object)
    D = params.alpha1 * dT + params.alpha2 * dth
    occ = occlusion_penalty(g, obs.object_world, table_z, params)
    if sparse:
        ok = dT < params.eps_T and dth < params.eps_theta
        return (0.0 if ok else -1.0), D, occ
    return -(D + params.beta * occ), D, occ


def success(goal: GraspGoal | Pose2, obs: Observation, params: RewardParams = RewardParams()) -> bool:
    g = goal.pose_in_object if isinstance(goal, GraspGoal) else goal
    dT, dth = pose_distance(g, obs.ee_in_object)
    return dT < params.eps_T and dth < params.eps_theta


def reward_from_arrays(obs: np.ndarray, goal: np.ndarray, table_z: float, params: RewardParams, sparse: bool) -> float:
    return compute_reward(Pose2.from_array(goal), Observation.from_array(obs), table_z, params, sparse=sparse)[0]


# ------------------------------------------------------------------- scene


def gripper_shapes() -> list[np.ndarray]:
    """Two finger pads and the palm, in the end-effector frame (fingertip midpoint at the origin)."""
    fh = FINGER_LENGTH / 2
    inner = FINGER_GAP / 2
    t = FINGER_THICKNESS / 2
    return [
        box_polygon(fh, t, -fh, inner + t),
        box_polygon(fh, t, -fh, -inner - t),
        box_polygon(PALM_THICKNESS / 2, inner + FINGER_THICKNESS, -FINGER_LENGTH - PALM_THICKNESS / 2, 0.0),
    ]


def home_q() -> np.ndarray:
    return inverse_kinematics(HOME_EE, LINK_LENGTHS, ROBOT_BASE, elbow_up=True)


def wall_face_x(domain: DomainParams) -> float:
    return domain.table_offset_x + WALL_OFFSET


def build_world(domain: DomainParams, q: np.ndarray, *, no_wall: bool = False, dynamics: ArmDynamics = ArmDynamics()):
    """World with floor, optional wall, the box and the gripper; returns (world, object_index, gripper_index)."""
    tz = domain.table_offset_z
    bodies = [
        p2.box_body(1.0, 0.05, Pose2(domain.table_offset_x, tz - 0.05), is_static=True,
                    friction=domain.table_friction, name="floor"),
    ]
    xw = wall_face_x(domain)
    if not no_wall:
        bodies.append(
            p2.box_body(WALL_HALF_WIDTH, WALL_HEIGHT / 2, Pose2(xw + WALL_HALF_WIDTH, tz + WALL_HEIGHT / 2),
                        is_static=True, friction=domain.table_friction, name="wall")
        )
    hx, hz = domain.object_size_x / 2, domain.object_size_z / 2
    obj = p2.box_body(hx, hz, Pose2(xw - hx - domain.initial_distance_to_wall, tz + hz),
                      mass=domain.object_mass, friction=0.0, name="object")
    bodies.append(obj)
    grip = p2.RigidBody2(Pose2(), gripper_shapes(), mass=1.0, inertia=1.0,
                         friction_coeff=domain.gripper_friction, name="gripper")
    bodies.append(grip)
    state = ArmState(q=q, link_lengths=LINK_LENGTHS, joint_limits=JOINT_LIMITS, finger_gap=FINGER_GAP, base=ROBOT_BASE)
    binding = p2.ArmBinding(dynamics.chain(state), q.copy(), np.zeros(3), tip=len(bodies) - 1)
    world = p2.World2(bodies, arm=binding)
    return world, len(bodies) - 2, len(bodies) - 1


def make_rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(ss))


# --------------------------------------------------------------------- env


@dataclass(frozen=True)
class EnvConfig:
    reward: RewardParams = RewardParams()
    controller: ControllerConfig = ControllerConfig()
    ablation: AblationConfig = AblationConfig()
    episode_steps: int = 40
    control_ticks_per_step: int = 50
    physics_ticks_per_control: int = 10
    joint_noise: float = 0.02


class OccludedGraspEnv:
    """Single-instance environment; not thread-safe, but instances share nothing."""

    def __init__(self, config: EnvConfig = EnvConfig()) -> None:
        self.config = config
        ctrl = config.controller.high_gain() if config.ablation.high_gain_osc else config.controller
        self._gains = ctrl.gain_vector()
        self._reward = (
            replace(config.reward, beta=0.0) if config.ablation.no_occlusion_penalty else config.reward
        )
        self.world: p2.World2 | None = None
        self.domain: DomainParams | None = None
        self.goal: GraspGoal | None = None
        self.t = 0
        self.desired: DesiredPose | None = None
        self.obj = self.grip = -1
        self._touched_object = False
        self._max_tilt = 0.0
        self._trace: IO[str] | None = None

    @property
    def reward_params(self) -> RewardParams:
        return self._reward

    @property
    def table_z(self) -> float:
        assert self.domain is not None
        return self.domain.table_offset_z

    def reset(self, domain: DomainParams, goal: GraspGoal, seed=None, trace: IO[str] | None = None) -> Observation:
        domain.validate()
        if not (0.0 <= goal.grasp_id <= 4.0):
            raise OutOfRange("grasp id outside [0, 4]")
        rng = make_rng(seed)
        for _ in range(RESET_ATTEMPTS):
            q = home_q() + rng.normal(0.0, self.config.joint_noise, size=3)
            world, self.obj, self.grip = build_world(domain, q, no_wall=self.config.ablation.no_wall)
            deep = [c for c in p2.detect_contacts(world) if c.penetration_depth > world.slop]
            if not deep:
                break
            if any(self.grip not in (c.body_a, c.body_b) for c in deep):
                raise InvalidScene(f"initial penetration {max(c.penetration_depth for c in deep):.2e} m "
                                   "exceeds the slop")
            # a tail draw of the joint noise put the gripper into the scene: draw again
        else:
            raise InvalidScene(f"no collision-free start pose in {RESET_ATTEMPTS} draws")
        self.world, self.domain, self.goal = world, domain, goal
        self.t = 0
        self.desired = DesiredPose(world.body_pose(self.grip))
        self._touched_object = False
        self._max_tilt = 0.0
        self._trace = trace
        obs = self.observe()
        if trace is not None:
            header = {
                "version": TRACE_VERSION,
                "domain": domain.to_dict(),
                "goal": {"pose": list(goal.pose_in_object.as_array()), "grasp_id": goal.grasp_id},
                "seed": seed if isinstance(seed, (int, type(None))) else str(seed),
                "ablation": asdict(self.config.ablation),
                "episode_steps": self.config.episode_steps,
                "obs": obs.as_array().tolist(),
            }
            trace.write(json.dumps(header) + "\n")
        return obs

    def arm_state(self) -> ArmState:
        assert self.world is not None and self.world.arm is not None
        return ArmState(q=self.world.arm.q, qdot=self.world.arm.qd, link_lengths=LINK_LENGTHS,
                        joint_limits=JOINT_LIMITS, finger_gap=FINGER_GAP, base=ROBOT_BASE)

    def observe(self, goal: GraspGoal | None = None) -> Observation:
        assert self.world is not None
        g = goal or self.goal
        assert g is not None
        return Observation(
            goal=g.pose_in_object.wrapped(),
            ee_world=self.world.body_pose(self.grip).wrapped(),
            object_world=self.world.body_pose(self.obj).wrapped(),
        )

    def set_goal(self, goal: GraspGoal) -> None:
        self.goal = goal

    def step(self, action) -> StepResult:
        if self.world is None or self.domain is None or self.goal is None or self.desired is None:
            raise RuntimeError("reset() before step()")
        a = np.clip(np.asarray(action, dtype=np.float64).reshape(3), -1.0, 1.0)
        d = self.domain
        delta = Pose2(a[0] * d.action_translation_scale, a[1] * d.action_translation_scale,
                      a[2] * d.action_rotation_scale)
        self.desired = joint_limit_guard(self.arm_state(), delta, self.desired)
        w = self.world
        w.reset_stats()
        cfg = self.config
        failed = False
        try:
            p2.run_osc(w, self.desired.target.as_array(), self._gains, cfg.control_ticks_per_step,
                       cfg.physics_ticks_per_control)
        except p2.NonFiniteState:
            failed = True
        self.t += 1
        obs = self.observe() if not failed else self._last_finite_obs()
        touched_obj = w.touched(self.obj, self.grip)
        self._touched_object |= touched_obj
        self._max_tilt = max(self._max_tilt, abs(wrap_angle(w.pose[self.obj, 2])))
        reward, D, occ = compute_reward(self.goal, obs, self.table_z, self._reward,
                                        sparse=cfg.ablation.sparse_reward)
        ok = (not failed) and success(self.goal, obs, self._reward)
        done = failed or self.t >= cfg.episode_steps
        info = {
            "success": ok,
            "ee_object_contact": touched_obj,
            "object_wall_contact": (not cfg.ablation.no_wall) and w.touched(WALL, self.obj),
            "occlusion_penalty_value": occ,
            "distance": D,
            "nonfinite": failed,
            "max_penetration": w.max_penetration,
            "peak_tip_force": w.peak_tip_force.tolist(),
            "mean_tip_force": w.mean_tip_force.tolist(),
        }
        if self._trace is not None:
            rec = {"t": self.t, "obs": obs.as_array().tolist(), "action": a.tolist(), "reward": reward,
                   "info": info}
            self._trace.write(json.dumps(rec) + "\n")
        return StepResult(obs, float(reward), bool(done), info)

    def _last_finite_obs(self) -> Observation:
        assert self.goal is not None
        nan = Pose2(math.nan, math.nan, math.nan)
        return Observation(self.goal.pose_in_object, nan, nan)

    def outcome(self, final_success: bool) -> str:
        """Coarse episode tag: success, missed_contact, dropped or timeout."""
        if final_success:
            return "success"
        if not self._touched_object:
            return "missed_contact"
        assert self.world is not None and self.domain is not None
        oz = self.world.pose[self.obj, 1]
        off_table = oz < self.table_z - 0.01 or abs(self.world.pose[self.obj, 0] - self.domain.table_offset_x) > 1.0
        fell_back = self._max_tilt > math.radians(20) and abs(wrap_angle(self.world.pose[self.obj, 2])) < math.radians(5)
        if off_table or fell_back:
            return "dropped"
        return "timeout"


@dataclass
class EpisodeRecord:
    observations: list[np.ndarray] = field(default_factory=list)
    actions: list[np.ndarray] = field(default_factory=list)
    rewards: list[float] = field(default_factory=list)
    success: bool = False
    outcome: str = "timeout"
