"""Planar three-joint arm, operational-space control and the joint-limit guard."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .geometry import Pose2, wrap_angle
from .kernel import core

SINGULAR_DET = 1e-6
LIMIT_MARGIN = 0.05


@dataclass
class ArmState:
    q: np.ndarray
    qdot: np.ndarray = field(default_factory=lambda: np.zeros(3))
    link_lengths: tuple[float, float, float] = (0.4, 0.4, 0.2)
    joint_limits: tuple[tuple[float, float], ...] = ((-math.pi, math.pi),) * 3
    finger_gap: float = 0.08
    base: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self) -> None:
        self.q = np.asarray(self.q, dtype=np.float64).reshape(3).copy()
        self.qdot = np.asarray(self.qdot, dtype=np.float64).reshape(3).copy()
        if any(L <= 0 for L in self.link_lengths):
            raise ValueError("link lengths must be positive")
        if len(self.joint_limits) != 3 or any(lo >= hi for lo, hi in self.joint_limits):
            raise ValueError("each joint needs lo < hi")


@dataclass(frozen=True)
class ArmDynamics:
    """Inertial parameters; centroidal inertia defaults to that of a slender rod."""

    masses: tuple[float, float, float] = (3.0, 2.0, 1.0)
    com_fraction: float = 0.5
    armature: tuple[float, float, float] = (0.1, 0.1, 0.1)
    damping: tuple[float, float, float] = (0.5, 0.5, 0.5)
    inertias: tuple[float, float, float] | None = None

    def chain(self, state: ArmState) -> np.ndarray:
        L = state.link_lengths
        inertias = self.inertias or tuple(m * l * l / 12.0 for m, l in zip(self.masses, L))
        return np.array(
            [*state.base, *L, *self.masses, *(self.com_fraction * l for l in L), *inertias, *self.armature, *self.damping],
            dtype=np.float64,
        )


@dataclass(frozen=True)
class ControllerConfig:
    kp_pos: float = 300.0
    kp_rot: float = 30.0
    max_wrench: tuple[float, float, float] = (30.0, 30.0, 10.0)

    def __post_init__(self) -> None:
        if self.kp_pos <= 0 or self.kp_rot <= 0 or any(m <= 0 for m in self.max_wrench):
            raise ValueError("gains and wrench limits must be positive")

    @property
    def kd_pos(self) -> float:
        return math.sqrt(self.kp_pos)

    @property
    def kd_rot(self) -> float:
        return math.sqrt(self.kp_rot)

    def high_gain(self) -> ControllerConfig:
        return replace(self, kp_pos=2 * self.kp_pos, kp_rot=2 * self.kp_rot)

    def gain_vector(self) -> np.ndarray:
        """Kernel layout: kp (x, z, theta), kd (x, z, theta), clamp (fx, fz, tau)."""
        return np.array(
            [self.kp_pos, self.kp_pos, self.kp_rot, self.kd_pos, self.kd_pos, self.kd_rot, *self.max_wrench],
            dtype=np.float64,
        )


@dataclass(frozen=True)
class DesiredPose:
    target: Pose2

    def __post_init__(self) -> None:
        if not self.target.is_finite():
            raise ValueError("desired pose must be finite")


@dataclass(frozen=True)
class OscCommand:
    torques: np.ndarray
    wrench: np.ndarray
    raw_wrench: np.ndarray
    singular: bool


def forward_kinematics(state: ArmState) -> Pose2:
    x, z = state.base
    phi = 0.0
    for qi, L in zip(state.q, state.link_lengths):
        phi += qi
        x += L * math.cos(phi)
        z += L * math.sin(phi)
    return Pose2(x, z, phi)


def joint_points(state: ArmState) -> np.ndarray:
    """Base, elbow, wrist and tip positions, shape (4, 2)."""
    pts = np.zeros((4, 2))
    pts[0] = state.base
    phi = 0.0
    for i, (qi, L) in enumerate(zip(state.q, state.link_lengths)):
        phi += qi
        pts[i + 1] = pts[i] + L * np.array([math.cos(phi), math.sin(phi)])
    return pts


def jacobian(state: ArmState) -> np.ndarray:
    pts = joint_points(state)
    e = pts[3]
    J = np.empty((3, 3))
    for j in range(3):
        J[0, j] = -(e[1] - pts[j, 1])
        J[1, j] = e[0] - pts[j, 0]
        J[2, j] = 1.0
    return J


def dynamics_terms(
    state: ArmState, dyn: ArmDynamics = ArmDynamics(), gravity: tuple[float, float] = (0.0, -9.81)
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Mass matrix M(q), full bias h(q, qdot) and gravity torques g(q)."""
    J = np.zeros((3, 3))
    M = np.zeros((3, 3))
    h = np.zeros(3)
    g = np.zeros(3)
    core.chain_terms(dyn.chain(state), state.q, state.qdot, gravity[0], gravity[1], J, M, h, g)
    return M, h, g


def pose_error(desired: Pose2, current: Pose2) -> np.ndarray:
    return np.array([desired.x - current.x, desired.z - current.z, wrap_angle(desired.theta - current.theta)])


def osc_wrench(
    state: ArmState,
    desired: DesiredPose,
    cfg: ControllerConfig,
    dyn: ArmDynamics = ArmDynamics(),
    gravity: tuple[float, float] = (0.0, -9.81),
) -> OscCommand:
    """Task-space PD wrench, clamped, mapped through J^T, plus gravity compensation.

    Matches the per-period computation of the fused kernel loop exactly.
    """
    J = jacobian(state)
    err = pose_error(desired.target, forward_kinematics(state))
    v = J @ state.qdot
    kp = np.array([cfg.kp_pos, cfg.kp_pos, cfg.kp_rot])
    kd = np.array([cfg.kd_pos, cfg.kd_pos, cfg.kd_rot])
    raw = kp * err - kd * v
    lim = np.asarray(cfg.max_wrench, dtype=np.float64)
    f = np.clip(raw, -lim, lim)
    _, _, g = dynamics_terms(state, dyn, gravity)
    tau = J.T @ f + g
    singular = abs(np.linalg.det(J)) < SINGULAR_DET
    return OscCommand(torques=tau, wrench=f, raw_wrench=raw, singular=bool(singular))


def world_increment(frame: Pose2, delta: Pose2) -> np.ndarray:
    """World-frame displacement (dx, dz, dtheta) produced by ``frame ∘ delta``."""
    c, s = math.cos(frame.theta), math.sin(frame.theta)
    return np.array([c * delta.x - s * delta.z, s * delta.x + c * delta.z, delta.theta])


def joint_limit_guard(state: ArmState, delta: Pose2, prev_desired: DesiredPose) -> DesiredPose:
    """Advance the desired pose by ``delta`` (expressed in its own frame) unless that nears a joint limit.

    The joint configuration of the new target is estimated to first order as
    ``q + J^-1 dx``; a near-singular Jacobian also counts as a rejection.
    """
    J = jacobian(state)
    if abs(np.linalg.det(J)) < SINGULAR_DET:
        return prev_desired
    q_hat = state.q + np.linalg.solve(J, world_increment(prev_desired.target, delta))
    for qi, (lo, hi) in zip(q_hat, state.joint_limits):
        if qi < lo + LIMIT_MARGIN or qi > hi - LIMIT_MARGIN:
            return prev_desired
    return DesiredPose(prev_desired.target @ delta)


def inverse_kinematics(
    target: Pose2,
    link_lengths: tuple[float, float, float] = (0.4, 0.4, 0.2),
    base: tuple[float, float] = (0.0, 0.0),
    elbow_up: bool = True,
) -> np.ndarray:
    """Closed-form joint angles reaching ``target``; raises ValueError when out of reach."""
    L1, L2, L3 = link_lengths
    wx = target.x - L3 * math.cos(target.theta) - base[0]
    wz = target.z - L3 * math.sin(target.theta) - base[1]
    c2 = (wx * wx + wz * wz - L1 * L1 - L2 * L2) / (2 * L1 * L2)
    if abs(c2) > 1.0:
        raise ValueError("target out of reach")
    q2 = math.acos(c2)
    if elbow_up:
        q2 = -q2
    q1 = math.atan2(wz, wx) - math.atan2(L2 * math.sin(q2), L1 + L2 * math.cos(q2))
    q3 = target.theta - q1 - q2
    return np.array([q1, q2, wrap_angle(q3)])
