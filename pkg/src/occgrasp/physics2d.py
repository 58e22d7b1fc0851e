"""Deterministic planar rigid-body engine.

Bodies live in the XZ plane (z up). Contacts between convex polygons are found
with separating-axis tests and reference/incident edge clipping, then resolved
with sequential impulses: Coulomb friction, zero restitution, Baumgarte
correction of penetration beyond the slop, and speculative contacts so that
bodies approaching each other stop at the surface instead of tunnelling.

A world may also carry one serial arm whose tip is an ordinary body in the
contact solver. Its generalized inverse mass is the operational-space one,
``J M^-1 J^T``, so impulses on the gripper move the joints consistently.

The numerical work happens in :mod:`occgrasp._core`; this module owns the data
layout, validation and the user-facing types.
"""
from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from typing import IO, Iterable, Sequence

import numpy as np

from .geometry import Pose2, is_convex_ccw
from .kernel import core

GRAVITY = (0.0, -9.81)
DT = 1e-3
SOLVER_ITERATIONS = 100
SOLVER_TOLERANCE = 1e-7
BAUMGARTE = 0.2
SLOP = 1e-4
SPECULATIVE_MARGIN = 5e-3
MAX_CONTACTS = 64
MAX_PENETRATION = 5e-3

# stats layout shared with the kernel
_S_MAXPEN, _S_NCONT, _S_CONE, _S_MINLN = 0, 1, 2, 3
_S_TIP, _S_TIPPEAK, _S_TICKS, _S_MINDET, _S_OVERFLOW, _S_TIPMEAN = 4, 7, 10, 11, 12, 13


class NonFiniteState(RuntimeError):
    """A body or joint state became NaN or infinite."""


class InvalidWorld(ValueError):
    pass


@dataclass
class RigidBody2:
    pose: Pose2
    shapes: list[np.ndarray]
    mass: float = 1.0
    inertia: float = 1.0
    velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    friction_coeff: float = 0.0
    is_static: bool = False
    name: str = ""

    def __post_init__(self) -> None:
        self.shapes = [np.ascontiguousarray(s, dtype=np.float64).reshape(-1, 2) for s in self.shapes]
        if not self.shapes:
            raise InvalidWorld(f"body {self.name!r} has no shape")
        for s in self.shapes:
            if not is_convex_ccw(s):
                raise InvalidWorld(f"body {self.name!r}: shape is not a convex counter-clockwise polygon")
        if not self.is_static and (self.mass <= 0 or self.inertia <= 0):
            raise InvalidWorld(f"body {self.name!r}: dynamic bodies need mass > 0 and inertia > 0")
        if self.friction_coeff < 0:
            raise InvalidWorld(f"body {self.name!r}: negative friction")


@dataclass(frozen=True)
class Contact2:
    body_a: int
    body_b: int
    point: tuple[float, float]
    normal: tuple[float, float]
    penetration_depth: float
    normal_impulse: float = 0.0
    tangent_impulse: float = 0.0


@dataclass
class ArmBinding:
    """Serial chain driving one body of the world (the tip).

    ``chain`` is the 20-element kernel descriptor: base x, z, three link
    lengths, masses, centre-of-mass distances along each link, centroidal
    inertias, joint armatures and viscous joint damping.
    """

    chain: np.ndarray
    q: np.ndarray
    qd: np.ndarray
    tip: int
    torque: np.ndarray = field(default_factory=lambda: np.zeros(3))


def _edge_normals(poly: np.ndarray) -> np.ndarray:
    d = np.roll(poly, -1, axis=0) - poly
    n = np.stack([d[:, 1], -d[:, 0]], axis=1)
    return n / np.linalg.norm(n, axis=1, keepdims=True)


def _pose_array(p: Pose2) -> np.ndarray:
    return np.array([p.x, p.z, p.theta], dtype=np.float64)


class World2:
    """Packed planar world. ``step`` mutates it in place; use :meth:`copy` for branching."""

    def __init__(
        self,
        bodies: Sequence[RigidBody2],
        gravity: tuple[float, float] = GRAVITY,
        dt: float = DT,
        solver_iterations: int = SOLVER_ITERATIONS,
        *,
        baumgarte: float = BAUMGARTE,
        slop: float = SLOP,
        speculative_margin: float = SPECULATIVE_MARGIN,
        solver_tolerance: float = SOLVER_TOLERANCE,
        max_contacts: int = MAX_CONTACTS,
        arm: ArmBinding | None = None,
    ) -> None:
        if not math.isclose(dt, DT, rel_tol=0, abs_tol=1e-15):
            raise InvalidWorld("the tick is fixed at 1e-3 s")
        if solver_iterations < 1:
            raise InvalidWorld("solver_iterations must be >= 1")
        n = len(bodies)
        if n == 0:
            raise InvalidWorld("empty world")
        self.names = [b.name for b in bodies]
        self.gravity = (float(gravity[0]), float(gravity[1]))
        self.dt = float(dt)
        self.solver_iterations = int(solver_iterations)
        self.pose = np.zeros((n, 3))
        self.vel = np.zeros((n, 3))
        self._pvel = np.zeros((n, 3))
        self.W = np.zeros((n, 9))
        self.mass = np.zeros(n)
        self.inertia = np.zeros(n)
        self.friction = np.zeros(n)
        self.dyn = np.zeros(n, dtype=np.int32)
        self.force = np.zeros((n, 3))
        sb, ss, sc, verts, norms = [], [], [], [], []
        start = 0
        for i, b in enumerate(bodies):
            self.pose[i] = _pose_array(b.pose)
            self.vel[i] = b.velocity
            self.friction[i] = b.friction_coeff
            if not b.is_static:
                self.dyn[i] = 1
                self.mass[i] = b.mass
                self.inertia[i] = b.inertia
                self.W[i, 0] = self.W[i, 4] = 1.0 / b.mass
                self.W[i, 8] = 1.0 / b.inertia
            else:
                self.vel[i] = 0.0
            for s in b.shapes:
                sb.append(i)
                ss.append(start)
                sc.append(len(s))
                verts.append(s)
                norms.append(_edge_normals(s))
                start += len(s)
        self.shape_body = np.array(sb, dtype=np.int32)
        self.shape_start = np.array(ss, dtype=np.int32)
        self.shape_count = np.array(sc, dtype=np.int32)
        self.verts = np.ascontiguousarray(np.concatenate(verts))
        self.normals = np.ascontiguousarray(np.concatenate(norms))
        self._wv = np.zeros_like(self.verts)
        self._wn = np.zeros_like(self.normals)
        self._aabb = np.zeros((len(sb), 4))
        self.params = np.array(
            [self.gravity[0], self.gravity[1], self.dt, float(self.solver_iterations), baumgarte, slop,
             speculative_margin, solver_tolerance]
        )
        self.slop = float(slop)
        self.contacts = np.zeros((max_contacts, core.CONTACT_COLS))
        self.n_contacts = 0
        self.stats = np.zeros(16)
        self.pairs = np.zeros(n * n, dtype=np.int32)
        self._sc = np.zeros(core.SCRATCH)
        self.arm = arm
        if arm is not None:
            if not (0 <= arm.tip < n) or not self.dyn[arm.tip]:
                raise InvalidWorld("the arm tip must be a dynamic body")
            arm.chain = np.ascontiguousarray(arm.chain, dtype=np.float64)
            arm.q = np.ascontiguousarray(arm.q, dtype=np.float64)
            arm.qd = np.ascontiguousarray(arm.qd, dtype=np.float64)
            arm.torque = np.ascontiguousarray(arm.torque, dtype=np.float64)
            self._sync_tip()
        self.reset_stats()

    # ---------------------------------------------------------------- access

    @property
    def n_bodies(self) -> int:
        return len(self.names)

    @property
    def tip(self) -> int:
        return self.arm.tip if self.arm is not None else -1

    def body_pose(self, i: int) -> Pose2:
        return Pose2.from_array(self.pose[i])

    def body_velocity(self, i: int) -> tuple[float, float, float]:
        return tuple(float(v) for v in self.vel[i])  # type: ignore[return-value]

    def set_body_pose(self, i: int, pose: Pose2) -> None:
        self.pose[i] = _pose_array(pose)

    def copy(self) -> World2:
        return copy.deepcopy(self)

    def _sync_tip(self) -> None:
        """Recompute the tip pose and velocity from the joint state."""
        arm = self.arm
        assert arm is not None
        J = np.zeros((3, 3))
        M = np.zeros((3, 3))
        h = np.zeros(3)
        g = np.zeros(3)
        phi = core.chain_terms(arm.chain, arm.q, arm.qd, self.gravity[0], self.gravity[1], J, M, h, g)
        x, z = _chain_tip(arm.chain, arm.q)
        self.pose[arm.tip] = (x, z, phi)
        self.vel[arm.tip] = J @ arm.qd

    def set_joint_state(self, q: Iterable[float], qd: Iterable[float] | None = None) -> None:
        if self.arm is None:
            raise InvalidWorld("world has no arm")
        self.arm.q[:] = np.asarray(list(q), dtype=np.float64)
        self.arm.qd[:] = 0.0 if qd is None else np.asarray(list(qd), dtype=np.float64)
        self._sync_tip()

    # ------------------------------------------------------------- telemetry

    def reset_stats(self) -> None:
        self.stats[:] = 0.0
        self.stats[_S_MINLN] = math.inf
        self.stats[_S_MINDET] = math.inf
        self.pairs[:] = 0

    @property
    def max_penetration(self) -> float:
        """Deepest penetration seen by the solver since the last ``reset_stats``."""
        return float(self.stats[_S_MAXPEN])

    @property
    def max_cone_excess(self) -> float:
        """Largest ``|lambda_t| - mu * lambda_n`` seen (<= 0 means the cone always held)."""
        return float(self.stats[_S_CONE])

    @property
    def min_normal_impulse(self) -> float:
        return float(self.stats[_S_MINLN])

    @property
    def peak_tip_force(self) -> np.ndarray:
        """Largest per-control-period mean contact wrench on the arm tip, per component."""
        return self.stats[_S_TIPPEAK:_S_TIPPEAK + 3].copy()

    @property
    def mean_tip_force(self) -> np.ndarray:
        """Mean contact wrench on the arm tip over the last :func:`run_osc` call, per component."""
        return self.stats[_S_TIPMEAN:_S_TIPMEAN + 3].copy()

    @property
    def min_abs_det_jacobian(self) -> float:
        return float(self.stats[_S_MINDET])

    @property
    def ticks(self) -> int:
        return int(self.stats[_S_TICKS])

    def touched(self, a: int, b: int) -> bool:
        """True if bodies a and b exchanged a positive normal impulse since ``reset_stats``."""
        if a > b:
            a, b = b, a
        return bool(self.pairs[a * self.n_bodies + b])

    def last_contacts(self) -> list[Contact2]:
        """Contacts resolved during the most recent tick, with their impulses."""
        return [_row_to_contact(r, with_impulse=True) for r in self.contacts[: self.n_contacts]]

    # ----------------------------------------------------------------- trace

    def to_record(self) -> dict:
        rec = {
            "t": self.ticks,
            "pose": self.pose.tolist(),
            "vel": self.vel.tolist(),
        }
        if self.arm is not None:
            rec["q"] = self.arm.q.tolist()
            rec["qd"] = self.arm.qd.tolist()
        return rec

    def _kernel_args(self) -> tuple:
        arm = self.arm
        if arm is None:
            chain, q, qd, torque, tip = _NO_CHAIN, _NO_Q.copy(), _NO_Q.copy(), _NO_Q.copy(), -1
        else:
            chain, q, qd, torque, tip = arm.chain, arm.q, arm.qd, arm.torque, arm.tip
        return (
            self.pose, self.vel, self._pvel, self.W, self.friction, self.dyn, self.force,
            self.shape_body, self.shape_start, self.shape_count, self.verts, self.normals,
            self._wv, self._wn, self._aabb, chain, q, qd, tip, torque, self.params,
            self.contacts, self.stats, self.pairs, self._sc,
        )


_NO_CHAIN = np.zeros(20)
_NO_Q = np.zeros(3)


def _chain_tip(chain: np.ndarray, q: np.ndarray) -> tuple[float, float]:
    x, z, phi = chain[0], chain[1], 0.0
    for i in range(3):
        phi += q[i]
        x += chain[2 + i] * math.cos(phi)
        z += chain[2 + i] * math.sin(phi)
    return x, z


def _row_to_contact(r: np.ndarray, with_impulse: bool = False) -> Contact2:
    return Contact2(
        body_a=int(r[0]),
        body_b=int(r[1]),
        point=(float(r[2]), float(r[3])),
        normal=(float(r[4]), float(r[5])),
        penetration_depth=max(0.0, -float(r[6])),
        normal_impulse=float(r[15]) if with_impulse else 0.0,
        tangent_impulse=float(r[16]) if with_impulse else 0.0,
    )


def detect_contacts(world: World2) -> list[Contact2]:
    """All contacts with penetration deeper than ``-slop``, ordered by (body_a, body_b, point)."""
    buf = np.zeros((max(world.contacts.shape[0], 16), core.CONTACT_COLS))
    while True:
        k = core.collide(
            world.pose, world.dyn, world.shape_body, world.shape_start, world.shape_count,
            world.verts, world.normals, world._wv, world._wn, world._aabb, world.slop, world.slop, buf,
        )
        if k <= buf.shape[0]:
            break
        buf = np.zeros((2 * k, core.CONTACT_COLS))
    return [_row_to_contact(r) for r in buf[:k] if r[6] < world.slop]


def _load_wrenches(world: World2, wrenches) -> None:
    world.force[:] = 0.0
    if wrenches is None:
        return
    w = np.asarray(wrenches, dtype=np.float64)
    if w.shape != (world.n_bodies, 3):
        raise ValueError(f"wrenches must have shape ({world.n_bodies}, 3)")
    if not np.all(np.isfinite(w)):
        raise ValueError("wrenches must be finite")
    world.force[:] = w
    world.force[world.dyn == 0] = 0.0


def step(world: World2, external_wrenches=None, ticks: int = 1, trace: IO[str] | None = None) -> World2:
    """Advance ``ticks`` ticks of ``world.dt`` in place and return the world.

    ``external_wrenches`` is an (n, 3) array of (fx, fz, torque) held constant
    over the call; static bodies ignore theirs. Joint torques of an attached
    arm are taken from ``world.arm.torque``. With ``trace`` set, one JSON
    object per tick is written to it.
    """
    _load_wrenches(world, external_wrenches)
    args = world._kernel_args()
    if trace is None:
        status = core.step(*args, ticks)
    else:
        status = core.STATUS_OK
        for _ in range(ticks):
            status = core.step(*args, 1)
            trace.write(json.dumps(world.to_record()) + "\n")
            if status != core.STATUS_OK:
                break
    world.n_contacts = min(int(world.stats[_S_NCONT]), world.contacts.shape[0])
    if status != core.STATUS_OK:
        raise NonFiniteState(f"non-finite state after {world.ticks} ticks")
    return world


def run_osc(world: World2, desired: np.ndarray, gains: np.ndarray, n_ctrl: int, ticks_per_ctrl: int) -> World2:
    """Fused closed-loop control of the attached arm; see :func:`occgrasp.arm.osc_wrench` for the law."""
    if world.arm is None:
        raise InvalidWorld("world has no arm")
    world.force[:] = 0.0
    status = core.run_osc(
        *world._kernel_args(),
        np.ascontiguousarray(desired, dtype=np.float64),
        np.ascontiguousarray(gains, dtype=np.float64),
        int(n_ctrl),
        int(ticks_per_ctrl),
    )
    world.n_contacts = min(int(world.stats[_S_NCONT]), world.contacts.shape[0])
    if status != core.STATUS_OK:
        raise NonFiniteState(f"non-finite state after {world.ticks} ticks")
    return world


def arm_energy(world: World2) -> float:
    """Kinetic plus gravitational energy of the arm links (0 without an arm)."""
    arm = world.arm
    if arm is None:
        return 0.0
    J = np.zeros((3, 3))
    M = np.zeros((3, 3))
    h = np.zeros(3)
    g = np.zeros(3)
    core.chain_terms(arm.chain, arm.q, arm.qd, world.gravity[0], world.gravity[1], J, M, h, g)
    e = 0.5 * float(arm.qd @ M @ arm.qd)
    x, z, phi = arm.chain[0], arm.chain[1], 0.0
    gx, gz = world.gravity
    for i in range(3):
        phi += arm.q[i]
        cx = x + arm.chain[8 + i] * math.cos(phi)
        cz = z + arm.chain[8 + i] * math.sin(phi)
        e -= arm.chain[5 + i] * (gx * cx + gz * cz)
        x += arm.chain[2 + i] * math.cos(phi)
        z += arm.chain[2 + i] * math.sin(phi)
    return e


def mechanical_energy(world: World2) -> float:
    """Kinetic plus gravitational potential energy (J) of all dynamic bodies and the arm."""
    gx, gz = world.gravity
    e = 0.0
    for i in range(world.n_bodies):
        if not world.dyn[i] or i == world.tip:
            continue
        m = world.mass[i]
        vx, vz, w = world.vel[i]
        e += 0.5 * m * (vx * vx + vz * vz) + 0.5 * world.inertia[i] * w * w
        e -= m * (gx * world.pose[i, 0] + gz * world.pose[i, 1])
    return e + arm_energy(world)


def box_body(
    half_x: float,
    half_z: float,
    pose: Pose2,
    *,
    mass: float = 1.0,
    friction: float = 0.0,
    is_static: bool = False,
    name: str = "",
) -> RigidBody2:
    """Rectangle with the inertia of a uniform plate about its centre."""
    from .geometry import box_polygon

    inertia = mass * ((2 * half_x) ** 2 + (2 * half_z) ** 2) / 12.0
    return RigidBody2(
        pose=pose,
        shapes=[box_polygon(half_x, half_z)],
        mass=mass,
        inertia=inertia,
        friction_coeff=friction,
        is_static=is_static,
        name=name,
    )
