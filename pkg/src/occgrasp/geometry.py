"""SE(2) poses in the XZ plane.

A pose is ``(x, z, theta)``: translation in meters and the angle (rad) of the
frame's local x-axis measured counter-clockwise from world +x toward +z.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np


def wrap_angle(a: float) -> float:
    """Wrap to (-pi, pi]."""
    w = math.atan2(math.sin(a), math.cos(a))
    return math.pi if w == -math.pi else w


def angle_diff(a: float, b: float) -> float:
    """Absolute shortest-arc difference, in [0, pi]."""
    return abs(wrap_angle(a - b))


@dataclass(frozen=True)
class Pose2:
    x: float = 0.0
    z: float = 0.0
    theta: float = 0.0

    @classmethod
    def identity(cls) -> Pose2:
        return cls(0.0, 0.0, 0.0)

    @classmethod
    def from_array(cls, a: Iterable[float]) -> Pose2:
        x, z, th = (float(v) for v in a)
        return cls(x, z, th)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.z, self.theta], dtype=np.float64)

    def wrapped(self) -> Pose2:
        return Pose2(self.x, self.z, wrap_angle(self.theta))

    def compose(self, other: Pose2) -> Pose2:
        """``self * other``: express ``other`` (given in this frame) in the parent frame."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2(
            self.x + c * other.x - s * other.z,
            self.z + s * other.x + c * other.z,
            self.theta + other.theta,
        )

    __matmul__ = compose

    def inverse(self) -> Pose2:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose2(-(c * self.x + s * self.z), s * self.x - c * self.z, -self.theta)

    def transform_point(self, px: float, pz: float) -> tuple[float, float]:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return self.x + c * px - s * pz, self.z + s * px + c * pz

    def rotate_vector(self, vx: float, vz: float) -> tuple[float, float]:
        c, s = math.cos(self.theta), math.sin(self.theta)
        return c * vx - s * vz, s * vx + c * vz

    def translation_distance(self, other: Pose2) -> float:
        return math.hypot(self.x - other.x, self.z - other.z)

    def angle_distance(self, other: Pose2) -> float:
        return angle_diff(self.theta, other.theta)

    def is_finite(self) -> bool:
        return all(math.isfinite(v) for v in (self.x, self.z, self.theta))


def relative(parent: Pose2, child: Pose2) -> Pose2:
    """``parent^-1 * child`` with the angle wrapped."""
    return parent.inverse().compose(child).wrapped()


def box_polygon(half_x: float, half_z: float, cx: float = 0.0, cz: float = 0.0) -> np.ndarray:
    """Counter-clockwise rectangle vertices, shape (4, 2)."""
    return np.array(
        [
            [cx - half_x, cz - half_z],
            [cx + half_x, cz - half_z],
            [cx + half_x, cz + half_z],
            [cx - half_x, cz + half_z],
        ],
        dtype=np.float64,
    )


def is_convex_ccw(poly: np.ndarray, tol: float = 1e-12) -> bool:
    poly = np.asarray(poly, dtype=np.float64)
    n = len(poly)
    if n < 3:
        return False
    for i in range(n):
        a, b, c = poly[i], poly[(i + 1) % n], poly[(i + 2) % n]
        cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0])
        if cross <= tol:
            return False
    return True
