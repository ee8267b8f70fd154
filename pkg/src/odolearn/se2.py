"""Planar rigid-motion algebra: pose composition, inversion, and accumulation.

All headings are kept in the canonical interval ``(-pi, pi]``. Rotations are
stored as angles rather than 2x2 matrices, so composed transforms never drift
away from orthonormality.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence

import numpy as np

from odolearn.types import Pose2D, RelativePose, wrap_angle


def wrap_angle_array(theta: np.ndarray) -> np.ndarray:
    """Vectorized :func:`odolearn.types.wrap_angle`."""
    return np.pi - np.mod(np.pi - np.asarray(theta, dtype=float), 2.0 * np.pi)


class Transform2D:
    """Rigid transform mapping robot-frame coordinates to the global frame.

    Equivalent to a 3x3 homogeneous matrix but parameterized as
    ``(angle, tx, ty)``; the rotation block is orthonormal by construction.
    """

    __slots__ = ("angle", "tx", "ty")

    def __init__(self, angle: float, tx: float, ty: float):
        self.angle = wrap_angle(angle)
        self.tx = float(tx)
        self.ty = float(ty)

    @classmethod
    def identity(cls) -> "Transform2D":
        return cls(0.0, 0.0, 0.0)

    @classmethod
    def from_pose(cls, p: Pose2D) -> "Transform2D":
        return cls(p.theta, p.x, p.y)

    def to_pose(self) -> Pose2D:
        return Pose2D(self.tx, self.ty, self.angle)

    def compose(self, other: "Transform2D") -> "Transform2D":
        """Return ``self @ other`` (apply ``other`` first, then ``self``)."""
        c, s = math.cos(self.angle), math.sin(self.angle)
        return Transform2D(
            self.angle + other.angle,
            self.tx + c * other.tx - s * other.ty,
            self.ty + s * other.tx + c * other.ty,
        )

    def inverse(self) -> "Transform2D":
        c, s = math.cos(self.angle), math.sin(self.angle)
        return Transform2D(-self.angle, -(c * self.tx + s * self.ty), -(-s * self.tx + c * self.ty))

    def apply(self, x: float, y: float) -> tuple[float, float]:
        """Map a point from this transform's frame to the global frame."""
        c, s = math.cos(self.angle), math.sin(self.angle)
        return self.tx + c * x - s * y, self.ty + s * x + c * y

    def as_matrix(self) -> np.ndarray:
        """Return the equivalent 3x3 homogeneous matrix."""
        c, s = math.cos(self.angle), math.sin(self.angle)
        return np.array([[c, -s, self.tx], [s, c, self.ty], [0.0, 0.0, 1.0]])

    def __repr__(self) -> str:
        return f"Transform2D(angle={self.angle:.6g}, tx={self.tx:.6g}, ty={self.ty:.6g})"


def from_pose(p: Pose2D) -> Transform2D:
    """Transform placing the robot frame at pose ``p`` in the global frame."""
    return Transform2D.from_pose(p)


def boxplus(prev: Pose2D, delta: RelativePose) -> Pose2D:
    """Compose a pose with an increment expressed in the pose's own frame."""
    c, s = math.cos(prev.theta), math.sin(prev.theta)
    return Pose2D(
        prev.x + c * delta.dx - s * delta.dy,
        prev.y + s * delta.dx + c * delta.dy,
        wrap_angle(prev.theta + delta.dtheta),
    )


def relative_between(a: Pose2D, b: Pose2D) -> RelativePose:
    """Increment that takes pose ``a`` to pose ``b``: ``boxplus(a, delta) == b``."""
    c, s = math.cos(a.theta), math.sin(a.theta)
    dx_g, dy_g = b.x - a.x, b.y - a.y
    return RelativePose(
        c * dx_g + s * dy_g,
        -s * dx_g + c * dy_g,
        wrap_angle(b.theta - a.theta),
    )


def accumulate(start: Pose2D, deltas: Iterable[RelativePose]) -> list[Pose2D]:
    """Integrate a sequence of increments from ``start``.

    Returns one pose per increment; the start pose itself is not included.
    """
    poses: list[Pose2D] = []
    current = start
    for delta in deltas:
        current = boxplus(current, delta)
        poses.append(current)
    return poses


def poses_to_array(poses: Sequence[Pose2D]) -> np.ndarray:
    """Stack poses into an ``(N, 3)`` float array of ``[x, y, theta]`` rows."""
    out = np.empty((len(poses), 3), dtype=float)
    for i, p in enumerate(poses):
        out[i, 0] = p.x
        out[i, 1] = p.y
        out[i, 2] = p.theta
    return out


def constant_twist_delta(v: float, omega: float, dt: float) -> RelativePose:
    """Exact pose increment of a unicycle holding twist ``(v, omega)`` for ``dt``.

    The motion is a circular arc; for small ``|omega * dt|`` the closed form is
    replaced by its series expansion to avoid 0/0 cancellation.
    """
    alpha = omega * dt
    if abs(alpha) < 1e-8:
        # sin(a)/a ~ 1 - a^2/6, (1-cos(a))/a ~ a/2 - a^3/24
        dx = v * dt * (1.0 - alpha * alpha / 6.0)
        dy = v * dt * (alpha / 2.0 - alpha**3 / 24.0)
    else:
        r = v / omega
        dx = r * math.sin(alpha)
        dy = r * (1.0 - math.cos(alpha))
    return RelativePose(dx, dy, alpha)
