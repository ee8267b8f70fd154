"""Shared domain types: sensor samples, windows, poses, and trajectory logs.

All containers are immutable values and safe to share between threads. The
eight sensor channels are always ordered
``(v_l, v_r, acc_x, acc_y, acc_z, gyro_x, gyro_y, gyro_z)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

NUM_CHANNELS = 8
CHANNEL_NAMES = ("v_l", "v_r", "acc_x", "acc_y", "acc_z", "gyro_x", "gyro_y", "gyro_z")

DEFAULT_WINDOW = 10
DEFAULT_RATE_HZ = 25.0


class InsufficientSamplesError(ValueError):
    """A buffer or log is too short for the requested operation."""


def wrap_angle(theta: float) -> float:
    """Wrap an angle to the canonical interval ``(-pi, pi]``."""
    return math.pi - (math.pi - theta) % (2.0 * math.pi)


@dataclass(frozen=True, slots=True)
class Measurement:
    """One sensor sample: wheel velocities [m/s], linear accelerations
    [m/s^2], angular velocities [rad/s], and its timestamp [s]."""

    v_l: float
    v_r: float
    acc_x: float
    acc_y: float
    acc_z: float
    gyro_x: float
    gyro_y: float
    gyro_z: float
    stamp: float

    def __post_init__(self) -> None:
        for name in self.__dataclass_fields__:
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"Measurement.{name} must be finite")

    def as_array(self) -> np.ndarray:
        """Return the 8 channels (without the stamp) as a float array."""
        return np.array(
            [self.v_l, self.v_r, self.acc_x, self.acc_y, self.acc_z,
             self.gyro_x, self.gyro_y, self.gyro_z],
            dtype=float,
        )

    @classmethod
    def from_array(cls, channels: np.ndarray, stamp: float) -> "Measurement":
        if len(channels) != NUM_CHANNELS:
            raise ValueError(f"expected {NUM_CHANNELS} channels, got {len(channels)}")
        return cls(*(float(c) for c in channels), stamp=float(stamp))


@dataclass(frozen=True, slots=True)
class MeasurementWindow:
    """The latest ``T`` samples in chronological order (newest last)."""

    samples: tuple[Measurement, ...]

    def __post_init__(self) -> None:
        if len(self.samples) == 0:
            raise ValueError("MeasurementWindow cannot be empty")
        for a, b in zip(self.samples, self.samples[1:]):
            if not b.stamp > a.stamp:
                raise ValueError("window stamps must be strictly increasing")

    def __len__(self) -> int:
        return len(self.samples)

    def as_array(self) -> np.ndarray:
        """Channels stacked as a ``(T, 8)`` array, oldest row first."""
        out = np.empty((len(self.samples), NUM_CHANNELS), dtype=float)
        for i, m in enumerate(self.samples):
            out[i] = m.as_array()
        return out


def window_from_stream(buffer: Sequence[Measurement], T: int = DEFAULT_WINDOW) -> MeasurementWindow:
    """Extract the latest ``T`` samples from a measurement buffer.

    Raises
    ------
    InsufficientSamplesError
        If the buffer holds fewer than ``T`` samples.
    """
    if T < 1:
        raise ValueError(f"window length must be >= 1, got {T}")
    if len(buffer) < T:
        raise InsufficientSamplesError(
            f"need at least {T} samples for a window, buffer has {len(buffer)}"
        )
    return MeasurementWindow(samples=tuple(buffer[len(buffer) - T:]))


@dataclass(frozen=True, slots=True)
class Pose2D:
    """Planar pose: position [m] and heading [rad], heading in ``(-pi, pi]``."""

    x: float
    y: float
    theta: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.x) and math.isfinite(self.y) and math.isfinite(self.theta)):
            raise ValueError("Pose2D fields must be finite")
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta], dtype=float)


@dataclass(frozen=True, slots=True)
class RelativePose:
    """Pose increment expressed in the previous robot frame."""

    dx: float
    dy: float
    dtheta: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.dx) and math.isfinite(self.dy) and math.isfinite(self.dtheta)):
            raise ValueError("RelativePose fields must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.dx, self.dy, self.dtheta], dtype=float)

    def within_step_bounds(self, dt: float, max_v: float = 0.4, max_w: float = 1.0,
                           margin: float = 2.0) -> bool:
        """True when the increment is plausible for one sample interval."""
        lin = max_v * dt * margin
        return (abs(self.dx) <= lin and abs(self.dy) <= lin
                and abs(self.dtheta) <= max_w * dt * margin)


@dataclass(frozen=True, slots=True)
class LogMeta:
    """Scenario label, nominal sample rate, and the generating seed."""

    kind: str
    sample_rate_hz: float = DEFAULT_RATE_HZ
    seed: int = 0

    def __post_init__(self) -> None:
        if self.sample_rate_hz <= 0:
            raise ValueError("sample rate must be positive")


@dataclass(frozen=True, slots=True)
class TrajectoryLog:
    """Time-aligned measurements and ground-truth poses for one run.

    Stamps must be uniform at the meta sample rate within a 10% tolerance;
    irregular logs are rejected at construction.
    """

    measurements: tuple[Measurement, ...]
    gt_poses: tuple[Pose2D, ...]
    meta: LogMeta

    def __post_init__(self) -> None:
        if len(self.measurements) != len(self.gt_poses):
            raise ValueError(
                f"measurements ({len(self.measurements)}) and gt_poses "
                f"({len(self.gt_poses)}) must have equal length"
            )
        if len(self.measurements) == 0:
            raise ValueError("TrajectoryLog cannot be empty")
        nominal = 1.0 / self.meta.sample_rate_hz
        for a, b in zip(self.measurements, self.measurements[1:]):
            step = b.stamp - a.stamp
            if not (0.9 * nominal <= step <= 1.1 * nominal):
                raise ValueError(
                    f"irregular sampling: step {step:.6g}s vs nominal {nominal:.6g}s"
                )

    def __len__(self) -> int:
        return len(self.measurements)

    @property
    def dt(self) -> float:
        return 1.0 / self.meta.sample_rate_hz

    def stamps(self) -> np.ndarray:
        return np.array([m.stamp for m in self.measurements], dtype=float)

    def channel_matrix(self) -> np.ndarray:
        """All measurements stacked as an ``(N, 8)`` array."""
        out = np.empty((len(self.measurements), NUM_CHANNELS), dtype=float)
        for i, m in enumerate(self.measurements):
            out[i] = m.as_array()
        return out

    def gt_array(self) -> np.ndarray:
        """Ground-truth poses stacked as an ``(N, 3)`` array."""
        out = np.empty((len(self.gt_poses), 3), dtype=float)
        for i, p in enumerate(self.gt_poses):
            out[i] = p.as_array()
        return out

    def path_length(self) -> float:
        """Ground-truth arc length [m]."""
        gt = self.gt_array()
        return float(np.sum(np.hypot(np.diff(gt[:, 0]), np.diff(gt[:, 1]))))
