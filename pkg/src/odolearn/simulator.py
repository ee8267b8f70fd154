"""Kinematic simulator for a skid-steer platform driving indoor scenarios.

Stands in for the physical robot and tracking camera: produces ground-truth
trajectories from commanded twists plus wheel/IMU measurement streams
corrupted by a configurable noise model.

Conventions
-----------
* Sample ``n`` is stamped at ``t_n = n * dt``. The commanded twist with index
  ``n`` drives the motion over the interval ``(t_{n-1}, t_n]``; index 0 is
  always zero (the robot starts at rest).
* Measurement ``u_n`` reports interval-averaged quantities over that same
  preceding interval, which is how encoder tick counts and driver-integrated
  IMU outputs behave at 25 Hz.
* Ground truth integrates each interval exactly as a constant-twist arc, so a
  noiseless log is exactly reproducible from its own encoder channels.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from odolearn.se2 import accumulate, constant_twist_delta
from odolearn.types import LogMeta, Measurement, Pose2D, TrajectoryLog

SCENARIO_KINDS = ("A", "B", "C", "RANDOM")


@dataclass(frozen=True, slots=True)
class RobotParams:
    """Physical platform parameters and commanded-motion limits."""

    track_width: float = 0.37
    wheel_radius: float = 0.098
    max_v: float = 0.4
    max_w: float = 1.0

    def __post_init__(self) -> None:
        for name in ("track_width", "wheel_radius", "max_v", "max_w"):
            if getattr(self, name) <= 0:
                raise ValueError(f"RobotParams.{name} must be positive")


@dataclass(frozen=True, slots=True)
class NoiseModel:
    """Sensor corruption parameters.

    Slip events model traction loss: with probability ``encoder_slip_prob``
    per sample a randomly chosen wheel reports ``encoder_slip_gain`` times its
    true speed for ``slip_duration`` consecutive samples, while the robot
    itself keeps following the commanded motion.

    The defaults are calibrated so the EKF baseline drifts by roughly the
    same order of magnitude as a real skid-steer platform over a 60 s run;
    they are simulation targets, not measured device specs.
    """

    encoder_gauss_std: float = 0.008
    encoder_slip_prob: float = 0.02
    encoder_slip_gain: float = 2.2
    slip_duration: int = 12
    imu_acc_std: float = 0.08
    imu_gyro_std: float = 0.015
    gyro_bias_walk_std: float = 1e-4
    seed: int = 0

    def __post_init__(self) -> None:
        for name in ("encoder_gauss_std", "imu_acc_std", "imu_gyro_std",
                     "gyro_bias_walk_std"):
            if getattr(self, name) < 0:
                raise ValueError(f"NoiseModel.{name} must be >= 0")
        if not 0.0 <= self.encoder_slip_prob <= 1.0:
            raise ValueError("NoiseModel.encoder_slip_prob must be in [0, 1]")
        if self.slip_duration < 1:
            raise ValueError("NoiseModel.slip_duration must be >= 1")

    @classmethod
    def silent(cls, seed: int = 0) -> "NoiseModel":
        """Noise-free model; measurements equal the true kinematic values."""
        return cls(encoder_gauss_std=0.0, encoder_slip_prob=0.0,
                   encoder_slip_gain=1.0, slip_duration=1, imu_acc_std=0.0,
                   imu_gyro_std=0.0, gyro_bias_walk_std=0.0, seed=seed)

    def scaled(self, factor: float) -> "NoiseModel":
        """Scale all stochastic magnitudes by ``factor`` (for stress tests)."""
        return NoiseModel(
            encoder_gauss_std=self.encoder_gauss_std * factor,
            encoder_slip_prob=min(1.0, self.encoder_slip_prob * factor),
            encoder_slip_gain=1.0 + (self.encoder_slip_gain - 1.0) * factor,
            slip_duration=self.slip_duration,
            imu_acc_std=self.imu_acc_std * factor,
            imu_gyro_std=self.imu_gyro_std * factor,
            gyro_bias_walk_std=self.gyro_bias_walk_std * factor,
            seed=self.seed,
        )


@dataclass(frozen=True, slots=True)
class ScenarioScript:
    """What to drive: loop type, duration, and sampling rate.

    Kinds: ``A`` repeated circles of alternating radius, ``B`` a closed
    figure-eight, ``C`` irregular motion with hard brakings, strong
    accelerations, and in-place spins, ``RANDOM`` teleoperation-like wandering
    used for training data.
    """

    kind: str
    duration: float
    sample_rate: float = 25.0

    def __post_init__(self) -> None:
        if self.kind not in SCENARIO_KINDS:
            raise ValueError(f"ScenarioScript.kind must be one of {SCENARIO_KINDS}")
        if self.duration <= 0:
            raise ValueError("ScenarioScript.duration must be positive")
        if self.sample_rate <= 0:
            raise ValueError("ScenarioScript.sample_rate must be positive")

    @property
    def num_samples(self) -> int:
        return int(round(self.duration * self.sample_rate))


def wheel_twist(v_l: float, v_r: float, track_width: float) -> tuple[float, float]:
    """Body twist ``(v, omega)`` implied by left/right wheel speeds."""
    return 0.5 * (v_l + v_r), (v_r - v_l) / track_width


def figure_eight_period_steps(script: ScenarioScript, nominal_speed: float = 0.3,
                              lobe_radius: float = 0.75) -> int:
    """Number of samples in one full figure-eight period for type B."""
    dt = 1.0 / script.sample_rate
    steps_per_lobe = int(round(2.0 * math.pi * lobe_radius / (nominal_speed * dt)))
    return 2 * steps_per_lobe


def _circle_commands(n: int, dt: float, robot: RobotParams) -> tuple[np.ndarray, np.ndarray]:
    """Repeated full circles, cycling radii 0.5 / 1.0 / 1.5 m, all one way."""
    radii = (0.5, 1.0, 1.5)
    v = np.zeros(n)
    w = np.zeros(n)
    i, loop = 1, 0
    while i < n:
        r = radii[loop % len(radii)]
        steps = int(round(2.0 * math.pi * r / (0.3 * dt)))
        omega = 2.0 * math.pi / (steps * dt)
        span = min(steps, n - i)
        v[i:i + span] = omega * r
        w[i:i + span] = omega
        i += span
        loop += 1
    return np.clip(v, -robot.max_v, robot.max_v), np.clip(w, -robot.max_w, robot.max_w)


def _figure_eight_commands(n: int, dt: float, robot: RobotParams) -> tuple[np.ndarray, np.ndarray]:
    """Two tangent circles of radius 0.75 m traversed in opposite senses.

    Each lobe holds a constant twist for an exact integer number of samples,
    so the integrated trajectory closes on itself to machine precision at the
    end of every period. The footprint spans 3.0 m along the lobe axis and
    1.5 m across it.
    """
    r = 0.75
    steps_per_lobe = int(round(2.0 * math.pi * r / (0.3 * dt)))
    omega = 2.0 * math.pi / (steps_per_lobe * dt)
    speed = omega * r
    v = np.zeros(n)
    w = np.zeros(n)
    i = 0
    lobe = 0
    while i + 1 < n:
        sign = -1.0 if lobe % 2 == 0 else 1.0
        span = min(steps_per_lobe, n - 1 - i)
        v[i + 1:i + 1 + span] = speed
        w[i + 1:i + 1 + span] = sign * omega
        i += span
        lobe += 1
    return np.clip(v, -robot.max_v, robot.max_v), np.clip(w, -robot.max_w, robot.max_w)


_MANEUVERS = ("cruise", "arc", "spin", "brake", "sprint")
# (weights by scenario kind) -- C stresses the failure modes, RANDOM wanders
# through the same regimes so a model trained on RANDOM sees them all.
_MANEUVER_WEIGHTS = {
    "C": (0.25, 0.30, 0.15, 0.15, 0.15),
    "RANDOM": (0.35, 0.30, 0.12, 0.11, 0.12),
}


def _segment_commands(n: int, dt: float, robot: RobotParams, rng: np.random.Generator,
                      kind: str) -> tuple[np.ndarray, np.ndarray]:
    """Piecewise maneuver machine: ramp to a target twist, hold, repeat."""
    weights = _MANEUVER_WEIGHTS[kind]
    v = np.zeros(n)
    w = np.zeros(n)
    cur_v, cur_w = 0.0, 0.0
    i = 1
    while i < n:
        m = rng.choice(_MANEUVERS, p=weights)
        if m == "cruise":
            tv = rng.uniform(0.15, robot.max_v)
            tw = rng.uniform(-0.3, 0.3)
            accel, hold = 1.2, rng.uniform(1.0, 3.0)
        elif m == "arc":
            tv = rng.uniform(0.15, robot.max_v)
            tw = rng.choice([-1.0, 1.0]) * rng.uniform(0.3, robot.max_w)
            accel, hold = 1.2, rng.uniform(1.0, 2.5)
        elif m == "spin":
            tv = 0.0
            tw = rng.choice([-1.0, 1.0]) * rng.uniform(0.6, robot.max_w)
            accel, hold = 2.5, rng.uniform(0.8, 2.0)
        elif m == "brake":
            tv, tw = 0.0, 0.0
            accel, hold = 2.5, rng.uniform(0.3, 1.0)
        else:  # sprint
            tv = robot.max_v
            tw = rng.uniform(-0.2, 0.2)
            accel, hold = 2.5, rng.uniform(0.8, 2.0)
        ang_accel = 4.0
        settle = True
        hold_steps = int(round(hold / dt))
        k = 0
        while i < n and (settle or k < hold_steps):
            dv = np.clip(tv - cur_v, -accel * dt, accel * dt)
            dw = np.clip(tw - cur_w, -ang_accel * dt, ang_accel * dt)
            cur_v = float(np.clip(cur_v + dv, -robot.max_v, robot.max_v))
            cur_w = float(np.clip(cur_w + dw, -robot.max_w, robot.max_w))
            v[i], w[i] = cur_v, cur_w
            if settle and abs(cur_v - tv) < 1e-9 and abs(cur_w - tw) < 1e-9:
                settle = False
            if not settle:
                k += 1
            i += 1
    return v, w


def _commands_for(script: ScenarioScript, robot: RobotParams,
                  rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    n = script.num_samples
    dt = 1.0 / script.sample_rate
    if script.kind == "A":
        return _circle_commands(n, dt, robot)
    if script.kind == "B":
        return _figure_eight_commands(n, dt, robot)
    return _segment_commands(n, dt, robot, rng, script.kind)


def generate(script: ScenarioScript, robot: RobotParams | None = None,
             noise: NoiseModel | None = None) -> TrajectoryLog:
    """Simulate one run of ``script`` and return its log.

    Ground truth is the exact integral of the commanded twist sequence;
    measurements are the kinematically consistent wheel/IMU readings
    corrupted by ``noise``. Bit-identical output for identical arguments.
    """
    robot = robot or RobotParams()
    noise = noise or NoiseModel()
    n = script.num_samples
    if n < 2:
        raise ValueError("script too short: needs at least 2 samples")
    dt = 1.0 / script.sample_rate

    cmd_ss, noise_ss = np.random.SeedSequence(noise.seed).spawn(2)
    v_cmd, w_cmd = _commands_for(script, robot, np.random.default_rng(cmd_ss))

    # Exact constant-twist integration of each sample interval.
    deltas = [constant_twist_delta(v_cmd[k], w_cmd[k], dt) for k in range(1, n)]
    gt = [Pose2D(0.0, 0.0, 0.0)]
    gt.extend(accumulate(gt[0], deltas))

    half_track = 0.5 * robot.track_width
    v_l_true = v_cmd - w_cmd * half_track
    v_r_true = v_cmd + w_cmd * half_track
    acc_x = np.zeros(n)
    acc_x[1:] = np.diff(v_cmd) / dt
    acc_y = v_cmd * w_cmd

    rng = np.random.default_rng(noise_ss)
    enc_noise = rng.normal(0.0, noise.encoder_gauss_std, size=(n, 2))
    imu_noise = rng.normal(0.0, 1.0, size=(n, 6))
    imu_noise[:, 0:3] *= noise.imu_acc_std
    imu_noise[:, 3:6] *= noise.imu_gyro_std
    bias = np.cumsum(rng.normal(0.0, noise.gyro_bias_walk_std * math.sqrt(dt), size=n))
    slip_start = rng.random(n) < noise.encoder_slip_prob
    slip_wheel = rng.integers(0, 2, size=n)

    gain = np.ones((n, 2))
    k = 0
    while k < n:
        if slip_start[k]:
            wheel = int(slip_wheel[k])
            end = min(n, k + noise.slip_duration)
            gain[k:end, wheel] = noise.encoder_slip_gain
            k = end
        else:
            k += 1

    v_l_meas = gain[:, 0] * v_l_true + enc_noise[:, 0]
    v_r_meas = gain[:, 1] * v_r_true + enc_noise[:, 1]

    measurements = []
    for i in range(n):
        measurements.append(Measurement(
            v_l=float(v_l_meas[i]),
            v_r=float(v_r_meas[i]),
            acc_x=float(acc_x[i] + imu_noise[i, 0]),
            acc_y=float(acc_y[i] + imu_noise[i, 1]),
            acc_z=float(imu_noise[i, 2]),
            gyro_x=float(imu_noise[i, 3]),
            gyro_y=float(imu_noise[i, 4]),
            gyro_z=float(w_cmd[i] + bias[i] + imu_noise[i, 5]),
            stamp=i * dt,
        ))
    meta = LogMeta(kind=script.kind, sample_rate_hz=script.sample_rate, seed=noise.seed)
    return TrajectoryLog(measurements=tuple(measurements), gt_poses=tuple(gt), meta=meta)


def dead_reckon(log: TrajectoryLog, robot: RobotParams | None = None) -> list[Pose2D]:
    """Open-loop wheel-odometry trajectory from the encoder channels alone.

    Anchored at the log's initial ground-truth pose so all estimators share a
    common start frame.
    """
    robot = robot or RobotParams()
    dt = log.dt
    poses = [log.gt_poses[0]]
    deltas = []
    for m in log.measurements[1:]:
        v, w = wheel_twist(m.v_l, m.v_r, robot.track_width)
        deltas.append(constant_twist_delta(v, w, dt))
    poses.extend(accumulate(poses[0], deltas))
    return poses
