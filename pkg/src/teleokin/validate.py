"""Kinematic audit of command traces: limits, continuity, self-collisions.

The offline checker vectorizes over the whole trace; the incremental
variant keeps only the previous two samples and is safe to call from a
control loop.  Velocity is judged against each joint's configured velocity
limit using backward differences at the nominal period — the report header
names that proxy so results can be re-thresholded.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch, EmptyTrace, ShapeMismatch
from .geometry import quat_rotate_vector
from .model import RobotModel, forward_kinematics, forward_kinematics_batch
from .retarget import JointCommand

KINDS = ("limit", "velocity", "acceleration", "self-collision")


@dataclass
class Thresholds:
    """Audit thresholds beyond the per-joint limits carried by the model.

    ``acceleration_limit=None`` disables the acceleration check, leaving the
    core battery: limits, velocity, and self-collision.
    """

    acceleration_limit: float | None = 200.0  # rad/s^2
    collision_margin: float = 0.0  # meters of required extra clearance

    def __post_init__(self):
        if self.acceleration_limit is not None and not (self.acceleration_limit > 0):
            raise ValueError("acceleration_limit must be positive or None")
        if self.collision_margin < 0:
            raise ValueError("collision_margin must be non-negative")


@dataclass
class Violation:
    kind: str
    cycle: int
    identifier: str  # joint name, or "linkA/i,linkB/j" for sphere pairs
    value: float
    threshold: float

    def line(self) -> str:
        return f"{self.kind} {self.cycle} {self.identifier} {self.value:.9g} {self.threshold:.9g}"


@dataclass
class ValidationReport:
    violations: list[Violation]
    cycles: int
    period_us: float
    thresholds: Thresholds
    counts: dict[str, int] = field(init=False)
    passed: bool = field(init=False)

    def __post_init__(self):
        self.counts = {kind: 0 for kind in KINDS}
        for v in self.violations:
            self.counts[v.kind] += 1
        self.passed = not self.violations

    def format(self) -> str:
        acc = self.thresholds.acceleration_limit
        lines = [
            "# kinematic trace audit",
            f"# cycles={self.cycles} period_us={self.period_us:.9g}",
            "# velocity threshold: per-joint vmax from the robot model",
            f"# acceleration_limit={'off' if acc is None else acc}"
            f" collision_margin={self.thresholds.collision_margin}",
            f"verdict={'pass' if self.passed else 'fail'}",
            " ".join(f"{kind}={self.counts[kind]}" for kind in KINDS),
        ]
        lines.extend(v.line() for v in self.violations)
        return "\n".join(lines) + "\n"


def collision_pairs(model: RobotModel) -> list[tuple[tuple[str, int], tuple[str, int]]]:
    """All sphere pairs that must be checked: different links, not excluded."""
    per_link: dict[str, int] = {}
    indexed = []
    for s in model.spheres:
        idx = per_link.get(s.link, 0)
        per_link[s.link] = idx + 1
        indexed.append((s.link, idx, s))
    excluded = {frozenset([a, b]) for a, b in model.exclusions}
    pairs = []
    for i in range(len(indexed)):
        for j in range(i + 1, len(indexed)):
            la, ia, _ = indexed[i]
            lb, ib, _ = indexed[j]
            if la == lb or frozenset([(la, ia), (lb, ib)]) in excluded:
                continue
            pairs.append(((la, ia), (lb, ib)))
    return pairs


def _sphere_by_ref(model: RobotModel):
    per_link: dict[str, int] = {}
    by_ref = {}
    for s in model.spheres:
        idx = per_link.get(s.link, 0)
        per_link[s.link] = idx + 1
        by_ref[(s.link, idx)] = s
    return by_ref


def _pair_id(a: tuple[str, int], b: tuple[str, int]) -> str:
    return f"{a[0]}/{a[1]},{b[0]}/{b[1]}"


def _angles_matrix(model: RobotModel, trace) -> np.ndarray:
    if not trace:
        raise EmptyTrace("no commands to validate")
    n_joints = len(model)
    for cmd in trace:
        if len(cmd.angles) != n_joints:
            raise DimensionMismatch(
                f"command has {len(cmd.angles)} angles, model has {n_joints} joints"
            )
    return np.stack([np.asarray(cmd.angles, dtype=float) for cmd in trace])


def _infer_period_us(trace) -> float:
    if len(trace) < 2:
        return 1.0
    deltas = np.diff([cmd.emission_timestamp_us for cmd in trace])
    period = float(np.median(deltas))
    return period if period > 0 else 1.0


def validate_trace(
    model: RobotModel,
    trace,
    thresholds: Thresholds | None = None,
    period_us: float | None = None,
) -> ValidationReport:
    """Audit a command sequence against the model.

    Per sample: angles against the soft intervals; backward-difference
    velocity against each joint's vmax; optional second-difference
    acceleration; and sphere self-collision on forward kinematics.  Hold
    commands participate like any other sample.  ``period_us`` defaults to
    the median emission-timestamp delta of the trace.
    """
    trace = list(trace)
    thresholds = thresholds or Thresholds()
    angles = _angles_matrix(model, trace)
    if period_us is None:
        period_us = _infer_period_us(trace)
    dt = period_us / 1e6
    names = model.joint_names
    violations: list[Violation] = []

    over = angles > model.soft_upper[None, :]
    under = angles < model.soft_lower[None, :]
    for i, j in zip(*np.nonzero(over | under)):
        bound = model.soft_upper[j] if over[i, j] else model.soft_lower[j]
        violations.append(Violation("limit", int(i), names[j], float(angles[i, j]), float(bound)))

    if len(trace) >= 2:
        velocity = np.abs(np.diff(angles, axis=0)) / dt
        for i, j in zip(*np.nonzero(velocity > model.velocity_limits[None, :])):
            violations.append(
                Violation(
                    "velocity",
                    int(i) + 1,
                    names[j],
                    float(velocity[i, j]),
                    float(model.velocity_limits[j]),
                )
            )

    if thresholds.acceleration_limit is not None and len(trace) >= 3:
        accel = np.abs(np.diff(angles, n=2, axis=0)) / (dt * dt)
        for i, j in zip(*np.nonzero(accel > thresholds.acceleration_limit)):
            violations.append(
                Violation(
                    "acceleration",
                    int(i) + 2,
                    names[j],
                    float(accel[i, j]),
                    thresholds.acceleration_limit,
                )
            )

    pairs = collision_pairs(model)
    if pairs:
        by_ref = _sphere_by_ref(model)
        poses = forward_kinematics_batch(model, angles)
        centers = {}
        for ref, sphere in by_ref.items():
            pose = poses[sphere.link]
            centers[ref] = pose.position + _rotate_rows(pose.rotation, sphere.center)
        for a, b in pairs:
            limit = by_ref[a].radius + by_ref[b].radius + thresholds.collision_margin
            dist = np.linalg.norm(centers[a] - centers[b], axis=1)
            for i in np.nonzero(dist < limit)[0]:
                violations.append(
                    Violation("self-collision", int(i), _pair_id(a, b), float(dist[i]), limit)
                )

    violations.sort(key=lambda v: (v.cycle, KINDS.index(v.kind), v.identifier))
    return ValidationReport(violations, cycles=len(trace), period_us=period_us, thresholds=thresholds)


def _rotate_rows(quats: np.ndarray, v: np.ndarray) -> np.ndarray:
    qv = quats[:, 1:]
    t = 2.0 * np.cross(qv, v[None, :])
    return v[None, :] + quats[:, :1] * t + np.cross(qv, t)


class IncrementalValidator:
    """Streaming variant: same checks, keeping only the last two samples."""

    def __init__(
        self,
        model: RobotModel,
        thresholds: Thresholds | None = None,
        period_us: float | None = None,
    ):
        self.model = model
        self.thresholds = thresholds or Thresholds()
        self.period_us = period_us
        self.violations: list[Violation] = []
        self._pairs = collision_pairs(model)
        self._by_ref = _sphere_by_ref(model)
        self._cycle = 0
        self._prev: np.ndarray | None = None
        self._prev2: np.ndarray | None = None
        self._prev_emission: int | None = None

    def update(self, cmd: JointCommand) -> None:
        model = self.model
        angles = np.asarray(cmd.angles, dtype=float)
        if angles.shape != (len(model),):
            raise DimensionMismatch(
                f"command has {angles.shape} angles, model has {len(model)} joints"
            )
        i = self._cycle
        names = model.joint_names
        if self.period_us is not None:
            dt = self.period_us / 1e6
        elif self._prev_emission is not None:
            dt = max(cmd.emission_timestamp_us - self._prev_emission, 1) / 1e6
        else:
            dt = None
        self._prev_emission = cmd.emission_timestamp_us

        for j in np.nonzero((angles > model.soft_upper) | (angles < model.soft_lower))[0]:
            bound = model.soft_upper[j] if angles[j] > model.soft_upper[j] else model.soft_lower[j]
            self.violations.append(
                Violation("limit", i, names[j], float(angles[j]), float(bound))
            )
        if self._prev is not None and dt is not None:
            velocity = np.abs(angles - self._prev) / dt
            for j in np.nonzero(velocity > model.velocity_limits)[0]:
                self.violations.append(
                    Violation(
                        "velocity", i, names[j], float(velocity[j]), float(model.velocity_limits[j])
                    )
                )
            acc_limit = self.thresholds.acceleration_limit
            if acc_limit is not None and self._prev2 is not None:
                accel = np.abs(angles - 2.0 * self._prev + self._prev2) / (dt * dt)
                for j in np.nonzero(accel > acc_limit)[0]:
                    self.violations.append(
                        Violation("acceleration", i, names[j], float(accel[j]), acc_limit)
                    )
        if self._pairs:
            poses = forward_kinematics(model, angles)
            margin = self.thresholds.collision_margin
            for a, b in self._pairs:
                sa, sb = self._by_ref[a], self._by_ref[b]
                pa = poses[sa.link].position + _rotate_one(poses[sa.link].rotation, sa.center)
                pb = poses[sb.link].position + _rotate_one(poses[sb.link].rotation, sb.center)
                limit = sa.radius + sb.radius + margin
                dist = float(np.linalg.norm(pa - pb))
                if dist < limit:
                    self.violations.append(
                        Violation("self-collision", i, _pair_id(a, b), dist, limit)
                    )
        self._prev2 = self._prev
        self._prev = angles
        self._cycle += 1

    def report(self) -> ValidationReport:
        if self._cycle == 0:
            raise EmptyTrace("no commands were streamed into the validator")
        period = self.period_us if self.period_us is not None else 1.0
        return ValidationReport(
            list(self.violations), cycles=self._cycle, period_us=period, thresholds=self.thresholds
        )


def _rotate_one(q: np.ndarray, v: np.ndarray) -> np.ndarray:
    return quat_rotate_vector(q, v)


@dataclass
class TraceDiff:
    max_abs_diff: float
    first_divergence: int | None
    tolerance: float
    equal: bool

    def format(self) -> str:
        lines = [
            f"max_abs_diff={self.max_abs_diff:.9g}",
            f"tolerance={self.tolerance:.9g}",
            f"equal={'yes' if self.equal else 'no'}",
        ]
        if self.first_divergence is not None:
            lines.append(f"first_divergence={self.first_divergence}")
        return "\n".join(lines) + "\n"


def compare_traces(a, b, tol: float = 0.0) -> TraceDiff:
    """Per-sample max-abs angle comparison of two equally-shaped traces."""
    a, b = list(a), list(b)
    if len(a) != len(b):
        raise ShapeMismatch(f"trace lengths differ: {len(a)} vs {len(b)}")
    if not a:
        return TraceDiff(0.0, None, tol, True)
    wa = np.stack([np.asarray(c.angles, dtype=float) for c in a])
    wb = np.stack([np.asarray(c.angles, dtype=float) for c in b])
    if wa.shape != wb.shape:
        raise ShapeMismatch(f"joint counts differ: {wa.shape[1]} vs {wb.shape[1]}")
    per_sample = np.abs(wa - wb).max(axis=1)
    beyond = np.nonzero(per_sample > tol)[0]
    first = int(beyond[0]) if len(beyond) else None
    return TraceDiff(float(per_sample.max()), first, tol, first is None)
