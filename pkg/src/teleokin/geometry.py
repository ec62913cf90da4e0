"""Quaternion algebra and the rotation decompositions used for retargeting.

Conventions, fixed once here and used everywhere in the package:

- Quaternions are float64 numpy arrays ``[w, x, y, z]`` — Hamilton product,
  right-handed, scalar first.
- Every function returns unit quaternions in *canonical sign*: ``w >= 0``,
  and when ``w == 0`` the first nonzero of ``x, y, z`` is positive.  Equal
  rotations therefore compare equal component-by-component.
- Angles are radians in ``(-pi, pi]``; rotation axes are unit 3-vectors.
- Vectors rotate actively: ``quat_rotate_vector(q, v) == R(q) @ v``.

The implementations unpack to plain floats internally; at 4 elements that is
several times faster than numpy elementwise ops, which matters in the
per-frame retargeting path.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import DegenerateQuaternion

# Norm below which a quadruple no longer encodes a usable rotation.
DEGENERATE_NORM = 1e-12

# How close the middle angle may come to +-pi/2 before a three-angle
# decomposition is flagged as gimbal-proximate.
GIMBAL_MARGIN = 1e-3

EULER_ORDERS = ("XYZ", "ZXY", "ZYX", "YXZ", "XZY", "YZX")

_AXIS_INDEX = {"X": 0, "Y": 1, "Z": 2}
_UNIT_AXES = (np.array([1.0, 0.0, 0.0]), np.array([0.0, 1.0, 0.0]), np.array([0.0, 0.0, 1.0]))
_CYCLIC = {(0, 1, 2), (1, 2, 0), (2, 0, 1)}


def quat_identity() -> np.ndarray:
    """The identity rotation."""
    return np.array([1.0, 0.0, 0.0, 0.0])


def _canonical(w: float, x: float, y: float, z: float) -> np.ndarray:
    if w < 0.0 or (w == 0.0 and (x < 0.0 or (x == 0.0 and (y < 0.0 or (y == 0.0 and z < 0.0))))):
        return np.array([-w, -x, -y, -z])
    return np.array([w, x, y, z])


def quat_normalize(q) -> np.ndarray:
    """Scale a quadruple to unit norm and canonical sign.

    Inputs already inside the unit band (norm within 1e-9 of 1) are passed
    through unscaled, which makes normalization exactly idempotent.  Raises
    DegenerateQuaternion when the norm is at or below 1e-12, which in this
    pipeline means corrupt sensor data rather than a programming error.
    """
    w, x, y, z = (float(c) for c in q)
    n2 = w * w + x * x + y * y + z * z
    if n2 <= DEGENERATE_NORM * DEGENERATE_NORM:
        raise DegenerateQuaternion(f"quaternion norm {math.sqrt(n2):.3e} too small to normalize")
    if abs(n2 - 1.0) > 2e-9:
        inv = 1.0 / math.sqrt(n2)
        w, x, y, z = w * inv, x * inv, y * inv, z * inv
    return _canonical(w, x, y, z)


def quat_conjugate(q) -> np.ndarray:
    """Inverse of a unit quaternion, canonical sign."""
    w, x, y, z = (float(c) for c in q)
    return _canonical(w, -x, -y, -z)


def quat_multiply(a, b) -> np.ndarray:
    """Hamilton product ``a * b``, re-normalized to canonical sign."""
    aw, ax, ay, az = (float(c) for c in a)
    bw, bx, by, bz = (float(c) for c in b)
    return quat_normalize(
        (
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by + ay * bw + az * bx - ax * bz,
            aw * bz + az * bw + ax * by - ay * bx,
        )
    )


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    """Unit quaternion rotating by ``angle`` radians about ``axis``."""
    ax, ay, az = (float(c) for c in axis)
    n = math.sqrt(ax * ax + ay * ay + az * az)
    if n <= DEGENERATE_NORM:
        raise ValueError("rotation axis has zero norm")
    s = math.sin(angle / 2.0) / n
    return _canonical(math.cos(angle / 2.0), ax * s, ay * s, az * s)


def quat_rotate_vector(q, v) -> np.ndarray:
    """Rotate a 3-vector by a unit quaternion (active rotation)."""
    w, x, y, z = (float(c) for c in q)
    vx, vy, vz = (float(c) for c in v)
    # v' = v + w*t + q_vec x t  with  t = 2 * (q_vec x v)
    tx = 2.0 * (y * vz - z * vy)
    ty = 2.0 * (z * vx - x * vz)
    tz = 2.0 * (x * vy - y * vx)
    return np.array(
        [
            vx + w * tx + y * tz - z * ty,
            vy + w * ty + z * tx - x * tz,
            vz + w * tz + x * ty - y * tx,
        ]
    )


def _wrap_angle(a: float) -> float:
    # Fold into (-pi, pi]; callers only produce values in [-pi, pi].
    if a <= -math.pi:
        a += 2.0 * math.pi
    elif a > math.pi:
        a -= 2.0 * math.pi
    return a


def swing_twist(q, axis) -> tuple[np.ndarray, float]:
    """Split a rotation into swing and twist about ``axis``.

    Returns ``(swing, twist_angle)`` such that ``q = swing * twist`` where
    ``twist`` rotates by ``twist_angle`` about ``axis`` and the swing's
    vector part is orthogonal to ``axis``.  ``twist_angle`` lies in
    ``(-pi, pi]``.

    When the vector part of ``q`` is orthogonal to the axis there is no
    twist component; the natural degenerate result ``(q, 0.0)`` is returned.
    """
    w, x, y, z = (float(c) for c in q)
    ax, ay, az = (float(c) for c in axis)
    proj = x * ax + y * ay + z * az
    if math.hypot(w, proj) <= DEGENERATE_NORM:
        return _canonical(w, x, y, z), 0.0
    angle = 2.0 * math.atan2(proj, w)
    if angle <= -math.pi:
        angle += 2.0 * math.pi
    elif angle > math.pi:
        angle -= 2.0 * math.pi
    # swing = q * twist^-1
    half = 0.5 * angle
    tw = math.cos(half)
    ts = math.sin(half)
    tx, ty, tz = -ts * ax, -ts * ay, -ts * az
    swing = quat_normalize(
        (
            w * tw - x * tx - y * ty - z * tz,
            w * tx + x * tw + y * tz - z * ty,
            w * ty + y * tw + z * tx - x * tz,
            w * tz + z * tw + x * ty - y * tx,
        )
    )
    return swing, angle


def _matrix(w: float, x: float, y: float, z: float):
    # Rows of R(q) for a unit quaternion.
    xx, yy, zz = x * x, y * y, z * z
    xy, xz, yz = x * y, x * z, y * z
    wx, wy, wz = w * x, w * y, w * z
    return (
        (1.0 - 2.0 * (yy + zz), 2.0 * (xy - wz), 2.0 * (xz + wy)),
        (2.0 * (xy + wz), 1.0 - 2.0 * (xx + zz), 2.0 * (yz - wx)),
        (2.0 * (xz - wy), 2.0 * (yz + wx), 1.0 - 2.0 * (xx + yy)),
    )


def euler_decompose(q, order: str) -> tuple[np.ndarray, bool]:
    """Decompose a rotation into three intrinsic rotations.

    ``order`` is one of ``XYZ, ZXY, ZYX, YXZ, XZY, YZX``; the returned
    angles ``(a1, a2, a3)`` reproduce ``q`` as the intrinsic sequence
    ``R(order[0], a1) * R(order[1], a2) * R(order[2], a3)``.

    Returns ``(angles, gimbal)``.  ``gimbal`` is True when the middle angle
    is within GIMBAL_MARGIN of +-pi/2; in that regime the first and last
    rotations are not independently observable, so the decomposition is
    tie-broken deterministically: ``a3 = 0`` and ``a1`` absorbs the free
    rotation.
    """
    order = order.upper()
    if order not in EULER_ORDERS:
        raise ValueError(f"unsupported axis order {order!r}; expected one of {EULER_ORDERS}")
    i, j, k = (_AXIS_INDEX[c] for c in order)
    s = 1.0 if (i, j, k) in _CYCLIC else -1.0

    w, x, y, z = (float(c) for c in q)
    m = _matrix(w, x, y, z)
    sin_a2 = max(-1.0, min(1.0, s * m[i][k]))
    a2 = math.asin(sin_a2)
    gimbal = (math.pi / 2.0 - abs(a2)) <= GIMBAL_MARGIN
    if not gimbal:
        a1 = math.atan2(-s * m[j][k], m[k][k])
        a3 = math.atan2(-s * m[i][j], m[i][i])
    else:
        # Near the singularity a1/a3 trade off freely; fix a3 = 0 and take
        # a1 as the twist of the residual q * R(axis_j, a2)^-1 about axis_i.
        a3 = 0.0
        residual = quat_multiply(q, quat_conjugate(quat_from_axis_angle(_UNIT_AXES[j], a2)))
        _, a1 = swing_twist(residual, _UNIT_AXES[i])
    return np.array([_wrap_angle(a1), a2, _wrap_angle(a3)]), gimbal
