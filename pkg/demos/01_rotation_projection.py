"""
Projecting rotations onto joint axes
====================================

The mapping stage answers one question per robot joint: how much does this
human segment rotate about this axis?  For single-DoF joints that is the
swing-twist decomposition; for three-DoF clusters (hips, shoulders) it is a
three-angle decomposition in the order the robot's chain is built.
"""

import math

import numpy as np

from teleokin import (
    euler_decompose,
    quat_from_axis_angle,
    quat_multiply,
    swing_twist,
)

# A "knee" segment: mostly flexion about y, with a little off-axis wobble.
flexion = quat_from_axis_angle([0, 1, 0], 0.9)
wobble = quat_from_axis_angle([1, 0, 0], 0.15)
segment = quat_multiply(wobble, flexion)

swing, angle = swing_twist(segment, [0, 1, 0])
print(f"twist about y (the joint sees this): {angle:.4f} rad")
print(f"residual swing (the joint ignores this): {np.round(swing, 4)}")

# Recomposing swing * twist gives the original rotation back.
recomposed = quat_multiply(swing, quat_from_axis_angle([0, 1, 0], angle))
print("recomposition error:", np.abs(recomposed - segment).max())

# A "thigh" segment feeding a yaw-roll-pitch hip needs all three angles.
thigh = quat_multiply(
    quat_from_axis_angle([0, 0, 1], 0.3),  # yaw
    quat_multiply(
        quat_from_axis_angle([1, 0, 0], 0.1),  # roll
        quat_from_axis_angle([0, 1, 0], -0.6),  # pitch
    ),
)
angles, gimbal = euler_decompose(thigh, "ZXY")
print(f"\nZXY decomposition: yaw={angles[0]:.3f} roll={angles[1]:.3f} pitch={angles[2]:.3f}")
print("gimbal-proximate:", gimbal)

# Near the middle-angle singularity the flag trips and the tie-break pins
# the third angle to zero, keeping the pipeline deterministic.
locked = quat_multiply(
    quat_from_axis_angle([0, 0, 1], 0.5), quat_from_axis_angle([1, 0, 0], math.pi / 2)
)
angles, gimbal = euler_decompose(locked, "ZXY")
print(f"\nat the singularity: angles={np.round(angles, 4)} gimbal={gimbal}")
