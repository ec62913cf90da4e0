"""
Loading a robot model and walking its kinematic tree
====================================================

The bundled sample robot has 23 revolute joints (two 6-DoF legs, a waist,
two 5-DoF arms), soft limits inside every hard stop, and 14 collision
spheres.  Forward kinematics turns a joint vector into world-frame link
poses; the validator builds on exactly this.
"""

from teleokin import forward_kinematics, load_robot_model, load_skeleton, sample_text

model = load_robot_model(sample_text("g1_sample.cfg"))
skeleton = load_skeleton(sample_text("human_sample.cfg"))

print(f"robot: {len(model)} joints, base link {model.base_link!r}")
print(f"collision spheres: {len(model.spheres)}, excluded pairs: {len(model.exclusions)}")
print(f"human skeleton: {len(skeleton)} segments, root {skeleton.segments[0].name!r}")

print("\nsoft intervals (first five joints):")
for joint in model.joints[:5]:
    lo, hi = joint.limit_min + joint.soft_margin, joint.limit_max - joint.soft_margin
    print(f"  {joint.name:<18} [{lo:+.2f}, {hi:+.2f}] rad   vmax {joint.velocity_limit} rad/s")

# Neutral pose: all joints at their defaults.
poses = forward_kinematics(model, model.default_angles)
print("\nneutral-pose link heights:")
for link in ("torso_link", "left_hand_link", "left_foot_link"):
    x, y, z = poses[link].position
    print(f"  {link:<16} ({x:+.3f}, {y:+.3f}, {z:+.3f}) m")

# A crouch: bend hips, knees, and ankles together.
crouch = model.default_angles.copy()
for name, value in [
    ("left_hip_pitch", -0.5), ("right_hip_pitch", -0.5),
    ("left_knee", 1.0), ("right_knee", 1.0),
    ("left_ankle_pitch", -0.5), ("right_ankle_pitch", -0.5),
]:
    crouch[model.joint_index(name)] = value
lowered = forward_kinematics(model, crouch)
drop = poses["left_foot_link"].position[2] - lowered["left_foot_link"].position[2]
print(f"\ncrouching moves the foot {abs(drop):.3f} m relative to the pelvis")
print("(the pelvis is the FK root; on the real floor it is the body that sinks)")
