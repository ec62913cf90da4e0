"""Real-time retargeting of streamed human orientation frames onto a
configurable humanoid joint model, with a kinematic trace validator.

Submodules:

- ``geometry``  quaternion algebra, swing-twist and Euler decompositions
- ``model``     robot / skeleton / map configs and forward kinematics
- ``stream``    motion-frame wire codec, recordings, replay, synthesis
- ``retarget``  the per-frame map -> smooth -> clamp pipeline
- ``runtime``   fixed-rate loop, latest-frame slot, sinks, metrics
- ``validate``  limit / continuity / self-collision audit of command traces
- ``cli``       the ``teleokin`` command-line entry point
"""

from .clock import VirtualClock, WallClock
from .data import sample_path, sample_text
from .geometry import (
    euler_decompose,
    quat_conjugate,
    quat_from_axis_angle,
    quat_identity,
    quat_multiply,
    quat_normalize,
    quat_rotate_vector,
    swing_twist,
)
from .model import (
    HumanSkeleton,
    RetargetMap,
    RobotModel,
    canonical_skeleton,
    forward_kinematics,
    forward_kinematics_batch,
    load_retarget_map,
    load_robot_model,
    load_skeleton,
    serialize_robot_model,
    serialize_skeleton,
)
from .retarget import (
    FilterState,
    JointCommand,
    Pipeline,
    enforce_limits,
    map_frame,
    retarget_step,
    smooth,
)
from .runtime import (
    LatestFrameSlot,
    LoopMetrics,
    MultiSink,
    NullSink,
    datagram_sink,
    read_trace,
    run_loop,
    trace_sink,
    validator_sink,
)
from .stream import (
    DatagramSource,
    MocapFrame,
    StreamStats,
    decode_frame,
    encode_frame,
    identity_frame,
    read_recording,
    replay,
    schedule,
    synth_motion,
    write_recording,
)
from .validate import Thresholds, ValidationReport, compare_traces, validate_trace

__version__ = "0.1.0"

__all__ = [
    "VirtualClock",
    "WallClock",
    "sample_path",
    "sample_text",
    "euler_decompose",
    "quat_conjugate",
    "quat_from_axis_angle",
    "quat_identity",
    "quat_multiply",
    "quat_normalize",
    "quat_rotate_vector",
    "swing_twist",
    "HumanSkeleton",
    "RetargetMap",
    "RobotModel",
    "canonical_skeleton",
    "forward_kinematics",
    "forward_kinematics_batch",
    "load_retarget_map",
    "load_robot_model",
    "load_skeleton",
    "serialize_robot_model",
    "serialize_skeleton",
    "FilterState",
    "JointCommand",
    "Pipeline",
    "enforce_limits",
    "map_frame",
    "retarget_step",
    "smooth",
    "LatestFrameSlot",
    "LoopMetrics",
    "MultiSink",
    "NullSink",
    "datagram_sink",
    "read_trace",
    "run_loop",
    "trace_sink",
    "validator_sink",
    "DatagramSource",
    "MocapFrame",
    "StreamStats",
    "decode_frame",
    "encode_frame",
    "identity_frame",
    "read_recording",
    "replay",
    "schedule",
    "synth_motion",
    "write_recording",
    "Thresholds",
    "ValidationReport",
    "compare_traces",
    "validate_trace",
]
