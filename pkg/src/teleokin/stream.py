"""Motion-frame wire codec, recordings, replay, and synthetic motion.

Wire format (all integers little-endian):

====================  ========================================
magic                 ``4D 4F 43 31`` ("MOC1")
version               u8, currently 1
flags                 u8, written as 0, ignored on decode
sequence number       u32
timestamp             u64, sender-clock microseconds
segment count         u8
per segment           4 x float32: w, x, y, z
checksum              CRC-32 (IEEE 802.3, reflected) over all
                      preceding bytes, as u32
====================  ========================================

A 23-segment frame is therefore 19 + 23*16 + 4 = 391 bytes.  Orientations
are float32 on the wire and float64 in memory; each segment quaternion is
relative to its parent segment, so the calibration pose is all identities.

A recording file is the 8-byte magic ``MOCREC01`` followed by back-to-back
encoded frames.
"""

from __future__ import annotations

import logging
import math
import socket
import struct
import threading
import zlib
from dataclasses import dataclass
from typing import Iterable, Iterator

import numpy as np

from .clock import WallClock
from .errors import (
    BadMagic,
    CrcMismatch,
    DegenerateQuaternion,
    EmptyRecording,
    TruncatedFrame,
    UnsupportedVersion,
)
from .metrics import Histogram

log = logging.getLogger(__name__)

FRAME_MAGIC = b"MOC1"
RECORDING_MAGIC = b"MOCREC01"
PROTOCOL_VERSION = 1

_HEADER = struct.Struct("<4sBBIQB")
_CRC = struct.Struct("<I")
HEADER_SIZE = _HEADER.size  # 19
_SEGMENT_SIZE = 16

# A decoded segment whose float32 norm falls at or below this is corrupt.
_WIRE_DEGENERATE_NORM = 1e-6


@dataclass(eq=False)
class MocapFrame:
    """One timestamped snapshot of per-segment orientations.

    ``orientations`` is (n_segments, 4) float64, rows ``w, x, y, z``, unit
    and canonical-sign, ordered by the canonical skeleton layout.
    """

    seq: int
    timestamp_us: int
    orientations: np.ndarray

    @property
    def segment_count(self) -> int:
        return len(self.orientations)


def identity_frame(segment_count: int, seq: int = 0, timestamp_us: int = 0) -> MocapFrame:
    quats = np.zeros((segment_count, 4))
    quats[:, 0] = 1.0
    return MocapFrame(seq, timestamp_us, quats)


def _canonicalize_rows(quats: np.ndarray) -> np.ndarray:
    w, x, y, z = quats[:, 0], quats[:, 1], quats[:, 2], quats[:, 3]
    flip = (w < 0) | (
        (w == 0) & ((x < 0) | ((x == 0) & ((y < 0) | ((y == 0) & (z < 0)))))
    )
    quats[flip] *= -1.0
    return quats


def encode_frame(frame: MocapFrame) -> bytes:
    """Serialize a frame, bit-exact to the format above."""
    quats = np.ascontiguousarray(frame.orientations, dtype="<f4")
    count = len(quats)
    if count > 255:
        raise ValueError(f"segment count {count} exceeds the wire format's u8 field")
    header = _HEADER.pack(
        FRAME_MAGIC, PROTOCOL_VERSION, 0, frame.seq & 0xFFFFFFFF, frame.timestamp_us, count
    )
    body = header + quats.tobytes()
    return body + _CRC.pack(zlib.crc32(body))


def decode_frame(data: bytes) -> MocapFrame:
    """Parse and validate one encoded frame.

    Every failure raises a specific error (BadMagic, UnsupportedVersion,
    TruncatedFrame, CrcMismatch, DegenerateQuaternion); callers treat any of
    them as "discard this frame".  Quaternions are re-normalized from their
    float32 quantization and canonical-signed.
    """
    if len(data) < HEADER_SIZE:
        raise TruncatedFrame(f"{len(data)} bytes is shorter than the {HEADER_SIZE}-byte header")
    magic, version, _flags, seq, timestamp_us, count = _HEADER.unpack_from(data)
    if magic != FRAME_MAGIC:
        raise BadMagic(f"expected {FRAME_MAGIC!r}, got {magic!r}")
    if version != PROTOCOL_VERSION:
        raise UnsupportedVersion(f"protocol version {version}")
    expected = HEADER_SIZE + count * _SEGMENT_SIZE + _CRC.size
    if len(data) != expected:
        raise TruncatedFrame(f"expected {expected} bytes for {count} segments, got {len(data)}")
    (crc,) = _CRC.unpack_from(data, expected - _CRC.size)
    if crc != zlib.crc32(data[: expected - _CRC.size]):
        raise CrcMismatch("frame checksum mismatch")
    quats = (
        np.frombuffer(data, dtype="<f4", count=count * 4, offset=HEADER_SIZE)
        .reshape(count, 4)
        .astype(np.float64)
    )
    norms = np.linalg.norm(quats, axis=1)
    if (norms <= _WIRE_DEGENERATE_NORM).any():
        bad = int(np.argmax(norms <= _WIRE_DEGENERATE_NORM))
        raise DegenerateQuaternion(f"segment {bad} has norm {norms[bad]:.3e}")
    quats /= norms[:, None]
    return MocapFrame(seq, timestamp_us, _canonicalize_rows(quats))


def frames_equal(a: MocapFrame, b: MocapFrame) -> bool:
    return (
        a.seq == b.seq
        and a.timestamp_us == b.timestamp_us
        and np.array_equal(a.orientations, b.orientations)
    )


# ---------------------------------------------------------------------------
# Stream accounting


class StreamStats:
    """Sequence and timing accounting for a live frame stream.

    ``received`` counts every observed frame including duplicates;
    ``dropped`` is the count of sequence numbers inside the observed span
    that never arrived, so ``received + dropped >= span`` always holds.
    """

    def __init__(self):
        self.received = 0
        self.duplicates = 0
        self.out_of_order = 0
        self.jitter = Histogram()
        self._seen: set[int] = set()
        self._first_seq: int | None = None
        self._max_seq: int | None = None
        self._last_arrival: int | None = None

    def observe(self, seq: int, arrival_us: int) -> None:
        self.received += 1
        if self._last_arrival is not None:
            self.jitter.record(arrival_us - self._last_arrival)
        self._last_arrival = arrival_us
        if seq in self._seen:
            self.duplicates += 1
            return
        if self._max_seq is not None and seq < self._max_seq:
            self.out_of_order += 1
        self._seen.add(seq)
        self._first_seq = seq if self._first_seq is None else min(self._first_seq, seq)
        self._max_seq = seq if self._max_seq is None else max(self._max_seq, seq)

    @property
    def dropped(self) -> int:
        if self._first_seq is None:
            return 0
        span = self._max_seq - self._first_seq + 1
        return span - len(self._seen)

    @property
    def span(self) -> int:
        if self._first_seq is None:
            return 0
        return self._max_seq - self._first_seq + 1


# ---------------------------------------------------------------------------
# Recordings and replay


def write_recording(path, frames: Iterable[MocapFrame]) -> int:
    """Write a MOCREC01 file; returns the number of frames written."""
    count = 0
    with open(path, "wb") as fh:
        fh.write(RECORDING_MAGIC)
        for frame in frames:
            fh.write(encode_frame(frame))
            count += 1
    return count


def read_recording(path) -> list[MocapFrame]:
    """Read a MOCREC01 file; a truncated final frame is dropped with a warning."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[: len(RECORDING_MAGIC)] != RECORDING_MAGIC:
        raise BadMagic(f"not a {RECORDING_MAGIC.decode()} recording")
    frames = []
    offset = len(RECORDING_MAGIC)
    while offset < len(data):
        remaining = len(data) - offset
        if remaining < HEADER_SIZE:
            log.warning("dropping truncated final frame (%d trailing bytes)", remaining)
            break
        count = data[offset + HEADER_SIZE - 1]
        frame_len = HEADER_SIZE + count * _SEGMENT_SIZE + _CRC.size
        if remaining < frame_len:
            log.warning("dropping truncated final frame (%d of %d bytes)", remaining, frame_len)
            break
        frames.append(decode_frame(data[offset : offset + frame_len]))
        offset += frame_len
    return frames


def schedule(frames: Iterable[MocapFrame], speed: float = 1.0, start_us: int = 0):
    """Turn a recording into ``(due_us, frame)`` pairs for the control loop.

    Due times reproduce the recorded timestamp gaps divided by ``speed``;
    ``speed=math.inf`` makes everything due at ``start_us`` (as fast as the
    consumer can take them, order preserved).
    """
    frames = list(frames)
    if not frames:
        raise EmptyRecording("no frames to schedule")
    if not (speed > 0):
        raise ValueError("speed must be positive")
    t0 = frames[0].timestamp_us
    last = t0
    out = []
    for f in frames:
        if f.timestamp_us < last:
            raise ValueError("recording timestamps must be non-decreasing")
        last = f.timestamp_us
        offset = 0 if math.isinf(speed) else int(round((f.timestamp_us - t0) / speed))
        out.append((start_us + offset, f))
    return out


def replay(frames: Iterable[MocapFrame], speed: float = 1.0, clock=None) -> Iterator[MocapFrame]:
    """Timed frame source: yields frames with recorded gaps divided by ``speed``.

    With ``speed=math.inf`` all frames are yielded immediately (deterministic
    offline mode).  Timing uses the injected clock, wall clock by default.
    """
    timed = schedule(frames, speed)
    if math.isinf(speed):
        for _, frame in timed:
            yield frame
        return
    clk = clock if clock is not None else WallClock()
    origin = clk.now_us()
    for due, frame in timed:
        clk.sleep_until(origin + due)
        yield frame


# ---------------------------------------------------------------------------
# Synthetic motion

SYNTH_PATTERNS = ("static", "arm-wave", "squat", "walk-cycle")

# Documented joint programs (segment, axis, amplitude rad, frequency Hz).
# arm-wave: upper arms swing 0.5 rad at 1 Hz, forearms flex, hands twist.
# squat: 0.5 Hz crouch: thighs -0.5, shanks +1.0, feet -0.5 (half-cosine).
# walk-cycle: 1 s period: antiphase thighs 0.3 rad, shank flexion, arm swing.
_AXIS_X = (1.0, 0.0, 0.0)
_AXIS_Y = (0.0, 1.0, 0.0)
_AXIS_Z = (0.0, 0.0, 1.0)

ARM_WAVE_AMPLITUDE = 0.5  # rad, upper-arm swing
ARM_WAVE_FREQ = 1.0  # Hz
SQUAT_FREQ = 0.5  # Hz
WALK_PERIOD = 1.0  # s


def _pattern_angles(pattern: str, t: float) -> list[tuple[str, tuple, float]]:
    two_pi = 2.0 * math.pi
    if pattern == "static":
        return []
    if pattern == "arm-wave":
        swing = ARM_WAVE_AMPLITUDE * math.sin(two_pi * ARM_WAVE_FREQ * t)
        flex = 0.6 * 0.5 * (1.0 - math.cos(two_pi * ARM_WAVE_FREQ * t))
        twist = 0.4 * math.sin(two_pi * ARM_WAVE_FREQ * t)
        return [
            ("left_upper_arm", _AXIS_Y, swing),
            ("right_upper_arm", _AXIS_Y, swing),
            ("left_forearm", _AXIS_Y, flex),
            ("right_forearm", _AXIS_Y, flex),
            ("left_hand", _AXIS_Z, twist),
            ("right_hand", _AXIS_Z, -twist),
        ]
    if pattern == "squat":
        crouch = 0.5 * (1.0 - math.cos(two_pi * SQUAT_FREQ * t))
        return [
            ("left_thigh", _AXIS_Y, -0.5 * crouch),
            ("right_thigh", _AXIS_Y, -0.5 * crouch),
            ("left_shank", _AXIS_Y, 1.0 * crouch),
            ("right_shank", _AXIS_Y, 1.0 * crouch),
            ("left_foot", _AXIS_Y, -0.5 * crouch),
            ("right_foot", _AXIS_Y, -0.5 * crouch),
        ]
    if pattern == "walk-cycle":
        phase = two_pi * t / WALK_PERIOD
        stride = 0.3 * math.sin(phase)
        left_lift = 0.2 * 0.5 * (1.0 - math.cos(phase))
        right_lift = 0.2 * 0.5 * (1.0 - math.cos(phase + math.pi))
        arm = 0.2 * math.sin(phase)
        return [
            ("left_thigh", _AXIS_Y, stride),
            ("right_thigh", _AXIS_Y, -stride),
            ("left_shank", _AXIS_Y, left_lift),
            ("right_shank", _AXIS_Y, right_lift),
            ("left_upper_arm", _AXIS_Y, -arm),
            ("right_upper_arm", _AXIS_Y, arm),
        ]
    raise ValueError(f"unknown pattern {pattern!r}; expected one of {SYNTH_PATTERNS}")


def synth_motion(
    pattern: str,
    rate: float,
    duration: float,
    noise_std: float = 0.0,
    seed: int = 0,
    skeleton=None,
) -> list[MocapFrame]:
    """Deterministic synthetic motion on the canonical skeleton.

    Patterns are the documented sinusoidal joint programs above.  Noise adds
    an independent per-segment small-angle rotation about a random unit axis
    with angle ~ Normal(0, noise_std); identical seeds give byte-identical
    frame sequences.
    """
    from .model import canonical_skeleton  # local import to avoid cycles

    if not (rate > 0):
        raise ValueError("rate must be positive")
    if not (duration > 0):
        raise ValueError("duration must be positive")
    if noise_std < 0:
        raise ValueError("noise_std must be non-negative")
    skel = skeleton if skeleton is not None else canonical_skeleton()
    _pattern_angles(pattern, 0.0)  # validate the pattern name up front
    index = {s.name: i for i, s in enumerate(skel.segments)}
    rng = np.random.default_rng(seed)
    n_frames = int(round(rate * duration))
    frames = []
    for i in range(n_frames):
        t = i / rate
        quats = np.zeros((len(skel.segments), 4))
        quats[:, 0] = 1.0
        for segment, axis, angle in _pattern_angles(pattern, t):
            row = index.get(segment)
            if row is None:
                continue  # pattern only drives segments the skeleton has
            half = 0.5 * angle
            s = math.sin(half)
            quats[row] = (math.cos(half), s * axis[0], s * axis[1], s * axis[2])
        if noise_std > 0:
            axes = rng.normal(size=(len(skel.segments), 3))
            axes /= np.linalg.norm(axes, axis=1)[:, None]
            angles = rng.normal(0.0, noise_std, size=len(skel.segments))
            half = 0.5 * angles
            noise = np.empty((len(skel.segments), 4))
            noise[:, 0] = np.cos(half)
            noise[:, 1:] = np.sin(half)[:, None] * axes
            quats = _canonicalize_rows(_rows_multiply(quats, noise))
        frames.append(MocapFrame(seq=i, timestamp_us=round(i * 1e6 / rate), orientations=quats))
    return frames


def _rows_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a[:, 0], a[:, 1], a[:, 2], a[:, 3]
    bw, bx, by, bz = b[:, 0], b[:, 1], b[:, 2], b[:, 3]
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by + ay * bw + az * bx - ax * bz,
            aw * bz + az * bw + ax * by - ay * bx,
        ],
        axis=1,
    )


# ---------------------------------------------------------------------------
# Live transport


class DatagramSource:
    """UDP frame source: one encoded frame per datagram, pushed into a slot.

    Undecodable datagrams are counted (by error type) and dropped; the loop
    never sees them, and the resulting sequence gaps show up in the stats.
    """

    def __init__(self, port: int, host: str = "127.0.0.1"):
        self.host = host
        self.port = port
        self.stats = StreamStats()
        self.decode_errors: dict[str, int] = {}
        self._sock: socket.socket | None = None
        self._thread: threading.Thread | None = None
        self._running = False

    def start(self, slot, clock) -> None:
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._sock.bind((self.host, self.port))
        self._sock.settimeout(0.05)
        self.port = self._sock.getsockname()[1]
        self._running = True
        self._thread = threading.Thread(
            target=self._run, args=(slot, clock), name="teleokin-source", daemon=True
        )
        self._thread.start()

    def _run(self, slot, clock) -> None:
        while self._running:
            try:
                data, _ = self._sock.recvfrom(65535)
            except socket.timeout:
                continue
            except OSError:
                break
            try:
                frame = decode_frame(data)
            except Exception as exc:  # decode errors are counted drops
                name = type(exc).__name__
                self.decode_errors[name] = self.decode_errors.get(name, 0) + 1
                continue
            now = clock.now_us()
            self.stats.observe(frame.seq, now)
            slot.write(frame, now)

    def stop(self) -> None:
        self._running = False
        if self._thread is not None:
            self._thread.join(timeout=2.0)
            self._thread = None
        if self._sock is not None:
            self._sock.close()
            self._sock = None
