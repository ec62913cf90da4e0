"""Fixed-rate control loop with latest-frame semantics and pluggable sinks.

The loop holds no queue: a single slot carries at most one pending frame,
and a write replaces whatever is there.  Each cycle consumes the newest
frame if one arrived and emits exactly one command — a fresh one, or a hold
command repeating the last posture when the source went quiet.

Command wire formats (all integers little-endian):

- datagram: magic ``43 4D 44 31`` ("CMD1"), version u8=1, then the record
  fields, with CRC-32 over all preceding bytes.
- trace file: 8-byte magic ``CMDTRC01`` followed by back-to-back records
  (no per-record magic/version).

record := seq u32, source seq u32, source timestamp u64, emission timestamp
u64, joint count u8, angles float64 each, hold flag u8, CRC-32 u32 over the
preceding record bytes.
"""

from __future__ import annotations

import logging
import socket
import struct
import threading
import zlib
from dataclasses import dataclass, field, replace

import numpy as np

from .clock import WallClock
from .errors import CrcMismatch, SinkBackpressure, TruncatedFrame
from .metrics import Histogram, bucket_lines
from .retarget import JointCommand, Pipeline
from .validate import IncrementalValidator, Thresholds

log = logging.getLogger(__name__)

TRACE_MAGIC = b"CMDTRC01"
COMMAND_MAGIC = b"CMD1"
COMMAND_VERSION = 1

_DGRAM_PREFIX = struct.Struct("<4sB")
_RECORD_HEAD = struct.Struct("<IIQQB")  # seq, source seq, source ts, emission ts, joint count
_CRC = struct.Struct("<I")


# ---------------------------------------------------------------------------
# Latest-frame slot


class LatestFrameSlot:
    """Single-frame mailbox with atomic replace/take semantics.

    ``written = consumed + overwritten (+1 if a frame is pending)`` at all
    times; ``drain`` folds a leftover pending frame into ``overwritten`` so
    the equality is exact once the loop stops.
    """

    def __init__(self):
        self._lock = threading.Lock()
        self._frame = None
        self._arrival_us = 0
        self.written = 0
        self.overwritten = 0
        self.consumed = 0

    def write(self, frame, arrival_us: int) -> None:
        with self._lock:
            if self._frame is not None:
                self.overwritten += 1
            self._frame = frame
            self._arrival_us = arrival_us
            self.written += 1

    def take(self):
        with self._lock:
            if self._frame is None:
                return None
            frame, arrival = self._frame, self._arrival_us
            self._frame = None
            self.consumed += 1
            return frame, arrival

    @property
    def pending(self) -> bool:
        with self._lock:
            return self._frame is not None

    def drain(self) -> None:
        with self._lock:
            if self._frame is not None:
                self._frame = None
                self.overwritten += 1


# ---------------------------------------------------------------------------
# Loop metrics


@dataclass
class LoopMetrics:
    cycles: int = 0
    commands: int = 0
    holds: int = 0
    frames_written: int = 0
    frames_consumed: int = 0
    frames_overwritten: int = 0
    sink_errors: int = 0
    compute_us: Histogram = field(default_factory=Histogram)
    frame_age_us: Histogram = field(default_factory=Histogram)
    jitter_us: Histogram = field(default_factory=Histogram)

    def format(self) -> str:
        lines = [
            f"cycles={self.cycles}",
            f"commands={self.commands}",
            f"holds={self.holds}",
            f"frames_written={self.frames_written}",
            f"frames_consumed={self.frames_consumed}",
            f"frames_overwritten={self.frames_overwritten}",
            f"sink_errors={self.sink_errors}",
        ]
        for name, hist in (
            ("compute_us", self.compute_us),
            ("frame_age_us", self.frame_age_us),
            ("jitter_us", self.jitter_us),
        ):
            lines.append(f"{name}_p50={hist.percentile(50)}")
            lines.append(f"{name}_p99={hist.percentile(99)}")
            lines.append(f"{name}_max={hist.maximum()}")
            lines.extend(bucket_lines(name, hist))
        return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Command record codec


def _record_body(cmd: JointCommand) -> bytes:
    angles = np.ascontiguousarray(cmd.angles, dtype="<f8")
    head = _RECORD_HEAD.pack(
        cmd.seq & 0xFFFFFFFF,
        cmd.source_seq & 0xFFFFFFFF,
        cmd.source_timestamp_us,
        cmd.emission_timestamp_us,
        len(angles),
    )
    return head + angles.tobytes() + (b"\x01" if cmd.hold else b"\x00")


def encode_command_record(cmd: JointCommand) -> bytes:
    """Trace-file record: fields + CRC, no magic/version."""
    body = _record_body(cmd)
    return body + _CRC.pack(zlib.crc32(body))


def encode_command_datagram(cmd: JointCommand) -> bytes:
    """Datagram: CMD1 magic + version + fields + CRC over everything before it."""
    body = _DGRAM_PREFIX.pack(COMMAND_MAGIC, COMMAND_VERSION) + _record_body(cmd)
    return body + _CRC.pack(zlib.crc32(body))


def _decode_record_fields(data: bytes, offset: int) -> tuple[JointCommand, int]:
    head_size = _RECORD_HEAD.size
    if len(data) - offset < head_size:
        raise TruncatedFrame("record header truncated")
    seq, source_seq, source_ts, emission_ts, count = _RECORD_HEAD.unpack_from(data, offset)
    body_len = head_size + count * 8 + 1
    if len(data) - offset < body_len + _CRC.size:
        raise TruncatedFrame(f"record truncated ({len(data) - offset} of {body_len + _CRC.size} bytes)")
    angles = np.frombuffer(data, dtype="<f8", count=count, offset=offset + head_size).astype(float)
    hold = data[offset + body_len - 1] != 0
    cmd = JointCommand(
        seq=seq,
        source_seq=source_seq,
        source_timestamp_us=source_ts,
        emission_timestamp_us=emission_ts,
        angles=angles,
        clamped=np.zeros(count, dtype=bool),  # clamp flags are not on the wire
        hold=hold,
    )
    return cmd, body_len


def decode_command_record(data: bytes, offset: int = 0) -> tuple[JointCommand, int]:
    """Parse one trace record at ``offset``; returns (command, bytes consumed)."""
    cmd, body_len = _decode_record_fields(data, offset)
    (crc,) = _CRC.unpack_from(data, offset + body_len)
    if crc != zlib.crc32(data[offset : offset + body_len]):
        raise CrcMismatch("command record checksum mismatch")
    return cmd, body_len + _CRC.size


def decode_command_datagram(data: bytes) -> JointCommand:
    prefix = _DGRAM_PREFIX.size
    if len(data) < prefix:
        raise TruncatedFrame("datagram shorter than its magic")
    magic, version = _DGRAM_PREFIX.unpack_from(data)
    if magic != COMMAND_MAGIC:
        raise TruncatedFrame(f"expected {COMMAND_MAGIC!r}, got {magic!r}")
    if version != COMMAND_VERSION:
        raise TruncatedFrame(f"unsupported command version {version}")
    cmd, body_len = _decode_record_fields(data, prefix)
    total = prefix + body_len
    if len(data) != total + _CRC.size:
        raise TruncatedFrame("datagram length mismatch")
    (crc,) = _CRC.unpack_from(data, total)
    if crc != zlib.crc32(data[:total]):
        raise CrcMismatch("command datagram checksum mismatch")
    return cmd


def read_trace(path) -> list[JointCommand]:
    """Read a CMDTRC01 file back into commands (clamp flags come back False)."""
    with open(path, "rb") as fh:
        data = fh.read()
    if data[: len(TRACE_MAGIC)] != TRACE_MAGIC:
        raise TruncatedFrame(f"not a {TRACE_MAGIC.decode()} trace file")
    commands = []
    offset = len(TRACE_MAGIC)
    while offset < len(data):
        cmd, consumed = decode_command_record(data, offset)
        commands.append(cmd)
        offset += consumed
    return commands


# ---------------------------------------------------------------------------
# Sinks


class NullSink:
    """Discards commands; the benchmark destination."""

    def emit(self, cmd: JointCommand) -> None:
        pass

    def close(self) -> None:
        pass


class TraceSink:
    """Writes the binary command-trace file format."""

    def __init__(self, path):
        self.path = path
        self._fh = open(path, "wb")
        self._fh.write(TRACE_MAGIC)
        self.count = 0

    def emit(self, cmd: JointCommand) -> None:
        self._fh.write(encode_command_record(cmd))
        self.count += 1

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.flush()
            self._fh.close()


def trace_sink(path) -> TraceSink:
    return TraceSink(path)


class DatagramSink:
    """One datagram per command; send failures are counted, never fatal."""

    def __init__(self, address):
        if isinstance(address, str):
            host, _, port = address.rpartition(":")
            address = (host or "127.0.0.1", int(port))
        self.address = address
        self._sock = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        self._sock.connect(address)
        self.sent = 0
        self.send_errors = 0

    def emit(self, cmd: JointCommand) -> None:
        try:
            self._sock.send(encode_command_datagram(cmd))
            self.sent += 1
        except OSError:
            self.send_errors += 1

    def close(self) -> None:
        self._sock.close()


def datagram_sink(address) -> DatagramSink:
    return DatagramSink(address)


class ValidatorSink:
    """Streams commands into the incremental kinematic validator."""

    def __init__(self, model, thresholds: Thresholds | None = None, period_us: float | None = None):
        self.validator = IncrementalValidator(model, thresholds, period_us)

    def emit(self, cmd: JointCommand) -> None:
        self.validator.update(cmd)

    def close(self) -> None:
        pass

    def report(self):
        return self.validator.report()


def validator_sink(model, thresholds: Thresholds | None = None, period_us: float | None = None) -> ValidatorSink:
    return ValidatorSink(model, thresholds, period_us)


class MultiSink:
    """Fans one command stream out to several sinks, in order."""

    def __init__(self, sinks):
        self.sinks = list(sinks)

    def emit(self, cmd: JointCommand) -> None:
        for sink in self.sinks:
            sink.emit(cmd)

    def close(self) -> None:
        for sink in self.sinks:
            sink.close()


# ---------------------------------------------------------------------------
# The loop


BACKPRESSURE_LIMIT = 8  # consecutive over-budget sink calls before aborting


def run_loop(
    source,
    pipeline: Pipeline,
    sink,
    rate_hz: float,
    *,
    max_cycles: int | None = None,
    duration_s: float | None = None,
    clock=None,
    dt_mode: str = "nominal",
    sink_budget_us: int | None = None,
    backpressure_limit: int = BACKPRESSURE_LIMIT,
) -> LoopMetrics:
    """Drive the pipeline at a fixed rate until the budget or source ends.

    ``source`` is either an iterable of ``(due_us, frame)`` pairs (scheduled
    mode: the loop feeds the slot itself, deterministic under a virtual
    clock; due times count from loop start) or an object with
    ``start(slot, clock)`` / ``stop()`` (live mode: the source writes the
    slot from its own thread).

    Each cycle takes the newest pending frame and emits exactly one command;
    with no pending frame it emits a hold command repeating the last emitted
    angles (model defaults before the first frame).  The filter sees
    ``dt = 1/rate`` in nominal mode or the measured cycle spacing in
    measured mode.

    Raises SinkBackpressure (metrics attached) after ``backpressure_limit``
    consecutive sink calls above ``sink_budget_us`` (default: one period).
    """
    if not (rate_hz > 0):
        raise ValueError("rate_hz must be positive")
    if dt_mode not in ("nominal", "measured"):
        raise ValueError("dt_mode must be 'nominal' or 'measured'")
    clk = clock if clock is not None else WallClock()
    period_us = max(1, round(1e6 / rate_hz))
    if sink_budget_us is None:
        sink_budget_us = period_us
    nominal_dt = period_us / 1e6

    slot = LatestFrameSlot()
    live = hasattr(source, "start")
    scheduled = None if live else iter(source)
    pending: tuple | None = None
    metrics = LoopMetrics()
    model = pipeline.model
    last_angles = model.default_angles.copy()
    last_source_seq = 0
    last_source_ts = 0
    over_budget = 0
    prev_cycle_now: int | None = None

    if live:
        source.start(slot, clk)
    else:
        pending = next(scheduled, None)

    start_us = clk.now_us()
    cycle = 0
    try:
        while True:
            if max_cycles is not None and cycle >= max_cycles:
                break
            target_us = start_us + cycle * period_us
            if duration_s is not None and cycle * period_us >= duration_s * 1e6:
                break
            clk.sleep_until(target_us)
            now = clk.now_us()
            if not live:
                while pending is not None and start_us + pending[0] <= now:
                    slot.write(pending[1], arrival_us=start_us + pending[0])
                    pending = next(scheduled, None)
                if (
                    pending is None
                    and not slot.pending
                    and max_cycles is None
                    and duration_s is None
                ):
                    break  # source end; an explicit budget keeps the loop holding instead
            metrics.jitter_us.record(abs(now - target_us))
            work_start = clk.now_us()
            taken = slot.take()
            if taken is not None:
                frame, arrival_us = taken
                if dt_mode == "nominal" or prev_cycle_now is None:
                    dt = nominal_dt
                else:
                    dt = max(now - prev_cycle_now, 1) / 1e6
                command, _diag = pipeline.step(frame, dt, clk)
                command = replace(command, seq=cycle)
                metrics.frame_age_us.record(command.emission_timestamp_us - arrival_us)
                last_angles = command.angles
                last_source_seq = command.source_seq
                last_source_ts = command.source_timestamp_us
            else:
                command = JointCommand(
                    seq=cycle,
                    source_seq=last_source_seq,
                    source_timestamp_us=last_source_ts,
                    emission_timestamp_us=clk.now_us(),
                    angles=last_angles.copy(),
                    clamped=np.zeros(len(model), dtype=bool),
                    hold=True,
                )
                metrics.holds += 1
            sink_start = clk.now_us()
            sink.emit(command)
            sink_elapsed = clk.now_us() - sink_start
            metrics.compute_us.record(clk.now_us() - work_start)
            metrics.cycles += 1
            metrics.commands += 1
            prev_cycle_now = now
            if sink_elapsed > sink_budget_us:
                over_budget += 1
                if over_budget >= backpressure_limit:
                    _finalize(metrics, slot)
                    raise SinkBackpressure(
                        f"sink exceeded {sink_budget_us} us for {over_budget} consecutive cycles",
                        metrics=metrics,
                    )
            else:
                over_budget = 0
            cycle += 1
    finally:
        if live:
            source.stop()
        slot.drain()
        _finalize(metrics, slot)
        log.info(
            "loop finished: %d cycles, %d holds, %d frames consumed, %d overwritten",
            metrics.cycles,
            metrics.holds,
            metrics.frames_consumed,
            metrics.frames_overwritten,
        )
    return metrics


def _finalize(metrics: LoopMetrics, slot: LatestFrameSlot) -> None:
    metrics.frames_written = slot.written
    metrics.frames_consumed = slot.consumed
    metrics.frames_overwritten = slot.overwritten
