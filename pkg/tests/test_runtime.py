"""Control loop, latest-frame slot, sinks, and command codecs."""

import socket
import time

import numpy as np
import pytest

from teleokin.clock import VirtualClock, WallClock
from teleokin.data import sample_text
from teleokin.errors import CrcMismatch, SinkBackpressure, TruncatedFrame
from teleokin.model import load_retarget_map, load_robot_model, load_skeleton
from teleokin.retarget import FilterState, JointCommand, Pipeline
from teleokin.runtime import (
    LatestFrameSlot,
    MultiSink,
    NullSink,
    datagram_sink,
    decode_command_datagram,
    encode_command_datagram,
    encode_command_record,
    read_trace,
    run_loop,
    trace_sink,
    validator_sink,
)
from teleokin.stream import identity_frame, schedule, synth_motion


def sample_pipeline(tau=0.020):
    model = load_robot_model(sample_text("g1_sample.cfg"))
    skel = load_skeleton(sample_text("human_sample.cfg"))
    rmap = load_retarget_map(sample_text("g1_sample.map"), skel, model)
    return Pipeline(skel, rmap, model, FilterState.create(len(model), tau=tau))


def make_command(seq=0, n=3, hold=False, emission=1000):
    return JointCommand(
        seq=seq,
        source_seq=seq,
        source_timestamp_us=seq * 10,
        emission_timestamp_us=emission,
        angles=np.linspace(-1.0, 1.0, n),
        clamped=np.zeros(n, dtype=bool),
        hold=hold,
    )


class TestLatestFrameSlot:
    def test_take_empty(self):
        slot = LatestFrameSlot()
        assert slot.take() is None

    def test_write_take(self):
        slot = LatestFrameSlot()
        slot.write("f0", 100)
        assert slot.take() == ("f0", 100)
        assert slot.take() is None
        assert (slot.written, slot.consumed, slot.overwritten) == (1, 1, 0)

    def test_overwrite_keeps_newest(self):
        slot = LatestFrameSlot()
        slot.write("f0", 100)
        slot.write("f1", 200)
        assert slot.take() == ("f1", 200)
        assert (slot.written, slot.consumed, slot.overwritten) == (2, 1, 1)

    def test_accounting_under_scripted_interleavings(self):
        rng = np.random.default_rng(0)
        for _ in range(200):
            slot = LatestFrameSlot()
            newest = None
            for op in rng.integers(0, 2, size=60):
                if op == 0:
                    newest = int(rng.integers(1000))
                    slot.write(newest, 0)
                else:
                    got = slot.take()
                    if got is not None:
                        assert got[0] == newest  # freshness
                pendin = 1 if slot.pending else 0
                assert slot.written == slot.consumed + slot.overwritten + pendin
            slot.drain()
            assert slot.written == slot.consumed + slot.overwritten


class TestCommandCodec:
    def test_datagram_length_for_23_joints(self):
        cmd = make_command(n=23)
        assert len(encode_command_datagram(cmd)) == 219

    def test_record_length(self):
        cmd = make_command(n=23)
        assert len(encode_command_record(cmd)) == 214

    def test_datagram_round_trip(self):
        cmd = make_command(seq=42, n=5, hold=True)
        out = decode_command_datagram(encode_command_datagram(cmd))
        assert out.seq == 42 and out.hold
        assert np.array_equal(out.angles, cmd.angles)
        assert out.source_timestamp_us == cmd.source_timestamp_us

    def test_datagram_crc_checked(self):
        data = bytearray(encode_command_datagram(make_command(n=4)))
        data[10] ^= 0xFF
        with pytest.raises(CrcMismatch):
            decode_command_datagram(bytes(data))

    def test_datagram_truncation_checked(self):
        data = encode_command_datagram(make_command(n=4))
        with pytest.raises(TruncatedFrame):
            decode_command_datagram(data[:11])


class TestTraceSink:
    def test_empty_trace_is_just_the_header(self, tmp_path):
        path = tmp_path / "empty.trc"
        sink = trace_sink(path)
        sink.close()
        assert path.read_bytes() == b"CMDTRC01"

    def test_file_length_is_header_plus_records(self, tmp_path):
        path = tmp_path / "n.trc"
        sink = trace_sink(path)
        for i in range(7):
            sink.emit(make_command(seq=i, n=23))
        sink.close()
        assert path.stat().st_size == 8 + 7 * 214

    def test_round_trip(self, tmp_path):
        path = tmp_path / "rt.trc"
        sink = trace_sink(path)
        cmds = [make_command(seq=i, n=23, emission=1000 + i) for i in range(10)]
        for c in cmds:
            sink.emit(c)
        sink.close()
        loaded = read_trace(path)
        assert len(loaded) == 10
        for a, b in zip(loaded, cmds):
            assert a.seq == b.seq
            assert a.emission_timestamp_us == b.emission_timestamp_us
            assert np.array_equal(a.angles, b.angles)
            assert a.hold == b.hold


def frames_at_rate(n, rate_hz, pattern="arm-wave", noise=0.0, seed=0):
    return synth_motion(pattern, rate=rate_hz, duration=n / rate_hz, noise_std=noise, seed=seed)


class TestRunLoop:
    def test_matched_rates_one_command_per_frame(self):
        pipeline = sample_pipeline()
        frames = frames_at_rate(200, 100)
        metrics = run_loop(
            schedule(frames), pipeline, NullSink(), rate_hz=100, clock=VirtualClock()
        )
        assert metrics.cycles == 200
        assert metrics.commands == 200
        assert metrics.frames_consumed == 200
        assert metrics.frames_overwritten == 0
        assert metrics.holds == 0

    def test_double_rate_source_overwrites_half(self):
        pipeline = sample_pipeline()
        frames = frames_at_rate(399, 200)  # 200 Hz source into a 100 Hz loop
        capture = _CaptureSink()
        metrics = run_loop(
            schedule(frames), pipeline, capture, rate_hz=100, clock=VirtualClock()
        )
        assert metrics.frames_written == 399
        assert abs(metrics.frames_overwritten - metrics.frames_consumed) <= 1
        # every consumed frame is the newest at its cycle: the 2nd of each pair
        seqs = [c.source_seq for c in capture.commands if not c.hold]
        assert seqs == sorted(seqs)
        assert all(s % 2 == 0 for s in seqs)

    def test_silent_source_emits_holds(self):
        pipeline = sample_pipeline()
        frames = frames_at_rate(1, 100)
        capture = _CaptureSink()
        metrics = run_loop(
            schedule(frames),
            pipeline,
            capture,
            rate_hz=100,
            max_cycles=11,
            clock=VirtualClock(),
        )
        assert metrics.cycles == 11
        assert metrics.holds == 10
        holds = [c for c in capture.commands if c.hold]
        assert len(holds) == 10
        first_real = capture.commands[0]
        for h in holds:
            assert np.array_equal(h.angles, first_real.angles)
            assert h.source_seq == first_real.source_seq

    def test_hold_before_first_frame_uses_defaults(self):
        pipeline = sample_pipeline()
        frames = [identity_frame(23, seq=0, timestamp_us=50_000)]  # due at 50 ms
        capture = _CaptureSink()
        run_loop(
            schedule(frames, start_us=50_000),
            pipeline,
            capture,
            rate_hz=100,
            clock=VirtualClock(),
        )
        assert capture.commands[0].hold
        assert np.array_equal(capture.commands[0].angles, pipeline.model.default_angles)

    def test_sink_sees_strictly_increasing_order(self):
        pipeline = sample_pipeline()
        frames = frames_at_rate(100, 100)
        capture = _CaptureSink()
        run_loop(schedule(frames), pipeline, capture, rate_hz=500, clock=VirtualClock())
        emissions = [c.emission_timestamp_us for c in capture.commands]
        seqs = [c.seq for c in capture.commands]
        assert all(b > a for a, b in zip(emissions, emissions[1:]))
        assert seqs == list(range(len(seqs)))

    def test_source_end_terminates(self):
        pipeline = sample_pipeline()
        frames = frames_at_rate(10, 100)
        metrics = run_loop(
            schedule(frames), pipeline, NullSink(), rate_hz=100, clock=VirtualClock()
        )
        assert metrics.cycles == 10

    def test_duration_budget(self):
        pipeline = sample_pipeline()
        frames = frames_at_rate(1000, 100)
        metrics = run_loop(
            schedule(frames),
            pipeline,
            NullSink(),
            rate_hz=100,
            duration_s=0.5,
            clock=VirtualClock(),
        )
        assert metrics.cycles == 50

    def test_virtual_clock_runs_are_byte_identical(self, tmp_path):
        outs = []
        for run in range(2):
            pipeline = sample_pipeline()
            frames = frames_at_rate(300, 100, noise=0.01, seed=11)
            path = tmp_path / f"run{run}.trc"
            sink = trace_sink(path)
            run_loop(schedule(frames), pipeline, sink, rate_hz=500, clock=VirtualClock())
            sink.close()
            outs.append(path.read_bytes())
        assert outs[0] == outs[1]
        assert len(outs[0]) > 8

    def test_backpressure_aborts_with_metrics(self):
        pipeline = sample_pipeline()
        frames = frames_at_rate(200, 100)

        class SlowSink:
            def emit(self, cmd):
                time.sleep(0.002)

            def close(self):
                pass

        with pytest.raises(SinkBackpressure) as exc:
            run_loop(
                schedule(frames),
                pipeline,
                SlowSink(),
                rate_hz=100,
                clock=WallClock(),
                sink_budget_us=500,
            )
        assert exc.value.metrics.cycles == 8

    def test_validator_sink_matches_offline_validation(self):
        from teleokin.validate import validate_trace

        pipeline = sample_pipeline()
        frames = frames_at_rate(200, 100, pattern="walk-cycle", noise=0.01, seed=3)
        capture = _CaptureSink()
        vsink = validator_sink(pipeline.model, period_us=2000)
        run_loop(
            schedule(frames),
            pipeline,
            MultiSink([capture, vsink]),
            rate_hz=500,
            clock=VirtualClock(),
        )
        online = vsink.report()
        offline = validate_trace(pipeline.model, capture.commands, period_us=2000)
        assert online.passed == offline.passed
        assert online.counts == offline.counts
        assert online.cycles == offline.cycles

    def test_measured_dt_mode_runs(self):
        pipeline = sample_pipeline()
        frames = frames_at_rate(20, 100)
        metrics = run_loop(
            schedule(frames),
            pipeline,
            NullSink(),
            rate_hz=100,
            clock=VirtualClock(),
            dt_mode="measured",
        )
        assert metrics.commands == 20

    def test_metrics_dump_format(self):
        pipeline = sample_pipeline()
        frames = frames_at_rate(50, 100)
        metrics = run_loop(
            schedule(frames), pipeline, NullSink(), rate_hz=100, clock=VirtualClock()
        )
        dump = metrics.format()
        for key in (
            "cycles=",
            "commands=",
            "holds=",
            "frames_written=",
            "frames_consumed=",
            "frames_overwritten=",
            "compute_us_p50=",
            "compute_us_p99=",
            "frame_age_us_max=",
            "jitter_us_p50=",
        ):
            assert key in dump
        parsed = dict(line.split("=", 1) for line in dump.strip().splitlines())
        assert parsed["cycles"] == "50"


class _CaptureSink:
    def __init__(self):
        self.commands = []

    def emit(self, cmd):
        self.commands.append(cmd)

    def close(self):
        pass


class TestDatagramSink:
    def test_loopback_echo_is_byte_identical(self):
        recv = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        recv.bind(("127.0.0.1", 0))
        recv.settimeout(2.0)
        sink = datagram_sink(recv.getsockname())
        sent = []
        for i in range(5):
            cmd = make_command(seq=i, n=23)
            sink.emit(cmd)
            sent.append(encode_command_datagram(cmd))
        got = [recv.recv(65535) for _ in range(5)]
        sink.close()
        recv.close()
        assert got == sent
        for blob, cmd_bytes in zip(got, sent):
            decoded = decode_command_datagram(blob)
            assert encode_command_datagram(decoded)[:25] == cmd_bytes[:25]

    def test_unreachable_address_counts_errors_and_continues(self):
        probe = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        probe.bind(("127.0.0.1", 0))
        addr = probe.getsockname()
        probe.close()  # nothing listens here now
        sink = datagram_sink(addr)
        for i in range(20):
            sink.emit(make_command(seq=i, n=4))
            time.sleep(0.001)
        sink.close()
        assert sink.sent + sink.send_errors == 20
        assert sink.send_errors > 0

    def test_address_string_form(self):
        recv = socket.socket(socket.AF_INET, socket.SOCK_DGRAM)
        recv.bind(("127.0.0.1", 0))
        recv.settimeout(2.0)
        port = recv.getsockname()[1]
        sink = datagram_sink(f"127.0.0.1:{port}")
        sink.emit(make_command(n=2))
        assert len(recv.recv(1000)) == 4 + 1 + 25 + 16 + 1 + 4
        sink.close()
        recv.close()
