"""Wire codec, stream accounting, recordings, replay, and synthesis."""

import math
import struct
import zlib

import numpy as np
import pytest

from teleokin.clock import VirtualClock
from teleokin.errors import (
    BadMagic,
    CrcMismatch,
    DegenerateQuaternion,
    EmptyRecording,
    TruncatedFrame,
    UnsupportedVersion,
)
from teleokin.geometry import swing_twist
from teleokin.model import canonical_skeleton
from teleokin.stream import (
    FRAME_MAGIC,
    MocapFrame,
    StreamStats,
    decode_frame,
    encode_frame,
    frames_equal,
    identity_frame,
    read_recording,
    replay,
    schedule,
    synth_motion,
    write_recording,
)


def crc32_oracle(data: bytes) -> int:
    """Bitwise CRC-32 (IEEE 802.3, reflected), independent of zlib."""
    crc = 0xFFFFFFFF
    for byte in data:
        crc ^= byte
        for _ in range(8):
            crc = (crc >> 1) ^ (0xEDB88320 * (crc & 1))
    return crc ^ 0xFFFFFFFF


def random_frame(rng, count=23):
    quats = rng.normal(size=(count, 4))
    quats /= np.linalg.norm(quats, axis=1)[:, None]
    flip = quats[:, 0] < 0
    quats[flip] *= -1
    return MocapFrame(
        seq=int(rng.integers(0, 2**32)),
        timestamp_us=int(rng.integers(0, 2**48)),
        orientations=quats,
    )


class TestCodec:
    def test_identity_frame_header_bytes(self):
        encoded = encode_frame(identity_frame(23))
        assert encoded[:19] == bytes.fromhex("4d4f4331 0100 00000000 0000000000000000 17".replace(" ", ""))

    def test_23_segments_is_391_bytes(self):
        assert len(encode_frame(identity_frame(23))) == 391

    def test_crc_matches_bitwise_oracle(self):
        encoded = encode_frame(identity_frame(23, seq=7, timestamp_us=123456))
        assert int.from_bytes(encoded[-4:], "little") == crc32_oracle(encoded[:-4])

    def test_round_trip_random_frames(self):
        rng = np.random.default_rng(0)
        for _ in range(10_000):
            frame = random_frame(rng, count=int(rng.integers(1, 30)))
            out = decode_frame(encode_frame(frame))
            assert out.seq == frame.seq
            assert out.timestamp_us == frame.timestamp_us
            # float32 quantization, then re-normalization
            assert np.allclose(out.orientations, frame.orientations, atol=2e-7)
            norms = np.linalg.norm(out.orientations, axis=1)
            assert np.abs(norms - 1.0).max() < 1e-9

    def test_injective_on_distinct_frames(self):
        rng = np.random.default_rng(1)
        seen = {encode_frame(random_frame(rng)) for _ in range(2000)}
        assert len(seen) == 2000

    def test_truncated_input(self):
        with pytest.raises(TruncatedFrame):
            decode_frame(b"\x00" * 10)

    def test_trailing_garbage_rejected(self):
        with pytest.raises(TruncatedFrame):
            decode_frame(encode_frame(identity_frame(23)) + b"\x00")

    def test_bad_magic(self):
        data = bytearray(encode_frame(identity_frame(23)))
        data[0] ^= 0xFF
        with pytest.raises(BadMagic):
            decode_frame(bytes(data))

    def test_unsupported_version(self):
        data = bytearray(encode_frame(identity_frame(23)))
        data[4] = 9
        with pytest.raises(UnsupportedVersion):
            decode_frame(bytes(data))

    def test_crc_mismatch_on_flipped_last_byte(self):
        data = bytearray(encode_frame(identity_frame(23)))
        data[-1] ^= 0x01
        with pytest.raises(CrcMismatch):
            decode_frame(bytes(data))

    def test_degenerate_segment(self):
        # build the bytes directly: a well-formed frame with a zero quaternion
        frame = identity_frame(3)
        frame.orientations[1] = 0.0
        quats = np.ascontiguousarray(frame.orientations, dtype="<f4")
        header = struct.pack("<4sBBIQB", FRAME_MAGIC, 1, 0, 0, 0, 3)
        payload = header + quats.tobytes()
        data = payload + struct.pack("<I", zlib.crc32(payload))
        with pytest.raises(DegenerateQuaternion):
            decode_frame(data)

    def test_decoder_never_crashes_on_noise(self):
        rng = np.random.default_rng(2)
        valid = encode_frame(identity_frame(23))
        for _ in range(20_000):
            n = int(rng.integers(0, 64))
            blob = rng.integers(0, 256, size=n, dtype=np.uint8).tobytes()
            try:
                decode_frame(blob)
            except Exception as exc:
                assert isinstance(
                    exc,
                    (BadMagic, UnsupportedVersion, TruncatedFrame, CrcMismatch, DegenerateQuaternion),
                )
        # structured corruption of a valid frame
        for _ in range(5000):
            data = bytearray(valid)
            pos = int(rng.integers(len(data)))
            data[pos] ^= int(rng.integers(1, 256))
            try:
                decode_frame(bytes(data))
            except Exception as exc:
                assert isinstance(
                    exc,
                    (BadMagic, UnsupportedVersion, TruncatedFrame, CrcMismatch, DegenerateQuaternion),
                )


class TestStreamStats:
    def test_clean_sequence(self):
        stats = StreamStats()
        for seq in range(10):
            stats.observe(seq, seq * 10_000)
        assert stats.received == 10
        assert stats.dropped == 0
        assert stats.duplicates == 0
        assert stats.out_of_order == 0

    def test_gap_counts_as_drops(self):
        stats = StreamStats()
        for seq in (0, 1, 5, 6):
            stats.observe(seq, seq * 10_000)
        assert stats.dropped == 3  # 2, 3, 4

    def test_duplicates_and_reordering(self):
        stats = StreamStats()
        for seq in (0, 2, 2, 1, 3):
            stats.observe(seq, 1000)
        assert stats.duplicates == 1
        assert stats.out_of_order == 1  # the late 1
        assert stats.dropped == 0

    def test_accounting_invariant_under_scripted_interleavings(self):
        rng = np.random.default_rng(3)
        for _ in range(200):
            stats = StreamStats()
            seqs = rng.integers(0, 40, size=rng.integers(1, 80))
            for t, seq in enumerate(seqs):
                stats.observe(int(seq), t * 100)
            assert stats.received + stats.dropped >= stats.span


class TestRecording:
    def test_round_trip(self, tmp_path):
        frames = synth_motion("arm-wave", rate=50, duration=0.5, noise_std=0.01, seed=9)
        path = tmp_path / "wave.rec"
        assert write_recording(path, frames) == 25
        loaded = read_recording(path)
        assert len(loaded) == 25
        for a, b in zip(loaded, frames):
            assert a.seq == b.seq and a.timestamp_us == b.timestamp_us
            assert np.allclose(a.orientations, b.orientations, atol=2e-7)

    def test_truncated_tail_dropped_with_warning(self, tmp_path, caplog):
        frames = synth_motion("static", rate=50, duration=0.2)
        path = tmp_path / "cut.rec"
        write_recording(path, frames)
        data = path.read_bytes()
        path.write_bytes(data[:-5])
        with caplog.at_level("WARNING"):
            loaded = read_recording(path)
        assert len(loaded) == len(frames) - 1
        assert "truncated" in caplog.text

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.rec"
        path.write_bytes(b"NOTAREC1")
        with pytest.raises(BadMagic):
            read_recording(path)


class TestReplay:
    def test_empty_recording(self):
        with pytest.raises(EmptyRecording):
            list(replay([], speed=1.0))

    def test_real_time_gaps(self):
        frames = [identity_frame(3, seq=i, timestamp_us=i * 10_000) for i in range(2)]
        clock = _RecordingClock()
        emitted = [(clock.now_us(), f.seq) for f in replay(frames, speed=1.0, clock=clock)]
        gap = emitted[1][0] - emitted[0][0]
        assert abs(gap - 10_000) <= 1000  # +-1 ms

    def test_double_speed(self):
        frames = [identity_frame(3, seq=i, timestamp_us=i * 10_000) for i in range(2)]
        clock = _RecordingClock()
        emitted = [(clock.now_us(), f.seq) for f in replay(frames, speed=2.0, clock=clock)]
        gap = emitted[1][0] - emitted[0][0]
        assert abs(gap - 5_000) <= 1000

    def test_infinite_speed_is_immediate_and_ordered(self):
        frames = [identity_frame(3, seq=i, timestamp_us=i * 10_000) for i in range(5)]
        out = list(replay(frames, speed=math.inf))
        assert [f.seq for f in out] == [0, 1, 2, 3, 4]

    def test_schedule_offsets(self):
        frames = [identity_frame(3, seq=i, timestamp_us=i * 10_000) for i in range(3)]
        assert [due for due, _ in schedule(frames, speed=1.0)] == [0, 10_000, 20_000]
        assert [due for due, _ in schedule(frames, speed=2.0)] == [0, 5_000, 10_000]
        assert [due for due, _ in schedule(frames, speed=math.inf)] == [0, 0, 0]

    def test_wall_clock_timing(self):
        # The stated +-1 ms applies to real wall-clock emission.
        frames = [identity_frame(3, seq=i, timestamp_us=i * 10_000) for i in range(3)]
        times = []
        from teleokin.clock import WallClock

        clock = WallClock()
        for _ in replay(frames, speed=1.0, clock=clock):
            times.append(clock.now_us())
        gaps = np.diff(times)
        assert np.all(np.abs(gaps - 10_000) <= 1000)


class _RecordingClock(VirtualClock):
    """Virtual clock that also jumps when asked to sleep (replay timing tests)."""


class TestSynth:
    def test_static_is_identity(self):
        frames = synth_motion("static", rate=100, duration=0.5)
        assert len(frames) == 50
        for f in frames:
            assert np.array_equal(f.orientations, identity_frame(23).orientations)

    def test_arm_wave_amplitude_and_rate(self):
        frames = synth_motion("arm-wave", rate=100, duration=1.0)
        assert len(frames) == 100
        skel = canonical_skeleton()
        idx = skel.index("left_upper_arm")
        angles = []
        for i, f in enumerate(frames):
            _, twist = swing_twist(f.orientations[idx], [0.0, 1.0, 0.0])
            angles.append(twist)
            expected = 0.5 * math.sin(2.0 * math.pi * i / 100.0)
            assert math.isclose(twist, expected, abs_tol=1e-12)
        assert math.isclose(max(angles), 0.5, abs_tol=1e-3)

    def test_walk_cycle_period(self):
        frames = synth_motion("walk-cycle", rate=100, duration=2.0)
        assert len(frames) == 200
        skel = canonical_skeleton()
        idx = skel.index("left_thigh")
        angles = np.array(
            [swing_twist(f.orientations[idx], [0.0, 1.0, 0.0])[1] for f in frames]
        )
        assert np.allclose(angles[:100], angles[100:], atol=1e-12)  # period is 1 s
        assert not np.allclose(angles[:50], angles[50:100], atol=1e-3)

    def test_seeded_noise_is_byte_identical(self):
        a = synth_motion("static", rate=100, duration=0.3, noise_std=0.01, seed=5)
        b = synth_motion("static", rate=100, duration=0.3, noise_std=0.01, seed=5)
        assert all(frames_equal(x, y) for x, y in zip(a, b))
        assert b"".join(encode_frame(f) for f in a) == b"".join(encode_frame(f) for f in b)

    def test_different_seeds_differ(self):
        a = synth_motion("static", rate=100, duration=0.1, noise_std=0.01, seed=5)
        b = synth_motion("static", rate=100, duration=0.1, noise_std=0.01, seed=6)
        assert not frames_equal(a[0], b[0])

    def test_invalid_arguments(self):
        with pytest.raises(ValueError):
            synth_motion("static", rate=0, duration=1)
        with pytest.raises(ValueError):
            synth_motion("static", rate=100, duration=-1)
        with pytest.raises(ValueError):
            synth_motion("static", rate=100, duration=1, noise_std=-0.1)
        with pytest.raises(ValueError):
            synth_motion("moonwalk", rate=100, duration=1)
