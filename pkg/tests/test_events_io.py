import io
import json
import tracemalloc

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from eprsim import events_io, model
from eprsim.errors import (EventsFormatError, EventsRangeError, EventsRowError,
                           ParameterDomainError)
from eprsim.simulate import Arm, DetectionEvent, Frame


def canonical(frame):
    return Frame(frame.frame_id, tuple(sorted(
        frame.events, key=lambda e: (e.arm.value, e.coord[0], e.coord[1]))))


def assert_roundtrip(frames, metadata):
    buf = io.StringIO()
    events_io.write_events(frames, metadata, buf)
    meta2, reader = events_io.read_events(io.BytesIO(buf.getvalue().encode("ascii")))
    got = list(reader)
    assert meta2 == metadata
    assert got == [canonical(f) for f in frames]
    # canonical form is a fixed point: writing again is byte-identical
    buf2 = io.StringIO()
    events_io.write_events(got, meta2, buf2)
    assert buf2.getvalue() == buf.getvalue()


finite_floats = st.floats(allow_nan=False, allow_infinity=False, width=64)
event_strategy = st.builds(
    DetectionEvent,
    arm=st.sampled_from([Arm.STOKES, Arm.ANTI_STOKES]),
    coord=st.tuples(finite_floats, finite_floats))


@st.composite
def runs(draw):
    frame_count = draw(st.integers(min_value=0, max_value=25))
    start = draw(st.integers(min_value=0, max_value=1000))
    frames = []
    for i in range(frame_count):
        events = draw(st.lists(event_strategy, max_size=4))
        frames.append(Frame(start + i, tuple(events)))
    basis = draw(st.sampled_from(list(model.Basis)))
    metadata = events_io.RunMetadata(
        basis=basis, frame_count=frame_count, frame_id_start=start,
        tau=draw(st.one_of(st.none(), st.floats(0, 100, allow_nan=False))),
        seed=draw(st.one_of(st.none(), st.integers(0, 2**63))),
        detector=draw(st.one_of(st.none(), st.just({"pixel_pitch": 0.02}))))
    return frames, metadata


@given(runs())
@settings(max_examples=200, deadline=None)
def test_roundtrip_property(run):
    frames, metadata = run
    assert_roundtrip(frames, metadata)


def _meta(n=5, basis=model.Basis.NEAR_FIELD, start=0):
    return events_io.RunMetadata(basis=basis, frame_count=n, frame_id_start=start)


class TestWriter:
    def test_empty_run_writes_preamble_only(self):
        buf = io.StringIO()
        events_io.write_events([Frame(i, ()) for i in range(5)], _meta(5), buf)
        lines = buf.getvalue().splitlines()
        assert len(lines) == 2
        assert lines[0].startswith("#meta ")
        assert json.loads(lines[0][6:])["frame_count"] == 5
        assert lines[1] == "frame_id,arm,u,v"

    def test_single_event_row_rendering(self):
        frames = [Frame(i, ()) for i in range(3)]
        frames.append(Frame(3, (DetectionEvent(Arm.STOKES, (0.1, -0.2)),)))
        frames.append(Frame(4, ()))
        buf = io.StringIO()
        events_io.write_events(frames, _meta(5), buf)
        assert buf.getvalue().splitlines()[2] == "3,S,0.1,-0.2"

    def test_rows_sorted_within_frame(self):
        events = (DetectionEvent(Arm.STOKES, (0.5, 0.0)),
                  DetectionEvent(Arm.STOKES, (-0.5, 0.0)),
                  DetectionEvent(Arm.ANTI_STOKES, (2.0, 1.0)))
        buf = io.StringIO()
        events_io.write_events([Frame(0, events)], _meta(1), buf)
        rows = buf.getvalue().splitlines()[2:]
        assert rows == ["0,AS,2.0,1.0", "0,S,-0.5,0.0", "0,S,0.5,0.0"]

    def test_writer_rejects_bad_streams(self):
        meta = _meta(2)
        with pytest.raises(ParameterDomainError):
            events_io.write_events([Frame(1, ()), Frame(0, ())], meta, io.StringIO())
        with pytest.raises(ParameterDomainError):
            events_io.write_events([Frame(0, ())], meta, io.StringIO())
        with pytest.raises(ParameterDomainError):
            events_io.write_events([Frame(0, ()), Frame(5, ())], meta, io.StringIO())
        bad = Frame(0, (DetectionEvent(Arm.STOKES, (float("inf"), 0.0)),))
        with pytest.raises(ParameterDomainError):
            events_io.write_events([bad, Frame(1, ())], meta, io.StringIO())

    def test_sink_failure_carries_frame_context(self):
        class FlakySink:
            def __init__(self, allowed):
                self.allowed = allowed

            def write(self, text):
                if self.allowed == 0:
                    raise OSError("disk full")
                self.allowed -= 1

        frames = [Frame(i, (DetectionEvent(Arm.STOKES, (0.1 * i, 0.0)),))
                  for i in range(4)]
        with pytest.raises(OSError) as err:
            events_io.write_events(frames, _meta(4), FlakySink(allowed=4))
        assert "frame 2" in str(err.value)

    def test_metadata_units_consistency(self):
        meta = events_io.RunMetadata(basis=model.Basis.FAR_FIELD, frame_count=1)
        assert meta.units == {"coord": "hbar/mm", "time": "us"}
        with pytest.raises(ParameterDomainError):
            events_io.RunMetadata(basis=model.Basis.FAR_FIELD, frame_count=1,
                                  units={"coord": "mm", "time": "us"})


def _file_bytes(rows, n=5, start=0):
    meta = _meta(n, start=start)
    head = events_io._meta_line(meta) + "frame_id,arm,u,v\n"
    return (head + rows).encode("ascii")


class TestReader:
    def test_missing_meta_line(self):
        with pytest.raises(EventsFormatError) as err:
            events_io.read_events(io.BytesIO(b"frame_id,arm,u,v\n"))
        assert err.value.offset == 0

    def test_bad_header(self):
        meta = events_io._meta_line(_meta(1))
        with pytest.raises(EventsFormatError) as err:
            events_io.read_events(io.BytesIO((meta + "frame,arm\n").encode()))
        assert err.value.offset == len(meta.encode())

    def test_unknown_arm_token(self):
        meta, reader = events_io.read_events(io.BytesIO(_file_bytes("3,Q,0.1,0.2\n")))
        with pytest.raises(EventsRowError) as err:
            list(reader)
        assert "unknown arm token" in str(err.value)
        assert err.value.line == 3

    def test_non_numeric_coordinate(self):
        _, reader = events_io.read_events(io.BytesIO(_file_bytes("3,S,abc,0.2\n")))
        with pytest.raises(EventsRowError) as err:
            list(reader)
        assert "non-numeric coordinate" in str(err.value)

    def test_truncated_mid_row(self):
        full = _file_bytes("2,S,0.125,0.5\n3,AS,0.25,0.75\n")
        cut = full[:full.rindex(b"3,AS") + 4]   # row ends after the arm token
        _, reader = events_io.read_events(io.BytesIO(cut))
        with pytest.raises(EventsRowError) as err:
            list(reader)
        assert err.value.line == 4

    def test_frame_id_out_of_range(self):
        _, reader = events_io.read_events(io.BytesIO(_file_bytes("7,S,0.1,0.2\n", n=5)))
        with pytest.raises(EventsRangeError):
            list(reader)

    def test_rows_out_of_order(self):
        rows = "3,S,0.1,0.2\n1,S,0.1,0.2\n"
        _, reader = events_io.read_events(io.BytesIO(_file_bytes(rows)))
        with pytest.raises(EventsFormatError):
            list(reader)

    def test_schema_version_gate(self):
        meta = events_io._meta_line(_meta(1)).replace('"schema_version":1',
                                                      '"schema_version":2')
        data = (meta + "frame_id,arm,u,v\n").encode("ascii")
        with pytest.raises(EventsFormatError):
            events_io.read_events(io.BytesIO(data))

    def test_empty_frames_reconstructed(self):
        meta, reader = events_io.read_events(io.BytesIO(_file_bytes("2,S,0.1,0.2\n", n=5)))
        frames = list(reader)
        assert [f.frame_id for f in frames] == [0, 1, 2, 3, 4]
        assert [len(f.events) for f in frames] == [0, 0, 1, 0, 0]

    def test_streaming_bounded_memory(self, tmp_path):
        path = tmp_path / "big.events.csv"
        n = 10**6
        meta = _meta(n)
        with open(path, "w", newline="") as fh:
            fh.write(events_io._meta_line(meta))
            fh.write("frame_id,arm,u,v\n")
            for i in range(n):
                fh.write(f"{i},S,0.5,{-1.0 + (i % 7) * 0.25}\n")
        tracemalloc.start()
        _, reader = events_io.read_events(path)
        total = sum(len(f.events) for f in reader)
        _, peak = tracemalloc.get_traced_memory()
        tracemalloc.stop()
        assert total == n
        assert peak < 8 * 2**20   # far below the ~100+ MB a full load needs
