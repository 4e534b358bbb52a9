"""Bit-exact serialization and parsing of event streams.

File layout (``.events.csv``, schema_version 1)::

    #meta {"basis": "near_field", "frame_count": 5, ...}
    frame_id,arm,u,v
    3,S,0.1,-0.2

One line per event, arm token S or AS, coordinates rendered as shortest
round-trip decimals (python ``repr``), rows sorted by (frame_id, arm
token, u, v).  Frames with no events produce no rows; the frame range
lives in the metadata, so empty frames survive a round trip.  The sorted
canonical form makes byte equality a valid determinism oracle.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator

from .errors import EventsFormatError, EventsRangeError, EventsRowError, ParameterDomainError
from .model import Basis
from .simulate import Arm, DetectionEvent, EventBlock, Frame

SCHEMA_VERSION = 1
_HEADER = "frame_id,arm,u,v"


@dataclass(frozen=True)
class RunMetadata:
    """Run-level metadata carried in the ``#meta`` preamble line."""

    basis: Basis
    frame_count: int
    frame_id_start: int = 0
    tau: float | None = None
    seed: int | None = None
    detector: dict | None = None
    truth: dict | None = None
    schema_version: int = SCHEMA_VERSION
    units: dict = field(default=None)

    def __post_init__(self):
        if self.schema_version != SCHEMA_VERSION:
            raise ParameterDomainError(
                f"unsupported schema_version {self.schema_version!r}")
        if not (isinstance(self.frame_count, int) and self.frame_count >= 0):
            raise ParameterDomainError(f"frame_count must be >= 0, got {self.frame_count!r}")
        expected_units = {"coord": self.basis.coord_unit, "time": "us"}
        if self.units is None:
            object.__setattr__(self, "units", expected_units)
        elif self.units != expected_units:
            raise ParameterDomainError(
                f"units {self.units!r} inconsistent with basis {self.basis.value}")

    def to_json_dict(self):
        d = {
            "schema_version": self.schema_version,
            "basis": self.basis.value,
            "frame_count": self.frame_count,
            "frame_id_start": self.frame_id_start,
            "units": self.units,
        }
        if self.tau is not None:
            d["tau_us"] = self.tau
        if self.seed is not None:
            d["seed"] = self.seed
        if self.detector is not None:
            d["detector"] = self.detector
        if self.truth is not None:
            d["truth"] = self.truth
        return d

    @classmethod
    def from_json_dict(cls, d):
        return cls(
            basis=Basis(d["basis"]),
            frame_count=int(d["frame_count"]),
            frame_id_start=int(d.get("frame_id_start", 0)),
            tau=d.get("tau_us"),
            seed=d.get("seed"),
            detector=d.get("detector"),
            truth=d.get("truth"),
            schema_version=int(d.get("schema_version", -1)),
            units=d.get("units"),
        )


def _format_row(fid, arm_token, u, v):
    if not (math.isfinite(u) and math.isfinite(v)):
        raise ParameterDomainError(f"non-finite coordinate in frame {fid}: ({u!r}, {v!r})")
    return f"{fid},{arm_token},{u!r},{v!r}\n"


def _meta_line(metadata):
    return "#meta " + json.dumps(metadata.to_json_dict(), sort_keys=True,
                                 separators=(",", ":"), allow_nan=False) + "\n"


def write_events(frames: Iterable[Frame], metadata: RunMetadata, sink):
    """Write a frame stream in canonical form.

    ``sink`` is a path or a text file object.  Frames must arrive in
    ascending frame_id order and exactly cover the metadata-declared range;
    event order within a frame is canonicalized here.
    """
    if hasattr(sink, "write"):
        _write_events_to(frames, metadata, sink)
    else:
        with open(sink, "w", encoding="ascii", newline="") as fh:
            _write_events_to(frames, metadata, fh)


def _write_events_to(frames, metadata, fh):
    fh.write(_meta_line(metadata))
    fh.write(_HEADER + "\n")
    lo = metadata.frame_id_start
    hi = lo + metadata.frame_count
    prev = None
    n_seen = 0
    for frame in frames:
        fid = frame.frame_id
        if not lo <= fid < hi:
            raise ParameterDomainError(
                f"frame_id {fid} outside declared range [{lo}, {hi})")
        if prev is not None and fid <= prev:
            raise ParameterDomainError(
                f"frames must be in ascending frame_id order ({fid} after {prev})")
        prev = fid
        n_seen += 1
        rows = sorted((e.arm.value, e.coord[0], e.coord[1]) for e in frame.events)
        for arm_token, u, v in rows:
            try:
                fh.write(_format_row(fid, arm_token, u, v))
            except OSError as exc:
                raise OSError(f"{exc} (while writing frame {fid})") from exc
    if n_seen != metadata.frame_count:
        raise ParameterDomainError(
            f"metadata declares {metadata.frame_count} frames, got {n_seen}")


def write_block(block: EventBlock, metadata: RunMetadata, sink):
    """Fast path: write an EventBlock (already in canonical row order)."""
    if block.n_frames != metadata.frame_count or block.frame_id_start != metadata.frame_id_start:
        raise ParameterDomainError("metadata frame range does not match the block")
    if hasattr(sink, "write"):
        _write_block_to(block, metadata, sink)
    else:
        with open(sink, "w", encoding="ascii", newline="") as fh:
            _write_block_to(block, metadata, fh)


def _write_block_to(block, metadata, fh):
    fh.write(_meta_line(metadata))
    fh.write(_HEADER + "\n")
    ids = block.frame_ids
    arms = block.arm_codes
    u = block.u
    v = block.v
    fid = None
    try:
        for i in range(block.n_events):
            fid = ids[i]
            token = "AS" if arms[i] == 0 else "S"
            fh.write(_format_row(fid, token, float(u[i]), float(v[i])))
    except OSError as exc:
        raise OSError(f"{exc} (while writing frame {fid})") from exc


def read_events(source) -> tuple[RunMetadata, Iterator[Frame]]:
    """Parse an events file.

    Returns the metadata and a streaming frame iterator that reconstructs
    empty frames from the declared frame range; memory use is bounded by
    one frame's events.  Structural problems raise EventsFormatError (with
    a byte offset), bad rows raise EventsRowError (with a line number) and
    out-of-range frame ids raise EventsRangeError.
    """
    if hasattr(source, "read"):
        fh = source
        own = False
        path = getattr(source, "name", None)
    else:
        fh = open(source, "rb")
        own = True
        path = str(source)

    try:
        meta_line = fh.readline()
        if not meta_line.startswith(b"#meta "):
            raise EventsFormatError("missing #meta preamble line", offset=0, path=path)
        try:
            meta_dict = json.loads(meta_line[6:].decode("utf-8"))
            metadata = RunMetadata.from_json_dict(meta_dict)
        except (ValueError, KeyError, TypeError) as exc:
            raise EventsFormatError(f"bad metadata: {exc}", offset=0, path=path) from None
        header_offset = len(meta_line)
        header = fh.readline()
        if header.rstrip(b"\n") != _HEADER.encode("ascii"):
            raise EventsFormatError("missing or wrong column header",
                                    offset=header_offset, path=path)
    except Exception:
        if own:
            fh.close()
        raise

    return metadata, _frame_iterator(fh, metadata, path, own)


def _parse_row(line_no, raw, path):
    parts = raw.split(b",")
    if len(parts) != 4:
        raise EventsRowError(f"expected 4 fields, got {len(parts)}", line=line_no, path=path)
    try:
        fid = int(parts[0])
    except ValueError:
        raise EventsRowError(f"bad frame_id {parts[0]!r}", line=line_no, path=path) from None
    if parts[1] == b"S":
        arm = Arm.STOKES
    elif parts[1] == b"AS":
        arm = Arm.ANTI_STOKES
    else:
        raise EventsRowError(f"unknown arm token {parts[1].decode('ascii', 'replace')!r}",
                             line=line_no, path=path)
    try:
        u = float(parts[2])
        v = float(parts[3])
    except ValueError:
        raise EventsRowError("non-numeric coordinate", line=line_no, path=path) from None
    if not (math.isfinite(u) and math.isfinite(v)):
        raise EventsRowError("non-finite coordinate", line=line_no, path=path)
    return fid, DetectionEvent(arm, (u, v))


def _frame_iterator(fh, metadata, path, own):
    lo = metadata.frame_id_start
    hi = lo + metadata.frame_count
    try:
        current = lo
        events = []
        line_no = 2
        for raw in fh:
            line_no += 1
            raw = raw.rstrip(b"\n")
            if not raw:
                raise EventsRowError("empty row", line=line_no, path=path)
            fid, event = _parse_row(line_no, raw, path)
            if not lo <= fid < hi:
                raise EventsRangeError(
                    f"frame_id {fid} outside declared range [{lo}, {hi})",
                    line=line_no, path=path)
            if fid < current:
                raise EventsFormatError(
                    f"rows out of frame order ({fid} after {current})",
                    line=line_no, path=path)
            if fid > current:
                yield Frame(current, tuple(events))
                events = []
                for gap in range(current + 1, fid):
                    yield Frame(gap, ())
                current = fid
            events.append(event)
        if metadata.frame_count > 0:
            yield Frame(current, tuple(events))
            for gap in range(current + 1, hi):
                yield Frame(gap, ())
    finally:
        if own:
            fh.close()
