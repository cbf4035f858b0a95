"""File formats: event lists, delay scans, truth sidecars, reports and plot tables.

Event files are newline-delimited with a header naming the unit::

    # gatedspad-events v1 unit=gate
    17
    40

or ``unit=s`` for decimal timestamps in seconds since the start of the run.
Blank lines and further ``#`` comments are ignored.
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .simulate import EventStream

__all__ = [
    "EventFileError",
    "GateAlignmentError",
    "EventRecords",
    "GateConversion",
    "parse_events",
    "read_events",
    "write_events",
    "timestamps_to_gates",
    "records_to_stream",
    "read_delay_scan",
    "write_json",
    "dumps_json",
    "write_table",
    "file_digest",
]

HEADER_RE = re.compile(r"#\s*gatedspad-events\s+v1\s+unit=(gate|s)\s*$")
SCHEMA_VERSION = 1


class EventFileError(ValueError):
    """Malformed input file; ``line`` is 1-based when known."""

    def __init__(self, message, line=None):
        super().__init__(f"line {line}: {message}" if line else message)
        self.line = line


class GateAlignmentError(EventFileError):
    """Too many timestamps fell outside the gate windows."""


@dataclass
class EventRecords:
    unit: str  # "gate" or "s"
    values: np.ndarray


def _parse_lines(lines, source="<events>"):
    unit = None
    values = []
    prev = None
    for lineno, raw in enumerate(lines, start=1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            if unit is None:
                m = HEADER_RE.match(line)
                if m:
                    unit = m.group(1)
            continue
        if unit is None:
            raise EventFileError(
                f"{source}: missing '# gatedspad-events v1 unit=gate|s' header", lineno)
        try:
            v = int(line) if unit == "gate" else float(line)
        except ValueError:
            raise EventFileError(f"{source}: cannot parse {line!r}", lineno) from None
        if unit == "gate":
            if v < 1:
                raise EventFileError(f"{source}: gate index must be >= 1", lineno)
            if prev is not None and v <= prev:
                raise EventFileError(
                    f"{source}: gate indices must be strictly increasing ({v} after {prev})",
                    lineno)
        else:
            if not math.isfinite(v) or v < 0:
                raise EventFileError(f"{source}: bad timestamp {line!r}", lineno)
            if prev is not None and v < prev:
                raise EventFileError(
                    f"{source}: timestamps must be non-decreasing ({v} after {prev})", lineno)
        prev = v
        values.append(v)
    if unit is None:
        raise EventFileError(f"{source}: missing '# gatedspad-events v1 unit=gate|s' header")
    dtype = np.int64 if unit == "gate" else float
    return EventRecords(unit, np.asarray(values, dtype=dtype))


def parse_events(text: str) -> EventRecords:
    return _parse_lines(io.StringIO(text))


def read_events(path) -> EventRecords:
    with open(path) as fh:
        return _parse_lines(fh, str(path))


def write_events(path, stream: EventStream | None = None, *, timestamps=None) -> None:
    """Write gate indices (from ``stream``) or timestamps in seconds."""
    with open(path, "w") as fh:
        if timestamps is not None:
            fh.write("# gatedspad-events v1 unit=s\n")
            fh.writelines(f"{t!r}\n" for t in map(float, timestamps))
        else:
            fh.write("# gatedspad-events v1 unit=gate\n")
            fh.writelines(f"{g}\n" for g in stream.gates.tolist())


@dataclass
class GateConversion:
    stream: EventStream
    n_records: int
    rejects: int
    duplicates: int

    @property
    def reject_fraction(self) -> float:
        return self.rejects / self.n_records if self.n_records else 0.0


def timestamps_to_gates(timestamps, gate_frequency_hz: float,
                        phase_tolerance: float = 0.25, max_reject_fraction: float = 0.01,
                        ) -> GateConversion:
    """Map detection times onto the gate clock.

    A timestamp ``t`` belongs to gate ``round(t * f)`` when it lies within
    ``phase_tolerance`` gate periods of it; other timestamps, and any that
    land on gate 0 (before the first gate), are rejected. Repeated hits on
    one gate collapse to one detection.

    Raises
    ------
    GateAlignmentError
        If more than ``max_reject_fraction`` of the records were rejected,
        which points at a wrong gate frequency or phase.
    """
    if not 0 < phase_tolerance <= 0.5:
        raise ValueError("phase_tolerance must lie in (0, 0.5]")
    if not gate_frequency_hz > 0:
        raise ValueError("gate_frequency_hz must be > 0")
    t = np.asarray(timestamps, dtype=float)
    x = t * gate_frequency_hz
    g = np.rint(x)
    ok = (np.abs(x - g) <= phase_tolerance + 1e-9) & (g >= 1)
    rejects = int((~ok).sum())
    gates = g[ok].astype(np.int64)
    if gates.size and np.any(np.diff(gates) < 0):
        raise EventFileError("timestamps are not sorted")
    uniq = np.unique(gates)
    duplicates = int(gates.size - uniq.size)
    n = t.size
    if n and rejects / n > max_reject_fraction:
        raise GateAlignmentError(
            f"{rejects} of {n} timestamps ({100 * rejects / n:.2f}%) fall outside the "
            f"gate windows at f = {gate_frequency_hz:g} Hz with tolerance "
            f"{phase_tolerance:g}; check the gate frequency and phase")
    n_gates = int(uniq[-1]) if uniq.size else 0
    return GateConversion(EventStream(uniq, n_gates), n, rejects, duplicates)


def records_to_stream(records: EventRecords, gate_frequency_hz: float | None = None,
                      phase_tolerance: float = 0.25) -> GateConversion:
    if records.unit == "gate":
        g = records.values
        n = int(g[-1]) if g.size else 0
        return GateConversion(EventStream(g, n), g.size, 0, 0)
    if gate_frequency_hz is None:
        raise ValueError("timestamp files need the gate frequency")
    return timestamps_to_gates(records.values, gate_frequency_hz, phase_tolerance)


def read_delay_scan(path):
    """Read ``delay_s,counts`` rows (header optional) from a CSV file."""
    delays, counts = [], []
    with open(path, newline="") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                d, c = float(row[0]), float(row[1])
            except (ValueError, IndexError):
                if lineno == 1:
                    continue  # header
                raise EventFileError(f"{path}: expected 'delay_s,counts', got {row!r}",
                                     lineno) from None
            delays.append(d)
            counts.append(c)
    if len(delays) < 3:
        raise EventFileError(f"{path}: a delay scan needs at least 3 rows")
    return np.asarray(delays), np.asarray(counts)


def _clean(obj):
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_clean(v) for v in obj.tolist()]
    if isinstance(obj, np.generic):
        return _clean(obj.item())
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def dumps_json(obj) -> str:
    # repr-based float output round-trips exactly, so equal inputs give equal bytes
    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dumps_json(obj))


def write_table(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v
                        for v in row])


def file_digest(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()
