"""Real-time monitoring over a sliding window of intervals.

Ingestion owns the :class:`~gatedspad.intervals.SlidingWindow`. Every
``refresh`` new intervals, a snapshot of the full window is handed to a
single fitting worker, so fits overlap with further ingestion while reports
still come out in refresh order.
"""
from __future__ import annotations

import logging
import queue
import threading
from concurrent.futures import ThreadPoolExecutor
from typing import Iterable, Iterator

import numpy as np

from .fit import FitError
from .files import EventFileError, HEADER_RE, timestamps_to_gates
from .intervals import SlidingWindow
from .pipeline import RunConfig, characterize_histogram

log = logging.getLogger(__name__)

__all__ = ["Monitor", "run_monitor", "line_source", "file_chunks"]


class Monitor:
    """Incremental characterization of a gate stream.

    Feed gate indices with :meth:`feed`; it returns the futures of the reports
    triggered by that chunk.
    """

    def __init__(self, config: RunConfig, executor=None):
        if config.window < 1000:
            raise ValueError("monitoring needs a window of at least 1000 intervals")
        self.config = config
        self.window = SlidingWindow(config.window, config.m_max)
        self._last_gate = None
        self._since_refresh = 0
        self.n_refresh = 0
        self._executor = executor

    def _fit(self, index, seen, hist):
        try:
            report, _ = characterize_histogram(hist, self.config, wall_clock=False)
            report.update(index=index, intervals_seen=seen, stale=False)
        except FitError as exc:
            report = {"index": index, "intervals_seen": seen, "stale": False,
                      "error": str(exc)}
        return report

    def _submit(self, hist):
        args = (self.n_refresh, self.window.pushed, hist)
        self.n_refresh += 1
        if self._executor is None:
            return _Done(self._fit(*args))
        return self._executor.submit(self._fit, *args)

    def feed(self, gates) -> list:
        gates = np.asarray(gates, dtype=np.int64)
        if gates.size == 0:
            return []
        if self._last_gate is not None:
            gates = np.concatenate(([self._last_gate], gates))
        gaps = np.diff(gates)
        if gaps.size and gaps.min() < 1:
            raise EventFileError("gate indices must be strictly increasing")
        self._last_gate = int(gates[-1])
        every = self.config.refresh_every
        out = []
        pos = 0
        while pos < gaps.size:
            take = min(gaps.size - pos, every - self._since_refresh)
            self.window.extend(gaps[pos:pos + take])
            pos += take
            self._since_refresh += take
            if self._since_refresh == every:
                self._since_refresh = 0
                if len(self.window) == self.window.capacity:
                    out.append(self._submit(self.window.snapshot()))
        return out


class _Done:
    def __init__(self, value):
        self._value = value

    def result(self):
        return self._value


def run_monitor(chunks: Iterable, config: RunConfig, threaded: bool = True) -> Iterator[dict]:
    """Yield reports for a stream of gate-index chunks.

    A ``None`` chunk means the source stalled; a heartbeat flagged ``stale``
    is emitted in its place.
    """
    executor = ThreadPoolExecutor(max_workers=1) if threaded else None
    mon = Monitor(config, executor)
    pending = []
    try:
        for chunk in chunks:
            if chunk is None:
                while pending:
                    yield pending.pop(0).result()
                yield {"heartbeat": True, "stale": True,
                       "intervals_seen": mon.window.pushed}
                continue
            pending.extend(mon.feed(chunk))
            # emit whatever has finished, keeping order
            while pending and (not hasattr(pending[0], "done") or pending[0].done()):
                yield pending.pop(0).result()
        while pending:
            yield pending.pop(0).result()
    finally:
        if executor is not None:
            executor.shutdown(wait=True)


def _to_gates(values, unit, config, state):
    if unit == "gate":
        return np.asarray(values, dtype=np.int64)
    conv = timestamps_to_gates(values, config.gate_frequency_hz, config.phase_tolerance,
                               max_reject_fraction=1.0)
    state["records"] += conv.n_records
    state["rejects"] += conv.rejects
    gates = conv.stream.gates
    if state["last"] is not None:
        gates = gates[gates > state["last"]]
    if gates.size:
        state["last"] = int(gates[-1])
    if state["records"] >= 1000 and state["rejects"] > 0.01 * state["records"]:
        raise EventFileError(
            f"{state['rejects']} of {state['records']} timestamps fall outside the gate "
            "windows; check the gate frequency and phase")
    return gates


def file_chunks(lines: Iterable, config: RunConfig, chunk: int = 10_000) -> Iterator:
    """Parse event-file lines lazily into chunks of gate indices.

    ``None`` items (stall markers from :func:`line_source`) flush the pending
    chunk and are passed through.
    """
    unit = None
    buf = []
    state = {"records": 0, "rejects": 0, "last": None}
    lineno = 0
    for raw in lines:
        if raw is None:
            if buf:
                yield _to_gates(buf, unit, config, state)
                buf = []
            yield None
            continue
        lineno += 1
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            m = HEADER_RE.match(line)
            if m and unit is None:
                unit = m.group(1)
            continue
        if unit is None:
            raise EventFileError("missing '# gatedspad-events v1 unit=gate|s' header", lineno)
        try:
            buf.append(int(line) if unit == "gate" else float(line))
        except ValueError:
            raise EventFileError(f"cannot parse {line!r}", lineno) from None
        if len(buf) >= chunk:
            yield _to_gates(buf, unit, config, state)
            buf = []
    if buf:
        yield _to_gates(buf, unit, config, state)


def line_source(stream, stall_s: float) -> Iterator:
    """Lines from a blocking text stream, with ``None`` after each ``stall_s`` of silence."""
    q: queue.Queue = queue.Queue()
    done = object()

    def reader():
        for line in stream:
            q.put(line)
        q.put(done)

    threading.Thread(target=reader, daemon=True).start()
    while True:
        try:
            item = q.get(timeout=stall_s)
        except queue.Empty:
            yield None
            continue
        if item is done:
            return
        yield item
