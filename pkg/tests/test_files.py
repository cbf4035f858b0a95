import json
import math

import numpy as np
import pytest

from gatedspad.files import (
    EventFileError,
    GateAlignmentError,
    dumps_json,
    parse_events,
    read_delay_scan,
    read_events,
    records_to_stream,
    timestamps_to_gates,
    write_events,
    write_table,
)
from gatedspad.model import DetectorParams
from gatedspad.simulate import SimConfig, simulate_stream


def test_timestamps_examples():
    conv = timestamps_to_gates([1.0e-6, 3.0e-6], 1e6)
    assert conv.stream.gates.tolist() == [1, 3]
    conv = timestamps_to_gates([1.0e-6, 1.4e-6], 1e6, 0.25, max_reject_fraction=1.0)
    assert conv.stream.gates.tolist() == [1] and conv.rejects == 1


def test_too_many_rejects_abort():
    ts = np.arange(1, 201) * 1e-6
    ts[:3] += 0.4e-6
    with pytest.raises(GateAlignmentError, match="gate frequency"):
        timestamps_to_gates(ts, 1e6)


def test_duplicates_collapse_and_gate_zero_rejected():
    conv = timestamps_to_gates([0.1e-6, 2.0e-6, 2.1e-6, 5e-6], 1e6, max_reject_fraction=1.0)
    assert conv.stream.gates.tolist() == [2, 5]
    assert conv.duplicates == 1 and conv.rejects == 1


def test_tolerance_range():
    with pytest.raises(ValueError):
        timestamps_to_gates([1e-6], 1e6, phase_tolerance=0.6)


def test_timestamp_round_trip_with_jitter():
    p = DetectorParams.from_decay(mu_eta=0.012, p_dark=2e-4, p0=0.06, decay=0.66)
    s = simulate_stream(SimConfig(p, n_detections=20_000, seed=1))
    f = 1.25e6
    jitter = np.random.default_rng(0).uniform(-0.2, 0.2, len(s))
    conv = timestamps_to_gates((s.gates + jitter) / f, f)
    assert np.array_equal(conv.stream.gates, s.gates)
    assert conv.rejects == 0


def test_parse_events_gate_and_seconds():
    rec = parse_events("# gatedspad-events v1 unit=gate\n\n3\n# note\n7\n")
    assert rec.unit == "gate" and rec.values.tolist() == [3, 7]
    rec = parse_events("# gatedspad-events v1 unit=s\n1e-6\n1e-6\n3e-6\n")
    assert rec.unit == "s" and rec.values.size == 3
    with pytest.raises(ValueError):
        records_to_stream(rec)


@pytest.mark.parametrize("text, line", [
    ("# gatedspad-events v1 unit=gate\n3\n5\n5\n", 4),
    ("# gatedspad-events v1 unit=gate\n3\n9\n\n4\n", 5),
    ("# gatedspad-events v1 unit=s\n2.0\n1.0\n", 3),
    ("# gatedspad-events v1 unit=gate\n3\nx\n", 3),
    ("# gatedspad-events v1 unit=gate\n0\n", 2),
    ("3\n", 1),
])
def test_parse_errors_carry_line_numbers(text, line):
    with pytest.raises(EventFileError) as err:
        parse_events(text)
    assert err.value.line == line
    assert f"line {line}" in str(err.value)


def test_event_file_round_trip(tmp_path):
    p = DetectorParams.from_decay(mu_eta=0.05, p_dark=0.0, p0=0.05, decay=0.5)
    s = simulate_stream(SimConfig(p, n_detections=500, seed=2))
    path = tmp_path / "ev.txt"
    write_events(path, s)
    back = records_to_stream(read_events(path)).stream
    assert np.array_equal(back.gates, s.gates)
    write_events(path, timestamps=s.gates / 1e6)
    back = records_to_stream(read_events(path), 1e6).stream
    assert np.array_equal(back.gates, s.gates)


def test_delay_scan(tmp_path):
    path = tmp_path / "scan.csv"
    path.write_text("delay_s,counts\n0,1\n1e-9,10\n2e-9,4\n")
    d, c = read_delay_scan(path)
    assert d.tolist() == [0, 1e-9, 2e-9] and c.tolist() == [1, 10, 4]
    path.write_text("delay_s,counts\n0,1\nbad\n")
    with pytest.raises(EventFileError):
        read_delay_scan(path)


def test_json_is_stable_and_exact():
    obj = {"b": 0.1 + 0.2, "a": np.float64(1 / 3), "n": float("nan"), "arr": np.arange(3)}
    text = dumps_json(obj)
    assert text == dumps_json(obj)
    back = json.loads(text)
    assert back["b"] == 0.1 + 0.2 and back["a"] == 1 / 3
    assert back["n"] is None and back["arr"] == [0, 1, 2]
    assert list(back) == sorted(back)


def test_write_table(tmp_path):
    path = tmp_path / "t.csv"
    write_table(path, ["m", "x"], [(1, 0.1), (2, math.pi)])
    assert path.read_text().splitlines() == ["m,x", "1,0.1", f"2,{math.pi!r}"]
