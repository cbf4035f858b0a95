"""Command-line interface: ``gatedspad {simulate,characterize,monitor,decompose,gate-width}``.

Exit codes: 0 success, 1 other errors, 2 usage, 3 unreadable or inconsistent
input, 4 insufficient statistics, 5 fit did not converge.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .files import (
    EventFileError,
    dumps_json,
    file_digest,
    read_delay_scan,
    read_events,
    records_to_stream,
    write_events,
    write_json,
    write_table,
)
from .fit import ConvergenceError, FitOptions, InsufficientStatisticsError
from .model import DetectorParams, total_afterpulse
from .monitor import file_chunks, line_source, run_monitor
from .pipeline import (
    RunConfig,
    characterize_stream,
    decomposition_report,
    gate_width_report,
    plot_table,
)
from .simulate import Memory, SimConfig, simulate_stream

log = logging.getLogger("gatedspad")

EXIT_PARSE = 3
EXIT_STATISTICS = 4
EXIT_CONVERGENCE = 5


def _flatten(obj, prefix=""):
    if isinstance(obj, dict):
        for k in sorted(obj):
            yield from _flatten(obj[k], f"{prefix}{k}.")
    elif isinstance(obj, list) and any(isinstance(v, (dict, list)) for v in obj):
        for i, v in enumerate(obj):
            yield from _flatten(v, f"{prefix}{i}.")
    else:
        yield prefix[:-1], obj


def _render(obj, fmt):
    if fmt == "json":
        return dumps_json(obj)
    lines = []
    for k, v in _flatten(json.loads(dumps_json(obj))):
        lines.append(f"{k}: {json.dumps(v)}")
    return "\n".join(lines) + "\n"


def _emit(obj, path, fmt):
    text = _render(obj, fmt)
    if path and path != "-":
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


# -- argument plumbing -------------------------------------------------------

def _fit_parent():
    p = argparse.ArgumentParser(add_help=False)
    g = p.add_argument_group("fit")
    g.add_argument("--gate-freq-hz", type=float, required=True,
                   help="gate repetition frequency (T = 1/f)")
    g.add_argument("--mu", type=float, help="known mean photon number per gate")
    g.add_argument("--eta-nominal", type=float,
                   help="known efficiency; with --pin-pdark, mu is reported instead of eta")
    g.add_argument("--gate-width-eff-s", type=float, help="measured effective gate width")
    g.add_argument("--gate-width-nominal-s", type=float, help="nominal gate width")
    pins = g.add_mutually_exclusive_group()
    pins.add_argument("--pin-pdark", type=float, help="fix the dark-count probability")
    pins.add_argument("--pin-mu-eta", type=float, help="fix the product mu*eta")
    g.add_argument("--mode", choices=["exact", "second-order"], default="exact")
    g.add_argument("--weighting", choices=["poisson", "uniform"], default="poisson")
    g.add_argument("--objective", choices=["log-lsq", "likelihood"], default="log-lsq")
    g.add_argument("--optimizer", choices=["simplex", "quasi-newton"], default="simplex")
    g.add_argument("--bin-policy", choices=["nonzero", "threshold"], default="nonzero")
    g.add_argument("--k-min", type=int, default=5)
    g.add_argument("--m-max", type=int, default=10_000)
    g.add_argument("--m-fit-max", type=int)
    g.add_argument("--restarts", type=int, default=3)
    g.add_argument("--bootstrap", type=int, default=0,
                   help="bootstrap resamples for standard errors")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--phase-tolerance", type=float, default=0.25,
                   help="timestamp files: accepted offset from a gate, in gate periods")
    g.add_argument("--format", choices=["json", "text"], default="json")
    return p


def _run_config(args, **extra) -> RunConfig:
    fit = FitOptions(
        mode=args.mode, bin_policy=args.bin_policy, k_min=args.k_min,
        m_fit_max=args.m_fit_max, weighting=args.weighting, objective=args.objective,
        optimizer=args.optimizer, restarts=args.restarts,
        pin_p_dark=args.pin_pdark, pin_mu_eta=args.pin_mu_eta,
        bootstrap=args.bootstrap, seed=args.seed)
    return RunConfig(
        gate_frequency_hz=args.gate_freq_hz, mu_known=args.mu, eta_nominal=args.eta_nominal,
        gate_width_eff_s=args.gate_width_eff_s, gate_width_nominal_s=args.gate_width_nominal_s,
        fit=fit, m_max=args.m_max, phase_tolerance=args.phase_tolerance, **extra)


# -- subcommands ------------------------------------------------------------------

def cmd_simulate(args):
    period = 1.0 / args.gate_freq_hz
    if args.tau_s is not None:
        tau = args.tau_s
    else:
        tau = period / args.decay
    p0 = args.p0
    if args.p_total is not None:
        p0 = args.p_total * math.expm1(period / tau)
    params = DetectorParams(mu=args.mu, eta=args.eta, p_dark=args.p_dark, p0=p0,
                            tau_s=tau, gate_period_s=period)
    config = SimConfig(params, n_detections=args.detections, n_gates=args.gates,
                       seed=args.seed, memory=Memory(args.memory))
    stream = simulate_stream(config)
    out = Path(args.output)
    if args.unit == "s":
        rng = np.random.default_rng(np.random.SeedSequence(args.seed).spawn(1)[0])
        jitter = rng.uniform(-args.jitter, args.jitter, len(stream)) if args.jitter else 0.0
        write_events(out, timestamps=(stream.gates + jitter) * period)
    else:
        write_events(out, stream)
    truth = {
        "schema_version": 1,
        "tool": {"name": "gatedspad", "version": __version__},
        "params": {"mu": params.mu, "eta": params.eta, "p_dark": params.p_dark,
                   "p0": params.p0, "tau_s": params.tau_s,
                   "gate_period_s": params.gate_period_s},
        "derived": {"mu_eta": params.mu_eta, "q": params.q,
                    "decay_per_gate": params.decay,
                    "p_total": total_afterpulse(params)},
        "seed": args.seed,
        "memory": config.memory.value,
        "n_detections": len(stream),
        "n_gates_simulated": stream.n_gates_simulated,
        "unit": args.unit,
        "events_file": out.name,
    }
    write_json(args.truth or f"{out}.truth.json", truth)
    log.info("wrote %d detections to %s", len(stream), out)
    return 0


def _load_stream(path, args):
    records = read_events(path)
    conv = records_to_stream(records, args.gate_freq_hz, args.phase_tolerance)
    info = {"records": conv.n_records, "rejects": conv.rejects,
            "duplicates": conv.duplicates}
    if conv.rejects:
        log.warning("%d timestamps outside the gate windows were dropped", conv.rejects)
    if conv.duplicates:
        log.warning("%d repeated hits on one gate collapsed", conv.duplicates)
    return conv.stream, info


def cmd_characterize(args):
    config = _run_config(args)
    stream, info = _load_stream(args.events, args)
    provenance = {"input": Path(args.events).name, "input_sha256": file_digest(args.events),
                  "seed": args.seed, "conversion": info}
    report, result, hist = characterize_stream(stream, config, provenance)
    _emit(report, args.output, args.format)
    if args.table:
        header, rows = plot_table(hist, result)
        write_table(args.table, header, rows)
    return 0


def cmd_monitor(args):
    config = _run_config(args, window=args.window, refresh=args.refresh)
    if args.events == "-":
        lines = line_source(sys.stdin, args.stall_s)
    else:
        lines = open(args.events)
    out = open(args.output, "w") if args.output and args.output != "-" else sys.stdout
    series = []
    try:
        for report in run_monitor(file_chunks(lines, config), config):
            out.write(json.dumps(json.loads(dumps_json(report)), sort_keys=True) + "\n")
            out.flush()
            if "fit" in report:
                f = report["fit"]
                series.append((report["index"], report["intervals_seen"], f["q"],
                               f["mu_eta"], f["p0"], f["decay_per_gate"], f["p_total"],
                               f["r_squared"]))
    finally:
        if out is not sys.stdout:
            out.close()
        if hasattr(lines, "close"):
            lines.close()
    if args.series:
        write_table(args.series, ["index", "intervals_seen", "q", "mu_eta", "p0",
                                  "decay_per_gate", "p_total", "r_squared"], series)
    return 0


def cmd_decompose(args):
    runs, labels = [], []
    mus = list(args.mu or [])
    for i, path in enumerate(args.inputs):
        if path.endswith(".json"):
            rep = json.loads(Path(path).read_text())
            q = rep["fit"]["q"]
            mu = mus[i] if mus else rep.get("config", {}).get("mu_known")
            if mu is None and rep.get("derived"):
                mu = rep["derived"].get("mu_effective")
        else:
            if args.gate_freq_hz is None:
                raise SystemExit("decompose: event files need --gate-freq-hz")
            if not mus:
                raise SystemExit("decompose: event files need --mu for every input")
            ns = argparse.Namespace(**vars(args))
            ns.mu = mus[i]
            ns.pin_pdark = ns.pin_mu_eta = None
            config = _run_config(ns)
            stream, _ = _load_stream(path, ns)
            _, result, _ = characterize_stream(stream, config, wall_clock=False)
            q, mu = result.q_hat, mus[i]
        if mu is None:
            raise SystemExit(f"decompose: no mu known for {path}; pass --mu")
        runs.append((mu, q))
        labels.append(Path(path).name)
    _emit(decomposition_report(runs, labels), args.output, args.format)
    return 0


def cmd_gate_width(args):
    delays, counts = read_delay_scan(args.scan)
    _emit(gate_width_report(delays, counts, args.nominal_width_s), args.output, args.format)
    return 0


def build_parser():
    parser = argparse.ArgumentParser(prog="gatedspad", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    fit_parent = _fit_parent()

    p = sub.add_parser("simulate", help="write a simulated event file and truth sidecar")
    p.add_argument("--mu", type=float, required=True)
    p.add_argument("--eta", type=float, required=True)
    p.add_argument("--p-dark", type=float, default=0.0)
    p.add_argument("--p0", type=float, default=0.0)
    p.add_argument("--p-total", type=float,
                   help="set the afterpulse amplitude from the total afterpulse probability")
    life = p.add_mutually_exclusive_group()
    life.add_argument("--tau-s", type=float)
    life.add_argument("--decay", type=float, default=1.0, help="T / tau per gate")
    p.add_argument("--gate-freq-hz", type=float, required=True)
    stop = p.add_mutually_exclusive_group(required=True)
    stop.add_argument("--detections", type=int)
    stop.add_argument("--gates", type=int)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--memory", choices=[m.value for m in Memory], default="last")
    p.add_argument("--unit", choices=["gate", "s"], default="gate",
                   help="write gate indices or timestamps in seconds")
    p.add_argument("--jitter", type=float, default=0.0,
                   help="timestamp jitter, uniform +-fraction of a gate period")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--truth", help="truth sidecar path (default: OUTPUT.truth.json)")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("characterize", parents=[fit_parent],
                       help="fit one event file and write a report")
    p.add_argument("events")
    p.add_argument("-o", "--output", help="report path (default: stdout)")
    p.add_argument("--table", help="write the plot table (CSV) here")
    p.set_defaults(func=cmd_characterize)

    p = sub.add_parser("monitor", parents=[fit_parent],
                       help="sliding-window characterization of a stream ('-' for stdin)")
    p.add_argument("events")
    p.add_argument("--window", type=int, default=30_000)
    p.add_argument("--refresh", type=int, help="intervals between reports (default window/10)")
    p.add_argument("--stall-s", type=float, default=5.0,
                   help="stdin: emit a stale heartbeat after this many silent seconds")
    p.add_argument("-o", "--output", help="JSON-lines reports (default: stdout)")
    p.add_argument("--series", help="write the parameter time series (CSV) here")
    p.set_defaults(func=cmd_monitor)

    p = sub.add_parser("decompose", help="separate eta and p_dark across runs at known mu")
    p.add_argument("inputs", nargs="+", help="reports (.json) or event files")
    p.add_argument("--mu", type=float, nargs="+", help="known mu for each input, in order")
    p.add_argument("--gate-freq-hz", type=float)
    p.add_argument("--phase-tolerance", type=float, default=0.25)
    for flag, kw in [("--mode", dict(default="exact")), ("--weighting", dict(default="poisson")),
                     ("--objective", dict(default="log-lsq")),
                     ("--optimizer", dict(default="simplex")),
                     ("--bin-policy", dict(default="nonzero")), ("--k-min", dict(type=int, default=5)),
                     ("--m-max", dict(type=int, default=10_000)), ("--m-fit-max", dict(type=int)),
                     ("--restarts", dict(type=int, default=3)), ("--seed", dict(type=int, default=0))]:
        p.add_argument(flag, **kw)
    p.set_defaults(eta_nominal=None, gate_width_eff_s=None, gate_width_nominal_s=None,
                   bootstrap=0, pin_pdark=None, pin_mu_eta=None)
    p.add_argument("--format", choices=["json", "text"], default="json")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("gate-width", help="effective gate width from a delay scan")
    p.add_argument("scan", help="CSV of delay_s,counts")
    p.add_argument("--nominal-width-s", type=float)
    p.add_argument("--format", choices=["json", "text"], default="json")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_gate_width)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except EventFileError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except InsufficientStatisticsError as exc:
        print(f"error: insufficient data: {exc}", file=sys.stderr)
        return EXIT_STATISTICS
    except ConvergenceError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
