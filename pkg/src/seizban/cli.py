"""Command-line entry point.

Subcommands:
    gen-data   synthesize an annotated recording (CSV or SNR1 binary)
    train      fit a classifier model from annotated recordings
    simulate   run a closed-loop scenario, write the JSON run report;
               --serve exposes the live telemetry port while running
    evaluate   pretty-print the metrics of a run report
    serve      replay a report's telemetry to consoles
    api        run the HTTP service wrapping these operations

Exit codes: 0 success, 1 usage error, 2 config validation error,
3 runtime failure.
"""
from __future__ import annotations

import argparse
import os
import sys
import threading
from typing import Optional

from . import __version__, evaluation, neuralnet, pipeline, signal_io
from .scenario import (
    ScenarioConfig,
    ScenarioError,
    ScenarioRunner,
    build_report,
    load_scenario,
    scenario_from_dict,
    scenario_to_toml,
)
from .simkernel import write_trace
from .telemetry import TcpTelemetryServer, TelemetryHub, replay_report

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_RUNTIME = 3


class UsageError(Exception):
    pass


class ConfigError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="seizban", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="synthesize an annotated recording")
    g.add_argument("--out", required=True, help="output path (.csv or .snr)")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--duration", type=float, default=600.0, metavar="S")
    g.add_argument("--onsets", default="420", metavar="S[,S...]",
                   help="seizure onset times, comma separated; empty for none")
    g.add_argument("--horizon", type=float, default=300.0, metavar="S")
    g.add_argument("--eeg-channels", type=int, default=2)
    g.add_argument("--snr-db", type=float, default=6.0)
    g.add_argument("--theta-gain", type=float, default=1.0)
    g.add_argument("--rr-shortening", type=float, default=0.2)
    g.add_argument("--sample-rate", type=float, default=256.0)

    t = sub.add_parser("train", help="train a node classifier")
    t.add_argument("--data", action="append", required=True,
                   help="annotated recording (repeatable)")
    t.add_argument("--kind", choices=("eeg", "ecg"), required=True)
    t.add_argument("--out", required=True, help="model output path (.szm)")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--window", type=float, default=4.0)
    t.add_argument("--stride", type=float, default=2.0)
    t.add_argument("--horizon", type=float, default=300.0)
    t.add_argument("--hidden", default="16", help="hidden sizes, comma separated")
    t.add_argument("--lr", type=float, default=0.1)
    t.add_argument("--epochs", type=int, default=200)

    s = sub.add_parser("simulate", help="run a closed-loop scenario")
    s.add_argument("--config", help="scenario TOML (defaults used when omitted)")
    s.add_argument("--seed", type=int, help="override the scenario seed")
    s.add_argument("--out", required=True, help="run report output (JSON)")
    s.add_argument("--recording", help="override the recording source path")
    s.add_argument("--eeg-model", help="override the EEG model path")
    s.add_argument("--ecg-model", help="override the ECG model path")
    s.add_argument("--trace", help="also write the event trace log here")
    s.add_argument("--serve", type=int, metavar="PORT",
                   help="serve live telemetry (NDJSON over TCP) while running")
    s.add_argument("--serve-http", type=int, metavar="PORT",
                   help="serve the HTTP/WebSocket service while running")
    s.add_argument("--realtime", nargs="?", type=float, const=1.0, default=None,
                   metavar="SPEED", help="pace the run against wall clock "
                   "(SPEED x real time, default 1)")

    e = sub.add_parser("evaluate", help="print metrics from a run report")
    e.add_argument("--report", required=True)

    r = sub.add_parser("serve", help="replay a report's telemetry to consoles")
    r.add_argument("--report", required=True)
    r.add_argument("--port", type=int, required=True, help="TCP telemetry port")
    r.add_argument("--http", type=int, metavar="PORT",
                   help="also serve the HTTP/WebSocket service")
    r.add_argument("--speed", type=float, default=60.0,
                   help="replay speed, x real time")
    r.add_argument("--once", action="store_true",
                   help="exit after one replay pass (default: loop)")

    a = sub.add_parser("api", help="run the HTTP service")
    a.add_argument("--port", type=int, default=8000)
    a.add_argument("--host", default="127.0.0.1")
    a.add_argument("--workdir", default=".")

    i = sub.add_parser("init-config", help="write a scenario file with defaults")
    i.add_argument("--out", required=True)
    i.add_argument("--eeg-model", default="models/eeg.szm")
    i.add_argument("--ecg-model", default="models/ecg.szm")
    return parser


def _parse_floats(text: str) -> tuple[float, ...]:
    text = text.strip()
    if not text:
        return ()
    try:
        return tuple(float(x) for x in text.split(","))
    except ValueError as exc:
        raise UsageError(f"bad number list {text!r}") from exc


def _cmd_gen_data(args) -> int:
    try:
        cfg = signal_io.SyntheticConfig(
            seed=args.seed,
            duration_s=args.duration,
            seizure_onsets_s=_parse_floats(args.onsets),
            preictal_horizon_s=args.horizon,
            eeg_channels=args.eeg_channels,
            snr_db=args.snr_db,
            signature=signal_io.SignatureConfig(
                theta_ramp_gain=args.theta_gain,
                rr_shortening_fraction=args.rr_shortening,
            ),
            sample_rate_hz=args.sample_rate,
        )
    except ValueError as exc:
        raise ConfigError(f"gen-data: {exc}")
    rec = signal_io.generate_synthetic(cfg)
    signal_io.save_recording(rec, args.out)
    print(f"wrote {args.out}: {len(rec.channels)} channels x {rec.n_samples} samples "
          f"@ {rec.sample_rate_hz:g} Hz, {len(rec.annotations)} seizure(s)")
    return EXIT_OK


def _cmd_train(args) -> int:
    recs = []
    for path in args.data:
        if not os.path.exists(path):
            raise ConfigError(f"train: recording not found: {path}")
        try:
            recs.append(signal_io.load_recording(path))
        except signal_io.RecordingFormatError as exc:
            raise ConfigError(f"train: {path}: {exc}")
    hidden = tuple(int(x) for x in args.hidden.split(",") if x.strip())
    try:
        model = pipeline.train_node_model(
            recs, args.kind, seed=args.seed, window_s=args.window,
            stride_s=args.stride, horizon_s=args.horizon,
            hidden=hidden, lr=args.lr, epochs=args.epochs,
        )
        neuralnet.save_model(model, args.out)
    except (ValueError, neuralnet.BudgetExceededError) as exc:
        raise ConfigError(f"train: {exc}")
    size = neuralnet.serialized_size(model)
    print(f"wrote {args.out}: layers {list(model.layer_sizes)}, "
          f"{model.n_params} params, {size} B "
          f"(budget {neuralnet.MODEL_BUDGET_BYTES} B)")
    return EXIT_OK


def _scenario_from_args(args) -> ScenarioConfig:
    if args.config:
        if not os.path.exists(args.config):
            raise ConfigError(f"simulate: config not found: {args.config}")
        try:
            cfg = load_scenario(args.config, seed_override=args.seed)
        except (ValueError, TypeError, KeyError) as exc:
            raise ConfigError(f"simulate: {args.config}: {exc}")
    else:
        cfg = scenario_from_dict(
            {"scenario": {"seed": args.seed if args.seed is not None else 0}}
        )
    updates = {}
    if args.recording:
        updates["recording_path"] = args.recording
    if args.eeg_model:
        updates["eeg_model_path"] = args.eeg_model
    if args.ecg_model:
        updates["ecg_model_path"] = args.ecg_model
    if updates:
        from dataclasses import replace
        cfg = replace(cfg, **updates)
    return cfg


def _cmd_simulate(args) -> int:
    cfg = _scenario_from_args(args)
    hub = None
    tcp_server = None
    http_server = None
    try:
        if args.serve is not None or args.serve_http is not None:
            hub = TelemetryHub()
        try:
            runner = ScenarioRunner(cfg, hub=hub)
        except ScenarioError as exc:
            for e in exc.errors:
                print(f"config error: {e}", file=sys.stderr)
            return EXIT_CONFIG
        except signal_io.RecordingFormatError as exc:
            print(f"config error: recording: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        if hub is not None:
            hub.command_sink = runner.sim.mailbox
            hub.snapshot_provider = runner.snapshot
        if args.serve is not None:
            tcp_server = TcpTelemetryServer(hub, port=args.serve)
            tcp_server.start()
            print(f"telemetry: tcp://127.0.0.1:{tcp_server.port}")
        if args.serve_http is not None:
            http_server = _start_http(hub, port=args.serve_http)
            print(f"service: http://127.0.0.1:{args.serve_http} (ws at /ws)")
        result = runner.run(pace=args.realtime)
        report = build_report(result)
        evaluation.write_report(report, args.out)
        if args.trace:
            write_trace(args.trace, runner.sim)
        fused = report["metrics"]["fused"]
        parts = ", ".join(f"{k}={v}" for k, v in sorted(fused.items()))
        print(f"wrote {args.out}: {len(report['windows'])} windows, "
              f"{len(report['alerts'])} alert(s), {parts or 'no metrics'}")
        return EXIT_OK
    finally:
        if tcp_server is not None:
            tcp_server.stop()
        if http_server is not None:
            http_server.should_exit = True


def _console_dist() -> str:
    # repo layout: src/seizban/cli.py -> <repo>/frontend/dist
    root = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
    return os.path.join(root, "frontend", "dist")


def _start_http(hub, port: int, host: str = "127.0.0.1", workdir: str = "."):
    import uvicorn

    from .service import create_app

    app = create_app(workdir=workdir, hub=hub, console_dist=_console_dist())
    config = uvicorn.Config(app, host=host, port=port, log_level="warning")
    server = uvicorn.Server(config)
    thread = threading.Thread(target=server.run, daemon=True)
    thread.start()
    return server


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.4f}"
    return str(v)


def _cmd_evaluate(args) -> int:
    if not os.path.exists(args.report):
        raise ConfigError(f"evaluate: report not found: {args.report}")
    report = evaluation.load_report(args.report)
    metrics = report.get("metrics", {})
    rows = ["sensitivity", "specificity", "accuracy",
            "false_alarms_per_hour", "mean_detection_latency_s"]
    cols = ["fused", "eeg", "ecg"]
    width = max(len(r) for r in rows) + 2
    print(f"{'metric':<{width}}" + "".join(f"{c:>12}" for c in cols))
    for row in rows:
        cells = [metrics.get(c, {}).get(row) for c in cols]
        if all(v is None for v in cells):
            continue
        print(f"{row:<{width}}" + "".join(f"{_fmt(v):>12}" for v in cells))
    ev = report.get("event_scoring", {})
    print(f"\nevents: {ev.get('true_alarms', 0)} true alarm(s), "
          f"{ev.get('false_alarms', 0)} false, "
          f"{ev.get('missed_seizures', 0)} missed")
    for node, e in sorted(report.get("energy", {}).items()):
        print(f"energy {node}: {e['initial_j']:.3f} J -> {e['final_j']:.3f} J")
    return EXIT_OK


def _cmd_serve(args) -> int:
    if not os.path.exists(args.report):
        raise ConfigError(f"serve: report not found: {args.report}")
    report = evaluation.load_report(args.report)
    hub = TelemetryHub()
    hub.snapshot_provider = lambda: {
        "type": "snapshot", "t_us": 0, "replay": True,
        "active_alerts": [],
        "fusion_rule": report.get("config", {}).get("fusion", {}),
        "stim_params": report.get("config", {}).get("dbs", {}),
        "battery_j": {},
    }
    tcp_server = TcpTelemetryServer(hub, port=args.port)
    tcp_server.start()
    http_server = _start_http(hub, port=args.http) if args.http else None
    print(f"replaying {args.report} at {args.speed:g}x on "
          f"tcp://127.0.0.1:{tcp_server.port}"
          + (f" and http://127.0.0.1:{args.http}" if args.http else ""))
    try:
        while True:
            replay_report(report, hub, speed=args.speed)
            if args.once:
                break
    except KeyboardInterrupt:
        pass
    finally:
        tcp_server.stop()
        if http_server is not None:
            http_server.should_exit = True
    return EXIT_OK


def _cmd_api(args) -> int:
    import uvicorn

    from .service import create_app

    app = create_app(workdir=args.workdir, console_dist=_console_dist())
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return EXIT_OK


def _cmd_init_config(args) -> int:
    cfg = scenario_from_dict(
        {"models": {"eeg": args.eeg_model, "ecg": args.ecg_model}}
    )
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write(scenario_to_toml(cfg))
    print(f"wrote {args.out}")
    return EXIT_OK


_COMMANDS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "simulate": _cmd_simulate,
    "evaluate": _cmd_evaluate,
    "serve": _cmd_serve,
    "api": _cmd_api,
    "init-config": _cmd_init_config,
}


def main(argv: Optional[list[str]] = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        return _COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SystemExit as exc:  # argparse --help / --version
        code = exc.code if isinstance(exc.code, int) else 0
        return code
    except KeyboardInterrupt:
        return EXIT_RUNTIME
    except Exception as exc:  # pragma: no cover - unexpected failures
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
