"""Command-line entry points.

``start`` boots the HTTP service around a (usually real-clock) engine.
``exec`` and ``explain`` act as thin clients against a running service when
``--server`` is given and otherwise run an ephemeral in-process engine.
``scenario``, ``random``, and ``bench`` are inherently local: they replay
deterministic timelines, run randomized oracle-checked loads, and measure
channel cost.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .engine import Engine, EngineConfig
from .cluster import NodeConfig
from .errors import EngineError
from .values import Duration, encode_value


def _print_results(results, as_json: bool) -> None:
    if as_json:
        out = []
        for r in results:
            entry = {"kind": r.kind, "message": r.message}
            if r.rows is not None:
                entry["rows"] = [encode_value(v) for v in r.rows]
            if r.text is not None:
                entry["text"] = r.text
            if r.subscription_id is not None:
                entry["subscription_id"] = r.subscription_id
            out.append(entry)
        print(json.dumps(out, indent=2, sort_keys=True))
        return
    for r in results:
        if r.kind == "rows":
            for row in r.rows or []:
                print(json.dumps(encode_value(row), sort_keys=True))
            print(f"-- {len(r.rows or [])} row(s)")
        elif r.kind == "explain":
            print(r.text)
        elif r.kind == "subscription":
            print(f"{r.message}: {r.subscription_id}")
        else:
            print(r.message)


def _local_engine(args) -> Engine:
    if getattr(args, "config", None):
        return Engine(EngineConfig.from_file(args.config))
    return Engine(EngineConfig(nodes=[NodeConfig(0)]))


def _remote_statements(server: str, text: str, as_json: bool) -> int:
    import httpx

    response = httpx.post(server.rstrip("/") + "/statements",
                          json={"statements": text}, timeout=30.0)
    if response.status_code >= 400:
        body = response.json()
        sys.stderr.write(f"{body.get('error', 'error')}: {body.get('message')}"
                         + (f" at line {body['line']}, column {body['column']}"
                            if "line" in body else "") + "\n")
        return 2 if body.get("error") == "ParseError" else 1
    if as_json:
        print(json.dumps(response.json(), indent=2, sort_keys=True))
    else:
        for entry in response.json()["results"]:
            print(entry.get("text") or entry.get("message")
                  or json.dumps(entry.get("rows")))
    return 0


def cmd_start(args) -> int:
    import uvicorn

    from .service import create_app

    if args.config:
        config = EngineConfig.from_file(args.config)
    else:
        config = EngineConfig(nodes=[NodeConfig(0, clock_mode="real")])
    engine = Engine(config)
    engine.auto_schedule = True
    if args.setup:
        engine.execute_text(Path(args.setup).read_text(encoding="utf-8"))
    app = create_app(engine)
    uvicorn.run(app, host=args.host, port=args.port, log_level="info")
    return 0


def cmd_exec(args) -> int:
    text = Path(args.file).read_text(encoding="utf-8")
    if args.server:
        return _remote_statements(args.server, text, args.json)
    engine = _local_engine(args)
    try:
        results = engine.execute_text(text)
        _print_results(results, args.json)
        return 0
    except EngineError as exc:
        sys.stderr.write(str(exc) + "\n")
        return 2 if exc.kind.value == "ParseError" else 1
    finally:
        engine.shutdown()


def cmd_explain(args) -> int:
    text = args.statement
    if not text.rstrip().endswith(";"):
        text += ";"
    text = "EXPLAIN " + text
    if args.server:
        return _remote_statements(args.server, text, args.json)
    engine = _local_engine(args)
    try:
        if args.setup:
            engine.execute_text(Path(args.setup).read_text(encoding="utf-8"))
        results = engine.execute_text(text)
        _print_results(results, args.json)
        return 0
    except EngineError as exc:
        sys.stderr.write(str(exc) + "\n")
        return 2 if exc.kind.value == "ParseError" else 1
    finally:
        engine.shutdown()


def cmd_scenario(args) -> int:
    from .harness.scenario import report_json, run_scenario

    try:
        report = run_scenario(args.file)
    except EngineError as exc:
        sys.stderr.write(str(exc) + "\n")
        return 2 if exc.kind.value == "ParseError" else 1
    if args.json:
        print(report_json(report))
    else:
        print(f"scenario {report['scenario']}: {'PASS' if report['ok'] else 'FAIL'}")
        for entry in report["executions"]:
            mark = "ok" if entry["pass"] else "MISMATCH"
            print(f"  {entry['channel']} execution {entry['index']}: {mark}")
            if not entry["pass"]:
                print(f"    expected {entry['expected']}")
                print(f"    actual   {entry['actual']}")
        oracle = report["oracle"]
        print(f"  oracle: {len(oracle['missed'])} missed, "
              f"{len(oracle['duplicated'])} duplicated, {oracle['matched']} matched")
    return 0 if report["ok"] else 1


def cmd_random(args) -> int:
    from .harness.randomruns import RandomRunParams, run_random

    reports = []
    ok = True
    for seed in range(args.seed, args.seed + args.seeds):
        params = RandomRunParams(
            seed=seed, nodes=args.nodes, skew_ms=args.skew_ms,
            period_ms=args.period_ms, jitter_fraction=args.jitter,
            duration_s=args.duration_s, tweet_rate=args.tweet_rate,
            location_rate=args.location_rate, mode=args.mode)
        report = run_random(params)
        reports.append(report)
        ok &= report["ok"]
        if not args.json:
            print(f"seed {seed}: records={report['records']} "
                  f"missed={report['missed']} duplicated={report['duplicated']} "
                  f"matched={report['matched']} -> "
                  f"{'OK' if report['ok'] else 'FAIL'}")
    if args.json:
        print(json.dumps(reports if args.seeds > 1 else reports[0],
                         indent=2, sort_keys=True))
    return 0 if ok else 1


def cmd_bench(args) -> int:
    logging.disable(logging.WARNING)  # bench drops deliveries by design
    from .harness import bench

    period = Duration.parse(args.period)
    if args.compare_partitions:
        counts = [int(p) for p in args.compare_partitions.split(",")]
        report = bench.speedup_comparison(partition_counts=counts,
                                          officers=args.officers,
                                          tweets_per_exec=args.rate,
                                          period=period, seed=args.seed)
    else:
        params = bench.BenchParams(
            channel=args.channel, rate_per_s=args.rate, period=period,
            budget_s=args.budget_ms / 1000.0 if args.budget_ms else None,
            partitions=args.partitions, seed=args.seed,
            start_subscribers=args.subscribers)
        report = bench.max_supportable_subscribers(params)
    if args.json:
        print(json.dumps(report, indent=2, sort_keys=True))
    else:
        print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="badlite",
                                     description="desk-scale active data engine")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("start", help="run the HTTP service")
    p.add_argument("--config", help="engine config JSON file")
    p.add_argument("--setup", help="statement file to execute at boot")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8080)
    p.set_defaults(fn=cmd_start)

    p = sub.add_parser("exec", help="execute a statement file")
    p.add_argument("file")
    p.add_argument("--server", help="service URL (thin-client mode)")
    p.add_argument("--config", help="engine config for local mode")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_exec)

    p = sub.add_parser("explain", help="show the plan for one statement")
    p.add_argument("statement")
    p.add_argument("--server", help="service URL (thin-client mode)")
    p.add_argument("--setup", help="statement file executed first (local mode)")
    p.add_argument("--config")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_explain)

    p = sub.add_parser("scenario", help="replay a scenario file")
    p.add_argument("file")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_scenario)

    p = sub.add_parser("random", help="randomized oracle-checked runs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--seeds", type=int, default=1, help="number of seeds to run")
    p.add_argument("--nodes", type=int, default=4)
    p.add_argument("--skew-ms", type=int, default=5000)
    p.add_argument("--period-ms", type=int, default=2000)
    p.add_argument("--jitter", type=float, default=0.5)
    p.add_argument("--duration-s", type=float, default=8.0)
    p.add_argument("--tweet-rate", type=int, default=900)
    p.add_argument("--location-rate", type=int, default=350)
    p.add_argument("--mode", choices=["continuous", "repetitive"],
                   default="continuous")
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_random)

    p = sub.add_parser("bench", help="measure channel execution cost")
    p.add_argument("--channel", default="LocalTweetAlerts")
    p.add_argument("--rate", type=int, default=50, help="tweets per second")
    p.add_argument("--period", default="PT10S")
    p.add_argument("--budget-ms", type=int, help="override the period budget")
    p.add_argument("--partitions", type=int, default=1)
    p.add_argument("--subscribers", type=int, default=64,
                   help="starting point for the doubling search")
    p.add_argument("--compare-partitions",
                   help="e.g. 1,4: fixed-workload speed-up comparison")
    p.add_argument("--officers", type=int, default=3000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--json", action="store_true")
    p.set_defaults(fn=cmd_bench)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except EngineError as exc:
        sys.stderr.write(str(exc) + "\n")
        return 2 if exc.kind.value == "ParseError" else 1


if __name__ == "__main__":
    sys.exit(main())
