"""Command-line entry points.

Exit codes: 0 success, 1 replay verification mismatch, 2 input error,
3 backend error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

from .backends.base import BackendError
from .domain import ConfigError, SimulationConfig, load_config, validate_config
from .personas import arrange_personas, dump_personas, generate_personas, load_personas
from .store import LogFormatError, export_dashboard_bundle, load_events, record_line, write_json

EXIT_OK, EXIT_MISMATCH, EXIT_INPUT, EXIT_BACKEND = 0, 1, 2, 3
TRANSCRIPT_NAME = "transcript.jsonl"
PERSONAS_NAME = "personas.jsonl"

log = logging.getLogger("iosim")


class InputError(Exception):
    pass


def _config_for_log(log_path: Path, config: Optional[str]) -> SimulationConfig:
    path = Path(config) if config else log_path.parent / "manifest.json"
    if not path.exists():
        raise InputError(f"no config given and no manifest.json next to {log_path}")
    return load_config(path)


def _personas_for(config: SimulationConfig, path: Optional[str | Path]):
    if path is None:
        return generate_personas(config)
    return load_personas(path)


def _personas_beside(log_path: Path, config: SimulationConfig):
    p = log_path.parent / PERSONAS_NAME
    return load_personas(p) if p.exists() else generate_personas(config)


def make_backend(config: SimulationConfig, *, transcript=None, replay=None):
    """Backend plus regime hooks for ``config.backend`` (scripted | llm | replay)."""
    from .backends.scripted import ScriptedBackend, default_policy_params
    from .regimes import hooks_for

    params = dict(config.backend_params)
    if config.backend == "scripted":
        policy = default_policy_params(config.regime.kind)
        overrides = {k: params[k] for k in ("w_team", "hashtag_prob", "strategy_boost") if k in params}
        if overrides:
            policy = replace(policy, **overrides)
        backend = ScriptedBackend(policy)
        return backend, hooks_for(config.regime, backend), backend.info()

    from .backends.llm import backend_from_params

    if config.backend == "replay" and replay is None:
        raise InputError("backend 'replay' needs a recorded transcript")
    backend = backend_from_params(params, transcript=transcript, replay=replay)
    mode = params.get("consolidation", "deterministic")
    info = backend.info()
    info["consolidation"] = mode
    return backend, hooks_for(config.regime, backend, mode=mode), info


def cmd_simulate(args) -> int:
    from .engine import run_simulation

    config = load_config(args.config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if args.backend is not None:
        config = replace(config, backend=args.backend)
    if args.replay_transcript:
        config = replace(config, backend="replay")
    config = validate_config(config)
    personas = _personas_for(config, args.personas)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    transcript = None
    if config.backend in ("llm", "replay"):
        # pin env-provided endpoint settings into the manifest so replays build identical requests
        params = dict(config.backend_params)
        for key, env in (("model", "IOSIM_LLM_MODEL"), ("base_url", "IOSIM_LLM_BASE_URL")):
            if not params.get(key) and os.environ.get(env):
                params[key] = os.environ[env]
        config = replace(config, backend_params=params)
    if config.backend == "llm":
        transcript = Path(args.transcript) if args.transcript else out / TRANSCRIPT_NAME
        transcript.write_text("", encoding="utf-8")
    backend, hooks, info = make_backend(config, transcript=transcript, replay=args.replay_transcript)
    personas = arrange_personas(list(personas), config)
    dump_personas(personas, out / PERSONAS_NAME)
    try:
        manifest, _ = run_simulation(config, personas, backend, out_dir=out, regime_hooks=hooks, backend_info=info)
    finally:
        close = getattr(getattr(backend, "client", None), "close", None)
        if close:
            close()
    print(f"run {manifest.run_id}: {config.iterations} iterations, {manifest.log_lines} log lines")
    print(f"log {out / 'events.jsonl'}  sha256 {manifest.log_digest}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    from .metrics.report import compute_report

    log_path = Path(args.log)
    records = load_events(log_path)
    config = _config_for_log(log_path, args.config)
    report = compute_report(records, config)
    report_path = Path(args.report)
    report_path.parent.mkdir(parents=True, exist_ok=True)
    report_path.write_text(report.to_json(), encoding="utf-8")
    csv_path = report_path.with_suffix(".csv")
    csv_path.write_text(report.to_csv(), encoding="utf-8")
    rows = report.rows()
    n_absent = sum(1 for r in rows if r["absent"])
    print(f"report {report_path} ({len(rows)} rows, {n_absent} absent) and {csv_path}")
    for row in rows:
        if row["value"] != "" and not isinstance(row["value"], str):
            print(f"  {row['metric']:<40} {row['group']:<12} {row['value']:.6g}")
    return EXIT_OK


def cmd_compare(args) -> int:
    from .metrics.report import ReportSchemaError, compare_reports, render_comparison

    reports = []
    for p in args.reports:
        try:
            reports.append(json.loads(Path(p).read_text(encoding="utf-8")))
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read report {p}: {exc}") from exc
    try:
        table = compare_reports(reports, group_by=args.group_by, baseline=args.baseline)
    except (ReportSchemaError, ValueError, KeyError) as exc:
        raise InputError(str(exc)) from exc
    if args.out:
        write_json(args.out, {"group_by": args.group_by, "rows": table})
    print(render_comparison(table))
    return EXIT_OK


def replay_lines(config: SimulationConfig, personas, *, transcript=None) -> list[str]:
    from .engine import run_simulation

    if config.backend in ("llm", "replay"):
        if transcript is None or not Path(transcript).exists():
            raise InputError("llm runs replay only from a recorded transcript")
        config = replace(config, backend="replay")
    backend, hooks, info = make_backend(config, replay=transcript)
    _, records = run_simulation(config, personas, backend, regime_hooks=hooks, backend_info=info)
    return [record_line(r) for r in records]


def cmd_replay(args) -> int:
    log_path = Path(args.log)
    if not log_path.exists():
        raise InputError(f"event log not found: {log_path}")
    config = _config_for_log(log_path, args.config)
    personas = _personas_beside(log_path, config)
    transcript = Path(args.transcript) if args.transcript else log_path.parent / TRANSCRIPT_NAME
    fresh = replay_lines(config, personas, transcript=transcript if transcript.exists() else None)
    recorded = log_path.read_text(encoding="utf-8").split("\n")
    if recorded and recorded[-1] == "":
        recorded.pop()
    if not args.verify:
        print(f"re-executed {len(fresh)} lines")
        return EXIT_OK
    for i, (a, b) in enumerate(zip(recorded, fresh), 1):
        if a != b:
            print(f"MISMATCH at line {i}")
            print(f"  recorded: {a[:300]}")
            print(f"  replayed: {b[:300]}")
            return EXIT_MISMATCH
    if len(recorded) != len(fresh):
        print(f"MISMATCH at line {min(len(recorded), len(fresh)) + 1}: recorded {len(recorded)} lines, replayed {len(fresh)}")
        return EXIT_MISMATCH
    print(f"IDENTICAL: {len(fresh)} lines")
    return EXIT_OK


def cmd_export_dashboard(args) -> int:
    log_path = Path(args.log)
    records = load_events(log_path)
    config = _config_for_log(log_path, args.config)
    personas = _personas_beside(log_path, config)
    bundle = export_dashboard_bundle(records, config, personas)
    Path(args.out).parent.mkdir(parents=True, exist_ok=True)
    write_json(args.out, bundle)
    print(f"dashboard bundle {args.out}: {len(bundle['snapshots'])} snapshots")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="iosim", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log warnings and progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one seeded simulation")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.add_argument("--backend", choices=["scripted", "llm"])
    p.add_argument("--personas")
    p.add_argument("--transcript", help="where llm request/response pairs are recorded (default OUT/transcript.jsonl)")
    p.add_argument("--replay-transcript", help="answer llm requests from this recorded transcript instead of the network")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze", help="compute the metrics report for a run log")
    p.add_argument("--log", required=True)
    p.add_argument("--report", required=True, help="JSON path; a CSV with the same stem is written beside it")
    p.add_argument("--config", help="config or manifest (default: manifest.json next to the log)")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("compare", help="compare reports across regimes")
    p.add_argument("--reports", nargs="+", required=True)
    p.add_argument("--group-by", default="regime", choices=["regime"])
    p.add_argument("--baseline", help="baseline regime (default common_goal when present)")
    p.add_argument("--out", help="write the comparison table as JSON")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("replay", help="re-execute a run and compare with its log")
    p.add_argument("--log", required=True)
    p.add_argument("--config", help="config or manifest (default: manifest.json next to the log)")
    p.add_argument("--verify", action="store_true")
    p.add_argument("--transcript", help="recorded transcript for llm runs (default: next to the log)")
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("export-dashboard", help="write dashboard data for a run log")
    p.add_argument("--log", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="config or manifest (default: manifest.json next to the log)")
    p.set_defaults(func=cmd_export_dashboard)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except BackendError as exc:
        print(f"backend error: {exc}", file=sys.stderr)
        return EXIT_BACKEND
    except (ConfigError, InputError, LogFormatError, FileNotFoundError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
