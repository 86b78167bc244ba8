"""Command-line front end.

Each subcommand builds the same request models the HTTP routes accept and
calls the shared service functions in-process, then writes the returned
artifacts. Exit codes: 0 success, 1 usage error, 2 validation or run error.
"""

from __future__ import annotations

import argparse
import os
import sys

from . import harness, presets, service
from .scenario import ScenarioError


def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None,
                        help="override the scenario's base seed")
    common.add_argument("--out-dir", default="out",
                        help="directory for result files (default: out)")
    common.add_argument("--jobs", type=int, default=1,
                        help="parallel replica workers (default: 1)")

    parser = argparse.ArgumentParser(
        prog="recosim",
        description="recognition-driven dissemination simulators")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scenario", parents=[common],
                       help="write a canonical scenario file")
    p.add_argument("spec", help="preset name (%s) or path to a scenario file"
                   % ", ".join(sorted(presets.PRESETS)))
    p.add_argument("-o", "--output", required=True, help="output path")

    p = sub.add_parser("run-analytic", parents=[common],
                       help="run the mean-field model of one community")
    p.add_argument("scenario", help="scenario file")
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--community", type=int, default=0)

    p = sub.add_parser("run-des", parents=[common],
                       help="run the event-driven simulator")
    p.add_argument("scenario", help="scenario file")
    p.add_argument("--replicas", type=int, default=1)

    p = sub.add_parser("run-hybrid", parents=[common],
                       help="run the hybrid engine")
    p.add_argument("scenario", help="scenario file")
    p.add_argument("--replicas", type=int, default=1)
    p.add_argument("--mode", choices=["equal", "analytic"], default=None)
    p.add_argument("--no-channel-recognition", action="store_true",
                   help="disable channel recognition in communities")

    p = sub.add_parser("compare", parents=[common],
                       help="gap statistics between two hit-rate CSVs")
    p.add_argument("csv_a")
    p.add_argument("csv_b")

    p = sub.add_parser("serve", parents=[common], help="start the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)

    return parser


def _read(path: str) -> str:
    with open(path, "r", encoding="utf-8") as fh:
        return fh.read()


def _write(path: str, text: str) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


def _write_outputs(out_dir: str, files: dict[str, str | None]) -> None:
    for name, text in files.items():
        if text is not None:
            _write(os.path.join(out_dir, name), text)
            print(os.path.join(out_dir, name))


def _cmd_gen_scenario(args) -> int:
    if args.spec in presets.PRESETS:
        req = service.GenerateScenarioRequest(preset=args.spec, seed=args.seed)
    else:
        req = service.GenerateScenarioRequest(config_text=_read(args.spec),
                                              seed=args.seed)
    resp = service.svc_generate(req)
    if resp.violations:
        for v in resp.violations:
            print(f"violation: {v}", file=sys.stderr)
        return 2
    _write(args.output, resp.config_text)
    print(f"{args.output} ({resp.summary.nodes} nodes, "
          f"{resp.summary.items} items, hash {resp.scenario_hash[:12]})")
    return 0


def _cmd_run_analytic(args) -> int:
    req = service.AnalyticRunRequest(config_text=_read(args.scenario),
                                     community=args.community,
                                     max_steps=args.max_steps, seed=args.seed)
    resp = service.svc_run_analytic(req)
    _write_outputs(args.out_dir, {
        "replication.csv": resp.replication_csv,
        "model_trace.csv": resp.trace_csv,
        "manifest.txt": resp.manifest_text,
    })
    status = "converged" if resp.converged else "NOT converged"
    print(f"{status} after {resp.steps} steps "
          f"({resp.steps / resp.encounter_rate:.0f} s simulated)")
    return 0


def _cmd_run_des(args) -> int:
    req = service.DesRunRequest(config_text=_read(args.scenario),
                                replicas=args.replicas, jobs=args.jobs,
                                seed=args.seed)
    resp = service.svc_run_des(req)
    _write_outputs(args.out_dir, {
        "hitrate.csv": resp.hitrate_csv,
        "replication.csv": resp.replication_csv,
        "manifest.txt": resp.manifest_text,
    })
    print(f"final hit rate {resp.final_hit_rate:.4f}")
    return 0


def _cmd_run_hybrid(args) -> int:
    req = service.HybridRunRequest(
        config_text=_read(args.scenario), replicas=args.replicas,
        jobs=args.jobs, seed=args.seed, mode=args.mode,
        channel_recognition=False if args.no_channel_recognition else None)
    resp = service.svc_run_hybrid(req)
    _write_outputs(args.out_dir, {
        "hitrate.csv": resp.hitrate_csv,
        "events.csv": resp.events_csv,
        "manifest.txt": resp.manifest_text,
    })
    print(f"final hit rate {resp.final_hit_rate:.4f}")
    return 0


def _cmd_compare(args) -> int:
    req = service.CompareRequest(csv_a=_read(args.csv_a), csv_b=_read(args.csv_b))
    resp = service.svc_compare(req)
    print(f"max_abs_gap = {resp.max_abs_gap:.6f}")
    print(f"mean_abs_gap = {resp.mean_abs_gap:.6f}")
    print(f"final_gap = {resp.final_gap:.6f}")
    return 0


def _cmd_serve(args) -> int:
    import uvicorn
    uvicorn.run(service.app, host=args.host, port=args.port)
    return 0


_COMMANDS = {
    "gen-scenario": _cmd_gen_scenario,
    "run-analytic": _cmd_run_analytic,
    "run-des": _cmd_run_des,
    "run-hybrid": _cmd_run_hybrid,
    "compare": _cmd_compare,
    "serve": _cmd_serve,
}


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on usage errors; our contract reserves 2 for
        # validation/run failures
        return 0 if exc.code in (0, None) else 1
    try:
        return _COMMANDS[args.command](args)
    except (ScenarioError, harness.AlignmentError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
