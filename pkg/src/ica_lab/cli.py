"""``ica-lab`` command line.

Exit codes: 0 when every check passes, 2 for configuration or schema errors,
3 when a check fails or a numeric routine raises.
"""

import os


def _apply_thread_cap():
    # must run before numpy loads its BLAS
    raw = os.environ.get("ICA_LAB_THREADS")
    if raw is None:
        return None
    try:
        n = int(raw)
    except ValueError:
        return f"ICA_LAB_THREADS must be a positive integer, got {raw!r}"
    if n < 1:
        return f"ICA_LAB_THREADS must be a positive integer, got {raw!r}"
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, str(n))
    return None


_THREAD_ERROR = _apply_thread_cap()

import argparse  # noqa: E402
import csv  # noqa: E402
from datetime import datetime, timezone  # noqa: E402
from importlib import metadata  # noqa: E402
import json  # noqa: E402
import subprocess  # noqa: E402
import sys  # noqa: E402
import time  # noqa: E402

from pydantic import ValidationError  # noqa: E402
import yaml  # noqa: E402

from .config import KINDS, catalog_config, catalog_entries, config_hash, load_config, parse_config  # noqa: E402
from .errors import ArgumentError, IcaLabError  # noqa: E402
from .flows.trainer import write_trace_csv  # noqa: E402
from .pipelines import PIPELINES, RunResult  # noqa: E402

EXIT_OK, EXIT_SCHEMA, EXIT_CHECK = 0, 2, 3


def provenance():
    try:
        version = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        version = "unknown"
    here = os.path.dirname(os.path.abspath(__file__))
    try:
        rev = subprocess.run(["git", "-C", here, "describe", "--always", "--dirty"],
                             capture_output=True, text=True, timeout=5).stdout.strip()
    except (OSError, subprocess.SubprocessError):
        rev = ""
    return f"ica_lab {version}" + (f" ({rev})" if rev else "")


def build_parser():
    parser = argparse.ArgumentParser(prog="ica-lab",
                                     description="Identifiability checks for nonlinear ICA function classes.")
    sub = parser.add_subparsers(dest="command", required=True)
    for kind in KINDS:
        p = sub.add_parser(kind, help=f"run a {kind} config")
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--config", metavar="PATH", help="YAML run config")
        src.add_argument("--scenario", metavar="NAME", help="built-in scenario (see `list`)")
        p.add_argument("--out", metavar="DIR", help="output directory")
        p.add_argument("--seed", type=int, metavar="N")
        p.add_argument("--tol", type=float, metavar="X", help="override check tolerances")
        p.add_argument("--json", action="store_true", help="print the report as JSON")
        if kind == "train-drift":
            p.add_argument("--lambda", dest="lam", type=float, metavar="X",
                           help="train a single arm with this weight")
            p.add_argument("--steps", type=int, metavar="N")
    p = sub.add_parser("list", help="show the built-in scenario catalog")
    p.add_argument("--kind", choices=KINDS)
    p.add_argument("--json", action="store_true")
    return parser


def cmd_list(args):
    entries = catalog_entries(args.kind)
    if args.json:
        print(json.dumps(entries, indent=2))
    else:
        width = max((len(e["name"]) for e in entries), default=0)
        for e in entries:
            print(f"{e['name']:<{width}}  {e['kind']:<12}  {e['summary']}")
    return EXIT_OK


def _raw_config(args):
    data = load_config(args.config) if args.config else catalog_config(args.scenario)
    if data.get("kind") != args.command:
        raise ArgumentError(f"config kind {data.get('kind')!r} does not match command {args.command!r}")
    if args.seed is not None:
        data["seed"] = args.seed
        if "seeds" in data:
            data["seeds"] = [args.seed]
    if args.tol is not None:
        data["tol"] = args.tol
    if args.out is not None:
        data["out"] = args.out
    if getattr(args, "lam", None) is not None:
        data["lambdas"] = [args.lam]
    if getattr(args, "steps", None) is not None:
        data["steps"] = args.steps
    return data


def _write_residuals(path, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["check", "index", "residual"])
        for name, k, v in rows:
            writer.writerow([name, k, repr(v)])


def _print_summary(report):
    for c in report["checks"]:
        mark = "PASS" if c["passed"] else "FAIL"
        tol = "" if c["tol"] is None else f" (tol {c['tol']:g})"
        print(f"[{mark}] {c['name']}: {c['value']:.6g}{tol}")
    print(f"{'passed' if report['passed'] else 'FAILED'} in {report['wall_time_s']:.2f}s; "
          f"report at {report['artifacts']['report']}")


def cmd_run(args):
    try:
        cfg = parse_config(_raw_config(args))
    except ValidationError as exc:
        print(f"schema error:\n{exc}", file=sys.stderr)
        return EXIT_SCHEMA
    digest = config_hash(cfg)
    out_dir = cfg.out or os.path.join("ica-lab-runs", f"{cfg.kind}-{digest}")
    os.makedirs(out_dir, exist_ok=True)
    started = datetime.now(timezone.utc).isoformat(timespec="seconds")
    t0 = time.perf_counter()
    runner = PIPELINES[cfg.kind]
    try:
        result = runner(cfg, out_dir) if cfg.kind == "train-drift" else runner(cfg)
    except ArgumentError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except IcaLabError as exc:
        result = RunResult()
        result.check(type(exc).__name__, False, float("nan"), None, message=str(exc))
    artifacts = {"report": os.path.join(out_dir, "report.json")}
    if result.residuals:
        artifacts["residuals"] = os.path.join(out_dir, "residuals.csv")
        _write_residuals(artifacts["residuals"], result.residuals)
    if result.traces:
        artifacts["trace"] = os.path.join(out_dir, "trace.csv")
        write_trace_csv(artifacts["trace"], result.traces)
    report = {
        "kind": cfg.kind,
        "config": cfg.model_dump(mode="json"),
        "config_hash": digest,
        "provenance": provenance(),
        "started": started,
        "wall_time_s": time.perf_counter() - t0,
        "checks": result.checks,
        "passed": result.passed,
        "info": result.info,
        "artifacts": artifacts,
    }
    with open(artifacts["report"], "w") as fh:
        json.dump(report, fh, indent=2, default=float)
    if args.json:
        print(json.dumps(report, indent=2, default=float))
    else:
        _print_summary(report)
    return EXIT_OK if result.passed else EXIT_CHECK


def main(argv=None):
    if _THREAD_ERROR:
        print(_THREAD_ERROR, file=sys.stderr)
        return EXIT_SCHEMA
    args = build_parser().parse_args(argv)
    if args.command == "list":
        return cmd_list(args)
    try:
        return cmd_run(args)
    except (ArgumentError, OSError, yaml.YAMLError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA


if __name__ == "__main__":
    sys.exit(main())
