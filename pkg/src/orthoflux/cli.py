"""Command-line experiment runner.

    orthoflux run CONFIG [--out DIR] [--seed N] [--threads N] [--no-plots]
    orthoflux list-models
    orthoflux describe-experiment KIND

Exit codes: 0 = ran and all checks passed; 1 = ran but a check failed;
2 = bad usage or configuration (machine-readable error JSON on stderr).
The ORTHOFLUX_THREADS environment variable supplies a default for
--threads.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from .config import ConfigError, EXPERIMENT_KINDS, load_config
from .models import MODEL_REGISTRY

__all__ = ["main"]


def _error_json(message: str, key: str = None) -> None:
    payload = {"error": message}
    if key is not None:
        payload["key"] = key
    print(json.dumps(payload, sort_keys=True), file=sys.stderr)


def _cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        _error_json(str(exc), getattr(exc, "key", None))
        return 2
    if args.out:
        cfg.out_dir = args.out
    if args.seed is not None:
        cfg.seed = args.seed
    if args.no_plots:
        cfg.plots = False
    if args.threads is not None:
        os.environ["ORTHOFLUX_THREADS"] = str(args.threads)

    from .experiments import run_experiment

    try:
        result = run_experiment(cfg)
    except (ValueError, KeyError) as exc:
        _error_json(str(exc))
        return 2
    for name, value, tol, ok in result["checks"]:
        status = "PASS" if ok else "FAIL"
        print(f"{status}  {name}: {value} (tolerance {tol})")
    print(f"artifacts: {result['out_dir']}")
    return 0 if result["passed"] else 1


def _cmd_list_models(_args) -> int:
    for name in sorted(MODEL_REGISTRY):
        entry = MODEL_REGISTRY[name]
        params = ", ".join(f"{k}={v}" for k, v in entry["params"].items())
        print(f"{name}\n    {entry['doc']}\n    parameters: {params}")
    return 0


def _cmd_describe(args) -> int:
    kind = args.kind
    if kind not in EXPERIMENT_KINDS:
        _error_json(f"unknown experiment kind {kind!r}; known: "
                    f"{sorted(EXPERIMENT_KINDS)}", key="kind")
        return 2
    print(f"{kind}: {EXPERIMENT_KINDS[kind]}")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="orthoflux",
        description="Experiments on diffusions with orthogonal conservative currents.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run an experiment from a config file")
    p_run.add_argument("config", help="path to the config file")
    p_run.add_argument("--out", help="output directory (overrides [output] dir)")
    p_run.add_argument("--seed", type=int, help="seed override")
    p_run.add_argument("--threads", type=int,
                       default=None, help="worker threads (default: "
                       "ORTHOFLUX_THREADS or 1)")
    p_run.add_argument("--no-plots", action="store_true",
                       help="skip figure rendering")
    p_run.set_defaults(fn=_cmd_run)

    p_list = sub.add_parser("list-models", help="list the model zoo")
    p_list.set_defaults(fn=_cmd_list_models)

    p_desc = sub.add_parser("describe-experiment",
                            help="describe an experiment kind")
    p_desc.add_argument("kind")
    p_desc.set_defaults(fn=_cmd_describe)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
