"""Command line entry point: ``nnlif <verb> --config FILE --out DIR``."""
from __future__ import annotations

import argparse
import json
import sys
import traceback
from pathlib import Path

from threadpoolctl import threadpool_limits

from . import config as conf
from .errors import ConfigError, NNLIFError
from .experiments import run_experiment

EXIT_OK = 0
EXIT_SOLVER = 1
EXIT_CONFIG = 2


def build_parser():
    parser = argparse.ArgumentParser(prog="nnlif", description="Spectral solvers for NNLIF population models.")
    verbs = parser.add_subparsers(dest="verb", required=True)
    for verb, kinds in conf.VERBS.items():
        sub = verbs.add_parser(verb, help="experiment kinds: " + ", ".join(kinds))
        sub.add_argument("--config", required=True, help="YAML experiment file")
        sub.add_argument("--out", required=True, help="output directory (created if missing)")
        sub.add_argument("--threads", type=int, default=None, help="BLAS thread limit")
        sub.add_argument("--stride", type=int, default=None, help="record every k-th step")
    ref = verbs.add_parser("reference-config", help="print the full default config of a kind")
    ref.add_argument("kind", choices=conf.KINDS)
    return parser


def _report(kind, exc, out, context):
    doc = {"error": kind, "type": type(exc).__name__, "message": str(exc), **context}
    for attr in ("path", "column"):
        if getattr(exc, attr, None) is not None:
            doc[attr] = getattr(exc, attr)
    text = json.dumps(doc, indent=1, default=str)
    print(text, file=sys.stderr)
    if out is not None:
        try:
            Path(out).mkdir(parents=True, exist_ok=True)
            (Path(out) / "error.json").write_text(text)
        except OSError:
            pass


def execute(args):
    cfg = conf.load_config(args.config)
    allowed = conf.VERBS[args.verb]
    if cfg["experiment"] not in allowed:
        raise ConfigError(f"verb {args.verb!r} runs {', '.join(allowed)}, not {cfg['experiment']!r}", "experiment")
    if args.stride is not None and args.stride < 1:
        raise ConfigError("--stride must be >= 1", "--stride")
    if args.threads is not None and args.threads < 1:
        raise ConfigError("--threads must be >= 1", "--threads")
    with threadpool_limits(limits=args.threads):
        return run_experiment(cfg, args.out, stride=args.stride)


def main(argv=None):
    args = build_parser().parse_args(argv)
    if args.verb == "reference-config":
        sys.stdout.write(conf.reference_config(args.kind))
        return EXIT_OK
    context = {"verb": args.verb, "config": args.config}
    try:
        doc = execute(args)
    except ConfigError as exc:
        _report("config", exc, args.out, context)
        return EXIT_CONFIG
    except (NNLIFError, ArithmeticError, ValueError) as exc:
        context["traceback"] = traceback.format_exc(limit=3)
        _report("solver", exc, args.out, context)
        return EXIT_SOLVER
    print(json.dumps({"experiment": doc["experiment"], "out": str(args.out)}))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
