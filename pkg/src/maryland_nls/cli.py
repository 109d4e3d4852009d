"""Command line entry point.

Verbs: spectrum | separation | solve | ldt | report.  Exit codes: 0 success,
2 config or artifact input error, 3 convergence failure, 4 invariant
violation.  On failure a machine-readable ``failure.json`` is written to
the output directory and echoed on stderr.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from threadpoolctl import threadpool_limits

from .config import ExperimentConfig
from .exceptions import (ConfigError, CorruptArtifact, DidNotConverge, MarylandError,
                         MissingArtifacts)
from .io import SCHEMA_VERSION, dumps, write_json
from .pipelines import PIPELINES, run_report

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_CONVERGENCE = 3
EXIT_INVARIANT = 4

log = logging.getLogger("maryland_nls")


def _seed(text):
    value = int(text, 0)
    if not 0 <= value < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must lie in [0, 2^64)")
    return value


def build_parser():
    parser = argparse.ArgumentParser(
        prog="maryland-nls",
        description="Quasi-periodic solutions of the nonlinear Maryland lattice model.")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("spectrum", "eigensystem, E(theta) profile and symmetry checks"),
                       ("separation", "eigenvalue separation and Melnikov predicates"),
                       ("solve", "multiscale Newton solve"),
                       ("ldt", "large-deviation probes of the linearized operator")):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", required=True, type=Path, help="YAML config file")
        p.add_argument("--seed", type=_seed, default=None, help="override the config seed")
        p.add_argument("--out", type=Path, default=None, help="output directory")
        p.add_argument("--threads", type=int, default=None, help="BLAS thread limit")
    p = sub.add_parser("report", help="summarize a run directory")
    p.add_argument("run_dir", type=Path)
    p.add_argument("--out", type=Path, default=None, help="where to write report.md")
    p.add_argument("--threads", type=int, default=None, help=argparse.SUPPRESS)
    return parser


def _fail(out, command, exc, code, **extra):
    doc = {"schema_version": SCHEMA_VERSION, "kind": "failure", "command": command, "exit_code": code,
           "error": type(exc).__name__, "message": str(exc), **extra}
    if isinstance(exc, ConfigError):
        doc["config_error_code"] = exc.code
    if out is not None:
        try:
            out.mkdir(parents=True, exist_ok=True)
            write_json(doc, out / "failure.json")
        except OSError:
            pass
    sys.stderr.write(dumps(doc))
    return code


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    limits = threadpool_limits(args.threads) if args.threads else None
    try:
        if args.command == "report":
            try:
                res = run_report(args.run_dir, args.out)
            except (MissingArtifacts, CorruptArtifact) as exc:
                return _fail(None, "report", exc, EXIT_CONFIG)
            print(res["paths"]["report"])
            return EXIT_OK
        out = args.out
        try:
            cfg = ExperimentConfig.from_file(args.config, args.seed)
        except ConfigError as exc:
            return _fail(out, args.command, exc, EXIT_CONFIG)
        if out is None:
            out = Path(cfg.section("output")["directory"])
        out.mkdir(parents=True, exist_ok=True)
        try:
            res = PIPELINES[args.command](cfg, out)
        except DidNotConverge as exc:
            return _fail(out, args.command, exc, EXIT_CONVERGENCE, history=exc.history)
        except MarylandError as exc:
            return _fail(out, args.command, exc, EXIT_INVARIANT)
        broken = sorted(k for k, v in res["invariants"].items() if not v["holds"])
        if broken:
            err = MarylandError("hard invariants violated: " + ", ".join(broken))
            return _fail(out, args.command, err, EXIT_INVARIANT,
                         invariants={k: res["invariants"][k] for k in broken})
        soft = sorted(k for k, v in res["predicates"].items()
                      if (v.get("holds") if isinstance(v, dict) else v) is False)
        for k in soft:
            log.warning("predicate %s failed", k)
        for path in res["paths"].values():
            print(path)
        return EXIT_OK
    finally:
        if limits is not None:
            limits.unregister()


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
