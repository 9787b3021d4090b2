"""Command-line entry point.

Exit codes: 0 success, 1 validation, 2 runtime, 3 inconclusive readout.
``falsify`` additionally returns 4 for a nonlocal verdict and ``causality``
returns 4 when the schedule leaves the locality loophole open.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import causality
from .behavior import BehaviorTable
from .errors import BellCavError, InconclusiveReadout, LPSolverError, StageError, ValidationError
from .lhv import ApparatusModel, apparatus_behavior_direct, behavior_from_lhv, model_from_dict, model_to_dict, reduce_apparatus_model
from .orchestrator import ExperimentConfig, emit_report, load_config, run_experiment
from .polytope import all_strategies, enumerate_deterministic_vertices, local_membership

EXIT_OK = 0
EXIT_VALIDATION = 1
EXIT_RUNTIME = 2
EXIT_INCONCLUSIVE = 3
EXIT_NEGATIVE = 4

log = logging.getLogger("bellcav")


def _read_json(path: str):
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ValidationError(f"{path}: invalid JSON ({exc})") from None


def cmd_run(args: argparse.Namespace) -> int:
    config = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if args.trials is not None:
        overrides["trials"] = args.trials
    if args.seed is not None:
        overrides["master_seed"] = args.seed
    if args.noise is not None:
        overrides["relay_noise"] = args.noise
    if overrides:
        config = dataclasses.replace(config, **overrides)
    out = args.out or config.output_dir or "runs/latest"
    report = run_experiment(config, workers=args.workers, out_dir=out, export_trajectories=args.export_trajectories)
    sys.stdout.write(emit_report(report, "text", include_timing=True))
    log.info("outputs written to %s", out)
    return EXIT_OK


def cmd_falsify(args: argparse.Namespace) -> int:
    data = _read_json(args.behavior)
    table = data["behavior"] if isinstance(data, dict) and "behavior" in data else data
    cert = local_membership(BehaviorTable.from_list(table), tol=args.tol)
    sys.stdout.write(json.dumps(cert.to_dict(), indent=2) + "\n")
    return EXIT_OK if cert.is_local else EXIT_NEGATIVE


def cmd_causality(args: argparse.Namespace) -> int:
    data = _read_json(args.schedule)
    records = data["events"] if isinstance(data, dict) else data
    verdict = causality.audit_schedule(causality.schedule_from_records(records), args.mode, args.c)
    sys.stdout.write(json.dumps(verdict.to_dict(), indent=2) + "\n")
    return EXIT_OK if verdict.loophole_free else EXIT_NEGATIVE


def cmd_vertices(args: argparse.Namespace) -> int:
    payload = [
        {"strategy": s.label(), "alice_map": list(s.alice_map), "bob_map": list(s.bob_map), "behavior": v.to_list()}
        for s, v in zip(all_strategies(), enumerate_deterministic_vertices())
    ]
    text = json.dumps(payload, indent=1) + "\n"
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_reduce(args: argparse.Namespace) -> int:
    model = model_from_dict(_read_json(args.model))
    if not isinstance(model, ApparatusModel):
        raise ValidationError("reduce expects an apparatus model (with alice_kernels and bob_kernels)")
    reduced = reduce_apparatus_model(model)
    direct = apparatus_behavior_direct(model)
    folded = behavior_from_lhv(reduced)
    out = {
        "reduced_model": model_to_dict(reduced),
        "direct_behavior": direct.to_list(),
        "reduced_behavior": folded.to_list(),
        "max_abs_difference": direct.max_abs_diff(folded),
    }
    sys.stdout.write(json.dumps(out, indent=2) + "\n")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bellcav", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="simulate the Bell -> Cavendish relay and write ledger and report")
    p.add_argument("--config", help="JSON experiment config (defaults are built in)")
    p.add_argument("--trials", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--noise", type=float, help="relay bit-flip probability")
    p.add_argument("--out", help="output directory")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--export-trajectories", action="store_true", help="write (t, theta, omega) CSVs")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("falsify", help="local-polytope membership certificate for a behavior table")
    p.add_argument("--behavior", required=True, help="JSON file holding p[a][b][x][y]")
    p.add_argument("--tol", type=float, default=1e-7)
    p.set_defaults(func=cmd_falsify)

    p = sub.add_parser("causality", help="light-cone audit of a protocol schedule")
    p.add_argument("--schedule", required=True, help="JSON list of events")
    p.add_argument("--mode", choices=causality.MODES, default=causality.STRICT)
    p.add_argument("--c", type=float, default=causality.SPEED_OF_LIGHT)
    p.set_defaults(func=cmd_causality)

    p = sub.add_parser("vertices", help="write the 16 deterministic behaviors")
    p.add_argument("--out")
    p.set_defaults(func=cmd_vertices)

    p = sub.add_parser("reduce", help="fold kernels of an apparatus model into its responses")
    p.add_argument("--model", required=True)
    p.set_defaults(func=cmd_reduce)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if isinstance(exc.cause, InconclusiveReadout):
            return EXIT_INCONCLUSIVE
        if isinstance(exc.cause, ValidationError):
            return EXIT_VALIDATION
        return EXIT_RUNTIME
    except InconclusiveReadout as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INCONCLUSIVE
    except (ValidationError, KeyError) as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except (LPSolverError, BellCavError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    raise SystemExit(main())
