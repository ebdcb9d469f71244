import argparse
import logging
import sys
from collections.abc import Sequence
from pathlib import Path

from app.core.config import LoggingConfig, RunConfig, load_run_config
from app.core.log_helper import configure_logging
from app.errors.exception_handlers import handle_cli_errors
from app.errors.exceptions import ExitCode
from app.schemas.experiment import CellSummary, TrialResult
from app.service import harness_service, instance_io, verify_service
from app.utils.rng import SEED_BOUND, derive_seed, instance_rng

log = logging.getLogger(__name__)

DEFAULT_OUT = Path("results")


def _seed(raw: str) -> int:
    value = int(raw, 0)
    if not 0 <= value < SEED_BOUND:
        msg = f"seed must be an unsigned 64-bit integer, got {raw}"
        raise argparse.ArgumentTypeError(msg)
    return value


def _jobs(raw: str) -> int:
    value = int(raw)
    if value < 1:
        msg = f"--jobs must be at least 1, got {raw}"
        raise argparse.ArgumentTypeError(msg)
    return value


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gbf-hvmp",
        description="Bilinear recovery by hybrid vector message passing: experiments and oracle checks.",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="dotted-key config file (key = value per line)")
    common.add_argument(
        "--set",
        dest="overrides",
        action="append",
        default=[],
        metavar="KEY=VALUE",
        help="override one config key; repeatable",
    )
    common.add_argument("--out", type=Path, default=DEFAULT_OUT, help="output directory (default: %(default)s)")
    common.add_argument("--seed", type=_seed, help="master seed override")
    common.add_argument("--jobs", type=_jobs, help="worker cap (default: every core)")

    commands = parser.add_subparsers(dest="command", required=True)
    run = commands.add_parser("run", parents=[common], help="seeded trials of one configuration")
    run.add_argument("--instance", type=Path, help="run against a stored instance bundle")
    sweep = commands.add_parser("sweep", parents=[common], help="NMSE phase transition over the (rho, K) grid")
    sweep.add_argument("--resume", action="store_true", help="skip cells already complete in the output CSV")
    commands.add_parser("bench", parents=[common], help="wall time to reach the NMSE target versus K")
    verify = commands.add_parser("verify", parents=[common], help="run the oracle suites")
    verify.add_argument("--suite", action="append", choices=list(verify_service.SUITES), help="run only this suite")
    commands.add_parser("gen", parents=[common], help="write one synthetic instance bundle")
    return parser


def _load(args: argparse.Namespace) -> RunConfig:
    cfg = load_run_config(args.config, args.overrides, args.seed)
    configure_logging(cfg.logging)
    return cfg


def _exit_code(results: Sequence[TrialResult]) -> int:
    failed = sum(r.failed for r in results)
    if failed:
        log.warning("%d of %d trials failed", failed, len(results))
        return ExitCode.FAILED_TRIALS
    return ExitCode.OK


def _print_cells(cells: Sequence[CellSummary]) -> None:
    print(f"{'rho':>5} {'K':>4} {'trials':>6} {'failed':>6} {'median NMSE X':>14} {'median NMSE S':>14}")
    for c in cells:
        x = "-" if c.median_nmse_x_db is None else f"{c.median_nmse_x_db:.2f} dB"
        s = "-" if c.median_nmse_s_db is None else f"{c.median_nmse_s_db:.2f} dB"
        print(f"{c.rho:>5.2f} {c.k:>4} {c.trials:>6} {c.failed:>6} {x:>14} {s:>14}")


def cmd_run(args: argparse.Namespace) -> int:
    cfg = _load(args)
    instance = None
    if args.instance is not None:
        instance, manifest = instance_io.read_instance(args.instance)
        data = cfg.model_dump()
        data.update(l=manifest.l, k=manifest.k, t=manifest.t, n=manifest.n, snr_db=manifest.snr_db)
        data["operator"].update(kind=manifest.operator.kind, mode=manifest.operator.mode or "auto")
        cfg = RunConfig(**data)
        log.info("loaded instance %s (seed %d)", args.instance, manifest.seed)

    results = harness_service.run_trials(cfg, args.jobs or cfg.jobs, instance)
    csv_path = args.out / "trials.csv"
    harness_service.write_trials_csv(csv_path, results)
    summary = harness_service.build_summary("run", cfg, results)
    harness_service.write_summary(args.out / "summary.json", summary)
    log.info("wrote %s and %s", csv_path, args.out / "summary.json")
    _print_cells(summary.cells)
    return _exit_code(results)


def cmd_sweep(args: argparse.Namespace) -> int:
    cfg = _load(args)
    csv_path = args.out / "phase_transition.csv"
    completed: list[TrialResult] = []
    if args.resume and csv_path.exists():
        completed = harness_service.read_trials_csv(csv_path)
        log.info("resuming from %s (%d rows)", csv_path, len(completed))

    results = harness_service.phase_transition(
        cfg,
        cfg.sweep.rho_grid,
        cfg.sweep.k_grid,
        cfg.sweep.trials_per_cell,
        args.jobs or cfg.jobs,
        completed,
    )
    harness_service.write_trials_csv(csv_path, results)
    summary = harness_service.build_summary("sweep", cfg, results)
    harness_service.write_summary(args.out / "summary.json", summary)
    log.info("wrote %s and %s", csv_path, args.out / "summary.json")
    _print_cells(summary.cells)
    return _exit_code(results)


def cmd_bench(args: argparse.Namespace) -> int:
    cfg = _load(args)
    rows, results = harness_service.runtime_bench(
        cfg,
        cfg.bench.k_grid,
        cfg.bench.target_db,
        cfg.bench.trials,
        args.jobs or cfg.jobs,
    )
    harness_service.write_runtime_csv(args.out / "runtime.csv", rows)
    harness_service.write_trials_csv(args.out / "bench_trials.csv", results)
    summary = harness_service.build_summary("bench", cfg, results, rows)
    harness_service.write_summary(args.out / "summary.json", summary)
    log.info("wrote runtime table to %s", args.out / "runtime.csv")

    print(f"{'K':>4} {'reached':>9} {'median wall':>12} {'median iters':>13}")
    for row in rows:
        wall = "-" if row.median_wall_ms is None else f"{row.median_wall_ms:.1f} ms"
        iters = "-" if row.median_iters is None else f"{row.median_iters:.1f}"
        print(f"{row.k:>4} {row.reached:>4}/{row.trials:<4} {wall:>12} {iters:>13}")
    return _exit_code(results)


def cmd_verify(args: argparse.Namespace) -> int:
    cfg = _load(args)
    results = verify_service.run_suites(cfg, args.suite)
    print(verify_service.format_report(results))
    failed = [r for r in results if not r.passed]
    if failed:
        log.error("%d of %d oracle checks failed", len(failed), len(results))
        return ExitCode.VERIFY_FAILED
    return ExitCode.OK


def cmd_gen(args: argparse.Namespace) -> int:
    cfg = _load(args)
    seed = derive_seed(cfg.seed, 0, 0)
    instance = harness_service.gen_instance(cfg, instance_rng(seed), seed)
    manifest = instance_io.write_instance(instance, args.out)
    print(f"instance L={manifest.l} K={manifest.k} T={manifest.t} N={manifest.n} seed={manifest.seed} -> {args.out}")
    return ExitCode.OK


COMMANDS = {
    "run": cmd_run,
    "sweep": cmd_sweep,
    "bench": cmd_bench,
    "verify": cmd_verify,
    "gen": cmd_gen,
}


@handle_cli_errors
def dispatch(args: argparse.Namespace) -> int:
    return COMMANDS[args.command](args)


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(LoggingConfig())
    return dispatch(args)


if __name__ == "__main__":
    sys.exit(main())
