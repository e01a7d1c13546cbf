"""Command-line interface for collusion-lab."""

import argparse
import asyncio
import json
import logging
import os
import sys
import time
from dataclasses import replace
from pathlib import Path
from typing import Any, Sequence

import pandas as pd
from dotenv import load_dotenv

from collusion_lab.config import ConfigError, LabConfig, load_config
from collusion_lab.equilibrium import cournot_nash_quantities, foc_residuals, nash_prices
from collusion_lab.errors import ResourceLimitError, SolverError, UnsupportedParametersError
from collusion_lab.harness import (
    ExperimentConfig,
    RunRecord,
    average_price_series,
    cost_sweep,
    run_experiment,
    trajectory_frame,
)
from collusion_lab.mechanism import MechanismConfig, Variant
from collusion_lab.output import EventBus, OutputEvent, OutputEventType
from collusion_lab.output.plugins import CallbackPlugin, ConsolePlugin, JsonLogPlugin, finding_record
from collusion_lab.storage import ResultStore, RunManifest
from collusion_lab.verifier import StrategyFamily, verify_direct_theorem, verify_platform_theorem

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_NO_USABLE = 3
EXIT_RESOURCE = 4
EXIT_CERTIFICATE_FAILED = 5

DEFAULT_OUT = "results"
TRAINED_AGENTS_DIR = "agents_phase2"
OUT_ENV = "COLLUSION_LAB_OUT"


class UsageError(ValueError):
    """Bad command-line arguments."""


def _output_dir(args: argparse.Namespace) -> Path:
    out = Path(os.getenv(OUT_ENV) or args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, data: dict[str, Any]) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def experiment_config(lab: LabConfig, args: argparse.Namespace) -> ExperimentConfig:
    """Experiment settings from the file, with command-line overrides applied."""
    config = lab.experiment_config()
    changes: dict[str, Any] = {}
    if args.seeds is not None:
        changes["n_simulations"] = args.seeds
    if args.base_seed is not None:
        changes["base_seed"] = args.base_seed
    if changes:
        config = replace(config, **changes)
    variant = Variant(args.variant) if args.variant else config.mechanism.variant
    estimate = getattr(args, "cost_estimate", None)
    if args.variant or estimate is not None:
        cost_estimate = None
        if variant is Variant.SIMPLIFIED_AI:
            cost_estimate = (
                (estimate,) * config.market.n_sellers
                if estimate is not None
                else config.mechanism.cost_estimate or config.market.c
            )
        elif estimate is not None:
            raise UsageError("--cost-estimate only applies to the simplified_ai variant")
        mechanism = MechanismConfig(
            variant=variant,
            activation_period=config.mechanism.activation_period,
            cost_estimate=cost_estimate,
        )
        config = replace(config, mechanism=mechanism)
    return config


def _make_bus(out: Path, quiet: bool = False) -> tuple[EventBus, list[OutputEvent]]:
    """Console (unless quiet), events.jsonl, and a recorder of findings for the manifest."""
    bus = EventBus()
    if not quiet:
        bus.register(ConsolePlugin())
    bus.register(JsonLogPlugin(str(out / "events.jsonl")))
    recorder, findings = CallbackPlugin.recorder("findings")
    bus.register(recorder)
    return bus, findings


async def _persist(
    out: Path, label: str, records: list[RunRecord], summary: dict[str, Any]
) -> list[Path]:
    """Write records through the store, then the CSV/JSON views of them."""
    store = ResultStore(str(out / "results.db"))
    await store.initialize()
    try:
        for record in sorted(records, key=lambda r: r.sim_id):
            await store.save_record(label, record)
        await store.save_summary(label, summary)
    finally:
        await store.close()

    trajectories = out / "trajectories.csv"
    trajectory_frame(records).to_csv(trajectories, index=False, encoding="utf-8")
    summary_path = out / "summary.json"
    _write_json(summary_path, summary)
    return [out / "results.db", trajectories, summary_path]


def _manifest(
    out: Path,
    command: str,
    lab: LabConfig,
    config: ExperimentConfig | None,
    outputs: list[Path],
    started: float,
    findings: Sequence[OutputEvent] = (),
) -> None:
    manifest = RunManifest(
        command=command,
        config=lab.model_dump(mode="json"),
        base_seed=config.base_seed if config else 0,
        sim_ids=list(range(config.n_simulations)) if config else [],
        outputs=[str(p) for p in outputs],
        timings={"wall_seconds": round(time.monotonic() - started, 3)},
        findings=[finding_record(e) for e in findings],
    )
    _write_json(out / "manifest.json", manifest.to_dict())


# Commands


def cmd_nash(lab: LabConfig, args: argparse.Namespace) -> int:
    params = lab.market_params()
    solution = nash_prices(params)
    residuals = foc_residuals(solution.prices, params)
    print("Logit Bertrand Nash prices: " + ", ".join(f"{p:.4f}" for p in solution.prices))
    print(f"  max FOC residual: {max(abs(r) for r in residuals):.2e} ({solution.iterations} iterations)")
    try:
        quantities = cournot_nash_quantities(lab.cournot_params())
        print("Cournot Nash quantities: " + ", ".join(f"{q:.4f}" for q in quantities))
    except UnsupportedParametersError as e:
        print(f"Cournot Nash quantities: unavailable ({e})")
    return EXIT_OK


async def cmd_simulate(lab: LabConfig, args: argparse.Namespace, command: str = "simulate") -> int:
    started = time.monotonic()
    config = experiment_config(lab, args)
    phases = args.phase
    out = _output_dir(args)
    agents_dir = out / "agents"
    bus, findings = _make_bus(out, quiet=args.quiet)
    await bus.start()
    try:
        await bus.publish(
            OutputEventType.SYSTEM,
            "system",
            f"{command}: {config.n_simulations} simulation(s), phase {phases}, "
            f"variant {config.mechanism.variant.value}",
        )
        result = await run_experiment(
            config,
            bus=bus,
            threads=args.threads,
            phases=phases,
            resume_from=agents_dir if phases == "2" else None,
        )
    finally:
        await bus.stop()

    outputs: list[Path] = []
    if command == "train" or phases != "all":
        if phases in ("1", "all"):
            for sim_id, agents in sorted(result.agents.items()):
                outputs += agents.save(agents_dir, sim_id)
        for sim_id, agents in sorted(result.trained.items()):
            outputs += agents.save(out / TRAINED_AGENTS_DIR, sim_id)
    if phases != "1":
        outputs += await _persist(out, "baseline", result.records, result.summary.to_dict())
    _manifest(out, command, lab, config, outputs, started, findings)

    if phases == "1":
        converged = sum(r.converged for r in result.records)
        print(f"Phase 1: {converged}/{len(result.records)} simulation(s) converged")
        return EXIT_OK if converged else EXIT_NO_USABLE
    summary = result.summary.to_dict()
    if result.summary.status == "empty":
        print("No usable simulation: every run failed to converge or cycled", file=sys.stderr)
        return EXIT_NO_USABLE
    print(
        f"avg price pre {summary['avg_pre']:.4f} post {summary['avg_post']:.4f}; "
        f"markup pre {summary['markup_pre']:.2%} post {summary['markup_post']:.2%}; "
        f"improvement {summary['improvement_pct']}; "
        f"{summary['n_included']}/{summary['n_total']} included"
    )
    return EXIT_OK


async def cmd_train(lab: LabConfig, args: argparse.Namespace) -> int:
    return await cmd_simulate(lab, args, command="train")


async def cmd_sweep(lab: LabConfig, args: argparse.Namespace) -> int:
    started = time.monotonic()
    config = experiment_config(lab, replace_namespace(args, cost_estimate=None))
    estimates = [args.cost_estimate] if args.cost_estimate is not None else lab.sweep.estimates
    out = _output_dir(args)
    bus, findings = _make_bus(out, quiet=args.quiet)
    await bus.start()
    try:
        rows = await cost_sweep(config, estimates, bus=bus, threads=args.threads)
    finally:
        await bus.stop()
    path = out / "sweep.csv"
    columns = ["cost", "n_sims", "n_no_cycle", "markup", "markup_2spdr", "improvement_pct"]
    pd.DataFrame([r.to_dict() for r in rows], columns=columns).to_csv(
        path, index=False, encoding="utf-8"
    )
    _manifest(out, "sweep", lab, config, [path], started, findings)
    if rows and all(r.n_no_cycle == 0 for r in rows):
        return EXIT_NO_USABLE
    return EXIT_OK


def replace_namespace(args: argparse.Namespace, **changes: Any) -> argparse.Namespace:
    return argparse.Namespace(**{**vars(args), **changes})


async def cmd_verify(lab: LabConfig, args: argparse.Namespace) -> int:
    started = time.monotonic()
    out = _output_dir(args)
    v = lab.verifier
    variant = Variant(args.variant or v.variant)
    workers = args.threads if args.threads > 1 else v.workers
    outputs = []
    bus, findings = _make_bus(out, quiet=args.quiet)
    await bus.start()
    ok = True
    try:
        if args.kind in ("platform", "both"):
            grid = lab.price_grid()
            params = lab.market_params()
            family = StrategyFamily(grid.m, params.n_sellers, v.t_max)
            certificate = await asyncio.to_thread(
                verify_platform_theorem, grid, params, family,
                variant=variant,
                cost_estimate=lab.mechanism.cost_estimate,
                max_strategies=v.max_strategies,
                deltas=v.deltas,
                workers=workers,
            )
            path = out / "certificate_platform.json"
            _write_json(path, certificate.to_dict())
            outputs.append(path)
            ok &= certificate.ok
            await bus.publish(
                OutputEventType.CERTIFICATE,
                "verifier",
                f"platform ({variant.value}): survivors {certificate.survivors}, "
                f"grid-nearest Nash {certificate.nash_profile}, ok={certificate.ok}",
                path=str(path),
            )
        if args.kind in ("direct", "both"):
            qgrid = lab.quantity_grid()
            params = lab.cournot_params()
            family = StrategyFamily(len(qgrid), params.n_sellers, v.t_max)
            certificate = await asyncio.to_thread(
                verify_direct_theorem, qgrid, params, family,
                max_strategies=v.max_strategies,
                deltas=v.deltas,
                workers=workers,
            )
            path = out / "certificate_direct.json"
            _write_json(path, certificate.to_dict())
            outputs.append(path)
            ok &= certificate.ok
            await bus.publish(
                OutputEventType.CERTIFICATE,
                "verifier",
                f"direct: survivors {certificate.survivors}, "
                f"Nash {certificate.nash_profile}, ok={certificate.ok}",
                path=str(path),
            )
    except Exception as e:
        await bus.report_error("verifier", e)
        raise
    finally:
        await bus.stop()
        _manifest(out, "verify", lab, None, outputs, started, findings)
    if not ok:
        print("A certificate failed; see the witnesses in the certificate files", file=sys.stderr)
        return EXIT_CERTIFICATE_FAILED
    return EXIT_OK


def cmd_report(lab: LabConfig, args: argparse.Namespace) -> int:
    out = _output_dir(args)
    trajectories_path = out / "trajectories.csv"
    if not trajectories_path.is_file():
        raise UsageError(f"No trajectories in {out}; run 'simulate' first")
    trajectories = pd.read_csv(trajectories_path, encoding="utf-8")
    sim_ids = None
    summary_path = out / "summary.json"
    if summary_path.is_file():
        sim_ids = json.loads(summary_path.read_text(encoding="utf-8")).get("included_sim_ids")
    series = average_price_series(trajectories, sim_ids)
    path = out / "price_series.csv"
    series.to_csv(path, index=False, encoding="utf-8")
    activation = lab.mechanism.activation_period
    before = series[series["period"] < activation]
    after = series[series["period"] >= activation]
    if not before.empty and not after.empty:
        print(
            f"mean price before period {activation}: "
            f"{before[['price_1', 'price_2']].to_numpy().mean():.4f}; "
            f"final: {after[['price_1', 'price_2']].iloc[-1].mean():.4f}"
        )
    print(f"Wrote {path}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="collusion-lab",
        description="Q-learning pricing agents and two-stage price drop rules",
    )
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", default=None, help="YAML configuration file")
    common.add_argument("--out", default=DEFAULT_OUT, help=f"Output directory (env {OUT_ENV} overrides)")
    common.add_argument("--seeds", type=int, default=None, help="Number of simulations")
    common.add_argument("--base-seed", type=int, default=None, help="Base seed")
    common.add_argument("--threads", type=int, default=1, help="Concurrent simulations / workers")
    common.add_argument(
        "--variant",
        choices=[v.value for v in Variant],
        default=None,
        help="Rule variant",
    )
    common.add_argument(
        "--phase",
        choices=["1", "2", "all"],
        default="all",
        help="Training phases to run (train and simulate); 2 resumes from <out>/agents",
    )
    common.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    common.add_argument("-q", "--quiet", action="store_true", help="No console events")

    subparsers = parser.add_subparsers(dest="command", required=True)
    subparsers.add_parser("nash", parents=[common], help="Print static Nash prices and quantities")

    train = subparsers.add_parser("train", parents=[common], help="Train agents and save snapshots")
    train.add_argument("--cost-estimate", type=float, default=None)

    simulate = subparsers.add_parser("simulate", parents=[common], help="Train, run the rule, evaluate")
    simulate.add_argument("--cost-estimate", type=float, default=None)

    sweep = subparsers.add_parser("sweep", parents=[common], help="Cost-misspecification sweep")
    sweep.add_argument("--cost-estimate", type=float, default=None, help="Single estimate")

    verify = subparsers.add_parser("verify", parents=[common], help="Brute-force equilibrium checks")
    verify.add_argument("--kind", choices=["platform", "direct", "both"], default="both")

    subparsers.add_parser("report", parents=[common], help="Average price series from trajectories")
    return parser


COMMANDS = {
    "nash": cmd_nash,
    "train": cmd_train,
    "simulate": cmd_simulate,
    "sweep": cmd_sweep,
    "verify": cmd_verify,
    "report": cmd_report,
}
PHASED_COMMANDS = ("train", "simulate")


def run(argv: list[str] | None = None) -> int:
    """Parse ``argv`` and run a command; returns the exit code."""
    load_dotenv()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    if args.threads < 1:
        print("Error: --threads must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    if args.seeds is not None and args.seeds < 1:
        print("Error: --seeds must be >= 1", file=sys.stderr)
        return EXIT_CONFIG
    if args.phase != "all" and args.command not in PHASED_COMMANDS:
        print(f"Error: --phase does not apply to {args.command}", file=sys.stderr)
        return EXIT_CONFIG

    command = COMMANDS[args.command]
    try:
        lab = load_config(args.config)
        result = command(lab, args)
        if asyncio.iscoroutine(result):
            result = asyncio.run(result)
        return result
    except (ConfigError, UsageError, UnsupportedParametersError) as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except ResourceLimitError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_RESOURCE
    except SolverError as e:
        logger.error("Solver failed: %s", e)
        return EXIT_UNEXPECTED
    except ValueError as e:
        print(f"Error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except KeyboardInterrupt:
        print("\nInterrupted; partial outputs kept.", file=sys.stderr)
        return EXIT_UNEXPECTED
    except Exception:
        logger.exception("Unexpected error")
        return EXIT_UNEXPECTED


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
