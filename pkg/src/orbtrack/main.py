import argparse
import logging
import sys
from typing import Optional, Sequence

from orbtrack.core.config import Settings
from orbtrack.core.logging import setup_logging
from orbtrack.models.schemas import ScenarioConfig, StudyKind, TrackerKind


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="orbtrack", description="Hybrid UKF/particle-filter orbit tracking experiments."
    )
    commands = parser.add_subparsers(dest="command", required=True)

    def scenario_options(sub: argparse.ArgumentParser) -> None:
        sub.add_argument("--scenario", default="case1", help="Preset name or path to a scenario JSON file.")
        sub.add_argument("--seed", type=int, default=None, help="Master seed.")
        sub.add_argument("--out", default=None, help="Output directory (defaults to OUTPUT_DIR).")

    run = commands.add_parser("run", help="Run a Monte Carlo tracking batch.")
    scenario_options(run)
    run.add_argument("--runs", type=int, default=None)
    run.add_argument("--duration", type=float, default=None, help="Simulated seconds per run.")
    run.add_argument("--particles", type=int, default=None)
    run.add_argument("--tracker", choices=[k.value for k in TrackerKind], default=None)
    run.add_argument("--snapshots", action="store_true", help="Write ensembles around each resampling.")

    study = commands.add_parser("study", help="Run the propagation or depletion study.")
    scenario_options(study)
    study.add_argument("--kind", choices=[k.value for k in StudyKind], required=True)
    study.add_argument("--samples", type=int, default=None, help="Monte Carlo samples per depletion case.")
    study.add_argument("--snapshots", action="store_true", help="Write the propagated clouds as well.")

    pcrb = commands.add_parser("pcrb", help="Write the posterior Cramer-Rao bound series.")
    scenario_options(pcrb)
    pcrb.add_argument("--duration", type=float, default=None)
    pcrb.add_argument("--draws", type=int, default=None, help="Truth draws per expectation.")

    serve = commands.add_parser("serve", help="Start the HTTP API.")
    serve.add_argument("--host", default=None)
    serve.add_argument("--port", type=int, default=None)
    return parser


def _scenario(args: argparse.Namespace, settings: Settings, **overrides: object) -> ScenarioConfig:
    from orbtrack.services.scenarios import PRESETS, load_scenario, with_overrides

    config = load_scenario(args.scenario)
    seed = args.seed
    if seed is None and args.scenario in PRESETS:
        seed = settings.DEFAULT_SEED
    return with_overrides(config, master_seed=seed, **overrides)


def _serve(args: argparse.Namespace, settings: Settings) -> int:
    import uvicorn

    from orbtrack.app import app

    host = args.host or settings.API_HOST
    port = args.port or settings.API_PORT
    logging.getLogger(__name__).info("API Server listening on http://%s:%s", host, port)
    uvicorn.run(app, host=host, port=port, log_level=settings.LOG_LEVEL.lower(), access_log=True)
    return 0


def dispatch(args: argparse.Namespace, settings: Settings) -> int:
    from orbtrack.dependencies.container import build_container

    logger = logging.getLogger(__name__)
    if args.command == "serve":
        return _serve(args, settings)

    runner = build_container(settings).runner
    if args.command == "run":
        config = _scenario(
            args,
            settings,
            runs=args.runs,
            duration=args.duration,
            particle_count=args.particles,
            tracker=args.tracker,
        )
        outcome = runner.run_batch(config, args.out, snapshots=args.snapshots)
        logger.info("Outputs written to %s", outcome.output_dir)
        if outcome.exit_status:
            logger.error("Every run in the batch failed.")
        return outcome.exit_status
    if args.command == "study":
        config = _scenario(args, settings)
        path = runner.run_study(
            StudyKind(args.kind), config, args.out, snapshots=args.snapshots, samples=args.samples
        )
        logger.info("Study written to %s", path)
        return 0
    if args.command == "pcrb":
        config = _scenario(args, settings, duration=args.duration, pcrb_draws=args.draws)
        logger.info("PCRB written to %s", runner.run_pcrb(config, args.out))
        return 0
    raise ValueError(f"Unknown command '{args.command}'.")


def main(argv: Optional[Sequence[str]] = None) -> None:
    args = build_parser().parse_args(argv)
    try:
        settings = Settings()
        setup_logging(settings.LOG_LEVEL, settings.LOG_FILE)
        logger = logging.getLogger(__name__)
        logger.info("Starting orbtrack %s...", args.command)
        status = dispatch(args, settings)
    except ValueError as exc:
        logging.getLogger(__name__).error("Configuration Error: %s", str(exc))
        sys.exit(1)
    except KeyboardInterrupt:
        logging.getLogger(__name__).info("Shutting down gracefully...")
        return
    except Exception as exc:
        logging.getLogger(__name__).critical("orbtrack failed: %s", str(exc))
        sys.exit(1)
    if status:
        sys.exit(status)


if __name__ == "__main__":
    main()
