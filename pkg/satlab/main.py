"""
satlab command-line interface.

    python -m satlab.main train --preset label_recovery --mode erm --trials 3
    python -m satlab.main train --preset label_recovery --resume   (after an interruption)
    python -m satlab.main sweep --preset double_descent --axis width --values 4,8,16,32,64
    python -m satlab.main corrupt --set corruption.rate=0.4 --out pool.satd
    python -m satlab.main recover-report --targets runs/run/trial_0/targets.satt --data pool.satd

Exit codes: 0 ok, 1 invalid configuration or input, 2 training diverged.
"""

import argparse
import json
import logging
import logging.handlers
import sys
from dataclasses import asdict
from pathlib import Path
from typing import Optional

from satlab import __version__
from satlab.config import settings
from satlab.config.experiment import ExperimentConfig, parse_overrides, resolve_config
from satlab.errors import ConfigError, DatasetFormatError, DivergenceError, InvalidInputError
from satlab.modules import harness
from satlab.modules.adversarial import clean_accuracy, robust_accuracy
from satlab.modules.datasets import load_snapshot, save_snapshot
from satlab.modules.metrics import recovery_report
from satlab.modules.numeric import ModelState
from satlab.modules.selective import risk_coverage
from satlab.modules.targets import TargetStore

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DIVERGED = 2


def configure_logging() -> None:
    """Log to stdout and a rotating file under the output root."""
    handlers: list[logging.Handler] = [logging.StreamHandler(sys.stdout)]
    try:
        root = settings.create_output_root()
        handlers.append(
            logging.handlers.RotatingFileHandler(
                root / settings.LOG_FILE,
                maxBytes=settings.LOG_MAX_BYTES,
                backupCount=settings.LOG_BACKUP_COUNT,
            )
        )
    except OSError as e:
        print(f"Cannot open log file under {settings.SATLAB_OUTPUT_ROOT}: {e}", file=sys.stderr)
    logging.basicConfig(
        level=getattr(logging, settings.LOG_LEVEL.upper(), logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        handlers=handlers,
    )


def _add_experiment_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--preset", type=str, default=None,
                        help="Named preset from presets/ (default: SATLAB_PRESET)")
    parser.add_argument("--config", type=str, default=None,
                        help="key=value config file, or the summary.json of an earlier run")
    parser.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="Override one configuration key (repeatable)")
    parser.add_argument("--mode", type=str, default=None, help="Training mode (run.mode)")
    parser.add_argument("--epochs", type=int, default=None, help="run.epochs")
    parser.add_argument("--seed", type=int, default=None, help="run.seed")
    parser.add_argument("--trials", type=int, default=None, help="run.trials")
    parser.add_argument("--name", type=str, default=None, help="run.name (run directory)")
    parser.add_argument("--output-dir", type=str, default=None,
                        help="run.output_dir (default: SATLAB_OUTPUT_ROOT)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="satlab",
        description="Self-adaptive training experiments on corrupted data",
    )
    parser.add_argument("--version", action="version", version=f"satlab {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("corrupt", help="Write the corrupted train+val pool as a SATD snapshot")
    _add_experiment_args(p)
    p.add_argument("--out", type=str, required=True, help="Snapshot path to write")

    for name, text in (
        ("train", "Train with the configured mode"),
        ("selective", "Train a selective classifier and write its risk-coverage table"),
        ("adversarial", "Adversarial training with robust evaluation (default mode trades_sat)"),
    ):
        p = sub.add_parser(name, help=text)
        _add_experiment_args(p)
        p.add_argument("--resume", action="store_true",
                       help="Continue trials from the checkpoints of an interrupted run with this config")

    p = sub.add_parser("sweep", help="One run per value of a config axis plus sweep.csv")
    _add_experiment_args(p)
    p.add_argument("--axis", type=str, default=None,
                   help="noise_rate, noise_scheme, width, alpha or start_epoch")
    p.add_argument("--values", type=str, default=None, help="Comma-separated axis values")
    p.add_argument("--workers", type=int, default=None, help="Parallel grid points (SWEEP_WORKERS)")

    p = sub.add_parser("eval", help="Score a saved model")
    _add_experiment_args(p)
    p.add_argument("--model", type=str, required=True, help="model.npz from a run")
    p.add_argument("--data", type=str, default=None,
                   help="SATD snapshot to score (default: the configured test set)")
    p.add_argument("--robust", action="store_true", help="Also report PGD robust accuracy (attack.*)")
    p.add_argument("--out", type=str, default=None, help="Write the JSON report here as well")

    p = sub.add_parser("recover-report", help="Label-recovery report of a target checkpoint")
    p.add_argument("--targets", type=str, required=True, help="targets.satt from a run")
    p.add_argument("--data", type=str, required=True,
                   help="SATD snapshot whose first n samples are the training set")
    p.add_argument("--out", type=str, default=None, help="Write the JSON report here as well")
    return parser


def load_experiment(args: argparse.Namespace) -> ExperimentConfig:
    overrides = parse_overrides(args.set)
    shortcuts = {
        "run.mode": args.mode,
        "run.epochs": args.epochs,
        "run.seed": args.seed,
        "run.trials": args.trials,
        "run.name": args.name,
        "run.output_dir": args.output_dir,
    }
    if args.command == "selective":
        shortcuts["run.mode"] = "selective"
    elif args.command == "adversarial":
        if args.mode is None and "run.mode" not in overrides:
            shortcuts["run.mode"] = "trades_sat"
        overrides.setdefault("run.robust_eval", "true")
    elif args.command == "sweep":
        if args.axis is not None:
            overrides["sweep.axis"] = args.axis
        if args.values is not None:
            overrides["sweep.values"] = args.values
    overrides.update({k: str(v) for k, v in shortcuts.items() if v is not None})

    preset = args.preset or settings.SATLAB_PRESET
    if preset:
        logger.info(f"Using preset: {preset}")
    cfg = resolve_config(preset, args.config, overrides)
    return cfg.require_valid()


def _emit_report(report: dict, out: Optional[str]) -> None:
    text = json.dumps(report, indent=2, sort_keys=True)
    print(text)
    if out:
        Path(out).write_text(text + "\n")
        logger.info(f"Report written to {out}")


def cmd_corrupt(args) -> int:
    cfg = load_experiment(args)
    pool, _ = harness.corrupted_pool(cfg)
    save_snapshot(pool, args.out)
    logger.info(
        f"Wrote {pool.n} samples to {args.out} "
        f"(clean fraction mask={pool.clean_fraction_mask:.4f}, agreement={pool.clean_fraction_agreement:.4f})"
    )
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_experiment(args)
    result = harness.run(cfg, resume=args.resume)
    logger.info(f"Summary written to {result.run_dir / 'summary.json'}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = load_experiment(args)
    rows = harness.sweep(cfg, workers=args.workers)
    failed = [r for r in rows if r["status"] != "ok"]
    return EXIT_CONFIG if failed and len(failed) == len(rows) else EXIT_OK


def cmd_eval(args) -> int:
    cfg = load_experiment(args)
    model = ModelState.load(args.model)
    ds = load_snapshot(args.data) if args.data else harness.build_datasets(cfg)[2]
    report = {"n": ds.n, "clean_acc": clean_accuracy(model, ds)}
    if args.robust:
        report["robust_acc"] = robust_accuracy(model, ds, cfg.attack, seed=cfg.run.seed)
    if model.spec.abstain:
        report["risk_coverage"] = [asdict(p) for p in risk_coverage(model, ds, cfg.selective.coverages)]
    _emit_report(report, args.out)
    return EXIT_OK


def cmd_recover_report(args) -> int:
    store = TargetStore.load(args.targets)
    ds = load_snapshot(args.data)
    if ds.n < store.n:
        raise InvalidInputError(f"snapshot has {ds.n} samples but the checkpoint has {store.n} targets")
    report = recovery_report(store, ds.clean_labels[:store.n]).to_dict()
    report["epoch"] = store.last_updated_epoch
    _emit_report(report, args.out)
    return EXIT_OK


COMMANDS = {
    "corrupt": cmd_corrupt,
    "train": cmd_train,
    "selective": cmd_train,
    "adversarial": cmd_train,
    "sweep": cmd_sweep,
    "eval": cmd_eval,
    "recover-report": cmd_recover_report,
}


def main(argv: Optional[list[str]] = None) -> int:
    """Main entry point; returns the process exit code."""
    args = build_parser().parse_args(argv)
    configure_logging()

    errors = settings.validate()
    if errors:
        for error in errors:
            logger.error(f"Settings: {error}")
        return EXIT_CONFIG
    if settings.LOADED_ENV_OVERLAYS:
        logger.info(f"Loaded env overlays: {', '.join(settings.LOADED_ENV_OVERLAYS)}")

    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        for error in e.errors:
            logger.error(f"Config: {error}")
        return EXIT_CONFIG
    except (InvalidInputError, DatasetFormatError, ValueError, NotImplementedError) as e:
        logger.error(f"{type(e).__name__}: {e}")
        return EXIT_CONFIG
    except DivergenceError as e:
        logger.error(f"Training diverged: {e}")
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
