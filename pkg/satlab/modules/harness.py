"""
Experiment orchestration: datasets from a config, seeded multi-trial runs,
sweeps over one config axis, and the files they leave behind.

Run directory layout:

    <output_root>/<run_name>/summary.json
    <output_root>/<run_name>/trial_<k>/epochs.csv
                                      portions.csv
                                      targets.satt
                                      model.npz
                                      optimizer.npz
                                      risk_coverage.csv   (selective mode)
                                      robust.csv          (robust evaluation)

Trial k trains with seed run.seed + k and corrupts with corruption.seed + k.
Nothing written depends on wall-clock time, so identical configs produce
identical files. Trial state is checkpointed every CHECKPOINT_EVERY
epochs so that an interrupted run can be resumed.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Optional

import psutil

from satlab.config import settings
from satlab.config.experiment import SWEEP_AXES, ExperimentConfig, SweepSpec, resolve_data_path
from satlab.errors import ConfigError, InvalidInputError
from satlab.modules import trainer
from satlab.modules.adversarial import write_robust_csv
from satlab.modules.corruption import corrupt
from satlab.modules.datasets import (
    LabeledDataset,
    gen_synthetic,
    load_cifar_binary,
    load_idx,
    load_snapshot,
    split_train_val,
)
from satlab.modules.metrics import (
    EarlyStopResult,
    EpochRecord,
    RecoveryReport,
    aggregate,
    early_stop_select,
    emit_epoch_csv,
    emit_portion_csv,
    generalization_error,
    parse_epoch_csv,
    parse_portion_csv,
    recovery_report,
)
from satlab.modules.numeric import ModelState, init_model
from satlab.modules.optim import OptimizerState
from satlab.modules.selective import CoveragePoint, risk_coverage, write_risk_coverage_csv
from satlab.modules.targets import TargetStore

logger = logging.getLogger(__name__)

SWEEP_COLUMNS = (
    "axis",
    "value",
    "status",
    "clean_test_acc_mean",
    "clean_test_acc_std",
    "noisy_train_acc_mean",
    "generalization_error_mean",
    "recovered_acc_mean",
    "E_s",
    "alpha",
    "error",
)


# -----------------------------------------------------------------------------
# Datasets
# -----------------------------------------------------------------------------


def load_source(cfg: ExperimentConfig) -> tuple[LabeledDataset, Optional[LabeledDataset]]:
    """(train+val pool, optional test set) as described by data.*."""
    data = cfg.data
    if data.augment:
        raise NotImplementedError("data augmentation (random crop/flip) is not implemented")

    if data.source == "synthetic":
        pool = gen_synthetic(cfg.synthetic)
        test_spec = replace(cfg.synthetic, seed=cfg.synthetic.seed + 1, per_class=data.test_per_class)
        return pool, gen_synthetic(test_spec)

    def path(value: Optional[str]) -> Optional[Path]:
        return None if value is None else resolve_data_path(value)

    if data.source == "cifar":
        pool = load_cifar_binary(path(data.train_path), data.num_classes)
        test = load_cifar_binary(path(data.test_path), data.num_classes) if data.test_path else None
    elif data.source == "idx":
        pool = load_idx(path(data.train_path), path(data.labels_path), data.num_classes)
        test = (
            load_idx(path(data.test_path), path(data.test_labels_path), data.num_classes)
            if data.test_path else None
        )
    elif data.source == "snapshot":
        pool = load_snapshot(path(data.train_path))
        test = load_snapshot(path(data.test_path)) if data.test_path else None
    else:
        raise InvalidInputError(f"unknown data source '{data.source}'")
    return pool, test


def corrupted_pool(cfg: ExperimentConfig, trial: int = 0) -> tuple[LabeledDataset, Optional[LabeledDataset]]:
    """The train+val pool after corruption, plus the test set."""
    pool, test = load_source(cfg)
    spec = replace(cfg.corruption, seed=cfg.corruption.seed + trial)
    already = pool.corrupted_mask.any() or pool.original_inputs is not None
    if already:
        if spec.scheme != "none":
            raise InvalidInputError(
                "dataset snapshot is already corrupted; set corruption.scheme=none to train on it"
            )
        return pool, test
    return corrupt(pool, spec), test


def build_datasets(cfg: ExperimentConfig, trial: int = 0) -> tuple[LabeledDataset, LabeledDataset, LabeledDataset]:
    """(train, val, test); without a test source the clean validation set is used."""
    pool, test = corrupted_pool(cfg, trial)
    train, val = split_train_val(pool, cfg.data.train_count)
    if test is None:
        test = LabeledDataset.from_indices(val.clean_inputs, val.clean_labels, val.class_count)
    return train, val, test


# -----------------------------------------------------------------------------
# Runs
# -----------------------------------------------------------------------------


@dataclass
class TrialResult:
    trial: int
    seed: int
    records: list[EpochRecord]
    recovery: RecoveryReport
    early_stop: EarlyStopResult
    clean_fraction_mask: float
    clean_fraction_agreement: float
    trial_dir: Path
    risk_coverage: list[CoveragePoint] = field(default_factory=list)

    @property
    def final(self) -> EpochRecord:
        return self.records[-1]

    def metrics(self) -> dict[str, float]:
        """Final-epoch numbers aggregated across trials."""
        final = self.final
        out = {
            "clean_test_acc": final.acc_clean_test,
            "noisy_train_acc": final.acc_noisy_train,
            "clean_train_acc": final.acc_clean_train,
            "noisy_val_acc": final.acc_noisy_val,
            "clean_val_acc": final.acc_clean_val,
            "generalization_error": generalization_error(final),
            "recovered_acc": self.recovery.recovered_accuracy,
            "early_stop_clean_test_acc": self.early_stop.acc_clean_test,
        }
        if final.robust_acc is not None:
            out["robust_acc"] = final.robust_acc
        return out

    def to_dict(self) -> dict:
        return {
            "trial": self.trial,
            "seed": self.seed,
            "final": asdict(self.final),
            "metrics": self.metrics(),
            "early_stop": asdict(self.early_stop),
            "clean_fraction": {
                "mask": self.clean_fraction_mask,
                "agreement": self.clean_fraction_agreement,
            },
            "recovery": self.recovery.to_dict(),
            "risk_coverage": [asdict(p) for p in self.risk_coverage],
        }


@dataclass
class RunResult:
    run_dir: Path
    trials: list[TrialResult]
    summary: dict

    @property
    def aggregate(self) -> dict[str, dict[str, float]]:
        return self.summary["aggregate"]


def write_checkpoint(trial_dir: Path, model: ModelState, checkpoint: trainer.TrainCheckpoint) -> None:
    """Persist everything load_checkpoint needs to continue the trial."""
    trial_dir.mkdir(parents=True, exist_ok=True)
    (trial_dir / "epochs.csv").write_text(emit_epoch_csv(checkpoint.records))
    (trial_dir / "portions.csv").write_text(emit_portion_csv(checkpoint.portions))
    checkpoint.store.save(trial_dir / "targets.satt")
    model.save(trial_dir / "model.npz")
    checkpoint.optimizer.save(trial_dir / "optimizer.npz")
    logger.debug(f"Checkpoint of epoch {checkpoint.epoch} written to {trial_dir}")


def load_checkpoint(
    cfg: ExperimentConfig, trial_dir: Path
) -> Optional[tuple[ModelState, trainer.TrainCheckpoint]]:
    """
    The model and training state saved under `trial_dir`, or None if the
    trial has no complete checkpoint yet. The epoch comes from epochs.csv.

    Raises:
        InvalidInputError: the saved model does not match the configured one
    """
    names = ("epochs.csv", "portions.csv", "targets.satt", "model.npz", "optimizer.npz")
    if not all((trial_dir / name).exists() for name in names):
        return None
    records = parse_epoch_csv((trial_dir / "epochs.csv").read_text())
    model = ModelState.load(trial_dir / "model.npz")
    expected = cfg.mlp_spec(model.spec.input_dim, model.spec.num_classes)
    if model.spec != expected:
        raise InvalidInputError(f"{trial_dir / 'model.npz'}: saved model {model.spec} does not match {expected}")
    checkpoint = trainer.TrainCheckpoint(
        epoch=records[-1].epoch if records else 0,
        store=TargetStore.load(trial_dir / "targets.satt"),
        optimizer=OptimizerState.load(trial_dir / "optimizer.npz", cfg.optimizer, cfg.run.epochs),
        records=records,
        portions=parse_portion_csv((trial_dir / "portions.csv").read_text()),
    )
    return model, checkpoint


def run_trial(cfg: ExperimentConfig, trial: int, run_dir: Path, resume: bool = False) -> TrialResult:
    """
    Train one trial and write its files. With `resume`, a checkpoint left in
    the trial directory by an earlier run of the same config is continued.
    """
    seed = cfg.run.seed + trial
    trial_dir = run_dir / f"trial_{trial}"
    train_ds, val_ds, test_ds = build_datasets(cfg, trial)

    saved = load_checkpoint(cfg, trial_dir) if resume else None
    if saved is None:
        model = init_model(cfg.mlp_spec(train_ds.dim, train_ds.class_count), seed)
        checkpoint = None
    else:
        model, checkpoint = saved
        logger.info(f"Trial {trial}: resuming from the checkpoint of epoch {checkpoint.epoch}")

    logger.info(
        f"Trial {trial} (seed {seed}): n_train={train_ds.n} n_val={val_ds.n} n_test={test_ds.n} "
        f"clean fraction mask={train_ds.clean_fraction_mask:.4f} "
        f"agreement={train_ds.clean_fraction_agreement:.4f}"
    )
    result = trainer.train(
        train_ds,
        model,
        cfg.resolved_sat(),
        cfg.optimizer,
        cfg.run.epochs,
        seed,
        mode=cfg.run.mode,
        batch_size=cfg.run.batch_size,
        val=val_ds,
        test=test_ds,
        options=cfg.objective_options(seed),
        eval_attack=cfg.attack,
        robust_eval=cfg.run.robust_eval,
        resume=checkpoint,
        on_checkpoint=lambda m, ckpt: write_checkpoint(trial_dir, m, ckpt),
        checkpoint_every=settings.CHECKPOINT_EVERY,
    )

    write_checkpoint(
        trial_dir,
        result.model,
        trainer.TrainCheckpoint(
            epoch=len(result.records),
            store=result.store,
            optimizer=result.optimizer,
            records=result.records,
            portions=result.portions,
        ),
    )

    points = []
    if result.model.spec.abstain:
        points = risk_coverage(result.model, test_ds, cfg.selective.coverages)
        write_risk_coverage_csv(trial_dir / "risk_coverage.csv", points)
    if result.robust:
        write_robust_csv(trial_dir / "robust.csv", result.robust)

    rss_mib = psutil.Process().memory_info().rss / (1024 * 1024)
    logger.info(f"Trial {trial} finished; resident memory {rss_mib:.1f} MiB")

    return TrialResult(
        trial=trial,
        seed=seed,
        records=result.records,
        recovery=recovery_report(result.store, train_ds.clean_labels),
        early_stop=early_stop_select(result.records),
        clean_fraction_mask=train_ds.clean_fraction_mask,
        clean_fraction_agreement=train_ds.clean_fraction_agreement,
        trial_dir=trial_dir,
        risk_coverage=points,
    )


def summarize(cfg: ExperimentConfig, trials: list[TrialResult]) -> dict:
    per_trial = [t.metrics() for t in trials]
    keys = [k for k in per_trial[0] if all(m.get(k) is not None for m in per_trial)]
    sat = cfg.resolved_sat()
    return {
        "run_name": cfg.run.name,
        "mode": cfg.run.mode,
        "config_hash": cfg.config_hash(),
        "config": cfg.to_flat(),
        "sat": {"start_epoch": sat.start_epoch, "momentum": sat.momentum, "reweight": sat.reweight},
        "trials": [t.to_dict() for t in trials],
        "aggregate": {k: aggregate([m[k] for m in per_trial]) for k in keys},
    }


def run(cfg: ExperimentConfig, resume: bool = False) -> RunResult:
    """
    Run every trial of an experiment and write its summary.

    With `resume`, trials continue from the checkpoints an interrupted run of
    the same config left behind (written every CHECKPOINT_EVERY epochs); the
    files written match those of an uninterrupted run.

    Raises:
        ConfigError: the configuration is invalid
        DivergenceError: training diverged
    """
    errors = cfg.validate()
    if errors:
        raise ConfigError(errors)
    run_dir = cfg.output_root() / cfg.run.name
    run_dir.mkdir(parents=True, exist_ok=True)
    logger.info(f"Run '{cfg.run.name}' -> {run_dir} (config {cfg.config_hash()[:12]})")

    trials = [run_trial(cfg, k, run_dir, resume=resume) for k in range(cfg.run.trials)]
    summary = summarize(cfg, trials)
    (run_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")

    for name, stats in summary["aggregate"].items():
        logger.info(f"  {name}: {stats['mean']:.4f} +/- {stats['std']:.4f}")
    return RunResult(run_dir=run_dir, trials=trials, summary=summary)


# -----------------------------------------------------------------------------
# Sweeps
# -----------------------------------------------------------------------------


def apply_sweep_value(cfg: ExperimentConfig, axis: str, value: str) -> ExperimentConfig:
    """Config of one grid point, written under <run_name>/<axis>_<value>."""
    if axis not in SWEEP_AXES:
        raise InvalidInputError(f"sweep axis must be one of {SWEEP_AXES}, got '{axis}'")
    flat = cfg.to_flat()
    if axis == "noise_rate":
        flat["corruption.rate"] = value
    elif axis == "noise_scheme":
        flat["corruption.scheme"] = value
    elif axis == "width":
        flat["model.hidden_widths"] = ",".join([value] * max(1, len(cfg.model.hidden_widths)))
    elif axis == "alpha":
        flat["sat.momentum"] = value
    else:
        flat["sat.start_epoch"] = value
    flat["run.name"] = f"{cfg.run.name}/{axis}_{value}"
    point = ExperimentConfig.from_flat(flat)
    if axis == "width" and cfg.sweep.auto_scale:
        point = point.with_width_scaling()
    return point


def _sweep_point(cfg: ExperimentConfig, axis: str, value: str) -> dict[str, str]:
    row = {name: "" for name in SWEEP_COLUMNS}
    row.update(axis=axis, value=value)
    try:
        point = apply_sweep_value(cfg, axis, value)
        sat = point.resolved_sat()
        row.update(E_s=str(sat.start_epoch), alpha=repr(sat.momentum))
        agg = run(point).aggregate
        row.update(
            status="ok",
            clean_test_acc_mean=repr(agg["clean_test_acc"]["mean"]),
            clean_test_acc_std=repr(agg["clean_test_acc"]["std"]),
            noisy_train_acc_mean=repr(agg["noisy_train_acc"]["mean"]),
            generalization_error_mean=repr(agg["generalization_error"]["mean"]),
            recovered_acc_mean=repr(agg["recovered_acc"]["mean"]),
        )
    except Exception as e:
        logger.warning(f"Sweep point {axis}={value} failed: {e}")
        row.update(status="failed", error=str(e))
    return row


def sweep(
    cfg: ExperimentConfig,
    spec: Optional[SweepSpec] = None,
    workers: Optional[int] = None,
) -> list[dict[str, str]]:
    """
    One run per value of the sweep axis plus a combined sweep.csv.

    Failed points are recorded with status=failed; the others still run.
    """
    spec = spec or cfg.sweep
    errors = spec.validate()
    if spec.axis is None:
        errors.append("sweep.axis is required")
    if errors:
        raise ConfigError(errors)
    workers = workers or settings.SWEEP_WORKERS

    run_dir = cfg.output_root() / cfg.run.name
    run_dir.mkdir(parents=True, exist_ok=True)
    logger.info(f"Sweep over {spec.axis} = {list(spec.values)} with {workers} worker(s)")

    point_cfg = replace(cfg, sweep=spec)
    with ThreadPoolExecutor(max_workers=workers) as pool:
        rows = list(pool.map(lambda v: _sweep_point(point_cfg, spec.axis, v), spec.values))

    with open(run_dir / "sweep.csv", "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=SWEEP_COLUMNS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)

    failed = sum(1 for r in rows if r["status"] != "ok")
    if failed:
        logger.warning(f"{failed}/{len(rows)} sweep points failed")
    return rows

