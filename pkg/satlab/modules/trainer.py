"""
Training loop shared by every mode.

Per epoch e (1-indexed): shuffle the sample order with the run's generator,
then for each mini-batch
  1. forward pass on the training inputs
  2. if the mode keeps targets and e > E_s, move the batch's targets towards
     the current predictions
  3. read targets and weights for the batch
  4. one optimizer step on the mode's loss, reusing the forward pass of 1.

Evaluation after every epoch covers the noisy and clean labels of the
training and validation sets, the clean test set, and (for adversarial modes,
every PGD_EVAL_EVERY epochs plus the last) robust accuracy.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

from satlab.config import settings
from satlab.errors import DivergenceError, InvalidInputError
from satlab.modules.adversarial import AttackSpec, RobustRecord, clean_accuracy, robust_accuracy
from satlab.modules.datasets import LabeledDataset
from satlab.modules.metrics import EpochRecord, PortionRecord, recovered_accuracy
from satlab.modules.numeric import Batch, ModelState, forward_with_cache, predict_classes, value_and_grad
from satlab.modules.optim import OptimizerConfig, OptimizerState, init_optimizer, learning_rate, optimizer_step
from satlab.modules.targets import SatConfig, TargetStore, init_targets
from satlab.objectives import ADVERSARIAL_MODES, ObjectiveOptions, ObjectiveRegistry

logger = logging.getLogger(__name__)


@dataclass
class TrainResult:
    model: ModelState
    store: TargetStore
    records: list[EpochRecord]
    portions: list[PortionRecord] = field(default_factory=list)
    robust: list[RobustRecord] = field(default_factory=list)
    optimizer: Optional[OptimizerState] = None

    def __iter__(self):
        return iter((self.model, self.store, self.records))


@dataclass
class TrainCheckpoint:
    """Everything besides the model needed to continue after `epoch` finished epochs."""

    epoch: int
    store: TargetStore
    optimizer: OptimizerState
    records: list[EpochRecord] = field(default_factory=list)
    portions: list[PortionRecord] = field(default_factory=list)

    def validate(self, ds: LabeledDataset, epochs: int) -> list[str]:
        errors = []
        if not 0 <= self.epoch <= epochs:
            errors.append(f"checkpoint epoch {self.epoch} is outside the run of {epochs} epochs")
        if self.store.targets.shape != ds.noisy_labels.shape:
            errors.append(
                f"checkpoint holds {self.store.n}x{self.store.num_classes} targets, "
                f"dataset has {ds.n}x{ds.class_count}"
            )
        if self.optimizer.epoch_budget != epochs:
            errors.append(
                f"optimizer checkpoint was built for {self.optimizer.epoch_budget} epochs, run has {epochs}"
            )
        if [r.epoch for r in self.records] != list(range(1, self.epoch + 1)):
            errors.append(f"epoch log does not cover epochs 1..{self.epoch}")
        if len(self.portions) != len(self.records):
            errors.append("portion log and epoch log differ in length")
        return errors


def _accuracy(model: ModelState, x: np.ndarray, labels: np.ndarray) -> float:
    if len(labels) == 0:
        return 0.0
    return float(np.mean(predict_classes(model, x) == labels))


def _portion_record(epoch: int, model: ModelState, train: LabeledDataset, store: TargetStore) -> PortionRecord:
    predicted = predict_classes(model, train.inputs)
    correct = predicted == train.clean_labels
    mask = train.corrupted_mask
    return PortionRecord(
        epoch=epoch,
        acc_untouched=float(correct[~mask].mean()) if (~mask).any() else None,
        acc_corrupted=float(correct[mask].mean()) if mask.any() else None,
        recovered_acc=recovered_accuracy(store, train.clean_labels),
    )


def train(
    ds: LabeledDataset,
    model: ModelState,
    sat_cfg: Optional[SatConfig],
    opt_cfg: OptimizerConfig,
    epochs: int,
    seed: int,
    mode: str = "sat",
    batch_size: int = 256,
    val: Optional[LabeledDataset] = None,
    test: Optional[LabeledDataset] = None,
    options: Optional[ObjectiveOptions] = None,
    eval_attack: Optional[AttackSpec] = None,
    robust_eval: Optional[bool] = None,
    on_epoch: Optional[Callable[[EpochRecord], None]] = None,
    resume: Optional[TrainCheckpoint] = None,
    on_checkpoint: Optional[Callable[[ModelState, TrainCheckpoint], None]] = None,
    checkpoint_every: int = 0,
) -> TrainResult:
    """
    Train `model` in place on `ds` and return it with its target store and logs.

    Args:
        sat_cfg: warm-up and momentum; None takes the mode's defaults
        val: validation split (noisy and clean labels are both scored)
        test: clean test split, scored as acc_clean_test
        eval_attack: attack used for robust accuracy on the test split
        robust_eval: force robust evaluation on or off; None means adversarial
            modes only
        resume: state after the first resume.epoch epochs of this same run;
            `model` must hold the parameters saved with it. Training continues
            with epoch resume.epoch + 1 and ends as the uninterrupted run would.
        on_checkpoint: called after every `checkpoint_every`-th epoch with the
            live model and state; persist or copy them before returning

    Raises:
        DivergenceError: a loss, gradient or logit became non-finite
        InvalidInputError: inconsistent shapes or configuration
    """
    sat_cfg = sat_cfg or ObjectiveRegistry.get(mode).default_sat
    options = replace(options or ObjectiveOptions(seed=seed), reweight=sat_cfg.reweight)
    objective = ObjectiveRegistry.create(mode, options)

    errors = sat_cfg.validate() + ds.validate()
    if epochs < 1:
        errors.append(f"epochs must be >= 1, got {epochs}")
    if batch_size < 1:
        errors.append(f"batch_size must be >= 1, got {batch_size}")
    if model.spec.output_dim != objective.output_dim(ds.class_count):
        errors.append(
            f"model has {model.spec.output_dim} outputs, mode '{mode}' needs "
            f"{objective.output_dim(ds.class_count)}"
        )
    if checkpoint_every < 0:
        errors.append(f"checkpoint_every must be >= 0, got {checkpoint_every}")
    if resume is not None:
        errors.extend(resume.validate(ds, epochs))
    if errors:
        raise InvalidInputError("; ".join(errors))

    robust_eval = mode in ADVERSARIAL_MODES if robust_eval is None else robust_eval
    eval_attack = eval_attack or AttackSpec()
    rng = np.random.default_rng(seed)
    if resume is None:
        first = 1
        state = init_optimizer(model, opt_cfg, epochs)
        store = init_targets(ds)
        result = TrainResult(model=model, store=store, records=[])
    else:
        first = resume.epoch + 1
        state, store = resume.optimizer, resume.store
        # replay the shuffles of the finished epochs
        for _ in range(resume.epoch):
            rng.permutation(ds.n)
        result = TrainResult(
            model=model,
            store=store,
            records=list(resume.records),
            portions=list(resume.portions),
            robust=[
                RobustRecord(r.epoch, r.acc_clean_test, r.robust_acc)
                for r in resume.records
                if r.robust_acc is not None and r.acc_clean_test is not None
            ],
        )
        logger.info(f"Resuming at epoch {first} of {epochs}")

    logger.info(
        f"Training mode={mode} epochs={epochs} n={ds.n} batch={batch_size} "
        f"E_s={sat_cfg.start_epoch} alpha={sat_cfg.momentum}"
    )

    result.optimizer = state

    for epoch in range(first, epochs + 1):
        lr = learning_rate(opt_cfg, epoch - 1, epochs)
        update_targets = objective.uses_targets and sat_cfg.active(epoch)
        order = rng.permutation(ds.n)
        losses = []
        for b, start in enumerate(range(0, ds.n, batch_size)):
            ids = order[start:start + batch_size]
            x = ds.inputs[ids]
            try:
                logits, cache = forward_with_cache(model, x)
                if not np.all(np.isfinite(logits)):
                    raise DivergenceError("non-finite logits", batch_index=b)
                if update_targets:
                    store.update(ids, objective.ema_probs(logits), sat_cfg.momentum, epoch)
                targets, weights = store.rows(ids)
                batch = Batch(
                    x=x,
                    labels=ds.noisy_labels[ids],
                    targets=targets,
                    weights=weights,
                    index=b,
                    sample_ids=ids,
                    forward=(logits, cache),
                )
                batch = objective.prepare(model, batch, epoch)
                value, grads = value_and_grad(model, objective.loss_fn, batch)
            except DivergenceError as e:
                logger.error(f"Diverged at epoch {epoch}, batch {b}: {e}")
                raise DivergenceError(e.detail, epoch=epoch, batch_index=b) from e
            optimizer_step(model, grads, state, lr)
            losses.append(value)
            logger.debug(f"epoch {epoch} batch {b}: loss={value:.6f}")

        if settings.CHECK_INVARIANTS and objective.uses_targets:
            store.check_invariants()

        robust = None
        if robust_eval and test is not None and (epoch % settings.PGD_EVAL_EVERY == 0 or epoch == epochs):
            robust = robust_accuracy(model, test, eval_attack, seed=seed)
            result.robust.append(RobustRecord(epoch, clean_accuracy(model, test), robust))

        record = EpochRecord(
            epoch=epoch,
            lr=lr,
            loss=float(np.mean(losses)),
            acc_noisy_train=_accuracy(model, ds.inputs, ds.noisy_indices),
            acc_clean_train=_accuracy(model, ds.inputs, ds.clean_labels),
            acc_noisy_val=_accuracy(model, val.inputs, val.noisy_indices) if val is not None else 0.0,
            acc_clean_val=_accuracy(model, val.inputs, val.clean_labels) if val is not None else 0.0,
            robust_acc=robust,
            acc_clean_test=_accuracy(model, test.inputs, test.clean_labels) if test is not None else None,
        )
        result.records.append(record)
        result.portions.append(_portion_record(epoch, model, ds, store))
        if on_epoch is not None:
            on_epoch(record)

        robust_text = f" robust={robust:.4f}" if robust is not None else ""
        logger.info(
            f"Epoch {epoch}/{epochs} lr={lr:.5f} loss={record.loss:.4f} "
            f"train(noisy/clean)={record.acc_noisy_train:.4f}/{record.acc_clean_train:.4f} "
            f"val(noisy/clean)={record.acc_noisy_val:.4f}/{record.acc_clean_val:.4f}{robust_text}"
        )

        if on_checkpoint is not None and checkpoint_every and epoch % checkpoint_every == 0:
            on_checkpoint(model, TrainCheckpoint(epoch, store, state, result.records, result.portions))

    return result
