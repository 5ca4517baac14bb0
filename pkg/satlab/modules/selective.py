"""
Prediction with an abstain option and risk-coverage evaluation.

A selective model has c + 1 outputs; the abstention score g(x) is the softmax
probability of the last one. The predictor abstains iff g(x) > tau, otherwise
it returns the argmax over the first c classes.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from satlab.errors import InvalidInputError
from satlab.modules.datasets import LabeledDataset
from satlab.modules.numeric import ModelState, forward, softmax

logger = logging.getLogger(__name__)

ABSTAIN = -1
DEFAULT_COVERAGES = (1.0, 0.95, 0.9, 0.85, 0.8, 0.75, 0.7)


def _require_abstain(model: ModelState) -> None:
    if not model.spec.abstain:
        raise InvalidInputError("selective prediction needs a model with an abstention output")


def selective_scores(model: ModelState, x: np.ndarray, chunk: int = 4096) -> tuple[np.ndarray, np.ndarray]:
    """(abstention score g, argmax over the real classes) for every row of x."""
    _require_abstain(model)
    c = model.spec.num_classes
    scores = np.empty(len(x))
    classes = np.empty(len(x), dtype=np.int64)
    for start in range(0, len(x), chunk):
        probs = softmax(forward(model, x[start:start + chunk]))
        scores[start:start + chunk] = probs[:, c]
        classes[start:start + chunk] = np.argmax(probs[:, :c], axis=1)
    return scores, classes


def selective_predict(model: ModelState, x: np.ndarray, tau: float) -> np.ndarray:
    """Class index per row, or ABSTAIN where g(x) > tau."""
    scores, classes = selective_scores(model, x)
    return np.where(scores > tau, ABSTAIN, classes)


def _check_calibration_input(scores: np.ndarray, target_coverage: float) -> np.ndarray:
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise InvalidInputError("cannot calibrate a threshold on an empty score set")
    if not 0.0 < target_coverage <= 1.0:
        raise InvalidInputError(f"target coverage must be in (0, 1], got {target_coverage}")
    return scores


def calibrate_threshold(scores: np.ndarray, target_coverage: float) -> tuple[float, float]:
    """
    Smallest score tau such that the fraction with g <= tau reaches the target.

    Returns:
        (tau, achieved coverage)
    """
    scores = _check_calibration_input(scores, target_coverage)
    n = scores.size
    ordered = np.sort(scores)
    k = min(max(math.ceil(target_coverage * n - 1e-9), 1), n)
    tau = float(ordered[k - 1])
    return tau, float(np.mean(scores <= tau))


def calibrate_threshold_bruteforce(scores: np.ndarray, target_coverage: float) -> tuple[float, float]:
    """Scan every candidate threshold; reference for calibrate_threshold."""
    scores = _check_calibration_input(scores, target_coverage)
    for tau in np.unique(scores):
        coverage = float(np.mean(scores <= tau))
        if coverage >= target_coverage - 1e-9 / scores.size:
            return float(tau), coverage
    tau = float(scores.max())
    return tau, 1.0


@dataclass(frozen=True)
class CoveragePoint:
    coverage_target: float
    coverage_achieved: float
    tau: float
    selective_error: Optional[float]
    """Misclassification rate among accepted samples; None if none accepted."""


def selective_error(predictions: np.ndarray, labels: np.ndarray) -> Optional[float]:
    accepted = predictions != ABSTAIN
    if not accepted.any():
        return None
    return float(np.mean(predictions[accepted] != labels[accepted]))


def risk_coverage(
    model: ModelState,
    eval_ds: LabeledDataset,
    coverages: Sequence[float] = DEFAULT_COVERAGES,
) -> list[CoveragePoint]:
    """Calibrate tau per target coverage on `eval_ds` and score the accepted samples."""
    if eval_ds.n == 0:
        raise InvalidInputError("cannot evaluate risk-coverage on an empty dataset")
    scores, classes = selective_scores(model, eval_ds.inputs)
    labels = eval_ds.clean_labels
    points = []
    for target in coverages:
        tau, achieved = calibrate_threshold(scores, target)
        predictions = np.where(scores > tau, ABSTAIN, classes)
        error = selective_error(predictions, labels)
        if error is None:
            logger.warning(f"No samples accepted at coverage {target}; selective error undefined")
        points.append(CoveragePoint(target, achieved, tau, error))
    return points


RISK_COVERAGE_COLUMNS = ("coverage_target", "coverage_achieved", "tau", "selective_error_pct")


def write_risk_coverage_csv(path, points: Sequence[CoveragePoint]) -> None:
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(RISK_COVERAGE_COLUMNS)
        for p in points:
            error = "" if p.selective_error is None else repr(100.0 * p.selective_error)
            writer.writerow([repr(p.coverage_target), repr(p.coverage_achieved), repr(p.tau), error])
