"""
Self-adaptive training objectives.

Both modes train against the moving-average targets, weighting each sample
by its target confidence and normalizing by the total weight of the batch.
With sat.reweight off every sample of a batch counts equally.
"""

import numpy as np

from satlab.modules.losses import sat_logit_grad, sat_loss, sce_sat_logit_grad, sce_sat_loss
from satlab.modules.numeric import Batch, softmax
from satlab.modules.targets import SatConfig
from satlab.objectives.base import Objective
from satlab.objectives.factory import register_objective


@register_objective('sat')
class SelfAdaptiveObjective(Objective):
    default_sat = SatConfig(start_epoch=60, momentum=0.9)

    @property
    def name(self) -> str:
        return "sat"

    def loss_and_logit_grad(self, logits: np.ndarray, batch: Batch) -> tuple[float, np.ndarray]:
        p = softmax(logits)
        return (
            sat_loss(p, batch.targets, batch.weights, self.options.reweight),
            sat_logit_grad(p, batch.targets, batch.weights, self.options.reweight),
        )


@register_objective('sat_sce')
class SymmetricSelfAdaptiveObjective(Objective):
    """Forward plus down-weighted reverse cross entropy against the targets."""

    default_sat = SatConfig(start_epoch=60, momentum=0.9)

    @property
    def name(self) -> str:
        return "sat_sce"

    def loss_and_logit_grad(self, logits: np.ndarray, batch: Batch) -> tuple[float, np.ndarray]:
        p = softmax(logits)
        sce = self.options.sce
        return (
            sce_sat_loss(p, batch.targets, batch.weights, sce, self.options.reweight),
            sce_sat_logit_grad(p, batch.targets, batch.weights, sce, self.options.reweight),
        )
