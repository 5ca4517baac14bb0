"""
Plain empirical risk minimization: mean cross entropy on the noisy labels.
"""

import numpy as np

from satlab.modules.losses import erm_logit_grad, erm_loss
from satlab.modules.numeric import Batch, softmax
from satlab.objectives.base import Objective
from satlab.objectives.factory import register_objective


@register_objective('erm')
class ErmObjective(Objective):
    uses_targets = False

    @property
    def name(self) -> str:
        return "erm"

    def loss_and_logit_grad(self, logits: np.ndarray, batch: Batch) -> tuple[float, np.ndarray]:
        p = softmax(logits)
        return erm_loss(p, batch.labels), erm_logit_grad(p, batch.labels)
