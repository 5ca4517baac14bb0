"""
Selective classification objective over a (c+1)-way head whose last output
abstains. Targets live on the c real classes only.
"""

import numpy as np

from satlab.modules.losses import selective_logit_grad, selective_loss
from satlab.modules.numeric import Batch, softmax
from satlab.modules.targets import SatConfig
from satlab.objectives.base import Objective
from satlab.objectives.factory import register_objective


@register_objective('selective')
class SelectiveObjective(Objective):
    abstain = True
    default_sat = SatConfig(start_epoch=0, momentum=0.99)

    @property
    def name(self) -> str:
        return "selective"

    def ema_probs(self, logits: np.ndarray) -> np.ndarray:
        # softmax over the real classes only; the abstain logit never enters
        return softmax(logits[:, :-1])

    def loss_and_logit_grad(self, logits: np.ndarray, batch: Batch) -> tuple[float, np.ndarray]:
        p = softmax(logits)
        labels = np.argmax(batch.labels, axis=1)
        return (
            selective_loss(p, batch.targets, labels),
            selective_logit_grad(p, batch.targets, labels),
        )
