"""
Adversarial training objectives.

`trades` is the baseline (cross entropy on the labels plus the KL robustness
term); `trades_sat` swaps the cross entropy for the self-adaptive loss.
Adversarial inputs come from a KL-objective PGD attack on the current model
before each step and are held constant in the gradient.
"""

import numpy as np

from satlab.modules.adversarial import pgd_attack, sat_natural_head, trades_value_and_grad
from satlab.modules.losses import erm_logit_grad, erm_loss
from satlab.modules.numeric import Batch, LossFn, ModelState, forward, softmax
from satlab.modules.targets import SatConfig
from satlab.objectives.base import Objective
from satlab.objectives.factory import register_objective


class _TradesBase(Objective):

    @property
    def loss_fn(self) -> LossFn:
        inv_lambda = self.options.trades.inv_lambda

        def loss_fn(model: ModelState, batch: Batch):
            return trades_value_and_grad(model, batch, self.loss_and_logit_grad, inv_lambda)

        return loss_fn

    def prepare(self, model: ModelState, batch: Batch, epoch: int) -> Batch:
        cfg = self.options.trades
        if cfg.inv_lambda == 0:
            return batch
        logits = batch.forward[0] if batch.forward is not None else forward(model, batch.x)
        batch.x_adv = pgd_attack(
            model,
            batch.x,
            cfg.attack,
            objective="kl",
            reference=softmax(logits),
            sample_ids=batch.sample_ids,
            seed=self.options.seed,
            epoch=epoch,
        )
        return batch


@register_objective('trades')
class TradesObjective(_TradesBase):
    uses_targets = False

    @property
    def name(self) -> str:
        return "trades"

    def loss_and_logit_grad(self, logits: np.ndarray, batch: Batch) -> tuple[float, np.ndarray]:
        p = softmax(logits)
        return erm_loss(p, batch.labels), erm_logit_grad(p, batch.labels)


@register_objective('trades_sat')
class TradesSelfAdaptiveObjective(_TradesBase):
    default_sat = SatConfig(start_epoch=70, momentum=0.9)

    @property
    def name(self) -> str:
        return "trades_sat"

    def loss_and_logit_grad(self, logits: np.ndarray, batch: Batch) -> tuple[float, np.ndarray]:
        return sat_natural_head(logits, batch, self.options.reweight)
