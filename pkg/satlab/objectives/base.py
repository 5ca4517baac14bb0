"""
Abstract base class for training objectives.
Defines the interface every training mode implements.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from satlab.modules.adversarial import TradesConfig
from satlab.modules.losses import SceWeights
from satlab.modules.numeric import Batch, LossFn, ModelState, head_loss, softmax
from satlab.modules.targets import SatConfig


@dataclass(frozen=True)
class ObjectiveOptions:
    """Mode-specific knobs shared by all objectives."""

    sce: SceWeights = field(default_factory=SceWeights)
    trades: TradesConfig = field(default_factory=TradesConfig)
    seed: int = 0
    """Seeds the per-sample attack streams of adversarial modes."""
    reweight: bool = True
    """Weight samples by target confidence; off gives every sample 1/|B|."""


class Objective(ABC):
    """
    A training mode: the loss the optimizer descends, and whether (and with
    which defaults) the per-sample moving-average targets are maintained.
    """

    uses_targets: bool = True
    """Whether the mode updates and consumes the target store."""

    abstain: bool = False
    """Whether the model carries an extra abstention output."""

    default_sat: SatConfig = SatConfig()

    def __init__(self, options: Optional[ObjectiveOptions] = None):
        self.options = options or ObjectiveOptions()

    @property
    @abstractmethod
    def name(self) -> str:
        """Mode identifier, matching its registry key."""
        pass

    def output_dim(self, num_classes: int) -> int:
        return num_classes + (1 if self.abstain else 0)

    def ema_probs(self, logits: np.ndarray) -> np.ndarray:
        """Predictions fed to the target moving average."""
        return softmax(logits)

    @abstractmethod
    def loss_and_logit_grad(self, logits: np.ndarray, batch: Batch) -> tuple[float, np.ndarray]:
        """
        Loss of a batch given its logits.

        Returns:
            (value, dL/dlogits)
        """
        pass

    @property
    def loss_fn(self) -> LossFn:
        return head_loss(self.loss_and_logit_grad)

    def prepare(self, model: ModelState, batch: Batch, epoch: int) -> Batch:
        """Hook run before the loss, e.g. to attach adversarial inputs."""
        return batch
