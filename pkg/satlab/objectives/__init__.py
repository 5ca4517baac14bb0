"""
Training objectives.

Each mode registers itself with ObjectiveRegistry on import.
"""

from satlab.objectives.base import Objective, ObjectiveOptions
from satlab.objectives.factory import ObjectiveRegistry, register_objective
from satlab.objectives.erm import ErmObjective
from satlab.objectives.sat import SelfAdaptiveObjective, SymmetricSelfAdaptiveObjective
from satlab.objectives.selective import SelectiveObjective
from satlab.objectives.trades import TradesObjective, TradesSelfAdaptiveObjective

ADVERSARIAL_MODES = ("trades", "trades_sat")

__all__ = [
    'Objective',
    'ObjectiveOptions',
    'ObjectiveRegistry',
    'register_objective',
    'ErmObjective',
    'SelfAdaptiveObjective',
    'SymmetricSelfAdaptiveObjective',
    'SelectiveObjective',
    'TradesObjective',
    'TradesSelfAdaptiveObjective',
    'ADVERSARIAL_MODES',
]
