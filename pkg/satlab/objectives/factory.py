"""
Objective factory for training modes.
Uses registry pattern so new training modes plug in with a decorator.
"""

import logging
from typing import Dict, Optional, Type

from satlab.objectives.base import Objective, ObjectiveOptions

logger = logging.getLogger(__name__)


class ObjectiveRegistry:
    """Registry for training objectives."""

    _objectives: Dict[str, Type[Objective]] = {}

    @classmethod
    def register(cls, mode: str, objective_class: Type[Objective]):
        """
        Register a training mode.

        Args:
            mode: Mode identifier (e.g., 'sat')
            objective_class: Class implementing Objective
        """
        cls._objectives[mode.lower()] = objective_class
        logger.debug(f"Registered objective: {mode}")

    @classmethod
    def get(cls, mode: str) -> Type[Objective]:
        mode_lower = mode.lower()
        if mode_lower not in cls._objectives:
            available = ', '.join(cls._objectives.keys())
            raise ValueError(
                f"Unknown mode: '{mode}'. "
                f"Available modes: {available}"
            )
        return cls._objectives[mode_lower]

    @classmethod
    def create(cls, mode: str, options: Optional[ObjectiveOptions] = None) -> Objective:
        """
        Create an objective instance by mode.

        Raises:
            ValueError: If mode is not registered
        """
        objective_class = cls.get(mode)
        logger.debug(f"Creating objective: {mode}")
        return objective_class(options)

    @classmethod
    def list_modes(cls) -> list[str]:
        """Get list of registered modes."""
        return list(cls._objectives.keys())


def register_objective(mode: str):
    """
    Decorator for registering objective classes.

    Usage:
        @register_objective('sat')
        class SelfAdaptiveObjective(Objective):
            ...
    """
    def decorator(objective_class: Type[Objective]):
        ObjectiveRegistry.register(mode, objective_class)
        return objective_class
    return decorator
