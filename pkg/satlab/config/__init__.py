"""Configuration module for satlab."""

from .settings import settings, Settings

__all__ = ["settings", "Settings"]
