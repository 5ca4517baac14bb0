"""
Process-level settings for satlab.
Loads settings from environment variables with sensible defaults.

Layered configuration (highest precedence wins):
  1. Preset:  presets/{SATLAB_PRESET}/.env
  2. Base:    .env

SATLAB_PRESET is read from base (.env) or the process environment to select
the overlay file; do not set it inside the overlay itself.

Experiment hyperparameters (noise rate, SAT momentum, ...) do not live here;
see satlab.config.experiment. This module only covers where runs go, how they
log and how much parallelism a sweep may use.
"""

import os
from pathlib import Path
from typing import Optional

from dotenv import load_dotenv

_REPO_ROOT = Path(__file__).resolve().parents[2]
LOADED_ENV_OVERLAYS: list[str] = []  # repo-relative paths for logging

load_dotenv()


def _apply_overlay(path: Path) -> None:
    if path.exists():
        load_dotenv(path, override=True)
        LOADED_ENV_OVERLAYS.append(str(path.relative_to(_REPO_ROOT)))


_preset = os.getenv("SATLAB_PRESET")
if _preset:
    _apply_overlay(_REPO_ROOT / "presets" / _preset / ".env")


class Settings:
    """Central configuration class for process settings."""

    LOADED_ENV_OVERLAYS: list[str] = LOADED_ENV_OVERLAYS

    # Where run directories are created (one sub-directory per run name)
    SATLAB_OUTPUT_ROOT: Path = Path(os.getenv("SATLAB_OUTPUT_ROOT", "./runs"))
    # Default location for dataset files referenced by relative paths
    SATLAB_DATA_DIR: Path = Path(os.getenv("SATLAB_DATA_DIR", "./data"))
    # Preset applied when the CLI is given none explicitly
    SATLAB_PRESET: Optional[str] = os.getenv("SATLAB_PRESET")

    # Sweep grid points executed concurrently (each owns its RNG and subdir)
    SWEEP_WORKERS: int = int(os.getenv("SWEEP_WORKERS", "1"))

    # Assert simplex closure and weight bounds on the target store every epoch.
    CHECK_INVARIANTS: bool = os.getenv("CHECK_INVARIANTS", "true").lower() == "true"
    # Robust accuracy is costly (PGD-20 over the eval set); evaluate every N epochs
    # plus the final epoch.
    PGD_EVAL_EVERY: int = int(os.getenv("PGD_EVAL_EVERY", "5"))
    # Write trial checkpoints (model, targets, optimizer, logs) every N epochs; 0 only at the end.
    CHECKPOINT_EVERY: int = int(os.getenv("CHECKPOINT_EVERY", "10"))

    # Logging
    LOG_LEVEL: str = os.getenv("LOG_LEVEL", "INFO")
    LOG_FILE: str = os.getenv("LOG_FILE", "satlab.log")
    LOG_MAX_BYTES: int = int(os.getenv("LOG_MAX_BYTES", str(10 * 1024 * 1024)))
    LOG_BACKUP_COUNT: int = int(os.getenv("LOG_BACKUP_COUNT", "5"))

    @classmethod
    def validate(cls) -> list[str]:
        """
        Validate process settings.
        Returns list of error messages, empty if all valid.
        """
        errors = []

        if cls.SWEEP_WORKERS < 1:
            errors.append(f"SWEEP_WORKERS must be >= 1, got {cls.SWEEP_WORKERS}")

        if cls.PGD_EVAL_EVERY < 1:
            errors.append(f"PGD_EVAL_EVERY must be >= 1, got {cls.PGD_EVAL_EVERY}")

        if cls.CHECKPOINT_EVERY < 0:
            errors.append(f"CHECKPOINT_EVERY must be >= 0, got {cls.CHECKPOINT_EVERY}")

        if cls.LOG_LEVEL.upper() not in ("DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"):
            errors.append(
                f"Invalid LOG_LEVEL: '{cls.LOG_LEVEL}'. "
                "Must be DEBUG, INFO, WARNING, ERROR or CRITICAL"
            )

        if cls.SATLAB_PRESET:
            from presets import list_presets
            available = list_presets()
            if cls.SATLAB_PRESET.lower() not in available:
                errors.append(
                    f"Invalid SATLAB_PRESET: '{cls.SATLAB_PRESET}'. "
                    f"Available presets: {', '.join(available)}"
                )

        return errors

    @classmethod
    def create_output_root(cls) -> Path:
        """Create the output root directory if needed and return it."""
        cls.SATLAB_OUTPUT_ROOT.mkdir(parents=True, exist_ok=True)
        return cls.SATLAB_OUTPUT_ROOT


# Create singleton instance
settings = Settings()
