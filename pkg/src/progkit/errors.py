"""Exception hierarchy shared across the toolkit.

Every error raised on a contract violation derives from ProgkitError so
callers (and the CLI) can distinguish toolkit failures from programming
errors. The CLI maps ConfigError to exit code 2, DataError to 3 and
StageError to 4.
"""

from __future__ import annotations


class ProgkitError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(ProgkitError):
    """Invalid or inconsistent configuration."""


class DataError(ProgkitError):
    """Missing or malformed input data (files, tables, ids)."""


class StageError(ProgkitError):
    """A pipeline stage failed while running."""


class FormatError(DataError):
    """A file does not conform to its on-disk format."""


class DetectionError(ProgkitError):
    """A landmark detector could not find its target."""


class FitError(ProgkitError):
    """A model fit failed (no events, singular system, no convergence)."""


class SeparationError(FitError):
    """Monotone likelihood: a covariate separates events perfectly."""


class TrainingError(ProgkitError):
    """Neural-network training failed (non-finite loss or gradients)."""
