"""Structured error hierarchy.

Every error carries a ``details`` mapping with the values that triggered it and an
``exit_code`` used by the command line.
"""
from __future__ import annotations

from typing import Any


class CapsuleFusionError(Exception):
    exit_code = 1

    def __init__(self, message: str, **details: Any):
        super().__init__(message)
        self.details = details


class ShapeError(CapsuleFusionError, ValueError):
    exit_code = 2


class DomainError(CapsuleFusionError, ValueError):
    exit_code = 2


class ConfigError(CapsuleFusionError, ValueError):
    exit_code = 2


class DataError(CapsuleFusionError):
    exit_code = 3


class DivergenceError(CapsuleFusionError):
    exit_code = 4


class GradCheckFailure(CapsuleFusionError):
    exit_code = 5


class CheckpointError(CapsuleFusionError):
    exit_code = 3


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedCheckpointError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


class KindMismatchError(CheckpointError):
    pass


class ConfigMismatchError(CheckpointError):
    exit_code = 2
