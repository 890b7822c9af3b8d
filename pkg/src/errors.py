"""
Exception types raised across the workbench
"""

from typing import Any


class WorkbenchError(Exception):
    """Base class for every error the CLI maps to exit code 2."""


class ConfigurationError(WorkbenchError, ValueError):
    """Invalid site, channel, model or training configuration."""


class MeasurementInvalidError(WorkbenchError, ValueError):
    """A raw measurement that cannot describe a physical ranging exchange."""


class DatasetError(WorkbenchError, ValueError):
    """Malformed dataset files or dataset collections that cannot be used."""


class NumericDomainError(WorkbenchError, ArithmeticError):
    """A tape operation left its mathematical domain."""

    def __init__(self, message: str, node: int | None = None):
        super().__init__(message if node is None else f"{message} (node {node})")
        self.node = node


class TrainingDivergedError(WorkbenchError, RuntimeError):
    """Training produced a non-finite cost."""

    def __init__(self, epoch: int, cost: float, snapshot: dict[str, Any]):
        super().__init__(f"Non-finite cost {cost} at epoch {epoch}")
        self.epoch = epoch
        self.cost = cost
        self.snapshot = snapshot
