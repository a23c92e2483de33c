"""
errors.py
Exception hierarchy. Every class also derives from the builtin it refines,
so callers that catch ValueError / RuntimeError keep working.
"""
from __future__ import annotations

from typing import Iterable, List, Tuple


class BalancedRCError(Exception):
    pass


class InvalidParameterError(BalancedRCError, ValueError):
    pass


class NormalizationError(BalancedRCError, ValueError):
    pass


class IntegrationError(BalancedRCError, RuntimeError):
    def __init__(self, message: str, step: int):
        super().__init__(f"{message} (step {step})")
        self.step = step


class SpectralRadiusError(BalancedRCError, RuntimeError):
    def __init__(self, message: str, iterations: int):
        super().__init__(message)
        self.iterations = iterations


class ReadoutError(BalancedRCError, RuntimeError):
    pass


class SamplingError(BalancedRCError, RuntimeError):
    def __init__(self, label: str, draws: int):
        super().__init__(f"Label {label} not reached after {draws} initial-condition draws")
        self.label = label
        self.draws = draws


class MachineFileError(BalancedRCError, ValueError):
    pass


class ConfigError(BalancedRCError, ValueError):
    """Carries (field_path, message) pairs so the CLI can report every problem at once."""

    def __init__(self, problems: Iterable[Tuple[str, str]], source: str = ""):
        self.problems: List[Tuple[str, str]] = list(problems)
        self.source = source
        lines = [f"{path}: {msg}" for path, msg in self.problems]
        head = f"Invalid config {source}".strip()
        super().__init__(head + "\n  " + "\n  ".join(lines))
