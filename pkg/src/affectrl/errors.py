"""Exception hierarchy shared by all affectrl modules."""

from __future__ import annotations


class AffectRLError(Exception):
    """Base class; ``category`` is the machine-readable tag the CLI prints."""

    category = "error"


class ContractViolation(AffectRLError, ValueError):
    category = "contract"


class WheelParseError(AffectRLError):
    category = "wheel_parse"


class WheelValidationError(AffectRLError):
    category = "wheel_validation"

    def __init__(self, message: str, label: str | None = None):
        super().__init__(message)
        self.label = label


class DataError(AffectRLError):
    """Malformed or misaligned data file; carries the line number and sample id when known."""

    category = "data"

    def __init__(self, message: str, line: int | None = None, sample_id: str | None = None):
        parts = [message]
        if line is not None:
            parts.append(f"line={line}")
        if sample_id is not None:
            parts.append(f"id={sample_id}")
        super().__init__(" ".join(parts))
        self.line = line
        self.sample_id = sample_id


class ConfigError(AffectRLError):
    category = "config"

    def __init__(self, message: str, field: str | None = None):
        super().__init__(message)
        self.field = field


class NonFiniteError(AffectRLError, FloatingPointError):
    category = "non_finite"

    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index
