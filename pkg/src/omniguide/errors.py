"""Exception types shared across the engine.

Every failure mode that callers are expected to distinguish gets its own
class; generic misuse of an API (bad argument values) raises plain
ValueError.
"""

from __future__ import annotations


class EngineError(Exception):
    """Base class for all engine-specific failures."""


class DimensionError(EngineError):
    """Operands whose lengths must agree do not."""


class NonFiniteError(EngineError):
    """A NaN or infinity reached an operation that requires finite input."""


class TokenRangeError(EngineError):
    """A token id is outside the source's vocabulary."""


class CapacityError(EngineError):
    """A prefix exceeds the source's advertised context limit."""


class SessionStateError(EngineError):
    """Operation on a closed, foreign, unknown, or busy session."""


class VocabularyMismatchError(EngineError):
    """Two sources that must share a vocabulary do not."""

    def __init__(self, mismatches: tuple[str, ...], message: str | None = None):
        self.mismatches = mismatches
        super().__init__(message or f"vocabulary mismatch: {', '.join(mismatches)}")


class TransportError(EngineError):
    """A remote source could not be reached or the connection failed.

    Carries retry metadata so callers can decide whether to re-dispatch.
    """

    def __init__(self, endpoint: str, attempts: int, cause: BaseException | str):
        self.endpoint = endpoint
        self.attempts = attempts
        super().__init__(f"transport failure for {endpoint} after {attempts} attempt(s): {cause}")


class ToySpecError(EngineError):
    """A toy model spec file or table failed validation."""


class ProtocolError(EngineError):
    """Malformed or unsupported wire-protocol traffic."""


class ConfigError(EngineError):
    """A run-config file failed validation."""
