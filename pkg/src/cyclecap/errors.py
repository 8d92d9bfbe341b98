"""Exception taxonomy shared across the package.

The CLI maps these onto process exit codes, so new error types should
subclass one of the four below rather than raising bare ValueErrors.
"""

from __future__ import annotations


class CyclecapError(Exception):
    """Base class for every error raised on purpose by this package."""


class ContractViolation(CyclecapError, ValueError):
    """An argument broke a documented precondition (bad shape, bad range)."""


class ConfigError(CyclecapError, ValueError):
    """Run configuration failed validation.  CLI exit code 2."""


class ArtifactMismatch(CyclecapError, RuntimeError):
    """Checkpoint / dataset / config disagree on shapes or names.  Exit code 3."""


class NumericalError(CyclecapError, RuntimeError):
    """Non-finite values or a failed numerical check.  Exit code 4."""


class CorpusExhausted(CyclecapError, RuntimeError):
    """Retrieval asked for neighbours but every corpus entry was excluded."""
