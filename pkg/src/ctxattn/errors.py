"""Exception taxonomy shared across the package.

CLI exit-code mapping: UsageError -> 1, data/format problems -> 2.
"""


class CtxAttnError(Exception):
    """Base class for all package errors."""


class ShapeError(CtxAttnError):
    """Tensor operand shapes are incompatible."""


class ParameterError(CtxAttnError):
    """An argument value is outside its legal range."""


class NumericsError(CtxAttnError):
    """Non-finite values detected while checked mode is active."""


class UsageError(CtxAttnError):
    """An API or CLI entry point was invoked incorrectly."""


class ConfigError(CtxAttnError):
    """Model/run configuration is inconsistent."""


class VocabError(CtxAttnError):
    """Unknown target, aspect, or label name."""


class DataError(CtxAttnError):
    """A dataset record violates the schema constraints."""


class ParseError(CtxAttnError):
    """A dataset file could not be parsed; carries the line number."""

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class CheckpointError(CtxAttnError):
    """A checkpoint is incompatible with the target model."""


class FormatError(CtxAttnError):
    """A checkpoint or export file is structurally corrupt."""


class TrainingDivergedError(CtxAttnError):
    """Training hit a non-finite loss; diagnostics were dumped."""
