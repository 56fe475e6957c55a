"""Exception types shared across the package."""


class BiofusionError(Exception):
    """Base class for all package-level errors."""


class ParseError(BiofusionError):
    """Raised when a SMILES string cannot be parsed into a molecular graph."""


class AlphabetError(BiofusionError):
    """Raised when a protein sequence contains a character outside the residue alphabet."""


class ShapeError(BiofusionError):
    """Raised when tensor shapes are inconsistent with the configured model."""


class ConfigError(BiofusionError):
    """Raised when a configuration value is invalid or internally inconsistent."""


class EmptyMaskError(BiofusionError):
    """Raised when a loss mask selects no positions."""


class ContextOverflowError(BiofusionError):
    """Raised when an assembled prompt exceeds the LM context length.

    ``excess`` reports how many positions over budget the sequence is, i.e.
    how many modality rows would have to be truncated to fit.
    """

    def __init__(self, message: str, excess: int = 0):
        super().__init__(message)
        self.excess = excess


class FreezeViolationError(BiofusionError):
    """Raised when a parameter annotated as frozen changes during a training step."""


class FormatError(BiofusionError):
    """Raised on malformed document structure (e.g. bad span offsets)."""


class SchemaError(BiofusionError):
    """Raised when an input file violates its documented schema.

    Carries the 1-based line number of the offending row when known.
    """

    def __init__(self, message: str, line: int | None = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class EmptyInputError(BiofusionError):
    """Raised when an evaluation is invoked on an empty collection."""


class CorruptCheckpointError(BiofusionError):
    """Raised when a checkpoint file fails structural or checksum validation."""


class MissingPrerequisiteError(BiofusionError):
    """Raised when a pipeline stage is started without its prerequisite artifacts."""


class NaNLossError(BiofusionError):
    """Raised when training produces a non-finite loss."""
