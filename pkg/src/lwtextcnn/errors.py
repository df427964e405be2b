"""Exception types shared across the package."""


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class EmptyFeatureMapError(DimensionError):
    """A convolution or pooling would produce zero output positions.

    Callers must pad token sequences to at least the largest effective
    filter height of the architecture.
    """


class OutOfVocabularyError(IndexError):
    """A token index is outside the embedding table."""


class ContractError(ValueError):
    """A precondition on arguments or state was violated."""


class CheckpointFormatError(IOError):
    """A checkpoint file is corrupt, truncated, or of an unknown version."""


class DivergenceError(RuntimeError):
    """Training produced a non-finite loss."""
