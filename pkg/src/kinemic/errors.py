"""Exception types shared across the package."""


class KinemicError(Exception):
    """Base class for all package-specific errors."""


class InvalidArgumentError(KinemicError, ValueError):
    """A caller-supplied value violates an operation's precondition."""


class InvalidTopologyError(KinemicError, ValueError):
    """Skeleton topology is not a valid rooted tree (or a subset breaks it)."""


class DegeneratePoseError(KinemicError):
    """A pose does not define the quantity being computed (e.g. facing)."""


class TooShortError(KinemicError, ValueError):
    """Sequence has too few frames for the requested operation."""


class InvalidDataError(KinemicError, ValueError):
    """Array contents are unusable (non-finite values, bad shapes on disk)."""


class InvalidConfigError(KinemicError, ValueError):
    """A configuration file or object is inconsistent or unsatisfiable."""


class EncoderUnavailableError(KinemicError):
    """The requested text encoder backend cannot be constructed."""


class UndefinedSimilarityError(KinemicError, ValueError):
    """Cosine similarity requested against a zero-norm vector."""


class UnsupportedConditioningError(KinemicError, ValueError):
    """A conditioning signal names a modality the model does not have."""


class EmptySequenceError(KinemicError, ValueError):
    """All frames of an input are masked out."""


class TrainingDivergenceError(KinemicError, RuntimeError):
    """A loss term became non-finite during training."""


class InvalidDatasetError(KinemicError, ValueError):
    """A dataset violates the contract of the consuming operation."""
