"""Exception hierarchy for the attrmatch package."""


class AttrMatchError(Exception):
    """Base class for all attrmatch errors."""


class DatasetLoadError(AttrMatchError):
    """A required dataset file is missing or unreadable."""


class DatasetIntegrityError(AttrMatchError):
    """A pair file references an entity id that does not exist."""


class DatasetFormatError(AttrMatchError):
    """A dataset file violates the expected format (e.g. non-binary label)."""


class SplitError(AttrMatchError):
    """The dataset is too small to split."""


class GenerationError(AttrMatchError):
    """Synthetic data generation cannot satisfy the request."""


class SerializationError(AttrMatchError):
    """Record serialization or parsing failed."""


class ConfigError(AttrMatchError):
    """Invalid run or model configuration."""


class TrainingDivergenceError(AttrMatchError):
    """Training loss became non-finite."""


class CheckpointError(AttrMatchError):
    """A checkpoint directory is missing or corrupt."""
