"""Exception types shared across the package."""


class LandloopError(Exception):
    """Base class for all package errors."""


class InvalidActionError(LandloopError):
    """A stick command contained a non-finite component."""


class GeometryError(LandloopError):
    """Camera projection requested from an impossible pose (height <= 0)."""


class ObservationError(LandloopError):
    """An assembled observation contained a non-finite entry."""


class DatasetError(LandloopError):
    """The sample store could not persist or reload a row."""


class CheckpointError(LandloopError):
    """A model checkpoint failed to load or has a corrupt layout."""


class ConfigError(LandloopError):
    """A config file or config combination is invalid."""


class TrainerDivergedError(LandloopError):
    """The online trainer hit a non-finite loss and halted."""
