"""Exception types shared across the package."""


class EvtrackError(Exception):
    """Base class for all package errors."""


class MeshError(EvtrackError):
    """Invalid mesh topology or geometry."""


class ParameterShapeError(EvtrackError):
    """Parameter vector does not match the expected layout."""


class BehindCameraError(EvtrackError):
    """Point has non-positive depth in the camera frame."""


class AlignmentError(EvtrackError):
    """Rigid alignment is underdetermined for the given point sets."""


class EventFormatError(EvtrackError):
    """Malformed event stream data or event file."""


class ConfigError(EvtrackError):
    """Invalid or inconsistent run configuration."""


class MetricError(EvtrackError):
    """Evaluation metric undefined for the given inputs."""


class TrackingError(EvtrackError):
    """Frame fitting could not proceed."""


class NonFiniteObjectiveError(EvtrackError):
    """An objective term evaluated to a non-finite value."""

    def __init__(self, term: str, value: float):
        super().__init__(f"objective term '{term}' is non-finite ({value})")
        self.term = term
        self.value = value
