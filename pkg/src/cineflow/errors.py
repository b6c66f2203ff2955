"""Exception types shared across the package."""


class CineflowError(Exception):
    """Base class for all package errors."""


class ShapeMismatchError(CineflowError):
    """Array shapes are incompatible for the requested operation."""


class NonFiniteError(CineflowError):
    """NaN or Inf encountered where finite values are required."""


class NonFiniteGradientError(NonFiniteError):
    """Gradient contains NaN/Inf; carries the offending parameter index."""

    def __init__(self, param_index: int, param_name: str = ""):
        self.param_index = param_index
        self.param_name = param_name
        label = f" ({param_name})" if param_name else ""
        super().__init__(f"non-finite gradient for parameter {param_index}{label}")


class WatertightError(CineflowError):
    """Mesh is not watertight; inside/outside via winding number is ill-defined."""


class DegenerateInputError(CineflowError):
    """Input geometry is degenerate (coplanar, collinear, or collapsed)."""


class AtlasError(CineflowError):
    """Atlas members do not share a common topology."""


class DatasetError(CineflowError):
    """Training dataset is malformed (missing phases, ragged sequences)."""


class RegistrationError(CineflowError):
    """Slice registration cannot proceed (e.g. no ED-phase contours)."""


class DivergenceError(CineflowError):
    """Optimization produced a non-finite loss."""


class CheckpointError(CineflowError):
    """Checkpoint container is unreadable."""


class ChecksumError(CheckpointError):
    """Checkpoint content checksum does not validate."""


class VersionError(CheckpointError):
    """Checkpoint format version is not supported by this build."""


class ConfigError(CineflowError):
    """Configuration is invalid (unknown key, bad value)."""
