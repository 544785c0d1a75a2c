"""Error taxonomy for the solver."""


class TaudgError(Exception):
    """Base class for all solver errors."""


class ConfigError(TaudgError):
    """Malformed or inconsistent run configuration."""


class MeshError(TaudgError):
    """Bad mesh file, inconsistent connectivity or inverted element."""


class TimeScaleError(TaudgError):
    """No advective or viscous time scale available (zero speed, zero viscosity)."""


class DivergedError(TaudgError):
    """NaN/Inf detected in the state during smoothing."""


class StallError(TaudgError):
    """Multigrid residual stopped decreasing before reaching the tolerance."""


class EstimationError(TaudgError):
    """Truncation-error estimation preconditions violated."""


class AdaptationError(TaudgError):
    """Order selection or jump limiting could not produce a valid order field."""
