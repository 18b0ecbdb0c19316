"""Exception hierarchy shared across the toolchain."""


class TinyfuseError(Exception):
    """Base class for all tinyfuse errors."""


class ConfigError(TinyfuseError):
    """Invalid configuration value (training/distillation/profile/CLI)."""


class GraphError(TinyfuseError):
    """Structurally invalid network graph."""


class ShapeError(GraphError):
    """Shape inference failed; message names the offending node."""


class DataError(TinyfuseError):
    """Dataset generation, persistence or labeling problem."""


class TrainingDivergedError(TinyfuseError):
    """Loss became non-finite during training."""


class NonFiniteError(TinyfuseError):
    """A NaN/Inf appeared in an activation or gradient; message names the node."""


class QuantizationError(TinyfuseError):
    """Quantization parameter or coverage problem."""


class EngineError(TinyfuseError):
    """Integer inference engine rejected a model or input."""


class ContainerError(TinyfuseError):
    """Model container is malformed (magic/version/blob mismatch)."""


class PlanError(TinyfuseError):
    """Model does not fit the hardware profile even in the outermost level."""


class SearchError(TinyfuseError):
    """Architecture search could not produce any trainable candidate."""
