"""Exception types shared across the package."""


class DegenerateMeshError(ValueError):
    """Mesh has no triangle with nonzero area."""


class DegenerateCloudError(ValueError):
    """Point cloud cannot be normalized (all points identical)."""


class ConsistencyError(ValueError):
    """Inputs that must describe the same object disagree."""


class DatasetError(RuntimeError):
    """Dataset tree or entry cannot be used."""


class CheckpointMismatchError(RuntimeError):
    """Checkpoint tensors do not match the target architecture."""


class DivergenceError(RuntimeError):
    """Training loss became non-finite."""
