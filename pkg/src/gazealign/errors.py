"""Exception and warning types shared across the package."""


class GazeAlignError(Exception):
    """Base class for data and convergence errors (CLI exit code 2)."""


class DegenerateRay(GazeAlignError):
    """Gaze origin and target coincide, so no direction is defined."""


class OutOfFrustum(GazeAlignError):
    """Direction points away from the camera (g_z >= 0)."""


class ProjectiveDegenerate(GazeAlignError):
    """Homogeneous coordinate of a homography image is too close to zero."""


class InsufficientSamples(GazeAlignError):
    """An alignment unit has no samples to fit."""


class UncoveredSample(GazeAlignError):
    """A sample is not covered by any alignment model."""


class NoSamples(GazeAlignError):
    """Evaluation requested on an empty dataset."""


class NonFiniteLoss(GazeAlignError):
    """Training produced a NaN or infinite loss."""

    def __init__(self, batch_index, epoch=None):
        self.batch_index = batch_index
        self.epoch = epoch
        super().__init__(f"non-finite loss at epoch {epoch}, batch {batch_index}")


class GimbalLockWarning(UserWarning):
    """Euler decomposition near the singular middle angle; roll set to 0."""


class OutOfFrustumWarning(UserWarning):
    """Predicted pitch was clamped to stay inside (-90, 90) degrees."""
