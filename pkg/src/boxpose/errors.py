"""Exception types shared across the pipeline."""


class BoxPoseError(Exception):
    """Base class for all library errors."""


class BehindCameraError(BoxPoseError):
    """A point to be projected has non-positive camera-frame depth."""


class EmptyDetectionError(BoxPoseError):
    """An operation that needs at least one valid keypoint got none."""


class InsufficientCorrespondencesError(BoxPoseError):
    """PnP needs at least 4 correspondences on distinct model vertices."""


class NumericalFailureError(BoxPoseError):
    """A solver diverged or hit a rank-deficient system.

    `best` carries the best result found before failure, when one exists.
    """

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class UndefinedViewpointError(BoxPoseError):
    """Viewpoint angles are undefined (camera at the object center)."""


class SceneGenerationError(BoxPoseError):
    """Rejection sampling could not satisfy the scene constraints."""
