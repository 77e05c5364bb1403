"""Exception types.

Every error carries a short machine-readable ``code`` so the CLI can emit
``code: message`` lines without a lookup table.
"""

from __future__ import annotations


class ViceError(Exception):
    code = "E_VICE"


# geometry

class FrameMismatchError(ViceError, ValueError):
    code = "E_FRAME_MISMATCH"

    def __init__(self, left, right):
        self.left = left
        self.right = right
        super().__init__(f"cannot compose: left pose starts in {left}, right pose ends in {right}")


class InvalidRotationError(ViceError, ValueError):
    code = "E_INVALID_ROTATION"


class BehindCameraError(ViceError, ValueError):
    code = "E_BEHIND_CAMERA"


class NonConvergenceError(ViceError, ArithmeticError):
    code = "E_NON_CONVERGENCE"

    def __init__(self, residual: float, iterations: int):
        self.residual = residual
        self.iterations = iterations
        super().__init__(
            f"distortion inversion did not converge after {iterations} iterations "
            f"(residual {residual:.3e} in normalized units)"
        )


# depth

class NoIntersectionError(ViceError, ValueError):
    code = "E_NO_INTERSECTION"


class InsufficientSupportError(ViceError, ValueError):
    code = "E_INSUFFICIENT_SUPPORT"


class EmptyDepthImageError(ViceError, ValueError):
    code = "E_EMPTY_DEPTH"


# tracking / ingestion

class AlignmentError(ViceError, ValueError):
    code = "E_ALIGNMENT"


class ExtrapolationError(AlignmentError):
    code = "E_EXTRAPOLATION"


class RespawnError(ViceError, RuntimeError):
    code = "E_RESPAWN"

    def __init__(self, frame: int, reason: str):
        self.frame = frame
        self.reason = reason
        super().__init__(f"cannot respawn reference point at frame {frame}: {reason}")


class MissingInputError(ViceError, FileNotFoundError):
    code = "E_MISSING_INPUT"


class MalformedRowError(ViceError, ValueError):
    code = "E_MALFORMED_ROW"

    def __init__(self, path, line: int, reason: str):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}:{line}: {reason}")


class NonMonotonicError(ViceError, ValueError):
    code = "E_NON_MONOTONIC"

    def __init__(self, path, line: int, previous: int, current: int):
        self.path = str(path)
        self.line = line
        super().__init__(
            f"{path}:{line}: timestamp {current} does not increase (previous {previous})"
        )


class SchemaError(ViceError, ValueError):
    code = "E_SCHEMA"

    def __init__(self, pointer: str, reason: str):
        self.pointer = pointer
        super().__init__(f"{pointer or '/'}: {reason}")


class BoundsError(SchemaError):
    code = "E_OUT_OF_BOUNDS"


class SceneSpecError(ViceError, ValueError):
    code = "E_SCENE_SPEC"


class ConfigError(ViceError, ValueError):
    code = "E_CONFIG"


# metrics

class NoOverlapError(ViceError, ValueError):
    code = "E_NO_OVERLAP"


class InvalidSubsetError(ViceError, ValueError):
    code = "E_INVALID_SUBSET"


class DegenerateSamplingError(ViceError, ValueError):
    code = "E_DEGENERATE_SAMPLING"
