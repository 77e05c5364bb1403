"""Odometry evaluation by forward-tracking annotated scene keypoints."""

from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
