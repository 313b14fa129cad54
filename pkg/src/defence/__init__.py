"""Stereo image de-fencing: disparity-driven fence segmentation and
TV-regularized reconstruction of the occluded background."""

__version__ = "0.1.0"
