"""Multi-camera 3D multi-object tracking on a single global tracklet graph."""

__version__ = "0.1.0"
