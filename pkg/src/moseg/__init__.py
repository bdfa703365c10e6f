"""Two-stream transformer toolkit for moving-object instance segmentation."""

__version__ = "0.1.0"
