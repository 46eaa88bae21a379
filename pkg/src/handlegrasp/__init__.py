"""Handle detection for two-finger parallel-jaw grasping from a single RGB-D frame."""

__version__ = "0.1.0"
