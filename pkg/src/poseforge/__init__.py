"""poseforge: end-to-end transformer docking with confidence-ranked screening."""

__version__ = "0.1.0"
