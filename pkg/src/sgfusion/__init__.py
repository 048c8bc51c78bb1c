"""Scene-graph consistency checks for camera/LiDAR fusion under frustum attacks."""

__version__ = "0.1.0"
