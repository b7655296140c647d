"""LiDAR scan-matching odometry for surface vehicles, with GPS gap filling."""

__version__ = "0.1.0"
