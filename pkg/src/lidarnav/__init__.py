"""LiDAR end-to-end driving: sparse convolution, evidential fusion, closed-loop simulation."""

__version__ = "0.1.0"
