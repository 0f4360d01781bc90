"""Range-image LiDAR semantic segmentation, desk-scale and fully testable."""

__version__ = "0.1.0"
