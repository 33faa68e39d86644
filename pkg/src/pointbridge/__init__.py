"""Cross-modal distillation and natural-language retrieval for lidar point clouds."""

__version__ = "0.1.0"
