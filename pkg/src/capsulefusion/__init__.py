"""Self-supervised U-Net pretraining and feature-fusion classification on a numpy autodiff core."""

__version__ = "0.1.0"
