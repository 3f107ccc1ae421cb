"""Detection-gated slice segmentation with previous-slice context fusion."""

__version__ = "0.1.0"
