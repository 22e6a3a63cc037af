"""Deep appearance-feature extraction for nodule montage images."""

__version__ = "0.1.0"
