"""fnscope: attribute each object-detection false negative to the detector component that caused it."""

__version__ = "0.1.0"
