"""Zero-shot speaker and style cloning on a synthetic parametric corpus."""

__version__ = "0.1.0"
