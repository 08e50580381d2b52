"""Few-shot styled handwritten word generation."""

__version__ = "0.1.0"
