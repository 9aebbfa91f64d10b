"""Few-shot segmentation with word-embedding-conditioned stacked co-attention."""

__version__ = "0.1.0"
