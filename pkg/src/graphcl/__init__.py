"""Graph-enhanced contrastive learning for abstractive summarization."""

__version__ = "0.1.0"
