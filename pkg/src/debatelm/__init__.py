"""Desk-scale toolkit for domain-adaptive masked-language-model pretraining.

Covers the full pipeline for building a debate-domain encoder: corpus
ingestion and splitting, WordPiece vocabulary training, MLM batch
construction, a from-scratch numpy transformer encoder with exact
reverse-mode gradients, perplexity and task evaluation, fine-tuning
sweeps with seed averaging, and cluster-based corpus ablations.
"""

from debatelm.errors import ConfigError, DataError, NumericError

__version__ = "0.1.0"

__all__ = ["ConfigError", "DataError", "NumericError", "__version__"]
