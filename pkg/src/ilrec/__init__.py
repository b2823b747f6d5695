"""Token-efficient item representation for sequential recommendation.

Items enter a small causal-LM prompt as single visual-feature tokens through
a trainable adaptor, get aligned to the language space by next-item property
prediction, and are recommended by retrieval against per-type item features
via a learnable [REC] token.
"""

__version__ = "0.1.0"
