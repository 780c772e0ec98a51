"""Span-based biomedical entity recognition: corpora, taggers, training and strict evaluation."""

__version__ = "0.1.0"
