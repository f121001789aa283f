"""Robust self-supervised subspace clustering with correntropy and block-diagonal regularization."""

__version__ = "0.1.0"
