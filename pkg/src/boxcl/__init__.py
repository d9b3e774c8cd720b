"""Continual learning for small seq2seq models via low-forgetting-risk box regions."""

__version__ = "0.1.0"
