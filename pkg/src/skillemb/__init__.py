"""Skill embeddings from multi-view demonstrations with an adversarial entropy regularizer."""

__version__ = "0.1.0"
