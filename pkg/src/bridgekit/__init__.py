"""Representation-guided Markov-bridge generation on discrete molecular graphs."""

__version__ = "0.1.0"
