"""Randomized-feature actor-critic (frozen random bases, trained linear readouts)
alongside a fully trainable dense actor-critic baseline."""

__version__ = "0.1.0"
