"""Multiplicative and additive adversarial attacks on a toy video classifier."""

__version__ = "0.1.0"
