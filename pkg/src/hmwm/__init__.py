"""Hierarchical world model with attractor-phase path integration.

A small numpy library that learns, from short synthetic videos of moving
shapes, a two-level latent state: a content-bearing code and a bank of
circular phases advanced by a learned shift network.  Frame prediction
is phase arithmetic plus decoding; analysis utilities probe what the
learned latents carry and how transitions compose.
"""

__version__ = "0.1.0"
