"""Alternating disentanglement of discrete and continuous latent factors.

A self-contained, deterministic implementation: a from-scratch MLP VAE with
hand-derived gradients, a per-dimension beta cascade schedule, an exact
minimum-cost-flow solver for the batch discrete-code assignment, a synthetic
factor-labeled dataset, and a metrics suite with executable identity checks.
"""

from . import assignment, cascade, data, metrics, nn, trainer, traversal
from .rng import Prng

__all__ = [
    "Prng",
    "assignment",
    "cascade",
    "data",
    "metrics",
    "nn",
    "trainer",
    "traversal",
]
