"""Drift-adaptive multivariate time-series forecasting.

A temporal conditional variational autoencoder: a transformer
encoder/decoder whose attention heads are gated by temporal factors drawn
from a Hawkes-modulated attention stream, with a latent path that matches a
factor-conditioned posterior against a factor-conditioned prior through
continuous normalizing flows.  Runs on a self-contained numpy-backed
reverse-mode autodiff engine.
"""

from tcvae.autodiff import (
    GraphError,
    NonFiniteError,
    Parameter,
    Tensor,
    gradient_check,
    no_grad,
    seeded_gaussian,
    set_default_dtype,
)

__version__ = "0.1.0"
