"""Numerical laboratory for stochastic linear advection of differential k-forms on R^n."""

import jax

jax.config.update("jax_enable_x64", True)

__version__ = "0.1.0"
