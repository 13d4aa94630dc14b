"""Normalizing-flow priors and projected Langevin samplers for imaging inverse problems."""

__version__ = "0.1.0"
