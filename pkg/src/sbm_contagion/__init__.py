"""Default contagion in a generalized stochastic block model."""

__version__ = "0.1.0"
