"""1-bit constructive-interference precoding: solvers, precoders and Monte Carlo experiments."""

__version__ = "1.0.0"
