"""Classical and hierarchical Bayesian species sensitivity distributions."""
__version__ = "0.1.0"
