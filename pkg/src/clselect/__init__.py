"""Selection of sub-likelihood components for composite likelihood estimation by Gibbs sampling."""

__version__ = "0.1.0"
