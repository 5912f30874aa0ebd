"""Expected-utility portfolio optimization under normal mean-variance
mixture return models: closed-form exponential-utility optima via Laplace
transforms, a moment-expansion optimizer for general smooth utilities, a
large-market convergence study, and a Monte Carlo verification path."""

from .mixing import GIG, BoundedUniform, Constant, Exponential, MixingDistribution
from .model import MarketModel, Portfolio, TransformedModel, transform

__version__ = "0.1.0"

__all__ = [
    "MixingDistribution",
    "Constant",
    "Exponential",
    "GIG",
    "BoundedUniform",
    "MarketModel",
    "TransformedModel",
    "Portfolio",
    "transform",
    "__version__",
]
