"""Case-based deployment-time learning with a neural-linear logistic UCB reranker."""

__version__ = "0.1.0"

from ._backend import BACKEND  # noqa: E402

__all__ = ["BACKEND", "__version__"]
