"""Radar echo extrapolation with test-time-trained spatio-temporal translators, in numpy."""
from .tensor import GraphConsumedError, NonFiniteError, Tensor, no_grad, tensor

__version__ = "0.1.0"

__all__ = ["GraphConsumedError", "NonFiniteError", "Tensor", "no_grad", "tensor", "__version__"]
