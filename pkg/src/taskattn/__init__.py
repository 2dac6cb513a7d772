"""Attentive information sharing for multi-task sentence classification."""

from taskattn.kernels import BACKEND

__version__ = "0.1.0"
__all__ = ["BACKEND", "__version__"]
