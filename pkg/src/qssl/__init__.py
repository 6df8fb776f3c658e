"""Hybrid quantum-classical contrastive self-supervised learning.

A statevector simulator with parameter-shift gradients, a small
reverse-mode autodiff engine for the classical layers, NT-Xent training,
Hilbert-Schmidt diagnostics, linear probing and a command line driver.
"""

from .config import RunConfig
from .estimators import ContrastiveEncoder
from .metrics_probe import LinearProbe

__version__ = "0.1.0"
__all__ = ["ContrastiveEncoder", "LinearProbe", "RunConfig", "__version__"]
