"""Reverse and forward KL greedification for approximate policy iteration."""

from __future__ import annotations

__version__ = "0.1.0"

from .errors import KlGreedError
from .greedify import HARD_FKL, HARD_RKL, SOFT_FKL, SOFT_RKL, KlVariant
from .mdp import FiniteMdp, exact_soft_values
from .policy import SoftmaxPolicy, SquashedGaussianPolicy

__all__ = [
    "__version__",
    "KlGreedError",
    "KlVariant",
    "SOFT_RKL",
    "SOFT_FKL",
    "HARD_RKL",
    "HARD_FKL",
    "FiniteMdp",
    "exact_soft_values",
    "SoftmaxPolicy",
    "SquashedGaussianPolicy",
]
