"""Hedging laboratory for variable annuities with a GMMB rider."""

from .market import BsParams, Cfm, HestonParams, Ifm, PathGrid
from .liability import ContractTerms, LiabilityDecomposition

__all__ = [
    "BsParams",
    "HestonParams",
    "Cfm",
    "Ifm",
    "PathGrid",
    "ContractTerms",
    "LiabilityDecomposition",
]

__version__ = "0.1.0"
