"""Bilevel reward learning with policy-aware hypergradients on tabular MDPs."""

__version__ = "0.1.0"
