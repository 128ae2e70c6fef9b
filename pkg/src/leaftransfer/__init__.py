"""Transformation groups, foliations and leaf-constrained transfer learning."""

__version__ = "0.1.0"
