"""Symbolic exterior calculus and Cartan equivalence for fourth-order linear operators."""
from __future__ import annotations

__version__ = "0.1.0"
