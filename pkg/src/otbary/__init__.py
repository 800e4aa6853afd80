"""Equilibrium quality lines and Wasserstein barycenters of discrete measures.

Two solution paths: a coupling linear program handled by an in-house sparse
revised simplex, and (for quadratic costs) a nonsmooth concave dual ascent
with kd-tree supergradient evaluation and least-squares density recovery.
"""

from .measures import CostSpec, DiscreteMeasure, Grid, ot_cost, quantize, stability_bound

__all__ = [
    "CostSpec",
    "DiscreteMeasure",
    "Grid",
    "ot_cost",
    "quantize",
    "stability_bound",
]

__version__ = "0.1.0"
