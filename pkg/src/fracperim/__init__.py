"""Numerical fractional vector calculus for indicator functions and Lipschitz fields.

The package evaluates Riesz-type fractional gradients and divergences,
fractional perimeters and the associated variation measures, and checks the
identities that tie them together (integration by parts, Leibniz rules,
Gauss-Green formulas, blow-ups and mollification).

Modules
-------
kernel
    Normalizing constants and the Riesz kernel.
geometry
    Set descriptions with exact membership and ray intersections.
fields
    Lipschitz test functions with compact support.
quadrature
    Adaptive singular cubature and Monte Carlo estimators.
fracops
    Fractional operators and perimeters.
oracles
    Closed-form reference values and the golden table.
analysis
    Variation measures, normals, blow-ups and identity checks.
cli
    Experiment runner and subcommands.
"""

from .fields import FieldSpec
from .geometry import (Ball, Complement, HalfSpace, Intersection, IntervalUnion, Polygon, SetSpec, Union,
                       koch_prefractal, quarter_plane, square)
from .kernel import AlphaContext, make_context
from .quadrature import BatchEstimate, MeasureEstimate, QuadratureConfig

__version__ = "0.1.0"

__all__ = [
    "AlphaContext",
    "Ball",
    "BatchEstimate",
    "Complement",
    "FieldSpec",
    "HalfSpace",
    "Intersection",
    "IntervalUnion",
    "MeasureEstimate",
    "Polygon",
    "QuadratureConfig",
    "SetSpec",
    "Union",
    "koch_prefractal",
    "make_context",
    "quarter_plane",
    "square",
]
