"""Numerical laboratory for the constrained two-phase Bernoulli problem."""

from .fields import (
    DomainSpec,
    FieldPair,
    GridSpec,
    Params,
    ScalarField,
    VectorField,
    blowup_rescale,
    gradient,
    laplacian,
    make_field,
    read_grid,
    reference_plane_pair,
    write_grid,
)

__version__ = "0.1.0"
