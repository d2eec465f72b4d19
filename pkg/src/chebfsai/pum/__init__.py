"""Partition of unity discretisation on regular covers of the unit square."""

from .assembly import (
    AssembledSystem,
    NitscheParams,
    assemble,
    estimate_penalties,
    evaluate,
    l2_error,
    local_projection,
    nitsche_form,
)
from .cover import Cover, PuSpace, evaluate_pu
from .operators import AnisotropySpec, ManufacturedSolution, manufactured, polynomial_solution
from .transfer import build_prolongation

__all__ = [
    "AssembledSystem",
    "AnisotropySpec",
    "Cover",
    "ManufacturedSolution",
    "NitscheParams",
    "PuSpace",
    "assemble",
    "build_prolongation",
    "estimate_penalties",
    "evaluate",
    "evaluate_pu",
    "l2_error",
    "local_projection",
    "manufactured",
    "nitsche_form",
    "polynomial_solution",
]
