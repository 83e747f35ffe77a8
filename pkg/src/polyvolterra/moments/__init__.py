"""Deterministic moment solvers."""

from .classical import classical_moments_ode, generator_matrix
from .picard import PicardDivergence, solve_moments_picard
from .stepping import (CoeffTable, MemoryBoundExceeded, MomentBlowup, MomentTable,
                       moments_at_diagonal, reconstruct_moments, solve_all_coefficients,
                       solve_coefficients, solve_moments)
from .voc import (affine_moments_recursive, first_moment_voc, resolvent_pair,
                  second_moment_voc, voc_moments)

__all__ = [
    "CoeffTable", "MemoryBoundExceeded", "MomentBlowup", "MomentTable", "PicardDivergence",
    "affine_moments_recursive", "classical_moments_ode", "first_moment_voc",
    "generator_matrix", "moments_at_diagonal", "reconstruct_moments", "resolvent_pair",
    "second_moment_voc", "solve_all_coefficients", "solve_coefficients", "solve_moments",
    "solve_moments_picard", "voc_moments",
]
