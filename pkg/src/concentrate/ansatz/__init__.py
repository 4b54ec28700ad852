"""Approximate solutions near a stationary curve and the reduced fixed point (N = 1)."""

from .build import AnsatzExpansion, build_ansatz, build_order1, residual_interior, residual_scan
from .glue import Frame, assemble_global, decay_fit, make_frame
from .line import DiscreteLine
from .reduce import (ReducedState, ReducedSystem, error_components_at_zero, error_scan,
                     solve_reduced_system)
from .stretched import StretchedProblem, make_problem

__all__ = ["AnsatzExpansion", "DiscreteLine", "Frame", "ReducedState", "ReducedSystem",
           "StretchedProblem", "assemble_global", "build_ansatz", "build_order1", "decay_fit",
           "error_components_at_zero", "error_scan", "make_frame", "make_problem",
           "residual_interior", "residual_scan", "solve_reduced_system"]
