"""LP and MILP solving: revised simplex, branch-and-bound and oracles."""

from __future__ import annotations

import numpy as np

from .problem import (EQ, GAP_REACHED, GE, INFEASIBLE, LE, NODE_LIMIT, OPTIMAL, UNBOUNDED, LpBuilder,
                      LpProblem, LpSolution, MilpProblem, MilpSolution, NodeRecord, SolverError,
                      relative_gap, write_lp)
from .simplex import Basis, RevisedSimplex, solve_revised

ENGINES = ("revised", "highs")


def solve_lp(problem: LpProblem, engine: str = "revised", basis: Basis | None = None,
             lb: np.ndarray | None = None, ub: np.ndarray | None = None) -> LpSolution:
    """Solve an LP with the chosen engine.

    Row duals are the objective change per unit increase of the row's
    right-hand side, so a binding ``<=`` row of a minimisation has a
    non-positive dual and a binding ``>=`` row a non-negative one.
    """
    if engine == "revised":
        return RevisedSimplex(problem).solve(lb=lb, ub=ub, basis=basis)
    if engine == "highs":
        from .highs import solve_highs

        return solve_highs(problem, lb=lb, ub=ub)
    raise ValueError(f"unknown LP engine {engine!r}; choose from {ENGINES}")


from .bnb import enumerate_exhaustive, solve_milp  # noqa: E402

__all__ = ["EQ", "GE", "LE", "OPTIMAL", "INFEASIBLE", "UNBOUNDED", "GAP_REACHED", "NODE_LIMIT", "ENGINES",
           "Basis", "LpBuilder", "LpProblem", "LpSolution", "MilpProblem", "MilpSolution", "NodeRecord",
           "RevisedSimplex", "SolverError", "enumerate_exhaustive", "relative_gap", "solve_lp", "solve_milp",
           "solve_revised", "write_lp"]
