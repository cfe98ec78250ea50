"""
Dense two-phase tableau simplex.

Solves ``max c·x`` subject to ``A_ub x <= b_ub``, ``A_ge x >= b_ge``,
``A_eq x = b_eq`` and ``x >= 0``. Pivoting follows Bland's rule on both sides
(lowest-index entering column with a negative reduced cost; among tied
ratios, the row whose basic variable has the lowest index), so the method
terminates on degenerate problems and the same input always yields the same
vertex.

Phase one minimises the sum of artificial variables. Artificials still basic
at zero afterwards are pivoted out on any usable column; rows where that is
impossible are linear combinations of the others and are dropped.
"""

import logging
from dataclasses import dataclass

import numpy as np

from seer.errors import LPInfeasibleError, LPSolverError

logger = logging.getLogger(__name__)

PIVOT_TOL = 1e-9
FEASIBILITY_TOL = 1e-7


@dataclass(frozen=True, eq=False)
class LPResult:
    x: np.ndarray
    objective: float
    iterations: tuple[int, int]


def _rows(matrix, rhs, n: int) -> tuple[np.ndarray, np.ndarray]:
    if matrix is None:
        return np.zeros((0, n)), np.zeros(0)
    matrix = np.atleast_2d(np.asarray(matrix, dtype=float))
    rhs = np.asarray(rhs, dtype=float).ravel()
    if matrix.shape != (len(rhs), n):
        raise ValueError(f"constraint block must be ({len(rhs)}, {n}), got {matrix.shape}")
    return matrix, rhs


def _pivot(tableau: np.ndarray, basis: np.ndarray, row: int, col: int):
    tableau[row] /= tableau[row, col]
    factors = tableau[:, col].copy()
    factors[row] = 0.0
    tableau -= np.outer(factors, tableau[row])
    basis[row] = col


def _run(tableau: np.ndarray, basis: np.ndarray, columns: int, limit: int, phase: int) -> int:
    """Pivot until no entering column remains among the first ``columns``."""
    iterations = 0
    while True:
        costs = tableau[-1, :columns]
        candidates = np.flatnonzero(costs < -PIVOT_TOL)
        if not len(candidates):
            return iterations
        if iterations >= limit:
            raise LPSolverError(f"simplex phase {phase} hit the iteration cap ({limit})")
        col = int(candidates[0])
        column = tableau[:-1, col]
        positive = np.flatnonzero(column > PIVOT_TOL)
        if not len(positive):
            raise LPSolverError(f"LP is unbounded along column {col}")
        ratios = tableau[positive, -1] / column[positive]
        best = ratios.min()
        tied = positive[ratios <= best + PIVOT_TOL * max(1.0, abs(best))]
        row = int(tied[np.argmin(basis[tied])])
        logger.debug("phase %d pivot %d: column %d enters, row %d (basic %d) leaves",
                     phase, iterations + 1, col, row, basis[row])
        _pivot(tableau, basis, row, col)
        iterations += 1


def solve(
    c,
    A_ub=None,
    b_ub=None,
    A_eq=None,
    b_eq=None,
    A_ge=None,
    b_ge=None,
    max_iterations: int = 20000,
) -> LPResult:
    """Maximise ``c·x``; raises ``LPInfeasibleError`` or ``LPSolverError``."""
    # pylint: disable=invalid-name,too-many-arguments,too-many-locals
    c = np.asarray(c, dtype=float).ravel()
    n = len(c)
    A_ub, b_ub = _rows(A_ub, b_ub, n)
    A_ge, b_ge = _rows(A_ge, b_ge, n)
    A_eq, b_eq = _rows(A_eq, b_eq, n)

    n_ub, n_ge = len(b_ub), len(b_ge)
    n_slack = n_ub + n_ge
    rows = np.vstack([A_ub, A_ge, A_eq])
    rhs = np.concatenate([b_ub, b_ge, b_eq])
    slack = np.zeros((len(rhs), n_slack))
    slack[np.arange(n_ub), np.arange(n_ub)] = 1.0
    slack[n_ub + np.arange(n_ge), n_ub + np.arange(n_ge)] = -1.0

    body = np.hstack([rows, slack])
    negative = rhs < 0
    body[negative] *= -1.0
    rhs = np.where(negative, -rhs, rhs)

    # A row starts feasible on its own slack when that slack has coefficient +1.
    basis = np.full(len(rhs), -1, dtype=np.int64)
    for r in range(len(rhs)):
        if r < n_slack and body[r, n + r] == 1.0:
            basis[r] = n + r
    needs_artificial = np.flatnonzero(basis < 0)
    n_art = len(needs_artificial)
    artificial = np.zeros((len(rhs), n_art))
    artificial[needs_artificial, np.arange(n_art)] = 1.0
    basis[needs_artificial] = n + n_slack + np.arange(n_art)

    width = n + n_slack + n_art
    tableau = np.zeros((len(rhs) + 1, width + 1))
    tableau[:-1, :n + n_slack] = body
    tableau[:-1, n + n_slack:width] = artificial
    tableau[:-1, -1] = rhs

    phase_one = 0
    if n_art:
        tableau[-1, n + n_slack:width] = 1.0
        for r in needs_artificial:
            tableau[-1] -= tableau[r]
        phase_one = _run(tableau, basis, width, max_iterations, phase=1)
        residual = -tableau[-1, -1]
        logger.debug("phase 1 finished after %d pivots, artificial sum %.3g", phase_one, residual)
        if residual > FEASIBILITY_TOL * max(1.0, float(np.abs(rhs).max(initial=0.0))):
            raise LPInfeasibleError("constraints", required=float(residual), available=0.0)

        keep = np.ones(len(basis), dtype=bool)
        for r in range(len(basis)):
            if basis[r] < n + n_slack:
                continue
            usable = np.flatnonzero(np.abs(tableau[r, :n + n_slack]) > PIVOT_TOL)
            if len(usable):
                _pivot(tableau, basis, r, int(usable[0]))
            else:
                keep[r] = False
        if not keep.all():
            logger.debug("dropping %d redundant constraint row(s)", int((~keep).sum()))
            tableau = np.vstack([tableau[:-1][keep], tableau[-1:]])
            basis = basis[keep]
        tableau = np.hstack([tableau[:, :n + n_slack], tableau[:, -1:]])

    width = n + n_slack
    tableau[-1] = 0.0
    tableau[-1, :n] = -c
    for r, col in enumerate(basis):
        if tableau[-1, col] != 0.0:
            tableau[-1] -= tableau[-1, col] * tableau[r]
    phase_two = _run(tableau, basis, width, max_iterations - phase_one, phase=2)

    solution = np.zeros(width)
    solution[basis] = tableau[:-1, -1]
    x = np.maximum(solution[:n], 0.0)
    objective = float(c @ x)
    logger.debug("phase 2 finished after %d pivots, objective %.6g", phase_two, objective)
    return LPResult(x=x, objective=objective, iterations=(phase_one, phase_two))
