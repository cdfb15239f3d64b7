"""LP convenience layer over the conic backend.

Same interior-point core as the SDP path; no simplex.  Variables are
nonnegative by default (`free=True` lifts that).  Inequalities get
explicit slack variables, matching the equality-only solver form.
"""

from __future__ import annotations

import numpy as np

from . import backends
from .program import FREE, NONNEG, ConicProgram, SolveResult


def solve_lp(
    obj,
    A_eq=None,
    b_eq=None,
    A_ub=None,
    b_ub=None,
    free: bool = False,
    maximize: bool = False,
    tol: float = 1e-8,
    max_iter: int = 200,
) -> SolveResult:
    """Solve min/max obj'x over {A_eq x = b_eq, A_ub x <= b_ub, x >= 0}.

    Returns the backend SolveResult; `result.x[:n]` holds the decision
    variables, slack values follow.  For `maximize=True` the reported
    objective values are negated back to the maximization sense.
    """
    obj = np.asarray(obj, dtype=float)
    n = obj.shape[0]
    prog = ConicProgram()
    xblk = prog.add_block(FREE if free else NONNEG, n, "x")
    sign = -1.0 if maximize else 1.0
    prog.add_obj(np.arange(n), sign * obj)
    if A_eq is not None and len(A_eq):
        A_eq = np.atleast_2d(np.asarray(A_eq, dtype=float))
        b_eq = np.atleast_1d(np.asarray(b_eq, dtype=float))
        for i in range(A_eq.shape[0]):
            nz = np.nonzero(A_eq[i])[0]
            prog.add_row(nz, A_eq[i, nz], b_eq[i])
    if A_ub is not None and len(A_ub):
        A_ub = np.atleast_2d(np.asarray(A_ub, dtype=float))
        b_ub = np.atleast_1d(np.asarray(b_ub, dtype=float))
        sblk = prog.add_block(NONNEG, A_ub.shape[0], "slack")
        for i in range(A_ub.shape[0]):
            nz = np.nonzero(A_ub[i])[0]
            idx = np.concatenate([nz, [sblk.offset + i]])
            val = np.concatenate([A_ub[i, nz], [1.0]])
            prog.add_row(idx, val, b_ub[i])
    res = backends.solve(prog, tol=tol, max_iter=max_iter)
    if maximize and res.status == "optimal":
        res.primal_obj = -res.primal_obj
        res.dual_obj = -res.dual_obj
    if maximize and res.status in ("primal_infeasible", "dual_infeasible"):
        pass  # status semantics unchanged by the sign flip
    return res


def coordinate_sup(k: int, n: int, A_eq=None, b_eq=None, A_ub=None, b_ub=None,
                   tol: float = 1e-8):
    """sup of coordinate k over a nonneg-variable polyhedron.

    Returns (value, status); value is +inf when the LP is unbounded.
    """
    obj = np.zeros(n)
    obj[k] = 1.0
    res = solve_lp(obj, A_eq=A_eq, b_eq=b_eq, A_ub=A_ub, b_ub=b_ub,
                   maximize=True, tol=tol)
    if res.status == "dual_infeasible":
        return np.inf, res.status
    if res.status == "optimal":
        return res.primal_obj, res.status
    return np.nan, res.status
