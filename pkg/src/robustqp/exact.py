"""Ground-truth machinery: enumeration-based worst-case evaluation and
Benders constraint generation for the full min-max problem.

Exactness rests on convexity of the objective in the uncertain vector:
the maximum over a bounded mixed-integer polyhedral set is attained at a
vertex of some integer slice, so enumerating those vertices and taking
the maximum is exact.  The Benders master accumulates scenario cuts
(convex quadratic in the decision) and is solved through the conic
backend; subproblems reuse one enumeration pass.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field

import numpy as np

from .conic import FREE, NONNEG, PSD, ConicProgram, backends
from .lifting import enumerate_set, recourse_dual_general
from .model import RqpInstance, TwoStageData
from .reformulate import SymExpr, _add_polytope_rows, emit_sym_equality

BENDERS_TOL = 1e-6


def _accept(res, tol: float, what: str):
    """Accept optimal results, or stalled ones whose residuals are still
    well inside the caller's accuracy needs."""
    if res.status == "optimal":
        return res
    if res.status in ("max_iter", "numerical_failure") and res.x is not None:
        if max(res.residuals) <= max(100 * tol, 1e-6):
            return res
    raise RuntimeError(f"{what} failed: {res.status} residuals {res.residuals}")


# ---------------------------------------------------------------------------
# recourse problems


def solve_recourse_primal(ts: TwoStageData, x, xi, tol: float = 1e-8):
    """Second-stage cost by solving the recourse QP directly."""
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    D2 = ts.num_recourse
    T = ts.num_constraints
    rhs = ts.T(x) @ xi + ts.h(x)
    lin = ts.R @ xi + ts.r
    prog = ConicProgram()
    y = prog.add_block(FREE, D2, "y")
    s = prog.add_block(NONNEG, T, "s")
    for i in range(T):
        nz = np.nonzero(ts.W[i])[0]
        idx = [y.offset + int(k) for k in nz] + [s.offset + i]
        val = list(ts.W[i][nz]) + [-1.0]
        prog.add_row(idx, val, rhs[i])
    prog.add_obj(np.arange(y.offset, y.offset + D2), lin)
    if np.max(np.abs(ts.P)) > 0:
        rp = ts.P.shape[0]
        u = prog.add_block(FREE, 1, "u")
        blk = prog.add_block(PSD, rp + 1, "epi")
        expr = SymExpr(rp + 1)
        C0 = np.zeros((rp + 1, rp + 1))
        C0[:rp, :rp] = np.eye(rp)
        expr.add_const(C0)
        for d in range(D2):
            Cd = np.zeros((rp + 1, rp + 1))
            Cd[:rp, rp] = ts.P[:, d]
            Cd[rp, :rp] = ts.P[:, d]
            expr.add_scalar(y.offset + d, Cd)
        Cu = np.zeros((rp + 1, rp + 1))
        Cu[rp, rp] = 1.0
        expr.add_scalar(u.offset, Cu)
        emit_sym_equality(prog, expr, [(blk, 1.0)])
        prog.add_obj([u.offset], [1.0])
    res = _accept(backends.solve(prog, tol=tol, max_iter=200), tol,
                  "recourse primal solve")
    return res.primal_obj, res.block_value("y")


def solve_recourse_dual(ts: TwoStageData, x, xi, tol: float = 1e-8,
                        rank_tol: float | None = None):
    """Second-stage cost from the dual side (pseudo-inverse form).

    Handles rank-deficient P through the eigen-split coupling rows.
    Returns (value, theta)."""
    x = np.asarray(x, dtype=float)
    xi = np.asarray(xi, dtype=float)
    dd = recourse_dual_general(ts, rank_tol)
    T = ts.num_constraints
    hx = ts.h(x) + ts.T(x) @ xi
    v = ts.R @ xi + ts.r
    prog = ConicProgram()
    th = prog.add_block(NONNEG, T, "theta")
    # maximize -q(theta) + hx'theta  ->  minimize q(theta) - hx'theta
    prog.add_obj(np.arange(th.offset, th.offset + T), -hx)
    if dd.rank:
        w2, U2 = np.linalg.eigh(ts.P.T @ ts.P)
        sel = w2 > (rank_tol if rank_tol is not None else 1e-8) * max(w2[-1], 1.0)
        G = 0.5 * (U2[:, sel] / np.sqrt(w2[sel])[None, :]).T @ ts.W.T  # rank x T
        g0 = 0.5 * (U2[:, sel] / np.sqrt(w2[sel])[None, :]).T @ v
        r = G.shape[0]
        u = prog.add_block(FREE, 1, "u")
        blk = prog.add_block(PSD, r + 1, "epi")
        expr = SymExpr(r + 1)
        C0 = np.zeros((r + 1, r + 1))
        C0[:r, :r] = np.eye(r)
        C0[:r, r] = -g0
        C0[r, :r] = -g0
        expr.add_const(C0)
        for j in range(T):
            Cj = np.zeros((r + 1, r + 1))
            Cj[:r, r] = G[:, j]
            Cj[r, :r] = G[:, j]
            expr.add_scalar(th.offset + j, Cj)
        Cu = np.zeros((r + 1, r + 1))
        Cu[r, r] = 1.0
        expr.add_scalar(u.offset, Cu)
        emit_sym_equality(prog, expr, [(blk, 1.0)])
        prog.add_obj([u.offset], [1.0])
    if dd.U0.shape[1]:
        C = dd.U0.T @ ts.W.T  # n0 x T
        rhs = dd.U0.T @ v
        for i in range(C.shape[0]):
            nz = np.nonzero(np.abs(C[i]) > 0)[0]
            if nz.size == 0:
                if abs(rhs[i]) > 1e-9:
                    return -np.inf, np.zeros(T)  # dual infeasible coupling
                continue
            prog.add_row([th.offset + int(k) for k in nz], C[i][nz], rhs[i])
    res = backends.solve(prog, tol=tol, max_iter=200)
    if res.status == "primal_infeasible":
        return -np.inf, np.zeros(T)
    res = _accept(res, tol, "recourse dual solve")
    return -res.primal_obj, res.block_value("theta")


# ---------------------------------------------------------------------------
# exact evaluation


def evaluate_Z_exact(instance: RqpInstance, x, vertex_budget: int = 10000,
                     include_recourse: bool | None = None, tol: float = 1e-9):
    """Worst-case objective at a fixed decision by vertex enumeration.

    Returns (value, argmax scenario); ties resolve to the
    lexicographically smallest scenario.  Two-stage instances add the
    recourse cost per scenario unless `include_recourse=False`."""
    x = np.asarray(x, dtype=float)
    pts = enumerate_set(instance.Xi, vertex_budget)
    if pts.shape[0] == 0:
        raise ValueError("uncertainty set is empty")
    if include_recourse is None:
        include_recourse = instance.two_stage is not None
    best_val = -np.inf
    best_xi = None
    for xi in pts:  # pts are lexicographically sorted
        v = instance.objective_value(x, xi)
        if include_recourse:
            v += solve_recourse_primal(instance.two_stage, x, xi)[0]
        if v > best_val + tol:
            best_val = v
            best_xi = xi
    return best_val, best_xi


# ---------------------------------------------------------------------------
# Benders constraint generation


@dataclass
class BendersState:
    cuts: list = field(default_factory=list)  # (xi, theta or None)
    incumbent: np.ndarray | None = None
    lower: float = -np.inf
    upper: float = np.inf
    log: list = field(default_factory=list)  # (iter, lower, upper, scenario idx, wall)
    converged: bool = False

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "lower", "upper", "scenario", "wall_time"])
            for row in self.log:
                w.writerow(row)


def _master_program(instance: RqpInstance, cuts, dual_data) -> ConicProgram:
    D = instance.num_decisions
    prog = ConicProgram()
    x_blk = prog.add_block(FREE, D, "x")
    v_blk = prog.add_block(FREE, 1, "v")
    prog.add_obj([v_blk.offset], [1.0])
    _add_polytope_rows(prog, instance.X, x_blk)
    c = instance.c
    A_const = instance.A.is_constant(0.0)
    slacks = prog.add_block(NONNEG, len(cuts), "cutslack")
    for i, (xi, theta) in enumerate(cuts):
        # v >= ||A(x) xi||^2 + b(x)'xi + c(x) (+ dual recourse value at theta)
        idx = [v_blk.offset]
        val = [-1.0]
        rhs = 0.0
        # b(x)'xi
        rhs -= float(instance.b.base @ xi)
        for d in range(D):
            coef = float(instance.b.coeffs[d] @ xi)
            if coef:
                idx.append(x_blk.offset + d)
                val.append(coef)
        # c(x): quadratic part via one shared epigraph handled below, linear here
        nz = np.nonzero(c.lin)[0]
        idx += [x_blk.offset + int(k) for k in nz]
        val += list(c.lin[nz])
        rhs -= c.const
        # ||A(x) xi||^2: w(x) = A(x) xi affine in x
        w0 = instance.A.base @ xi
        if A_const:
            rhs -= float(w0 @ w0)
        else:
            Wd = np.array([C @ xi for C in instance.A.coeffs])  # D x M
            if np.max(np.abs(w0)) > 0 or np.max(np.abs(Wd), initial=0.0) > 0:
                Mdim = w0.shape[0]
                s_i = prog.add_block(FREE, 1, f"q{i}")
                blk = prog.add_block(PSD, Mdim + 1, f"qepi{i}")
                expr = SymExpr(Mdim + 1)
                C0 = np.zeros((Mdim + 1, Mdim + 1))
                C0[:Mdim, :Mdim] = np.eye(Mdim)
                C0[:Mdim, Mdim] = w0
                C0[Mdim, :Mdim] = w0
                expr.add_const(C0)
                for d in range(D):
                    Cd = np.zeros((Mdim + 1, Mdim + 1))
                    Cd[:Mdim, Mdim] = Wd[d]
                    Cd[Mdim, :Mdim] = Wd[d]
                    expr.add_scalar(x_blk.offset + d, Cd)
                Cu = np.zeros((Mdim + 1, Mdim + 1))
                Cu[Mdim, Mdim] = 1.0
                expr.add_scalar(s_i.offset, Cu)
                emit_sym_equality(prog, expr, [(blk, 1.0)])
                idx.append(s_i.offset)
                val.append(1.0)
        # two-stage: dual value at fixed theta is affine in x
        if theta is not None:
            ts, Mplus = dual_data
            u = ts.W.T @ theta - ts.R @ xi - ts.r
            rhs -= float(-0.25 * u @ Mplus @ u)
            rhs -= float(ts.h.base @ theta + xi @ (ts.T.base.T @ theta))
            for d in range(D):
                coef = float(ts.h.coeffs[d] @ theta + xi @ (ts.T.coeffs[d].T @ theta))
                if coef:
                    idx.append(x_blk.offset + d)
                    val.append(coef)
        idx.append(slacks.offset + i)
        val.append(1.0)
        prog.add_row(idx, val, rhs)
    # the quadratic stage cost is shared by every cut: keep it out of the
    # cut rows and minimize v + s with s >= x'Cx
    if not c.is_linear(1e-14):
        from .reformulate import _add_quadratic_epigraph

        s = _add_quadratic_epigraph(prog, c, x_blk, "m")
        prog.add_obj([s.offset], [1.0])
    return prog


def benders_solve(
    instance: RqpInstance,
    tol: float = BENDERS_TOL,
    iter_limit: int = 200,
    vertex_budget: int = 10000,
    solver_tol: float = 1e-8,
) -> tuple[np.ndarray, float, BendersState]:
    """Constraint generation for min over X of the exact worst case.

    The subproblem is evaluate_Z_exact at the incumbent (one enumeration
    pass shared across iterations); each iteration appends the argmax
    scenario cut.  Terminates when upper - lower <= tol * (1 + |lower|).
    """
    pts = enumerate_set(instance.Xi, vertex_budget)
    if pts.shape[0] == 0:
        raise ValueError("uncertainty set is empty")
    ts = instance.two_stage
    dual_data = None
    if ts is not None:
        dd = recourse_dual_general(ts)
        dual_data = (ts, dd.Mplus)
    state = BendersState()
    start = time.time()
    scen_ids: dict[bytes, int] = {}

    def scenario_cut(x, xi):
        if ts is None:
            return (xi, None)
        _, theta = solve_recourse_dual(ts, x, xi)
        return (xi, theta)

    # seed with the first scenario at an arbitrary feasible-ish point
    state.cuts.append(scenario_cut(np.zeros(instance.num_decisions), pts[0]))
    for it in range(1, iter_limit + 1):
        prog = _master_program(instance, state.cuts, dual_data)
        res = _accept(backends.solve(prog, tol=solver_tol, max_iter=200),
                      solver_tol, "Benders master solve")
        x_k = res.block_value("x")
        lower = res.primal_obj
        state.lower = max(state.lower, lower)
        # subproblem: exact worst case at x_k
        best_val = -np.inf
        best_idx = 0
        for i, xi in enumerate(pts):
            v = instance.objective_value(x_k, xi)
            if ts is not None:
                v += solve_recourse_primal(ts, x_k, xi)[0]
            if v > best_val + 1e-12:
                best_val = v
                best_idx = i
        if best_val < state.upper:
            state.upper = best_val
            state.incumbent = x_k
        state.log.append((it, state.lower, state.upper, best_idx,
                          time.time() - start))
        if state.upper - state.lower <= tol * (1 + abs(state.lower)):
            state.converged = True
            break
        state.cuts.append(scenario_cut(x_k, pts[best_idx]))
    return state.incumbent, state.upper, state
