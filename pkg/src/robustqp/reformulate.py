"""Program builders: exact conic reformulations and their SDP restrictions.

From lifted data this module assembles

* the structural completely positive relaxation (rank-1 checks only),
* its dual program with one copositive matrix constraint,
* the enclosing-ball augmented variant that guarantees a strict
  interior point after the cone restriction,
* the full minimization over decisions with the PSD linearization of
  the quadratic uncertainty term,
* the Lagrangian (approximate S-procedure) SDP for continuous sets,
* the inequality-form SDP that skips standard-form slack conversion,
* robust quadratic constraint systems, indefinite uncertainty terms,
  and the two-stage joint program.

Copositive constraints stay symbolic inside a CopositiveProgram until
`restrict_to_c0` replaces each of them by a PSD plus entrywise
nonnegative split, yielding a plain conic program.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .conic import FREE, NONNEG, PSD, Block, ConicProgram, svec, svec_indices
from .conic.lp import coordinate_sup
from .lifting import (
    LiftedData,
    TwoStageLiftedData,
    build_lifted,
    enumerate_set,
    lift_point,
)
from .model import (
    AffineMatrixMap,
    AffineVectorMap,
    ConvexQuadraticScalar,
    InequalityFormInstance,
    PolytopeX,
    RobustQuadConstraint,
    RqpInstance,
)

_SYM_TOL = 1e-12


# ---------------------------------------------------------------------------
# affine symmetric matrix expressions


class SymExpr:
    """Symmetric n x n matrix, affine in scalar variables and in embedded
    or congruence-transformed matrix block variables."""

    def __init__(self, n: int):
        self.n = n
        self.const = np.zeros((n, n))
        self.scalar_terms: list[tuple[int, np.ndarray]] = []
        self.embed_terms: list[tuple[Block, float, int]] = []  # (block, sign, offset)
        self.congr_terms: list[tuple[Block, np.ndarray, float]] = []  # sign * V' X V

    def add_const(self, C: np.ndarray) -> None:
        C = np.asarray(C, dtype=float)
        assert np.max(np.abs(C - C.T), initial=0.0) <= _SYM_TOL, "asymmetric constant"
        self.const = self.const + 0.5 * (C + C.T)

    def add_scalar(self, var_index: int, C: np.ndarray) -> None:
        C = np.asarray(C, dtype=float)
        assert np.max(np.abs(C - C.T), initial=0.0) <= _SYM_TOL, "asymmetric coefficient"
        self.scalar_terms.append((int(var_index), 0.5 * (C + C.T)))

    def add_embed(self, block: Block, sign: float, offset: int) -> None:
        """sign * (matrix variable placed as principal submatrix at offset)."""
        self.embed_terms.append((block, float(sign), int(offset)))

    def add_congruence(self, block: Block, V: np.ndarray, sign: float) -> None:
        """sign * V' X V for a symmetric matrix block variable X."""
        self.congr_terms.append((block, np.asarray(V, dtype=float), float(sign)))

    def evaluate(self, values: np.ndarray, prog: ConicProgram) -> np.ndarray:
        """Numeric value of the expression at a solution vector."""
        from .conic import smat

        M = np.array(self.const)
        for idx, C in self.scalar_terms:
            M += values[idx] * C
        for blk, sign, off in self.embed_terms:
            sub = smat(values[blk.offset : blk.offset + blk.length], blk.order)
            M[off : off + blk.order, off : off + blk.order] += sign * sub
        for blk, V, sign in self.congr_terms:
            side = int(round((np.sqrt(8 * blk.length + 1) - 1) / 2))
            X = smat(values[blk.offset : blk.offset + blk.length], side)
            M += sign * (V.T @ X @ V)
        return M


def emit_sym_equality(prog: ConicProgram, expr: SymExpr, rhs: list[tuple[Block, float]]) -> None:
    """Emit rows `expr == sum(sign * block)` in packed svec coordinates."""
    n = expr.n
    I, J, = svec_indices(n)
    plen = I.size
    base_idx: list[list[int]] = [[] for _ in range(plen)]
    base_val: list[list[float]] = [[] for _ in range(plen)]

    for var, C in expr.scalar_terms:
        col = svec(C)
        nz = np.nonzero(np.abs(col) > 0)[0]
        for p in nz:
            base_idx[p].append(var)
            base_val[p].append(col[p])
    for blk, sign, off in expr.embed_terms:
        side = blk.order
        Ib, Jb = svec_indices(side)
        # svec entry (off+i, off+j) of expr couples to svec entry (i, j) of block
        pos_in_expr = _svec_position(Ib + off, Jb + off)
        for q in range(Ib.size):
            base_idx[pos_in_expr[q]].append(blk.offset + q)
            base_val[pos_in_expr[q]].append(sign)
    for blk, V, sign in expr.congr_terms:
        side = int(round((np.sqrt(8 * blk.length + 1) - 1) / 2))
        Ib, Jb = svec_indices(side)
        for q in range(Ib.size):
            a, bq = Ib[q], Jb[q]
            if a == bq:
                C = np.outer(V[a], V[a])
            else:
                C = (np.outer(V[a], V[bq]) + np.outer(V[bq], V[a])) / np.sqrt(2.0)
            col = svec(sign * 0.5 * (C + C.T))
            nz = np.nonzero(np.abs(col) > 1e-300)[0]
            for p in nz:
                base_idx[p].append(blk.offset + q)
                base_val[p].append(col[p])

    target = svec(expr.const)
    for p in range(plen):
        idx = list(base_idx[p])
        val = list(base_val[p])
        for blk, sign in rhs:
            idx.append(blk.offset + p)
            val.append(-sign)
        prog.add_row(idx, val, -target[p])


def _svec_position(I: np.ndarray, J: np.ndarray) -> np.ndarray:
    """Packed position of entries (I, J) with I >= J in svec order."""
    return (I * (I + 1)) // 2 + J


# ---------------------------------------------------------------------------
# containers


@dataclass(frozen=True)
class EllipsoidParams:
    """Enclosing ball/ellipsoid ||Q (xi' - center)|| <= radius for the
    lifted scenario set.  Q is diagonal PSD; coordinates that are
    unbounded in the relaxation (possible only for the trailing
    recourse-dual block) carry zero rows and sit outside the ellipsoid."""

    radius: float
    Q: np.ndarray
    center: np.ndarray

    def contains(self, points: np.ndarray, tol: float = 1e-8) -> bool:
        pts = np.atleast_2d(points)
        k = self.Q.shape[0]
        pts = pts[:, :k] if pts.shape[1] >= k else pts
        d = (pts - self.center[None, :k]) @ self.Q.T
        return bool(np.all(np.linalg.norm(d, axis=1) <= self.radius + tol))


@dataclass
class CopositiveProgram:
    """Conic program pieces plus symbolic copositive matrix constraints."""

    prog: ConicProgram
    cop_blocks: list[SymExpr] = field(default_factory=list)
    labels: dict = field(default_factory=dict)
    lifted: LiftedData | None = None
    x_block: Block | None = None
    x_fixed: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def copy(self) -> "CopositiveProgram":
        out = CopositiveProgram(
            prog=_copy_prog(self.prog),
            cop_blocks=list(self.cop_blocks),
            labels=dict(self.labels),
            lifted=self.lifted,
            x_block=self.x_block,
            x_fixed=None if self.x_fixed is None else np.array(self.x_fixed),
            meta=dict(self.meta),
        )
        return out


def _copy_prog(prog: ConicProgram) -> ConicProgram:
    out = ConicProgram()
    out.blocks = list(prog.blocks)
    out._rows = list(prog._rows)
    out._rhs = list(prog._rhs)
    out._obj = dict(prog._obj)
    out.obj_const = prog.obj_const
    out.num_vars = prog.num_vars
    out._labels = dict(prog._labels)
    return out


# ---------------------------------------------------------------------------
# bounding ellipsoids


def compute_bounding_ellipsoid(
    lifted: LiftedData,
    recipe: str = "axis",
    vertex_budget: int = 20000,
    lp_tol: float = 1e-9,
) -> EllipsoidParams:
    """Enclosing ball of the lifted scenario set.

    "axis": radius is the norm of the per-coordinate LP suprema over the
    lifted relaxation (coordinates with infinite supremum, which occur
    only in the recourse-dual block, are left outside the ellipsoid).
    "tight": radius is the largest norm over the enumerated scenarios
    (one-stage sets within the enumeration budget only).
    """
    Kp = lifted.dim
    if recipe == "tight":
        if isinstance(lifted, TwoStageLiftedData):
            raise ValueError("tight-ball recipe needs a bounded one-stage lifted set")
        pts = enumerate_set(lifted.source, vertex_budget)
        lifted_pts = np.array([lift_point(lifted.source, p) for p in pts])
        if lifted_pts.shape[1] != Kp:
            raise ValueError("lift/projection dimension mismatch")
        r = float(np.max(np.linalg.norm(lifted_pts, axis=1))) if len(lifted_pts) else 0.0
        return EllipsoidParams(radius=r, Q=np.eye(Kp), center=np.zeros(Kp))
    if recipe != "axis":
        raise ValueError(f"unknown ellipsoid recipe {recipe!r}")
    sups = np.zeros(Kp)
    active = np.ones(Kp, dtype=bool)
    for k in range(Kp):
        val, status = coordinate_sup(k, Kp, A_eq=lifted.S_lift, b_eq=lifted.t_lift,
                                     tol=lp_tol)
        if not np.isfinite(val):
            if not isinstance(lifted, TwoStageLiftedData):
                raise ValueError("lifted set is unbounded; validate the instance")
            active[k] = False
            sups[k] = 0.0
        else:
            sups[k] = max(val, 0.0)
    r = float(np.linalg.norm(sups[active]))
    Q = np.diag(active.astype(float))
    return EllipsoidParams(radius=r, Q=Q, center=np.zeros(Kp))


# ---------------------------------------------------------------------------
# structural CPP (rank-1 checks)


@dataclass
class CppStructure:
    """Constraint skeleton of the exact completely positive relaxation at a
    fixed decision; used for rank-1 feasibility checks, never solved."""

    lifted: LiftedData
    x: np.ndarray
    ell: EllipsoidParams | None = None

    def constraint_residuals(self, Omega: np.ndarray, xi_lift: np.ndarray) -> dict:
        S, t = self.lifted.S_lift, self.lifted.t_lift
        out = {
            "eq": float(np.max(np.abs(S @ xi_lift - t), initial=0.0)),
            "diag": float(
                np.max(np.abs(np.diag(S @ Omega @ S.T) - t * t), initial=0.0)
            ),
        }
        nbin = self.lifted.binary_index_count
        out["binary"] = float(
            np.max(np.abs(xi_lift[:nbin] - np.diag(Omega)[:nbin]), initial=0.0)
        )
        if self.ell is not None:
            Q, c, r = self.ell.Q, self.ell.center, self.ell.radius
            lhs = float(np.trace(Q @ Omega @ Q.T) - 2 * c @ Q.T @ Q @ xi_lift
                        + c @ Q.T @ Q @ c)
            out["ball"] = max(lhs - r**2, 0.0)
        return out

    def objective(self, Omega: np.ndarray, xi_lift: np.ndarray) -> float:
        A = self.lifted.A_lift(self.x)
        b = self.lifted.b_lift(self.x)
        val = float(np.trace(A @ Omega @ A.T) + b @ xi_lift)
        if isinstance(self.lifted, TwoStageLiftedData):
            val += float(np.sum(self.lifted.P_block(self.x) * Omega))
            val += self.lifted.offset
        return val

    def check_rank_one(self, xi_lift: np.ndarray) -> dict:
        return self.constraint_residuals(np.outer(xi_lift, xi_lift), xi_lift)


def build_cpp_primal(lifted: LiftedData, x, ell: EllipsoidParams | None = None) -> CppStructure:
    return CppStructure(lifted=lifted, x=np.asarray(x, dtype=float), ell=ell)


# ---------------------------------------------------------------------------
# copositive dual programs


def _assemble_cop_block(
    cop: CopositiveProgram,
    lifted: LiftedData,
    A_map: AffineMatrixMap,
    b_map: AffineVectorMap,
    ell: EllipsoidParams | None,
    tag: str,
    use_H: bool,
    P_map: AffineMatrixMap | None = None,
) -> dict:
    """Create multiplier variables and the copositive block

        [[ lam Q'Q + S' diag(phi) S - Quad - diag([gamma;0]),  h/2 ],
         [ h'/2,                                               tau ]]

    with h = S' psi - b(x) + [gamma;0] - 2 lam Q'Q c.  Returns the label
    map for the fresh variables; objective wiring is left to callers.
    """
    prog = cop.prog
    S, t = lifted.S_lift, lifted.t_lift
    Jp, Kp = S.shape
    nbin = lifted.binary_index_count
    n = Kp + 1
    x_blk = cop.x_block
    x_fixed = cop.x_fixed

    ells = _as_ell_list(ell)
    psi = prog.add_block(FREE, Jp, f"psi{tag}")
    phi = prog.add_block(FREE, Jp, f"phi{tag}")
    gam = prog.add_block(FREE, nbin, f"gamma{tag}") if nbin else None
    tau = prog.add_block(FREE, 1, f"tau{tag}")
    lam = prog.add_block(NONNEG, len(ells), f"lambda{tag}") if ells else None

    expr = SymExpr(n)

    # multipliers
    for j in range(Jp):
        Cj = np.zeros((n, n))
        Cj[:Kp, Kp] = 0.5 * S[j]
        Cj[Kp, :Kp] = 0.5 * S[j]
        expr.add_scalar(psi.offset + j, Cj)
        Cq = np.zeros((n, n))
        Cq[:Kp, :Kp] = np.outer(S[j], S[j])
        expr.add_scalar(phi.offset + j, Cq)
    for i in range(nbin):
        Cg = np.zeros((n, n))
        Cg[i, i] = -1.0
        Cg[i, Kp] = Cg[Kp, i] = 0.5
        expr.add_scalar(gam.offset + i, Cg)
    Ct = np.zeros((n, n))
    Ct[Kp, Kp] = 1.0
    expr.add_scalar(tau.offset, Ct)
    for e_i, e in enumerate(ells):
        QtQ = e.Q.T @ e.Q
        Cl = np.zeros((n, n))
        Cl[:Kp, :Kp] = QtQ
        qc = QtQ @ e.center
        Cl[:Kp, Kp] -= qc
        Cl[Kp, :Kp] -= qc
        expr.add_scalar(lam.offset + e_i, Cl)

    # quadratic uncertainty term
    if use_H:
        H = prog.add_block(PSD, Kp, f"H{tag}")
        expr.add_embed(H, -1.0, 0)
        cop.labels[f"H{tag}"] = H
        M_dim = A_map.shape[0]
        G2 = prog.add_block(PSD, M_dim + Kp, f"Hlink{tag}")
        link = SymExpr(M_dim + Kp)
        topleft = np.zeros((M_dim + Kp, M_dim + Kp))
        topleft[:M_dim, :M_dim] = np.eye(M_dim)
        topleft[:M_dim, M_dim:] = A_map.base
        topleft[M_dim:, :M_dim] = A_map.base.T
        link.add_const(topleft)
        for d in range(A_map.num_decisions):
            Cd = np.zeros((M_dim + Kp, M_dim + Kp))
            Cd[:M_dim, M_dim:] = A_map.coeffs[d]
            Cd[M_dim:, :M_dim] = A_map.coeffs[d].T
            link.add_scalar(x_blk.offset + d, Cd)
        link.add_embed(H, 1.0, M_dim)
        emit_sym_equality(prog, link, [(G2, 1.0)])
    else:
        Ax = A_map(x_fixed) if x_fixed is not None else A_map.base
        quad = np.zeros((n, n))
        quad[:Kp, :Kp] = -(Ax.T @ Ax)
        expr.add_const(quad)

    # linear uncertainty term
    if x_fixed is not None:
        bx = b_map(x_fixed)
        Cb = np.zeros((n, n))
        Cb[:Kp, Kp] = -0.5 * bx
        Cb[Kp, :Kp] = -0.5 * bx
        expr.add_const(Cb)
    else:
        Cb = np.zeros((n, n))
        Cb[:Kp, Kp] = -0.5 * b_map.base
        Cb[Kp, :Kp] = -0.5 * b_map.base
        expr.add_const(Cb)
        for d in range(b_map.num_decisions):
            Cd = np.zeros((n, n))
            Cd[:Kp, Kp] = -0.5 * b_map.coeffs[d]
            Cd[Kp, :Kp] = -0.5 * b_map.coeffs[d]
            expr.add_scalar(x_blk.offset + d, Cd)

    # indefinite second-stage term, subtracted inside the block
    if P_map is not None:
        if x_fixed is not None:
            expr.add_const(-_embed_top(P_map(x_fixed), n))
        else:
            expr.add_const(-_embed_top(P_map.base, n))
            for d in range(P_map.num_decisions):
                expr.add_scalar(x_blk.offset + d, -_embed_top(P_map.coeffs[d], n))

    cop.cop_blocks.append(expr)
    out = {"psi": psi, "phi": phi, "gamma": gam, "tau": tau, "lambda": lam,
           "block_index": len(cop.cop_blocks) - 1}
    cop.labels.update({f"psi{tag}": psi, f"phi{tag}": phi, f"tau{tag}": tau})
    if gam is not None:
        cop.labels[f"gamma{tag}"] = gam
    if lam is not None:
        cop.labels[f"lambda{tag}"] = lam
    return out


def _embed_top(M: np.ndarray, n: int) -> np.ndarray:
    K = M.shape[0]
    Z = np.zeros((n, n))
    Z[:K, :K] = M
    return Z


def _as_ell_list(ell) -> list:
    if ell is None:
        return []
    return list(ell) if isinstance(ell, (list, tuple)) else [ell]


def _objective_terms(prog, vars_, lifted, ell, two_stage_offset=0.0):
    """t' psi + (t o t)' phi + tau (+ lam (r^2 - ||Qc||^2)) into the objective."""
    t = lifted.t_lift
    Jp = t.shape[0]
    psi, phi, tau, lam = vars_["psi"], vars_["phi"], vars_["tau"], vars_["lambda"]
    prog.add_obj(np.arange(psi.offset, psi.offset + Jp), t)
    prog.add_obj(np.arange(phi.offset, phi.offset + Jp), t * t)
    prog.add_obj([tau.offset], [1.0])
    for e_i, e in enumerate(_as_ell_list(ell)):
        Qc = e.Q @ e.center
        prog.add_obj([lam.offset + e_i], [e.radius**2 - float(Qc @ Qc)])
    prog.obj_const += two_stage_offset


def build_cop_dual(
    lifted: LiftedData,
    x,
    ell: EllipsoidParams | None = None,
    c: ConvexQuadraticScalar | float | None = None,
) -> CopositiveProgram:
    """Dual copositive program of the lifted maximization at a fixed decision.

    `c` is the stage cost (map or scalar); its value at x lands in the
    objective constant."""
    x = np.asarray(x, dtype=float)
    cop = CopositiveProgram(prog=ConicProgram(), lifted=lifted, x_fixed=x)
    P_map = lifted.P_block if isinstance(lifted, TwoStageLiftedData) else None
    offs = lifted.offset if isinstance(lifted, TwoStageLiftedData) else 0.0
    vars_ = _assemble_cop_block(cop, lifted, lifted.A_lift, lifted.b_lift, ell,
                                tag="0", use_H=False, P_map=P_map)
    _objective_terms(cop.prog, vars_, lifted, ell, two_stage_offset=offs)
    if c is not None:
        cop.prog.obj_const += c(x) if callable(c) else float(c)
    cop.meta["vars"] = vars_
    return cop


def build_cop_augmented(
    lifted: LiftedData,
    x,
    ell: EllipsoidParams,
    c: ConvexQuadraticScalar | float | None = None,
) -> CopositiveProgram:
    """Ellipsoid-augmented dual copositive program (fixed decision)."""
    return build_cop_dual(lifted, x, ell=ell, c=c)


def _add_polytope_rows(prog: ConicProgram, X: PolytopeX, x_blk: Block, tag: str = "") -> None:
    ineq = [(a, r) for a, r, eq in X.rows() if not eq]
    eqs = [(a, r) for a, r, eq in X.rows() if eq]
    if ineq:
        slack = prog.add_block(NONNEG, len(ineq), f"Xslack{tag}")
        for i, (a, r) in enumerate(ineq):
            nz = np.nonzero(a)[0]
            idx = [x_blk.offset + int(k) for k in nz] + [slack.offset + i]
            val = list(a[nz]) + [1.0]
            prog.add_row(idx, val, r)
    if eqs:
        # split into two slack inequalities: keeps every row touching a cone var
        s2 = prog.add_block(NONNEG, 2 * len(eqs), f"Xeq{tag}")
        for i, (a, r) in enumerate(eqs):
            nz = np.nonzero(a)[0]
            idx = [x_blk.offset + int(k) for k in nz]
            prog.add_row(idx + [s2.offset + 2 * i], list(a[nz]) + [1.0], r)
            prog.add_row(idx + [s2.offset + 2 * i + 1], list(-a[nz]) + [1.0], -r)


def _add_quadratic_epigraph(prog: ConicProgram, c: ConvexQuadraticScalar,
                            x_blk: Block, tag: str = "") -> Block | None:
    """Variable s >= x'Cx via a PSD factor block; returns the epigraph block."""
    if c.is_linear(1e-14):
        return None
    w, U = np.linalg.eigh(np.asarray(c.quad))
    pos = w > 1e-12 * max(w[-1], 1.0)
    G = (np.sqrt(w[pos])[:, None] * U[:, pos].T)
    r = G.shape[0]
    s = prog.add_block(FREE, 1, f"cepi{tag}")
    blk = prog.add_block(PSD, r + 1, f"cepiPSD{tag}")
    expr = SymExpr(r + 1)
    C0 = np.zeros((r + 1, r + 1))
    C0[:r, :r] = np.eye(r)
    expr.add_const(C0)
    for d in range(c.dim):
        Cd = np.zeros((r + 1, r + 1))
        Cd[:r, r] = G[:, d]
        Cd[r, :r] = G[:, d]
        expr.add_scalar(x_blk.offset + d, Cd)
    Cs = np.zeros((r + 1, r + 1))
    Cs[r, r] = 1.0
    expr.add_scalar(s.offset, Cs)
    emit_sym_equality(prog, expr, [(blk, 1.0)])
    return s


def _wire_stage_cost(prog, c: ConvexQuadraticScalar, x_blk: Block, tag: str = ""):
    """Objective contribution of c(x) for a joint-over-x program."""
    s = _add_quadratic_epigraph(prog, c, x_blk, tag)
    if s is not None:
        prog.add_obj([s.offset], [1.0])
    nz = np.nonzero(c.lin)[0]
    if nz.size:
        prog.add_obj([x_blk.offset + int(k) for k in nz], c.lin[nz])
    prog.obj_const += c.const


def build_rqp_cop(
    lifted: LiftedData,
    instance: RqpInstance,
    ell: EllipsoidParams | None = None,
) -> CopositiveProgram:
    """Joint copositive program over the decision polytope.

    The quadratic uncertainty term is PSD-linearized through an auxiliary
    matrix variable whenever A(x) actually depends on x; a convex
    quadratic stage cost is epigraph-linearized."""
    prog = ConicProgram()
    D = instance.num_decisions
    x_blk = prog.add_block(FREE, D, "x")
    cop = CopositiveProgram(prog=prog, lifted=lifted, x_block=x_blk)
    _add_polytope_rows(prog, instance.X, x_blk)
    use_H = not lifted.A_lift.is_constant(0.0)
    P_map = lifted.P_block if isinstance(lifted, TwoStageLiftedData) else None
    offs = lifted.offset if isinstance(lifted, TwoStageLiftedData) else 0.0
    vars_ = _assemble_cop_block(cop, lifted, lifted.A_lift, lifted.b_lift, ell,
                                tag="0", use_H=use_H, P_map=P_map)
    _objective_terms(prog, vars_, lifted, ell, two_stage_offset=offs)
    _wire_stage_cost(prog, instance.c, x_blk)
    cop.labels["x"] = x_blk
    cop.meta["vars"] = vars_
    return cop


def recourse_dual_ball(lifted2: TwoStageLiftedData, instance: RqpInstance,
                       lp_tol: float = 1e-9) -> EllipsoidParams | None:
    """Redundant enclosing ball for the recourse-dual coordinates.

    Complete recourse bounds every optimal dual multiplier: with
    W y+ >= delta e, any optimal theta satisfies
    delta e'theta <= sup_y_feas cost - inf_xi dual(0), so a crude interval
    bound over the scenario box gives a valid radius.  The ball is
    redundant for the exact problem but hands the cone-restricted program
    a strict interior point in the dual-coordinate directions."""
    ts = instance.two_stage
    if ts is None or ts.recourse_witness is None:
        return None
    yp = np.asarray(ts.recourse_witness, dtype=float)
    delta = float(np.min(ts.W @ yp))
    if delta <= 0:
        return None
    Kp = lifted2.dim
    T = ts.num_constraints
    theta_cols = np.array([i for i, r in enumerate(lifted2.coord_map)
                           if r.kind == "recourse_dual"])
    K = instance.Xi.dim

    # coordinate boxes for xi (over the uncertainty set) and x (over X)
    xi_hi = np.zeros(K)
    G_ub, h_ub = instance.Xi.bound_rows()
    for k in range(K):
        val, _ = coordinate_sup(k, K, A_eq=instance.Xi.S if instance.Xi.num_rows else None,
                                b_eq=instance.Xi.t if instance.Xi.num_rows else None,
                                A_ub=G_ub if instance.Xi.num_integer else None,
                                b_ub=h_ub if instance.Xi.num_integer else None,
                                tol=lp_tol)
        if not np.isfinite(val):
            return None
        xi_hi[k] = max(val, 0.0)
    x_lo, x_hi = _polytope_box(instance.X, lp_tol)
    if x_lo is None:
        return None

    def interval_max(base, coeffs):
        """Upper bound of base + sum_d x_d coeffs[d] over the x box."""
        hi = np.array(base, dtype=float)
        for d in range(len(coeffs)):
            C = coeffs[d]
            hi = hi + np.maximum(C * x_hi[d], C * x_lo[d])
        return hi

    B = _theta_one_norm_bound(ts, xi_hi, interval_max, delta, yp)
    sg = lifted2.theta_scale
    Q = np.zeros((Kp, Kp))
    for c in theta_cols:
        Q[c, c] = 1.0
    return EllipsoidParams(radius=float(B / sg), Q=Q, center=np.zeros(Kp))


def _theta_one_norm_bound(ts, xi_hi, interval_max, delta, yp) -> float:
    """Uniform bound on e'theta* over the decision and scenario boxes.

    Any optimal multiplier satisfies delta e'theta* <= cost(y_s) - R(x, xi)
    where y_s scales the witness until W y_s clears every row by delta;
    all pieces bound crudely by interval arithmetic."""
    # rows of T(x) xi + h(x): xi >= 0, so positive coefficients bind at xi_hi
    Thi = interval_max(ts.T.base, ts.T.coeffs)
    rowmax = np.maximum(Thi, 0.0) @ xi_hi + interval_max(ts.h.base, ts.h.coeffs)
    s0 = max(float(np.max(rowmax)), 0.0) / delta + 1.0
    lin_vec = ts.R.T @ yp  # (R xi + r)' y_p = (R' y_p)' xi + r' y_p
    lin_hi = float(np.maximum(lin_vec, 0.0) @ xi_hi) + float(ts.r @ yp)
    prim_hi = s0**2 * float(np.sum((ts.P @ yp) ** 2)) + s0 * max(lin_hi, 0.0)
    from .lifting import recourse_dual_general

    dd = recourse_dual_general(ts)
    vmax = np.abs(ts.R) @ xi_hi + np.abs(ts.r)
    R_lo = -0.25 * float(vmax @ (np.abs(dd.Mplus) @ vmax))
    return (prim_hi - R_lo) / delta


def suggest_theta_scale(instance: RqpInstance, ball_target: float = 8.0,
                        lp_tol: float = 1e-9) -> float:
    """Dual-coordinate scale that puts the witness-derived multiplier
    bound at roughly `ball_target`; 1.0 when no witness is available."""
    ts = instance.two_stage
    if ts is None or ts.recourse_witness is None:
        return 1.0
    yp = np.asarray(ts.recourse_witness, dtype=float)
    delta = float(np.min(ts.W @ yp))
    if delta <= 0:
        return 1.0
    K = instance.Xi.dim
    xi_hi = np.zeros(K)
    G_ub, h_ub = instance.Xi.bound_rows()
    for k in range(K):
        val, _ = coordinate_sup(k, K, A_eq=instance.Xi.S if instance.Xi.num_rows else None,
                                b_eq=instance.Xi.t if instance.Xi.num_rows else None,
                                A_ub=G_ub if instance.Xi.num_integer else None,
                                b_ub=h_ub if instance.Xi.num_integer else None,
                                tol=lp_tol)
        if not np.isfinite(val):
            return 1.0
        xi_hi[k] = max(val, 0.0)
    x_lo, x_hi = _polytope_box(instance.X, lp_tol)
    if x_lo is None:
        return 1.0

    def interval_max(base, coeffs):
        hi = np.array(base, dtype=float)
        for d in range(len(coeffs)):
            C = coeffs[d]
            hi = hi + np.maximum(C * x_hi[d], C * x_lo[d])
        return hi

    B = _theta_one_norm_bound(ts, xi_hi, interval_max, delta, yp)
    return max(B / ball_target, 1.0)


def _polytope_box(X: PolytopeX, lp_tol: float):
    """Coordinate bounds of the decision polytope via LPs (None if unbounded)."""
    from .conic.lp import solve_lp

    ineq_rows, ineq_rhs, eq_rows, eq_rhs = [], [], [], []
    for a, r, eq in X.rows():
        (eq_rows if eq else ineq_rows).append(a)
        (eq_rhs if eq else ineq_rhs).append(r)
    lo = np.zeros(X.dim)
    hi = np.zeros(X.dim)
    for d in range(X.dim):
        for sign, out in ((1.0, hi), (-1.0, lo)):
            obj = np.zeros(X.dim)
            obj[d] = sign
            res = solve_lp(obj, A_eq=np.array(eq_rows) if eq_rows else None,
                           b_eq=np.array(eq_rhs) if eq_rhs else None,
                           A_ub=np.array(ineq_rows) if ineq_rows else None,
                           b_ub=np.array(ineq_rhs) if ineq_rhs else None,
                           free=True, maximize=True, tol=lp_tol)
            if res.status != "optimal":
                return None, None
            out[d] = sign * res.primal_obj
    return lo, hi


def build_two_stage_cop(
    lifted2: TwoStageLiftedData,
    instance: RqpInstance,
    ell: EllipsoidParams | list | None = None,
    warn_no_witness: bool = True,
) -> CopositiveProgram:
    """Joint two-stage program; the dualized recourse sits inside the
    copositive block via the indefinite P-block of the lifted data.

    When an ellipsoid is supplied, a redundant witness-derived ball over
    the recourse-dual coordinates is appended so the restricted program
    keeps a strict interior point."""
    ts = instance.two_stage
    if warn_no_witness and (ts is None or ts.recourse_witness is None):
        import warnings

        warnings.warn("no complete-recourse witness: strong duality of the "
                      "recourse is unguaranteed", stacklevel=2)
    ells = _as_ell_list(ell)
    if ells:
        ball = recourse_dual_ball(lifted2, instance)
        if ball is not None:
            ells = ells + [ball]
    return build_rqp_cop(lifted2, instance, ell=ells if ells else None)


# ---------------------------------------------------------------------------
# C0 restriction


def restrict_to_c0(cop: CopositiveProgram) -> ConicProgram:
    """Replace each copositive constraint M(v) >=_C 0 by M(v) = P + N with P
    a PSD block and N entrywise nonnegative; returns a plain conic program."""
    out = _copy_prog(cop.prog)
    for i, expr in enumerate(cop.cop_blocks):
        n = expr.n
        Pb = out.add_block(PSD, n, f"c0P{i}")
        Nb = out.add_block(NONNEG, n * (n + 1) // 2, f"c0N{i}")
        emit_sym_equality(out, expr, [(Pb, 1.0), (Nb, 1.0)])
    return out


def solve_c0(cop: CopositiveProgram, tol: float = 1e-8, max_iter: int = 100, **opts):
    """Solve the C0 restriction through the selected backend."""
    from .conic import backends

    return backends.solve(restrict_to_c0(cop), tol=tol, max_iter=max_iter, **opts)


# ---------------------------------------------------------------------------
# approximate S-procedure SDP (continuous sets only)


def build_s_lemma_sdp(instance: RqpInstance, x, ell: EllipsoidParams) -> ConicProgram:
    """Lagrangian-relaxation SDP upper bound; fixed decision or, with
    x=None, minimized jointly over the decision polytope (the latter
    needs A(x) constant in x).

    Only valid for purely continuous uncertainty; integer coordinates
    raise ValueError.  The sign multiplier of the nonnegativity
    constraint lives in R_+^K, matching the uncertain vector."""
    if instance.Xi.num_integer:
        raise ValueError("the approximate S-procedure requires continuous uncertainty")
    S, t = instance.Xi.S, instance.Xi.t
    J, K = S.shape
    prog = ConicProgram()
    fixed = x is not None
    if fixed:
        x = np.asarray(x, dtype=float)
        Ax = instance.A(x)
        bx = instance.b(x)
        x_blk = None
    else:
        if not instance.A.is_constant(0.0):
            raise ValueError("joint minimization needs a decision-independent A")
        Ax = instance.A.base
        bx = instance.b.base
        x_blk = prog.add_block(FREE, instance.X.dim, "x")
        _add_polytope_rows(prog, instance.X, x_blk)

    kap = prog.add_block(FREE, 1, "kappa")
    rho = prog.add_block(NONNEG, 1, "rho")
    theta = prog.add_block(FREE, J, "theta") if J else None
    eta = prog.add_block(NONNEG, K, "eta")
    n = K + 1
    expr = SymExpr(n)
    C0 = np.zeros((n, n))
    C0[:K, :K] = -(Ax.T @ Ax)
    C0[:K, K] = -0.5 * bx
    C0[K, :K] = -0.5 * bx
    expr.add_const(C0)
    if not fixed:
        for d in range(instance.b.num_decisions):
            Cd = np.zeros((n, n))
            Cd[:K, K] = -0.5 * instance.b.coeffs[d]
            Cd[K, :K] = -0.5 * instance.b.coeffs[d]
            expr.add_scalar(x_blk.offset + d, Cd)
    QtQ = ell.Q.T @ ell.Q
    Cr = np.zeros((n, n))
    Cr[:K, :K] = QtQ
    qc = QtQ @ ell.center
    Cr[:K, K] -= qc
    Cr[K, :K] -= qc
    expr.add_scalar(rho.offset, Cr)
    for j in range(J):
        Cj = np.zeros((n, n))
        Cj[:K, K] = 0.5 * S[j]
        Cj[K, :K] = 0.5 * S[j]
        expr.add_scalar(theta.offset + j, Cj)
    for k in range(K):
        Ck = np.zeros((n, n))
        Ck[k, K] = -0.5
        Ck[K, k] = -0.5
        expr.add_scalar(eta.offset + k, Ck)
    Ck = np.zeros((n, n))
    Ck[K, K] = 1.0
    expr.add_scalar(kap.offset, Ck)
    Pb = prog.add_block(PSD, n, "slemmaPSD")
    emit_sym_equality(prog, expr, [(Pb, 1.0)])

    if J:
        prog.add_obj(np.arange(theta.offset, theta.offset + J), t)
    Qc = ell.Q @ ell.center
    prog.add_obj([rho.offset], [ell.radius**2 - float(Qc @ Qc)])
    prog.add_obj([kap.offset], [1.0])
    if fixed:
        prog.obj_const += instance.c(x)
    else:
        _wire_stage_cost(prog, instance.c, x_blk, "sl")
    return prog


# ---------------------------------------------------------------------------
# inequality-form SDP (no standard-form slacks)


def build_gcp_sdp(ineq: InequalityFormInstance, x=None) -> ConicProgram:
    """Conservative SDP for sup over {zeta : S zeta <= t} of
    ||A(x) zeta||^2 + b(x)' zeta + c(x), minimized jointly over x in X
    (pass a fixed x to freeze the decision).

    Requires A(x) constant in x when x is a variable."""
    S, t = np.asarray(ineq.S), np.asarray(ineq.t)
    J, K = S.shape
    prog = ConicProgram()
    fixed = x is not None
    if fixed:
        x = np.asarray(x, dtype=float)
        x_blk = None
    else:
        if not ineq.A.is_constant(0.0):
            raise ValueError("joint minimization needs a decision-independent A")
        x_blk = prog.add_block(FREE, ineq.X.dim, "x")
        _add_polytope_rows(prog, ineq.X, x_blk)
    mu = prog.add_block(NONNEG, J, "mu")
    Nb = prog.add_block(NONNEG, J * (J + 1) // 2, "Nmat")
    tau = prog.add_block(FREE, 1, "tau")

    n = K + 1
    expr = SymExpr(n)
    Ax = ineq.A(x) if fixed else ineq.A.base
    C0 = np.zeros((n, n))
    C0[:K, :K] = -(Ax.T @ Ax)
    bx = ineq.b(x) if fixed else ineq.b.base
    C0[:K, K] = -0.5 * bx
    C0[K, :K] = -0.5 * bx
    expr.add_const(C0)
    if not fixed:
        for d in range(ineq.b.num_decisions):
            Cd = np.zeros((n, n))
            Cd[:K, K] = -0.5 * ineq.b.coeffs[d]
            Cd[K, :K] = -0.5 * ineq.b.coeffs[d]
            expr.add_scalar(x_blk.offset + d, Cd)
    for j in range(J):
        Cj = np.zeros((n, n))
        Cj[:K, K] = 0.5 * S[j]
        Cj[K, :K] = 0.5 * S[j]
        Cj[K, K] = -t[j]
        expr.add_scalar(mu.offset + j, Cj)
    Ct = np.zeros((n, n))
    Ct[K, K] = 1.0
    expr.add_scalar(tau.offset, Ct)
    V = np.hstack([-S, t[:, None]])  # (J, K+1): subtract V' N V
    expr.add_congruence(Nb, V, -1.0)
    Pb = prog.add_block(PSD, n, "gcpPSD")
    emit_sym_equality(prog, expr, [(Pb, 1.0)])

    prog.add_obj([tau.offset], [1.0])
    if fixed:
        prog.obj_const += ineq.c(x)
    else:
        _wire_stage_cost(prog, ineq.c, x_blk)
    return prog


# ---------------------------------------------------------------------------
# robust quadratic constraints


def append_robust_constraints(
    cop: CopositiveProgram,
    constraints: list[RobustQuadConstraint],
    lifted: LiftedData,
    ell: EllipsoidParams | None = None,
) -> CopositiveProgram:
    """Per constraint: fresh multipliers, one copositive block, and the
    scalar feasibility row c_i(x) + t'psi_i + (t o t)'phi_i + tau_i
    (+ ellipsoid terms) <= 0.  Shares the lifted set across constraints."""
    prog = cop.prog
    from .lifting import _pad_map_matrix, _pad_map_vector  # reuse lift padding

    orig = lifted.orig_columns()
    off = int(orig[0]) if orig.size else 0
    for i, con in enumerate(constraints):
        tag = f"c{i}"
        A_l = _pad_map_matrix(con.A, lifted.dim, off)
        b_l = _pad_map_vector(con.b, lifted.dim, off)
        use_H = cop.x_fixed is None and not A_l.is_constant(0.0)
        vars_ = _assemble_cop_block(cop, lifted, A_l, b_l, ell, tag=tag, use_H=use_H)
        t = lifted.t_lift
        Jp = t.shape[0]
        slack = prog.add_block(NONNEG, 1, f"conslack{tag}")
        idx = list(np.arange(vars_["psi"].offset, vars_["psi"].offset + Jp))
        val = list(t)
        idx += list(np.arange(vars_["phi"].offset, vars_["phi"].offset + Jp))
        val += list(t * t)
        idx.append(vars_["tau"].offset)
        val.append(1.0)
        for e_i, e in enumerate(_as_ell_list(ell)):
            Qc = e.Q @ e.center
            idx.append(vars_["lambda"].offset + e_i)
            val.append(e.radius**2 - float(Qc @ Qc))
        rhs = 0.0
        if cop.x_fixed is not None:
            rhs -= con.c(cop.x_fixed)
        else:
            if not con.c.is_linear(1e-14):
                s = _add_quadratic_epigraph(prog, con.c, cop.x_block, tag)
                idx.append(s.offset)
                val.append(1.0)
            nz = np.nonzero(con.c.lin)[0]
            idx += [cop.x_block.offset + int(k) for k in nz]
            val += list(con.c.lin[nz])
            rhs -= con.c.const
        idx.append(slack.offset)
        val.append(1.0)
        prog.add_row(idx, val, rhs)
        cop.meta[f"constraint{i}"] = vars_
    return cop


def build_robust_constraint_system(
    constraints: list[RobustQuadConstraint],
    lifted: LiftedData,
    x,
    ell: EllipsoidParams | None = None,
) -> CopositiveProgram:
    """Feasibility system for the robust constraints at a fixed decision."""
    cop = CopositiveProgram(prog=ConicProgram(), lifted=lifted,
                            x_fixed=np.asarray(x, dtype=float))
    return append_robust_constraints(cop, constraints, lifted, ell)


# ---------------------------------------------------------------------------
# non-convex uncertainty terms


def add_nonconvex_D(cop: CopositiveProgram, D: AffineMatrixMap,
                    block_index: int = 0) -> CopositiveProgram:
    """Subtract the zero-padded indefinite term D(x) (over the original
    uncertain coordinates) inside a copositive block."""
    K = D.shape[0]
    if D.shape != (K, K):
        raise ValueError("D(x) must be square over the uncertain coordinates")
    for C in (D.base, *D.coeffs):
        if np.max(np.abs(C - C.T), initial=0.0) > 1e-12:
            raise ValueError("D(x) must be symmetric-valued")
    out = cop.copy()
    lifted = out.lifted
    orig = lifted.orig_columns()
    off = int(orig[0]) if orig.size else 0
    expr = out.cop_blocks[block_index]
    n = expr.n
    new = SymExpr(n)
    new.const = np.array(expr.const)
    new.scalar_terms = list(expr.scalar_terms)
    new.embed_terms = list(expr.embed_terms)
    new.congr_terms = list(expr.congr_terms)

    def pad(Mat):
        Z = np.zeros((n, n))
        Z[off : off + K, off : off + K] = Mat
        return Z

    if out.x_fixed is not None:
        new.add_const(-pad(D(out.x_fixed)))
    else:
        new.add_const(-pad(D.base))
        for d in range(D.num_decisions):
            new.add_scalar(out.x_block.offset + d, -pad(D.coeffs[d]))
    out.cop_blocks = list(out.cop_blocks)
    out.cop_blocks[block_index] = new
    return out
