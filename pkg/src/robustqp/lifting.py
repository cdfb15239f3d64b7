"""Binary-expansion lifting of mixed-integer uncertainty sets.

Integer coordinates xi_l in {0..u_l} are replaced by binary digit vectors
chi_l (xi_l = v' chi_l with v = [1, 2, 4, ...]) plus slack digits eta_l
enforcing chi_l + eta_l = e.  The lifted equality system keeps the block
layout

    columns:  [ chi_1 .. chi_L | eta_1 .. eta_L | xi ]
    rows:     [ S xi = t | digit rows | slack rows ]

with per-coordinate bit widths.  When an integer cap u_l is not of the
form 2^Q - 1, an explicit bound row xi_l + s = u_l (fresh slack
coordinate) keeps the lifted set exactly equal to the original.

Also provides exact enumeration of the scenario set (integer assignments
x continuous-slice vertices) and the two-stage lifting that appends the
recourse dual coordinates.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .conic.lp import solve_lp
from .model import (
    AffineMatrixMap,
    AffineVectorMap,
    MixedIntegerUncertaintySet,
    RqpInstance,
    TwoStageData,
    derive_bit_width,
)
from .vertexenum import BudgetExceededError, UnboundedPolytopeError, polytope_vertices


class UnboundedSliceError(UnboundedPolytopeError):
    """A continuous slice of the uncertainty set is unbounded."""

RANK_TOL_FACTOR = 1e-8


@dataclass(frozen=True)
class CoordRole:
    kind: str  # "digit" | "slack_digit" | "orig" | "bound_slack" | "recourse_dual"
    l: int = -1  # integer-coordinate index for digit kinds
    q: int = -1  # digit position
    k: int = -1  # original coordinate / dual constraint index


@dataclass(frozen=True)
class LiftedData:
    """Expanded parameters of the lifted quadratic maximization."""

    S_lift: np.ndarray
    t_lift: np.ndarray
    A_lift: AffineMatrixMap
    b_lift: AffineVectorMap
    coord_map: tuple[CoordRole, ...]
    binary_index_count: int
    bit_widths: np.ndarray
    source: MixedIntegerUncertaintySet

    @property
    def dim(self) -> int:
        return self.S_lift.shape[1]

    @property
    def num_rows(self) -> int:
        return self.S_lift.shape[0]

    def orig_columns(self) -> np.ndarray:
        return np.array([i for i, r in enumerate(self.coord_map) if r.kind == "orig"])


@dataclass(frozen=True)
class TwoStageLiftedData(LiftedData):
    """Lifted data with trailing recourse-dual coordinates and the
    indefinite quadratic block of the dualized second stage.

    `theta_scale` rescales the dual coordinates (theta = scale * coord);
    a pure change of variables that keeps values identical while taming
    the dynamic range when dual multipliers are large."""

    P_block: AffineMatrixMap = None  # symmetric-valued, dim x dim
    offset: float = 0.0
    coupling_rows: int = 0
    theta_scale: float = 1.0


@dataclass(frozen=True)
class RecourseDualData:
    """Dual description of the recourse QP (pseudo-inverse form).

    R(x, xi) = sup_{theta >= 0} -1/4 (W'theta - R xi - r)' Mplus (...)
               + h(x)'theta + xi'T(x)'theta
    subject to U0'(R xi + r) = U0' W' theta   (empty when P'P is regular).
    """

    Mplus: np.ndarray
    U0: np.ndarray
    rank: int
    eigvals: np.ndarray


def binary_digit_weights(Q: int) -> np.ndarray:
    """[2^0, 2^1, ..., 2^{Q-1}]."""
    return 2.0 ** np.arange(Q)


def binary_expand(value: int, Q: int) -> np.ndarray:
    """Digits chi with sum_q 2^{q-1} chi_q = value, chi in {0,1}^Q."""
    value = int(round(value))
    if value < 0 or value > 2**Q - 1:
        raise ValueError(f"value {value} out of range for {Q} bits")
    return np.array([(value >> q) & 1 for q in range(Q)], dtype=float)


def _lift_system(uset: MixedIntegerUncertaintySet):
    """Lifted equality system (S', t', coord roles, bit widths)."""
    K = uset.dim
    L = uset.num_integer
    J = uset.num_rows
    Q = derive_bit_width(uset)
    nbin = int(Q.sum())
    extra = [l for l in range(L) if uset.upper_bounds[l] < 2 ** Q[l] - 1]
    Kp = 2 * nbin + K + len(extra)
    Jp = nbin + J + L + len(extra)

    roles: list[CoordRole] = []
    digit_off = {}
    off = 0
    for l in range(L):
        digit_off[l] = off
        for q in range(Q[l]):
            roles.append(CoordRole("digit", l=l, q=q))
            off += 1
    eta_off = {}
    for l in range(L):
        eta_off[l] = off
        for q in range(Q[l]):
            roles.append(CoordRole("slack_digit", l=l, q=q))
            off += 1
    orig_off = off
    for k in range(K):
        roles.append(CoordRole("orig", k=k))
        off += 1
    for j, l in enumerate(extra):
        roles.append(CoordRole("bound_slack", l=l, k=j))
        off += 1

    S = np.zeros((Jp, Kp))
    t = np.zeros(Jp)
    r = 0
    if J:
        S[:J, orig_off : orig_off + K] = uset.S
        t[:J] = uset.t
        r = J
    for l in range(L):
        S[r, digit_off[l] : digit_off[l] + Q[l]] = -binary_digit_weights(Q[l])
        S[r, orig_off + l] = 1.0
        t[r] = 0.0
        r += 1
    for l in range(L):
        for q in range(Q[l]):
            S[r, digit_off[l] + q] = 1.0
            S[r, eta_off[l] + q] = 1.0
            t[r] = 1.0
            r += 1
    for j, l in enumerate(extra):
        S[r, orig_off + l] = 1.0
        S[r, orig_off + K + j] = 1.0
        t[r] = float(uset.upper_bounds[l])
        r += 1
    assert r == Jp
    return S, t, tuple(roles), Q, nbin, orig_off


def _pad_map_matrix(A: AffineMatrixMap, Kp: int, orig_off: int) -> AffineMatrixMap:
    M, K = A.shape

    def pad(C):
        Z = np.zeros((M, Kp))
        Z[:, orig_off : orig_off + K] = C
        return Z

    return AffineMatrixMap(pad(A.base), tuple(pad(C) for C in A.coeffs))


def _pad_map_vector(b: AffineVectorMap, Kp: int, orig_off: int) -> AffineVectorMap:
    K = b.size

    def pad(v):
        z = np.zeros(Kp)
        z[orig_off : orig_off + K] = v
        return z

    return AffineVectorMap(pad(b.base), tuple(pad(v) for v in b.coeffs))


def build_lifted(instance: RqpInstance) -> LiftedData:
    """Assemble the expanded parameters for the one-stage problem."""
    S, t, roles, Q, nbin, orig_off = _lift_system(instance.Xi)
    Kp = S.shape[1]
    return LiftedData(
        S_lift=S,
        t_lift=t,
        A_lift=_pad_map_matrix(instance.A, Kp, orig_off),
        b_lift=_pad_map_vector(instance.b, Kp, orig_off),
        coord_map=roles,
        binary_index_count=nbin,
        bit_widths=Q,
        source=instance.Xi,
    )


def lift_point(uset: MixedIntegerUncertaintySet, xi) -> np.ndarray:
    """Map a feasible scenario to its lifted representative."""
    xi = np.asarray(xi, dtype=float)
    if not uset.contains(xi, tol=1e-7):
        raise ValueError("point is not in the uncertainty set")
    Q = derive_bit_width(uset)
    L = uset.num_integer
    chis = [binary_expand(xi[l], Q[l]) for l in range(L)]
    etas = [1.0 - c for c in chis]
    extra = [l for l in range(L) if uset.upper_bounds[l] < 2 ** Q[l] - 1]
    slacks = [uset.upper_bounds[l] - xi[l] for l in extra]
    parts = chis + etas + [xi] + ([np.array(slacks)] if slacks else [])
    return np.concatenate(parts) if parts else xi.copy()


def project_point(lifted: LiftedData, xi_lift) -> np.ndarray:
    """Drop the lifted coordinates, returning the original scenario."""
    xi_lift = np.asarray(xi_lift, dtype=float)
    res = lifted.S_lift @ xi_lift - lifted.t_lift
    if xi_lift.shape[0] != lifted.dim or (res.size and np.max(np.abs(res)) > 1e-7):
        raise ValueError("point is not in the lifted set")
    return xi_lift[lifted.orig_columns()]


# ---------------------------------------------------------------------------
# exact enumeration


def _slice_vertices(S_c: np.ndarray, rhs: np.ndarray, budget: int, tol: float = 1e-9):
    """Vertices of {x >= 0 : S_c x = rhs} via null-space double description."""
    Kc = S_c.shape[1]
    if Kc == 0:
        if rhs.size == 0 or np.max(np.abs(rhs)) <= 1e-8:
            return np.zeros((1, 0))
        return np.zeros((0, 0))
    if S_c.shape[0] == 0:
        raise UnboundedSliceError("continuous slice has no equality rows (unbounded)")
    x0, *_ = np.linalg.lstsq(S_c, rhs, rcond=None)
    if np.max(np.abs(S_c @ x0 - rhs)) > 1e-8 * (1 + np.max(np.abs(rhs), initial=0.0)):
        return np.zeros((0, Kc))
    N = sla.null_space(S_c)
    if N.shape[1] == 0:
        if np.min(x0) >= -1e-8:
            return np.clip(x0, 0.0, None)[None, :]
        return np.zeros((0, Kc))
    V = polytope_vertices(-N, x0, budget=budget, tol=tol)
    pts = x0[None, :] + V @ N.T
    return _polish_slice_points(S_c, rhs, pts)


def _polish_slice_points(S_c, rhs, pts, tol: float = 1e-7):
    """Clamp near-zero coordinates and re-solve on the active pattern."""
    out = []
    for p in pts:
        active = p < tol
        free = ~active
        q = np.zeros_like(p)
        if free.any():
            sol, *_ = np.linalg.lstsq(S_c[:, free], rhs, rcond=None)
            q[free] = sol
        if np.max(np.abs(S_c @ q - rhs), initial=0.0) > 1e-7 or np.min(q, initial=0.0) < -1e-7:
            q = np.clip(p, 0.0, None)  # fall back to the raw vertex
        out.append(np.clip(q, 0.0, None))
    return np.array(out)


def enumerate_set(uset: MixedIntegerUncertaintySet, vertex_budget: int = 10000) -> np.ndarray:
    """All extreme scenarios: feasible integer assignments x slice vertices.

    Every returned point satisfies S xi = t, xi >= 0, integrality and the
    integer caps to 1e-9.  Raises BudgetExceededError when the instance
    is too large for the exact oracle.
    """
    K, L = uset.dim, uset.num_integer
    S, t = np.asarray(uset.S), np.asarray(uset.t)
    S_int, S_c = S[:, :L], S[:, L:]

    total_assign = 1
    for u in uset.upper_bounds:
        total_assign *= int(u) + 1
        if total_assign > vertex_budget:
            raise BudgetExceededError(
                f"{total_assign}+ integer assignments exceed budget {vertex_budget}")

    points: list[np.ndarray] = []

    def feasible_partial(assign: list[int]) -> bool:
        la_ = len(assign)
        n = K - la_
        if uset.num_rows == 0:
            return True
        A_eq = S[:, la_:]
        b_eq = t - S[:, :la_] @ np.array(assign, dtype=float) if la_ else t
        ub_rows = []
        ub_rhs = []
        for l in range(la_, L):
            row = np.zeros(n)
            row[l - la_] = 1.0
            ub_rows.append(row)
            ub_rhs.append(float(uset.upper_bounds[l]))
        res = solve_lp(np.zeros(n), A_eq=A_eq, b_eq=b_eq,
                       A_ub=np.array(ub_rows) if ub_rows else None,
                       b_ub=np.array(ub_rhs) if ub_rhs else None, tol=1e-9)
        return res.status != "primal_infeasible"

    def recurse(assign: list[int]):
        if len(assign) == L:
            rhs = t - S_int @ np.array(assign, dtype=float) if uset.num_rows else np.zeros(0)
            slice_pts = _slice_vertices(S_c if uset.num_rows else np.zeros((0, K - L)),
                                        rhs, budget=vertex_budget)
            for sp in slice_pts:
                points.append(np.concatenate([np.array(assign, dtype=float), sp]))
                if len(points) > vertex_budget:
                    raise BudgetExceededError(
                        f"scenario count exceeds budget {vertex_budget}")
            return
        l = len(assign)
        for val in range(int(uset.upper_bounds[l]) + 1):
            cand = assign + [val]
            if feasible_partial(cand):
                recurse(cand)

    recurse([])
    if not points:
        return np.zeros((0, K))
    pts = np.array(points)
    order = np.lexsort(pts.T[::-1])
    return pts[order]


# ---------------------------------------------------------------------------
# two-stage lifting


def recourse_dual_general(ts: TwoStageData, rank_tol: float | None = None) -> RecourseDualData:
    """Eigen-split dual description of the recourse QP (pseudo-inverse form).

    With P'P = U diag(lambda) U', the dual quadratic uses
    Mplus = U+ diag(1/lambda+) U+' and the zero-eigenvalue directions U0
    induce the coupling rows U0'(R xi + r) = U0' W' theta.
    """
    PtP = ts.P.T @ ts.P
    w, U = np.linalg.eigh(PtP)
    smax = max(w[-1], 0.0) if w.size else 0.0
    thresh = (rank_tol if rank_tol is not None else RANK_TOL_FACTOR) * max(smax, 1.0)
    pos = w > thresh
    rank = int(pos.sum())
    Uplus = U[:, pos]
    U0 = U[:, ~pos]
    Mplus = (Uplus / w[pos][None, :]) @ Uplus.T if rank else np.zeros_like(PtP)
    return RecourseDualData(Mplus=Mplus, U0=U0, rank=rank, eigvals=w)


def build_lifted_two_stage(instance: RqpInstance, ts: TwoStageData | None = None,
                           rank_tol: float | None = None,
                           theta_scale: float = 1.0) -> TwoStageLiftedData:
    """Expanded parameters for the two-stage problem.

    Full-column-rank P uses (P'P)^{-1} directly; otherwise the
    pseudo-inverse dual with coupling rows is assembled, so callers never
    need to special-case rank deficiency.  `theta_scale` sigma replaces
    the dual coordinates by theta/sigma (linear terms and cross blocks
    pick up sigma, the dual-dual quadratic sigma^2); the default 1.0
    reproduces the reference block layout exactly.
    """
    ts = ts if ts is not None else instance.two_stage
    if ts is None:
        raise ValueError("instance has no two-stage data")
    sg = float(theta_scale)
    if sg <= 0:
        raise ValueError("theta_scale must be positive")
    dual = recourse_dual_general(ts, rank_tol)
    Mplus, U0 = dual.Mplus, dual.U0
    ncouple = U0.shape[1]

    S, t, roles, Q, nbin, orig_off = _lift_system(instance.Xi)
    Jp0, Kp0 = S.shape
    K = instance.Xi.dim
    T = ts.num_constraints

    Kp = Kp0 + T
    Jp = Jp0 + ncouple
    S2 = np.zeros((Jp, Kp))
    S2[:Jp0, :Kp0] = S
    t2 = np.concatenate([t, np.zeros(ncouple)])
    if ncouple:
        # coupling rows U0' R xi - U0' W' theta = -U0' r
        S2[Jp0:, orig_off : orig_off + K] = U0.T @ ts.R
        S2[Jp0:, Kp0:] = -sg * (U0.T @ ts.W.T)
        t2[Jp0:] = -(U0.T @ ts.r)
    roles2 = roles + tuple(CoordRole("recourse_dual", k=i) for i in range(T))

    A_lift = _pad_map_matrix(instance.A, Kp, orig_off)

    # linear term: xi block gains -1/2 R' Mplus r, theta block is h(x) + 1/2 W Mplus r
    bshift = -0.5 * (ts.R.T @ Mplus @ ts.r)
    base = np.zeros(Kp)
    base[orig_off : orig_off + K] = instance.b.base + bshift
    base[Kp0:] = sg * (ts.h.base + 0.5 * (ts.W @ Mplus @ ts.r))
    coeffs = []
    for d in range(instance.b.num_decisions):
        v = np.zeros(Kp)
        v[orig_off : orig_off + K] = instance.b.coeffs[d]
        v[Kp0:] = sg * ts.h.coeffs[d]
        coeffs.append(v)
    b_lift = AffineVectorMap(base, tuple(coeffs))

    # indefinite quadratic of the dualized recourse, zero-padded to Kp x Kp
    Pbase = np.zeros((Kp, Kp))
    sl_xi = slice(orig_off, orig_off + K)
    sl_th = slice(Kp0, Kp)
    Pbase[sl_xi, sl_xi] = -0.25 * (ts.R.T @ Mplus @ ts.R)
    cross = sg * 0.5 * (ts.T.base + 0.5 * (ts.W @ Mplus @ ts.R))
    Pbase[sl_th, sl_xi] = cross
    Pbase[sl_xi, sl_th] = cross.T
    Pbase[sl_th, sl_th] = -0.25 * sg * sg * (ts.W @ Mplus @ ts.W.T)
    Pcoeffs = []
    for d in range(ts.T.num_decisions):
        Cd = np.zeros((Kp, Kp))
        cr = sg * 0.5 * ts.T.coeffs[d]
        Cd[sl_th, sl_xi] = cr
        Cd[sl_xi, sl_th] = cr.T
        Pcoeffs.append(Cd)
    P_block = AffineMatrixMap(Pbase, tuple(Pcoeffs))

    offset = float(-0.25 * (ts.r @ Mplus @ ts.r))
    return TwoStageLiftedData(
        S_lift=S2,
        t_lift=t2,
        A_lift=A_lift,
        b_lift=b_lift,
        coord_map=roles2,
        binary_index_count=nbin,
        bit_widths=Q,
        source=instance.Xi,
        P_block=P_block,
        offset=offset,
        coupling_rows=ncouple,
        theta_scale=sg,
    )
