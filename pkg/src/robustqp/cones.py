"""Membership oracles and decompositions for copositive matrices.

Two independent routes are provided: a simplex-subdivision brute-force
oracle certifying copositivity (or producing a witness vector), and a
conic feasibility check for the tractable inner cone of matrices that
split into a PSD plus an entrywise-nonnegative part.  For matrix side
<= 4 the two notions coincide, which the test suite exploits.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .conic import NONNEG, PSD, ConicProgram, backends, smat, svec

# Classical 5x5 matrix that is copositive but admits no PSD + nonnegative
# split.  Copositivity follows from the two identities
#   q(x) = (x1 - x2 + x3 + x4 - x5)^2 + 4 x2 x4 + 4 x3 (x5 - x4)
#   q(x) = (x1 - x2 + x3 - x4 + x5)^2 + 4 x2 x5 + 4 x1 (x4 - x5)
# (use the first when x5 >= x4, the second otherwise).
HORN_MATRIX = np.array(
    [
        [1.0, -1.0, 1.0, 1.0, -1.0],
        [-1.0, 1.0, -1.0, 1.0, 1.0],
        [1.0, -1.0, 1.0, -1.0, 1.0],
        [1.0, 1.0, -1.0, 1.0, -1.0],
        [-1.0, 1.0, 1.0, -1.0, 1.0],
    ]
)


@dataclass
class CopositivityVerdict:
    answer: str  # "yes" | "no" | "inconclusive"
    witness: np.ndarray | None = None  # xi >= 0, ||xi||_1 = 1, xi'M xi < 0


@dataclass
class C0Decomposition:
    psd_part: np.ndarray
    nonneg_part: np.ndarray
    residual: float


@dataclass
class C0Infeasibility:
    """Separating certificate: Y is PSD and entrywise nonnegative with
    <M, Y> < 0, so M has no PSD + nonnegative decomposition."""

    witness: np.ndarray
    objective: float


def _simplex_children(V: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Split the longest edge of the simplex with vertex rows V."""
    k = V.shape[0]
    best = (0, 1)
    best_len = -1.0
    for i in range(k):
        for j in range(i + 1, k):
            d = float(np.sum((V[i] - V[j]) ** 2))
            if d > best_len:
                best_len = d
                best = (i, j)
    i, j = best
    mid = 0.5 * (V[i] + V[j])
    Va = V.copy()
    Va[i] = mid
    Vb = V.copy()
    Vb[j] = mid
    return Va, Vb


def is_copositive_bruteforce(M, grid_depth: int = 18, tol: float = 1e-10) -> CopositivityVerdict:
    """Simplex-subdivision copositivity test for matrix side <= 8.

    "no" comes with a unit-1-norm witness; "yes" is certified by
    entrywise nonnegativity of all leaf simplex Gram matrices;
    undecided leaves after `grid_depth` rounds give "inconclusive".
    """
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    if n > 8:
        raise ValueError("brute-force oracle limited to dimension 8")
    if np.max(np.abs(M - M.T)) > 1e-10:
        raise ValueError("matrix must be symmetric")

    stack = [(np.eye(n), 0)]
    while stack:
        V, depth = stack.pop()
        G = V @ M @ V.T
        d = np.diag(G)
        if np.min(d) < -tol:
            i = int(np.argmin(d))
            w = V[i] / np.sum(V[i])
            return CopositivityVerdict("no", w)
        # midpoint probe: f((v_i+v_j)/2) negative is also a witness
        probe = G + G.T + d[:, None] + d[None, :]
        ii, jj = np.unravel_index(np.argmin(probe), probe.shape)
        if probe[ii, jj] < -4 * tol:
            w = 0.5 * (V[ii] + V[jj])
            w = w / np.sum(w)
            if w @ M @ w < -tol:
                return CopositivityVerdict("no", w)
        if np.min(G) >= -tol:
            continue  # certified nonnegative on this simplex
        if depth >= grid_depth:
            return CopositivityVerdict("inconclusive")
        Va, Vb = _simplex_children(V)
        stack.append((Va, depth + 1))
        stack.append((Vb, depth + 1))
    return CopositivityVerdict("yes")


def strict_copositivity_margin(M, max_refine: int = 4000) -> float:
    """Certified lower bound on min_{xi in unit simplex} xi' M xi.

    Best-first refinement; the entrywise minimum of each simplex Gram
    matrix bounds the quadratic from below on that simplex.
    """
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    if n > 12:
        raise ValueError("margin oracle limited to dimension 12")
    heap = []
    counter = 0
    V0 = np.eye(n)
    G0 = V0 @ M @ V0.T
    heapq.heappush(heap, (float(np.min(G0)), counter, V0))
    upper = float(np.min(np.diag(G0)))
    for _ in range(max_refine):
        lb, _, V = heap[0]
        if lb >= upper - 1e-12:
            break
        heapq.heappop(heap)
        for child in _simplex_children(V):
            G = child @ M @ child.T
            counter += 1
            upper = min(upper, float(np.min(np.diag(G))))
            heapq.heappush(heap, (float(np.min(G)), counter, child))
    return float(heap[0][0])


def c0_membership(M, tol: float = 1e-8, decomp_tol: float = 1e-7):
    """Split M into PSD + entrywise-nonnegative parts via a conic solve.

    Returns a C0Decomposition, or a C0Infeasibility carrying the dual
    improving ray (a doubly nonnegative Y with <M, Y> < 0).
    """
    M = np.asarray(M, dtype=float)
    if np.max(np.abs(M - M.T)) > 1e-10:
        raise ValueError("matrix must be symmetric")
    n = M.shape[0]
    plen = n * (n + 1) // 2
    prog = ConicProgram()
    Pb = prog.add_block(PSD, n, "P")
    Nb = prog.add_block(NONNEG, plen, "N")
    target = svec(M)
    for k in range(plen):
        prog.add_row([Pb.offset + k, Nb.offset + k], [1.0, 1.0], target[k])
    # minimize total mass of N: PSD inputs come back as (M, 0)
    prog.add_obj(np.arange(Nb.offset, Nb.offset + plen), svec(np.ones((n, n))))
    res = backends.solve(prog, tol=tol, max_iter=200)
    if res.status == "primal_infeasible":
        Y = -smat(res.certificate["y"], n)
        Y = 0.5 * (Y + Y.T)
        return C0Infeasibility(witness=Y, objective=float(np.sum(M * Y)))
    if res.status not in ("optimal",):
        raise RuntimeError(f"conic solve failed with status {res.status}")
    Pmat = res.block_value("P")
    Nmat = smat(res.x[Nb.offset : Nb.offset + plen], n)
    resid = float(np.linalg.norm(M - Pmat - Nmat, "fro"))
    if resid > decomp_tol:
        raise RuntimeError(f"decomposition residual {resid:.2e} above tolerance")
    return C0Decomposition(psd_part=Pmat, nonneg_part=Nmat, residual=resid)


def copositive_schur_check(P, Q, R, margin_refine: int = 2000) -> bool:
    """Hypotheses of the copositive Schur-complement property:
    P positive definite and R - Q'P^{-1}Q strictly copositive."""
    P = np.asarray(P, dtype=float)
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    R = np.asarray(R, dtype=float)
    w = np.linalg.eigvalsh(0.5 * (P + P.T))
    if w[0] <= 0:
        return False
    comp = R - Q.T @ np.linalg.solve(P, Q)
    comp = 0.5 * (comp + comp.T)
    if comp.shape[0] > 8:
        raise ValueError("complement dimension limited to 8")
    return strict_copositivity_margin(comp, max_refine=margin_refine) > 0
