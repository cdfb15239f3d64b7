"""Vertex enumeration for bounded polyhedra via the double description method.

Works on the homogenization of {u : G u <= h}: extreme rays of the cone
{(u, w) : G u - h w <= 0, w >= 0} with w > 0 are exactly the vertices.
Adjacency of rays is decided with the combinatorial subset test, so
degenerate polytopes are handled.  Intended for desk-scale problems
(dimension <= ~12, a few thousand vertices).
"""

from __future__ import annotations

import numpy as np


class BudgetExceededError(RuntimeError):
    """Enumeration would exceed the caller's budget."""


class UnboundedPolytopeError(RuntimeError):
    """The polyhedron has a recession direction."""


def _initial_rows(B: np.ndarray, tol: float) -> list[int]:
    """Greedy selection of linearly independent rows (row indices)."""
    d = B.shape[1]
    chosen: list[int] = []
    basis = np.zeros((0, d))
    for i in range(B.shape[0]):
        cand = np.vstack([basis, B[i]])
        if np.linalg.matrix_rank(cand, tol=tol) > basis.shape[0]:
            chosen.append(i)
            basis = cand
            if basis.shape[0] == d:
                return chosen
    raise UnboundedPolytopeError("constraint matrix is rank deficient")


def polytope_vertices(G, h, budget: int | None = None, tol: float = 1e-9) -> np.ndarray:
    """Vertices of the bounded polyhedron {u : G u <= h}.

    Raises UnboundedPolytopeError when a recession ray shows up and
    BudgetExceededError when intermediate ray counts pass `budget`.
    """
    G = np.atleast_2d(np.asarray(G, dtype=float))
    h = np.atleast_1d(np.asarray(h, dtype=float))
    R, d = G.shape
    if d == 0:
        return np.zeros((1, 0))
    B = np.vstack([np.hstack([G, -h[:, None]]), np.zeros((1, d + 1))])
    B[-1, -1] = -1.0
    nrows = B.shape[0]
    scale = np.maximum(np.linalg.norm(B, axis=1), 1e-30)
    Bn = B / scale[:, None]

    init = _initial_rows(Bn, tol=1e-12)
    rays = -np.linalg.inv(Bn[init])  # columns are rays
    rays = rays.T
    rays /= np.maximum(np.linalg.norm(rays, axis=1), 1e-300)[:, None]

    processed = list(init)
    proc_mask = np.zeros(nrows, dtype=bool)
    proc_mask[init] = True

    def active_bits(ray_mat: np.ndarray) -> list[int]:
        vals = ray_mat @ Bn[processed].T
        bits = []
        for row in vals:
            m = 0
            for k, v in enumerate(row):
                if abs(v) <= tol:
                    m |= 1 << k
            bits.append(m)
        return bits

    act = active_bits(rays)

    for i in range(nrows):
        if proc_mask[i]:
            continue
        a = Bn[i]
        vals = rays @ a
        neg = vals < -tol
        pos = vals > tol
        zer = ~(neg | pos)
        keep_idx = np.nonzero(~pos)[0]
        pos_idx = np.nonzero(pos)[0]
        neg_idx = np.nonzero(neg)[0]
        new_rays = []
        new_acts = []
        if pos_idx.size and neg_idx.size:
            for ip in pos_idx:
                for im in neg_idx:
                    common = act[ip] & act[im]
                    # combinatorial adjacency: no third ray's active set contains it
                    adjacent = True
                    for k in range(rays.shape[0]):
                        if k == ip or k == im:
                            continue
                        if (act[k] & common) == common:
                            adjacent = False
                            break
                    if not adjacent:
                        continue
                    r = vals[ip] * rays[im] - vals[im] * rays[ip]
                    nr = np.linalg.norm(r)
                    if nr <= tol:
                        continue
                    new_rays.append(r / nr)
                    new_acts.append(common)
        # rebuild ray set: kept rays plus newly generated ones
        kept = rays[keep_idx]
        kept_act = [act[k] for k in keep_idx]
        bit = 1 << len(processed)
        processed.append(i)
        proc_mask[i] = True
        upd_act = []
        for k, ridx in enumerate(keep_idx):
            m = kept_act[k]
            if abs(vals[ridx]) <= tol:
                m |= bit
            upd_act.append(m)
        for m in new_acts:
            upd_act.append(m | bit)
        rays = np.vstack([kept] + ([np.array(new_rays)] if new_rays else []))
        act = upd_act
        if budget is not None and rays.shape[0] > budget:
            raise BudgetExceededError(
                f"double description ray count {rays.shape[0]} exceeds budget {budget}"
            )
        # refresh activity against all processed rows periodically for accuracy
        if rays.shape[0] == 0:
            return np.zeros((0, d))

    verts = []
    for r in rays:
        w = r[-1]
        if w <= tol:
            if np.max(np.abs(r[:-1])) > 100 * tol:
                raise UnboundedPolytopeError("recession ray detected")
            continue
        verts.append(r[:-1] / w)
    if not verts:
        return np.zeros((0, d))
    V = np.array(verts)
    return _dedup(V, tol=max(tol * 10, 1e-9))


def _dedup(V: np.ndarray, tol: float) -> np.ndarray:
    order = np.lexsort(V.T[::-1])
    V = V[order]
    keep = [0]
    for i in range(1, V.shape[0]):
        if np.max(np.abs(V[i] - V[keep[-1]])) > tol:
            keep.append(i)
        else:
            continue
    # also guard against non-adjacent duplicates after sorting
    out = []
    for i in keep:
        dup = False
        for j in out:
            if np.max(np.abs(V[i] - V[j])) <= tol:
                dup = True
                break
        if not dup:
            out.append(i)
    return V[out]
