"""Solver-agnostic conic program representation.

A :class:`ConicProgram` is a minimization problem in equality form

    minimize    c' v
    subject to  A v = b
                v in (free blocks) x (nonnegative blocks) x (PSD blocks)

where every scalar variable belongs to exactly one block.  PSD blocks of
side n are stored in packed lower-triangular "svec" form of length
n*(n+1)//2 with off-diagonal entries scaled by sqrt(2), so that inner
products of packed vectors equal trace inner products of the matrices.
Inequalities must be modelled with explicit slack variables in
nonnegative blocks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

FREE = "free"
NONNEG = "nonneg"
PSD = "psd"

_SQRT2 = math.sqrt(2.0)


def svec_len(n: int) -> int:
    return n * (n + 1) // 2


_IDX_CACHE: dict[int, tuple[np.ndarray, np.ndarray, np.ndarray]] = {}


def _svec_meta(n: int):
    got = _IDX_CACHE.get(n)
    if got is None:
        rows = []
        cols = []
        for i in range(n):
            for j in range(i + 1):
                rows.append(i)
                cols.append(j)
        I = np.asarray(rows, dtype=int)
        J = np.asarray(cols, dtype=int)
        scale = np.where(I == J, 1.0, _SQRT2)
        got = (I, J, scale)
        _IDX_CACHE[n] = got
    return got


def svec(M: np.ndarray) -> np.ndarray:
    """Pack a symmetric matrix into scaled lower-triangular form."""
    n = M.shape[0]
    I, J, scale = _svec_meta(n)
    return 0.5 * (M[I, J] + M[J, I]) * scale


def smat(v: np.ndarray, n: int) -> np.ndarray:
    """Inverse of :func:`svec`."""
    I, J, scale = _svec_meta(n)
    M = np.zeros((n, n))
    vals = v / scale
    M[I, J] = vals
    M[J, I] = vals
    return M


def svec_indices(n: int) -> tuple[np.ndarray, np.ndarray]:
    """Row/column index arrays (i >= j) in packed order."""
    I, J, _ = _svec_meta(n)
    return I, J


@dataclass(frozen=True)
class Block:
    """One variable block: kind, packed length, PSD side (0 otherwise)."""

    kind: str
    length: int
    order: int
    offset: int
    label: str


class ConicProgram:
    """Equality-form conic program built incrementally.

    Rows are linear equalities over the global scalar variable vector.
    The builder interface hands out global offsets so callers can wire
    coefficients by absolute index.
    """

    def __init__(self) -> None:
        self.blocks: list[Block] = []
        self._rows: list[tuple[np.ndarray, np.ndarray]] = []
        self._rhs: list[float] = []
        self._obj: dict[int, float] = {}
        self.obj_const = 0.0
        self.num_vars = 0
        self._labels: dict[str, Block] = {}

    # ----- construction -------------------------------------------------

    def add_block(self, kind: str, size: int, label: str = "") -> Block:
        """Append a block; `size` is the vector length (PSD: matrix side)."""
        if kind not in (FREE, NONNEG, PSD):
            raise ValueError(f"unknown block kind {kind!r}")
        if size <= 0:
            raise ValueError("block size must be positive")
        if kind == PSD:
            blk = Block(PSD, svec_len(size), size, self.num_vars, label)
        else:
            blk = Block(kind, size, 0, self.num_vars, label)
        self.blocks.append(blk)
        if label:
            if label in self._labels:
                raise ValueError(f"duplicate block label {label!r}")
            self._labels[label] = blk
        self.num_vars += blk.length
        return blk

    def block(self, label: str) -> Block:
        return self._labels[label]

    def add_row(self, idx, val, rhs: float) -> int:
        """Add one equality row sum(val[k] * v[idx[k]]) == rhs."""
        idx = np.asarray(idx, dtype=int)
        val = np.asarray(val, dtype=float)
        if idx.shape != val.shape:
            raise ValueError("index/value length mismatch")
        self._rows.append((idx, val))
        self._rhs.append(float(rhs))
        return len(self._rhs) - 1

    def add_obj(self, idx, val) -> None:
        """Accumulate linear objective coefficients."""
        for i, v in zip(np.atleast_1d(idx), np.atleast_1d(val)):
            self._obj[int(i)] = self._obj.get(int(i), 0.0) + float(v)

    # ----- assembly ------------------------------------------------------

    @property
    def num_rows(self) -> int:
        return len(self._rhs)

    def matrices(self) -> tuple[sp.csr_matrix, np.ndarray, np.ndarray]:
        """Return (A, b, c) with A sparse CSR."""
        rows = []
        cols = []
        vals = []
        for r, (idx, val) in enumerate(self._rows):
            rows.append(np.full(idx.shape, r, dtype=int))
            cols.append(idx)
            vals.append(val)
        if rows:
            A = sp.csr_matrix(
                (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                shape=(self.num_rows, self.num_vars),
            )
            A.sum_duplicates()
        else:
            A = sp.csr_matrix((0, self.num_vars))
        b = np.asarray(self._rhs, dtype=float)
        c = np.zeros(self.num_vars)
        for i, v in self._obj.items():
            c[i] = v
        return A, b, c

    # ----- packed export (external backend adapter schema) --------------

    def to_packed(self) -> dict:
        """Export the documented packed layout (plain-Python types)."""
        A, b, c = self.matrices()
        coo = A.tocoo()
        return {
            "blocks": [
                {"kind": blk.kind, "length": blk.length, "order": blk.order,
                 "offset": blk.offset, "label": blk.label}
                for blk in self.blocks
            ],
            "num_vars": self.num_vars,
            "num_rows": self.num_rows,
            "A": {"rows": coo.row.tolist(), "cols": coo.col.tolist(),
                  "vals": coo.data.tolist()},
            "b": b.tolist(),
            "c": c.tolist(),
            "obj_const": self.obj_const,
        }


@dataclass
class SolveResult:
    """Outcome of one conic solve."""

    status: str  # optimal | primal_infeasible | dual_infeasible | max_iter | numerical_failure
    primal_obj: float
    dual_obj: float
    x: np.ndarray | None
    y: np.ndarray | None
    z: np.ndarray | None
    residuals: tuple[float, float, float]  # (primal feas, dual feas, gap)
    iterations: int
    certificate: dict | None = None
    program: ConicProgram = field(default=None, repr=False)

    def block_value(self, label: str) -> np.ndarray:
        """Primal value of a labelled block (PSD blocks as full matrices)."""
        blk = self.program.block(label)
        seg = self.x[blk.offset : blk.offset + blk.length]
        if blk.kind == PSD:
            return smat(seg, blk.order)
        return seg.copy()


class DimensionLimitError(ValueError):
    """Program exceeds the configured dense-solver limits."""
