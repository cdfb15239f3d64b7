"""Domain types for robust quadratic program instances.

The decision-stage data of a robust QP

    minimize_{x in X}  sup_{xi in Xi}  ||A(x) xi||^2 + b(x)' xi + c(x)

is held by :class:`RqpInstance`: affine maps A(x), b(x), a convex
quadratic c(x), a polytope X for the decisions, and a bounded
mixed-integer polyhedral uncertainty set Xi.  All types are immutable
after construction and safe to share across threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .conic.lp import coordinate_sup, solve_lp

PSD_TOL = 1e-8
STRICT_TOL = 1e-9


class ParseError(ValueError):
    """Instance file is malformed; message names the offending field."""


def _freeze(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class AffineMatrixMap:
    """Matrix-valued affine function x -> base + sum_d x_d * coeffs[d]."""

    base: np.ndarray
    coeffs: tuple[np.ndarray, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "base", _freeze(self.base))
        object.__setattr__(self, "coeffs", tuple(_freeze(C) for C in self.coeffs))
        for C in self.coeffs:
            if C.shape != self.base.shape:
                raise ValueError(
                    f"coefficient shape {C.shape} != base shape {self.base.shape}"
                )

    @property
    def shape(self) -> tuple[int, int]:
        return self.base.shape

    @property
    def num_decisions(self) -> int:
        return len(self.coeffs)

    def is_constant(self, tol: float = 0.0) -> bool:
        return all(np.max(np.abs(C)) <= tol for C in self.coeffs)

    def __call__(self, x) -> np.ndarray:
        M = np.array(self.base)
        for xd, C in zip(np.asarray(x, dtype=float), self.coeffs):
            M += xd * C
        return M


@dataclass(frozen=True)
class AffineVectorMap:
    """Vector-valued affine function x -> base + sum_d x_d * coeffs[d]."""

    base: np.ndarray
    coeffs: tuple[np.ndarray, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "base", _freeze(np.atleast_1d(self.base)))
        object.__setattr__(
            self, "coeffs", tuple(_freeze(np.atleast_1d(v)) for v in self.coeffs)
        )
        for v in self.coeffs:
            if v.shape != self.base.shape:
                raise ValueError(f"coefficient length {v.shape} != {self.base.shape}")

    @property
    def size(self) -> int:
        return self.base.shape[0]

    @property
    def num_decisions(self) -> int:
        return len(self.coeffs)

    def is_constant(self, tol: float = 0.0) -> bool:
        return all(np.max(np.abs(v)) <= tol for v in self.coeffs)

    def __call__(self, x) -> np.ndarray:
        v = np.array(self.base)
        for xd, c in zip(np.asarray(x, dtype=float), self.coeffs):
            v += xd * c
        return v


@dataclass(frozen=True)
class ConvexQuadraticScalar:
    """Convex quadratic x -> x'Qx + l'x + k with Q symmetric PSD."""

    quad: np.ndarray
    lin: np.ndarray
    const: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "quad", _freeze(np.atleast_2d(self.quad)))
        object.__setattr__(self, "lin", _freeze(np.atleast_1d(self.lin)))
        object.__setattr__(self, "const", float(self.const))

    @property
    def dim(self) -> int:
        return self.lin.shape[0]

    def is_linear(self, tol: float = 0.0) -> bool:
        return np.max(np.abs(self.quad)) <= tol if self.quad.size else True

    def __call__(self, x) -> float:
        x = np.asarray(x, dtype=float)
        return float(x @ self.quad @ x + self.lin @ x + self.const)

    @staticmethod
    def zero(dim: int) -> "ConvexQuadraticScalar":
        return ConvexQuadraticScalar(np.zeros((dim, dim)), np.zeros(dim), 0.0)


@dataclass(frozen=True)
class MixedIntegerUncertaintySet:
    """Bounded mixed-integer polyhedral uncertainty set.

    Xi = { xi >= 0 : S xi = t, xi_l integer in [0, u_l] for l < L }.
    The first `num_integer` coordinates are the integer ones;
    `upper_bounds` holds their per-coordinate integer caps.
    """

    S: np.ndarray
    t: np.ndarray
    num_integer: int = 0
    upper_bounds: np.ndarray = field(default_factory=lambda: np.zeros(0))

    def __post_init__(self):
        S = np.asarray(self.S, dtype=float)
        if S.size == 0:
            S = S.reshape((0, S.shape[1] if S.ndim == 2 else 0))
        object.__setattr__(self, "S", _freeze(np.atleast_2d(S) if S.size else S))
        object.__setattr__(self, "t", _freeze(np.atleast_1d(self.t)))
        ub = np.asarray(self.upper_bounds, dtype=float)
        object.__setattr__(self, "upper_bounds", _freeze(ub))
        if self.num_integer != ub.shape[0]:
            raise ValueError("upper_bounds must have one entry per integer coordinate")

    @property
    def dim(self) -> int:
        return self.S.shape[1]

    @property
    def num_rows(self) -> int:
        return self.S.shape[0]

    def bound_rows(self) -> tuple[np.ndarray, np.ndarray]:
        """Inequality rows xi_l <= u_l for the integer coordinates."""
        L = self.num_integer
        G = np.zeros((L, self.dim))
        for l in range(L):
            G[l, l] = 1.0
        return G, np.array(self.upper_bounds)

    def contains(self, xi, tol: float = 1e-9) -> bool:
        xi = np.asarray(xi, dtype=float)
        if xi.shape[0] != self.dim or np.min(xi, initial=0.0) < -tol:
            return False
        if self.num_rows and np.max(np.abs(self.S @ xi - self.t)) > tol:
            return False
        for l in range(self.num_integer):
            if abs(xi[l] - round(xi[l])) > tol:
                return False
            if xi[l] > self.upper_bounds[l] + tol:
                return False
        return True


@dataclass(frozen=True)
class PolytopeX:
    """Decision polytope {x : ineq_matrix x <= ineq_rhs}, rows optionally
    flagged as equalities."""

    ineq_matrix: np.ndarray
    ineq_rhs: np.ndarray
    eq_mask: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "ineq_matrix", _freeze(np.atleast_2d(self.ineq_matrix)))
        object.__setattr__(self, "ineq_rhs", _freeze(np.atleast_1d(self.ineq_rhs)))
        if self.eq_mask is not None:
            m = np.asarray(self.eq_mask, dtype=bool)
            m.setflags(write=False)
            object.__setattr__(self, "eq_mask", m)

    @property
    def dim(self) -> int:
        return self.ineq_matrix.shape[1]

    @property
    def num_rows(self) -> int:
        return self.ineq_matrix.shape[0]

    def rows(self):
        """Yield (coefficients, rhs, is_equality)."""
        for i in range(self.num_rows):
            eq = bool(self.eq_mask[i]) if self.eq_mask is not None else False
            yield self.ineq_matrix[i], self.ineq_rhs[i], eq

    def contains(self, x, tol: float = 1e-9) -> bool:
        x = np.asarray(x, dtype=float)
        for a, rhs, eq in self.rows():
            v = a @ x - rhs
            if eq and abs(v) > tol:
                return False
            if not eq and v > tol:
                return False
        return True


@dataclass(frozen=True)
class TwoStageData:
    """Second-stage (recourse) problem data

        R(x, xi) = inf_y ||P y||^2 + (R xi + r)' y   s.t. T(x) xi + h(x) <= W y.

    `recourse_witness`, when present, certifies complete recourse
    (W y+ > 0 strictly)."""

    P: np.ndarray
    R: np.ndarray
    r: np.ndarray
    T: AffineMatrixMap
    h: AffineVectorMap
    W: np.ndarray
    recourse_witness: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "P", _freeze(np.atleast_2d(self.P)))
        object.__setattr__(self, "R", _freeze(np.atleast_2d(self.R)))
        object.__setattr__(self, "r", _freeze(np.atleast_1d(self.r)))
        object.__setattr__(self, "W", _freeze(np.atleast_2d(self.W)))
        if self.recourse_witness is not None:
            object.__setattr__(self, "recourse_witness", _freeze(self.recourse_witness))

    @property
    def num_recourse(self) -> int:
        return self.W.shape[1]

    @property
    def num_constraints(self) -> int:
        return self.W.shape[0]


@dataclass(frozen=True)
class RobustQuadConstraint:
    """One robust constraint sup_xi ||A_i(x) xi||^2 + b_i(x)' xi + c_i(x) <= 0."""

    A: AffineMatrixMap
    b: AffineVectorMap
    c: ConvexQuadraticScalar


@dataclass(frozen=True)
class InequalityFormInstance:
    """Robust QP data over an inequality-described continuous set
    {zeta : S zeta <= t} with sign-free coordinates.  Companion object for
    the generalized inequality-form SDP path; not part of the file schema."""

    S: np.ndarray
    t: np.ndarray
    A: AffineMatrixMap
    b: AffineVectorMap
    c: ConvexQuadraticScalar
    X: PolytopeX

    def __post_init__(self):
        object.__setattr__(self, "S", _freeze(np.atleast_2d(self.S)))
        object.__setattr__(self, "t", _freeze(np.atleast_1d(self.t)))

    @property
    def dim(self) -> int:
        return self.S.shape[1]


@dataclass(frozen=True)
class RqpInstance:
    """One- or two-stage robust convex quadratic program instance."""

    A: AffineMatrixMap
    b: AffineVectorMap
    c: ConvexQuadraticScalar
    X: PolytopeX
    Xi: MixedIntegerUncertaintySet
    two_stage: TwoStageData | None = None
    constraints: tuple[RobustQuadConstraint, ...] = ()

    @property
    def num_decisions(self) -> int:
        return self.X.dim

    @property
    def num_uncertain(self) -> int:
        return self.Xi.dim

    def objective_value(self, x, xi) -> float:
        """First-stage objective at a fixed decision and scenario."""
        Ax = self.A(x)
        return float(np.sum((Ax @ xi) ** 2) + self.b(x) @ xi + self.c(x))


# ---------------------------------------------------------------------------
# validation


def derive_bit_width(uset: MixedIntegerUncertaintySet) -> np.ndarray:
    """Per-coordinate bit counts: smallest Q with 2^Q - 1 >= u (at least 1)."""
    out = np.ones(uset.num_integer, dtype=int)
    for l, u in enumerate(uset.upper_bounds):
        q = 1
        while (1 << q) - 1 < int(round(u)):
            q += 1
        out[l] = q
    return out


def validate(instance: RqpInstance, psd_tol: float = PSD_TOL,
             strict_tol: float = STRICT_TOL, lp_tol: float = 1e-8) -> list[str]:
    """Return the list of violations; empty iff the instance is usable."""
    v: list[str] = []
    A, b, c, X, Xi = instance.A, instance.b, instance.c, instance.X, instance.Xi
    M, K = A.shape
    D = X.dim

    if b.size != K:
        v.append(f"dimension mismatch: b has length {b.size}, A has {K} columns")
    if Xi.dim != K:
        v.append(f"dimension mismatch: Xi has {Xi.dim} coordinates, A has {K} columns")
    if A.num_decisions != D:
        v.append(f"dimension mismatch: A has {A.num_decisions} decision coeffs, X dim {D}")
    if b.num_decisions != D:
        v.append(f"dimension mismatch: b has {b.num_decisions} decision coeffs, X dim {D}")
    if c.dim != D:
        v.append(f"dimension mismatch: c over {c.dim} decisions, X dim {D}")
    if Xi.num_rows and Xi.S.shape[1] != Xi.dim:
        v.append("dimension mismatch: S column count")
    if Xi.t.shape[0] != Xi.num_rows:
        v.append("dimension mismatch: t length != S row count")
    if not 0 <= Xi.num_integer <= Xi.dim:
        v.append("integer coordinate count out of range")
    if np.any(Xi.upper_bounds < 0):
        v.append("negative integer upper bound")

    if c.quad.size:
        sym_err = np.max(np.abs(c.quad - c.quad.T))
        if sym_err > 1e-12:
            v.append("c.quad is not symmetric")
        else:
            w = np.linalg.eigvalsh(np.asarray(c.quad))
            if w.size and w[0] < -psd_tol:
                v.append(f"c.quad not PSD (min eigenvalue {w[0]:.2e})")

    if v:
        return v  # skip LP checks on dimension errors

    # Xi boundedness: sup of each coordinate over the u-bounded relaxation.
    G_ub, h_ub = Xi.bound_rows()
    for k in range(Xi.dim):
        val, status = coordinate_sup(
            k, Xi.dim, A_eq=Xi.S if Xi.num_rows else None,
            b_eq=Xi.t if Xi.num_rows else None,
            A_ub=G_ub if Xi.num_integer else None,
            b_ub=h_ub if Xi.num_integer else None, tol=lp_tol)
        if not np.isfinite(val):
            v.append(f"unbounded uncertainty set (coordinate {k})")
            break

    # X nonempty
    ineq_rows = []
    ineq_rhs = []
    eq_rows = []
    eq_rhs = []
    for a, rhs, eq in X.rows():
        (eq_rows if eq else ineq_rows).append(a)
        (eq_rhs if eq else ineq_rhs).append(rhs)
    res = solve_lp(np.zeros(D), A_eq=np.array(eq_rows) if eq_rows else None,
                   b_eq=np.array(eq_rhs) if eq_rhs else None,
                   A_ub=np.array(ineq_rows) if ineq_rows else None,
                   b_ub=np.array(ineq_rhs) if ineq_rhs else None,
                   free=True, tol=lp_tol)
    if res.status == "primal_infeasible":
        v.append("empty decision polytope X")

    ts = instance.two_stage
    if ts is not None:
        D2 = ts.num_recourse
        T = ts.num_constraints
        if ts.P.shape[1] != D2:
            v.append("dimension mismatch: P columns != recourse dimension")
        if ts.R.shape != (D2, Xi.dim):
            v.append("dimension mismatch: R must be (recourse dim x K)")
        if ts.r.shape[0] != D2:
            v.append("dimension mismatch: r length != recourse dimension")
        if ts.T.shape != (T, Xi.dim):
            v.append("dimension mismatch: T(x) must be (constraints x K)")
        if ts.h.size != T:
            v.append("dimension mismatch: h(x) length != constraint count")
        if ts.T.num_decisions != D or ts.h.num_decisions != D:
            v.append("dimension mismatch: two-stage maps over wrong decision count")
        if ts.recourse_witness is not None:
            wy = ts.W @ ts.recourse_witness
            if np.min(wy) <= strict_tol:
                v.append("recourse witness fails W y+ > 0")

    for i, con in enumerate(instance.constraints):
        if con.A.shape[1] != Xi.dim or con.b.size != Xi.dim:
            v.append(f"dimension mismatch in robust constraint {i}")

    return v


# ---------------------------------------------------------------------------
# serialization

_SCHEMA_NOTE = "robustqp-instance"


def _map_to_json(m) -> dict:
    return {"base": np.asarray(m.base).tolist(),
            "coeffs": [np.asarray(C).tolist() for C in m.coeffs]}


def _matrix_map_from_json(obj, name: str) -> AffineMatrixMap:
    try:
        return AffineMatrixMap(_parse_matrix(obj["base"], f"{name}.base"),
                               tuple(_parse_matrix(C, f"{name}.coeffs")
                                     for C in obj.get("coeffs", [])))
    except KeyError as e:
        raise ParseError(f"missing field {name}.{e.args[0]}") from None


def _vector_map_from_json(obj, name: str) -> AffineVectorMap:
    try:
        return AffineVectorMap(_parse_vector(obj["base"], f"{name}.base"),
                               tuple(_parse_vector(v, f"{name}.coeffs")
                                     for v in obj.get("coeffs", [])))
    except KeyError as e:
        raise ParseError(f"missing field {name}.{e.args[0]}") from None


def _parse_matrix(rows, name: str) -> np.ndarray:
    if not isinstance(rows, list) or (rows and not isinstance(rows[0], list)):
        raise ParseError(f"field {name} must be a list of rows")
    lens = {len(r) for r in rows}
    if len(lens) > 1:
        raise ParseError(f"field {name} has rows of unequal length")
    try:
        return np.array(rows, dtype=float)
    except (TypeError, ValueError):
        raise ParseError(f"field {name} contains a non-numeric entry") from None


def _parse_vector(vals, name: str) -> np.ndarray:
    if not isinstance(vals, list):
        raise ParseError(f"field {name} must be a list")
    try:
        return np.array(vals, dtype=float)
    except (TypeError, ValueError):
        raise ParseError(f"field {name} contains a non-numeric entry") from None


def save_instance(instance: RqpInstance, path) -> None:
    doc = {
        "format": _SCHEMA_NOTE,
        "A": _map_to_json(instance.A),
        "b": _map_to_json(instance.b),
        "c": {"quad": np.asarray(instance.c.quad).tolist(),
              "lin": np.asarray(instance.c.lin).tolist(),
              "const": instance.c.const},
        "X": {"ineq": np.asarray(instance.X.ineq_matrix).tolist(),
              "rhs": np.asarray(instance.X.ineq_rhs).tolist()},
        "Xi": {"S": np.asarray(instance.Xi.S).tolist(),
               "t": np.asarray(instance.Xi.t).tolist(),
               "L": instance.Xi.num_integer,
               "ubounds": [int(u) for u in instance.Xi.upper_bounds]},
    }
    if instance.X.eq_mask is not None:
        doc["X"]["eq_mask"] = [bool(f) for f in instance.X.eq_mask]
    if instance.two_stage is not None:
        ts = instance.two_stage
        doc["two_stage"] = {
            "P": np.asarray(ts.P).tolist(), "R": np.asarray(ts.R).tolist(),
            "r": np.asarray(ts.r).tolist(), "T": _map_to_json(ts.T),
            "h": _map_to_json(ts.h), "W": np.asarray(ts.W).tolist(),
        }
        if ts.recourse_witness is not None:
            doc["two_stage"]["witness"] = np.asarray(ts.recourse_witness).tolist()
    if instance.constraints:
        doc["constraints"] = [
            {"A": _map_to_json(con.A), "b": _map_to_json(con.b),
             "c": {"quad": np.asarray(con.c.quad).tolist(),
                   "lin": np.asarray(con.c.lin).tolist(), "const": con.c.const}}
            for con in instance.constraints
        ]
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)


_KNOWN_TOP = {"format", "A", "b", "c", "X", "Xi", "two_stage", "constraints"}


def load_instance(path) -> RqpInstance:
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as e:
            raise ParseError(f"invalid JSON at line {e.lineno}, column {e.colno}") from None
    for key in doc:
        if key not in _KNOWN_TOP:
            raise ParseError(f"unknown field {key!r}")
    for key in ("A", "b", "c", "X", "Xi"):
        if key not in doc:
            raise ParseError(f"missing field {key!r}")

    A = _matrix_map_from_json(doc["A"], "A")
    b = _vector_map_from_json(doc["b"], "b")
    cq = doc["c"]
    for key in cq:
        if key not in ("quad", "lin", "const"):
            raise ParseError(f"unknown field c.{key}")
    c = ConvexQuadraticScalar(_parse_matrix(cq["quad"], "c.quad"),
                              _parse_vector(cq["lin"], "c.lin"),
                              float(cq.get("const", 0.0)))
    Xo = doc["X"]
    eq_mask = np.array(Xo["eq_mask"], dtype=bool) if "eq_mask" in Xo else None
    X = PolytopeX(_parse_matrix(Xo["ineq"], "X.ineq"),
                  _parse_vector(Xo["rhs"], "X.rhs"), eq_mask)
    Xio = doc["Xi"]
    S = _parse_matrix(Xio["S"], "Xi.S") if Xio.get("S") else np.zeros((0, 0))
    t = _parse_vector(Xio.get("t", []), "Xi.t")
    ubounds = np.array(Xio.get("ubounds", []), dtype=float)
    K = S.shape[1] if S.size else int(Xio.get("K", b.size))
    if S.size == 0:
        S = np.zeros((0, K))

    # interleaved integer coordinates are normalized to a first-L layout
    perm = None
    if "integer_indices" in Xio:
        ints = list(Xio["integer_indices"])
        L = len(ints)
        rest = [k for k in range(K) if k not in ints]
        perm = np.array(ints + rest, dtype=int)
    else:
        L = int(Xio.get("L", 0))
    if perm is not None and not np.array_equal(perm, np.arange(K)):
        S = S[:, perm]
        A = AffineMatrixMap(A.base[:, perm], tuple(C[:, perm] for C in A.coeffs))
        b = AffineVectorMap(b.base[perm], tuple(v[perm] for v in b.coeffs))
    Xi = MixedIntegerUncertaintySet(S, t, L, ubounds)

    two_stage = None
    if "two_stage" in doc:
        tso = doc["two_stage"]
        witness = np.array(tso["witness"], dtype=float) if "witness" in tso else None
        two_stage = TwoStageData(
            _parse_matrix(tso["P"], "two_stage.P"),
            _parse_matrix(tso["R"], "two_stage.R"),
            _parse_vector(tso["r"], "two_stage.r"),
            _matrix_map_from_json(tso["T"], "two_stage.T"),
            _vector_map_from_json(tso["h"], "two_stage.h"),
            _parse_matrix(tso["W"], "two_stage.W"),
            witness,
        )
    constraints = []
    for i, co in enumerate(doc.get("constraints", [])):
        constraints.append(RobustQuadConstraint(
            _matrix_map_from_json(co["A"], f"constraints[{i}].A"),
            _vector_map_from_json(co["b"], f"constraints[{i}].b"),
            ConvexQuadraticScalar(
                _parse_matrix(co["c"]["quad"], f"constraints[{i}].c.quad"),
                _parse_vector(co["c"]["lin"], f"constraints[{i}].c.lin"),
                float(co["c"].get("const", 0.0))),
        ))
    return RqpInstance(A, b, c, X, Xi, two_stage, tuple(constraints))
