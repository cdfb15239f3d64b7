"""Backend registry for conic solves.

The reference interior-point backend is always available under the name
``"reference"``.  External solvers can be plugged in by registering a
callable ``fn(program, tol, max_iter, **opts) -> SolveResult`` that
consumes the packed program layout (see ``ConicProgram.to_packed``) or
the program object directly.
"""

from __future__ import annotations

from . import solver
from .program import ConicProgram, SolveResult

_REGISTRY: dict = {}
_SELECTED = "reference"


def register(name: str, fn) -> None:
    if name in _REGISTRY:
        raise ValueError(f"backend {name!r} already registered")
    _REGISTRY[name] = fn


def select(name: str) -> None:
    global _SELECTED
    if name not in _REGISTRY:
        raise KeyError(f"unknown backend {name!r}")
    _SELECTED = name


def current() -> str:
    return _SELECTED


def solve(prog: ConicProgram, tol: float = 1e-7, max_iter: int = 100, **opts) -> SolveResult:
    """Solve through the currently selected backend."""
    return _REGISTRY[_SELECTED](prog, tol=tol, max_iter=max_iter, **opts)


_REGISTRY["reference"] = solver.solve
