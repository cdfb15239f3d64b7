from .program import (
    FREE,
    NONNEG,
    PSD,
    Block,
    ConicProgram,
    DimensionLimitError,
    SolveResult,
    smat,
    svec,
    svec_indices,
    svec_len,
)
from . import backends
from .backends import register, select, solve
from .lp import solve_lp

__all__ = [
    "FREE", "NONNEG", "PSD", "Block", "ConicProgram", "DimensionLimitError",
    "SolveResult", "smat", "svec", "svec_indices", "svec_len",
    "backends", "register", "select", "solve", "solve_lp",
]
