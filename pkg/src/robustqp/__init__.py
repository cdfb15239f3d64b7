"""Robust convex quadratic programming with mixed-integer polyhedral
uncertainty: exact copositive reformulations, tractable SDP restrictions,
and enumeration/Benders baselines."""

from . import conic, model

__version__ = "0.1.0"
