"""Numerical toolkit for one-dimensional mean field games with bang-bang and capped controls."""
from __future__ import annotations

__version__ = "0.1.0"

from .errors import MfgLabError
from .numerics import Density, DensityFlow, DriftField, SpatialGrid, TimeMesh, ValueField, mk_distance
from .model import BangBang, LinearMean, MfgProblem, QuadraticControl, SmoothCapped, Zero
from .branch_solver import construct_branch, enumerate_branches, picard_solve
from .simple_game import SimpleGameSpec, enumerate_roots

__all__ = [
    "MfgLabError", "Density", "DensityFlow", "DriftField", "SpatialGrid", "TimeMesh", "ValueField",
    "mk_distance", "BangBang", "LinearMean", "MfgProblem", "QuadraticControl", "SmoothCapped", "Zero",
    "construct_branch", "enumerate_branches", "picard_solve", "SimpleGameSpec", "enumerate_roots",
]
