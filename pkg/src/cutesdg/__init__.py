"""Entropy-stable high-order DG on Cartesian cut meshes."""

from .config import ConfigError, RunConfig, parse_config, parse_config_text
from .geometry import biconvex, circle, piecewise
from .mesh import BackgroundGrid, build_cut_mesh
from .operators import build_mesh_operators
from .physics import Euler, ShallowWater, make_law
from .solver import EC, ES, BoundaryCondition, Discretization
from .srd import StateRedistribution
from .timeint import IntegratorConfig, integrate

__version__ = "0.1.0"

__all__ = [
    "BackgroundGrid", "BoundaryCondition", "ConfigError", "Discretization", "EC", "ES", "Euler",
    "IntegratorConfig", "RunConfig", "ShallowWater", "StateRedistribution", "biconvex",
    "build_cut_mesh", "build_mesh_operators", "circle", "integrate", "make_law", "parse_config",
    "parse_config_text", "piecewise",
]
