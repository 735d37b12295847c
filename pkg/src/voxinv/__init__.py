"""Voxel Lippmann-Schwinger forward scattering and two-step inverse reconstruction."""
from .geometry import Grid, Parallelepiped
from .forward import RefractiveField, solve_forward
from .inverse import invert, reconstruct_k, solve_current
from .config import load as load_config, bundled_path
from .scenario import run_scenario, run_refinement_loop

__version__ = "0.1.0"

__all__ = [
    "Grid",
    "Parallelepiped",
    "RefractiveField",
    "solve_forward",
    "invert",
    "reconstruct_k",
    "solve_current",
    "load_config",
    "bundled_path",
    "run_scenario",
    "run_refinement_loop",
]
