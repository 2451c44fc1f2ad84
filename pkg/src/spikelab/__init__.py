"""Radial spike steady states, nonlocal eigenvalue stability and Hopf detection for a crime chemotaxis model."""
from .grid import RadialGrid, Tridiagonal, radial_laplacian
from .ground_state import GroundState, solve_ground_state

__version__ = "0.1.0"

__all__ = ["RadialGrid", "Tridiagonal", "radial_laplacian", "GroundState", "solve_ground_state", "__version__"]
