"""Phase-field modelling of compressive-shear fracture in plane strain."""

__version__ = "0.1.0"

from .material import MaterialParams, Variant
from .mesh import FlawSpec, Mesh, generate_flawed_mesh, generate_structured_quad
from .solver import LoadProgram, SimulationState, SolverConfig, run_loading, staggered_step
from .stochastic import StochasticFieldSpec, sample_field

__all__ = [
    "__version__",
    "MaterialParams",
    "Variant",
    "FlawSpec",
    "Mesh",
    "generate_flawed_mesh",
    "generate_structured_quad",
    "LoadProgram",
    "SimulationState",
    "SolverConfig",
    "run_loading",
    "staggered_step",
    "StochasticFieldSpec",
    "sample_field",
]
