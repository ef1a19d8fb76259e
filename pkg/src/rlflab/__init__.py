"""Numerical laboratory for flows of non-smooth vector fields on Dirichlet spaces."""
from .space import Space, graph_space, torus_space, construct_space
from .derivation import from_field, graph_flow, torus_field
from .continuity import EvolutionProblem, DensityPath, solve
from .scenarios import REGISTRY, run_scenario

__version__ = "0.1.0"
__all__ = ["Space", "graph_space", "torus_space", "construct_space", "from_field", "graph_flow",
           "torus_field", "EvolutionProblem", "DensityPath", "solve", "REGISTRY", "run_scenario"]
