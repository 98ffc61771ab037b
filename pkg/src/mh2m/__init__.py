"""Multiscale hybrid-hybrid finite elements for -div(A grad u) = f in 2D."""
from .coefficients import CoefficientField
from .config import RunConfig, load_config
from .driver import Hierarchy, RunResult, build_hierarchy, run_mh2m
from .errors import (CompatibilityError, ConfigError, HierarchyError, MeshError, MH2MError,
                     ThresholdError)
from .mesh import build_coarse_mesh, build_submesh, partition_faces, validate_hierarchy
from .oracles import get_case, manufactured_cases, solve_msfem, solve_reference
from .skeleton import assemble_system, assemble_system_equivalent, reconstruct, solve
from .spaces import build_local_space, build_multiplier_space, build_trace_space

__version__ = "0.1.0"
