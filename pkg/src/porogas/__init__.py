"""Compressible gas flow in poroelastic media, desk scale.

Peng-Robinson thermodynamics, piecewise-constant transport with upwinding,
lowest-order face-flux Darcy velocity, interior-penalty DG elasticity, and a
stabilized linear iteration with bound-preserving adaptive time stepping.
"""

from .eos import (
    R_GAS,
    FluidEos,
    RockProps,
    eos_from_critical,
    helmholtz_f,
    chemical_potential,
    pressure_peng,
    stab_coeff,
    mobility,
)
from .mesh import Mesh, generate_structured, read_mesh, mesh_statistics
from .stepper import (
    SolverConfig,
    DiscreteState,
    StepDiagnostics,
    Simulation,
    compute_theta,
    compute_tau,
    check_bounds,
    energy_discrete,
)

__all__ = [
    "R_GAS",
    "FluidEos",
    "RockProps",
    "eos_from_critical",
    "helmholtz_f",
    "chemical_potential",
    "pressure_peng",
    "stab_coeff",
    "mobility",
    "Mesh",
    "generate_structured",
    "read_mesh",
    "mesh_statistics",
    "SolverConfig",
    "DiscreteState",
    "StepDiagnostics",
    "Simulation",
    "compute_theta",
    "compute_tau",
    "check_bounds",
    "energy_discrete",
]

__version__ = "0.1.0"
