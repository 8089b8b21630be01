"""Interlaced particle growth: exact microscopic dynamics, height functions
and a monotone Hamilton-Jacobi solver for the macroscopic limit."""

from .dynamics import (
    EventStream,
    EventWindow,
    SimState,
    apply_clock,
    build_locality_set,
    check_spacetime_locality,
    run,
    sample_events,
    staircase_witness,
)
from .hamiltonian import (
    GradientTriple,
    SlopeVector,
    hessian_det_sign,
    solve_rho,
    speed,
    speed_extended,
    speed_gradient,
)
from .harness import (
    ExperimentConfig,
    discretize_profile,
    hydro_convergence,
    measure_speed,
    property_battery,
)
from .hjsolver import GridSolution, MacroProfile, solve
from .lattice import (
    HeightField,
    ParticleArray,
    SiteCoord,
    TilingCell,
    check_admissible,
    export_tiling,
    height_from_particles,
    particles_from_height,
    site_to_line_pos,
)

__version__ = "0.1.0"

__all__ = [
    "EventStream",
    "EventWindow",
    "ExperimentConfig",
    "GradientTriple",
    "GridSolution",
    "MacroProfile",
    "SimState",
    "apply_clock",
    "build_locality_set",
    "check_spacetime_locality",
    "discretize_profile",
    "hydro_convergence",
    "measure_speed",
    "property_battery",
    "run",
    "sample_events",
    "solve",
    "staircase_witness",
    "HeightField",
    "ParticleArray",
    "SiteCoord",
    "SlopeVector",
    "TilingCell",
    "check_admissible",
    "export_tiling",
    "height_from_particles",
    "hessian_det_sign",
    "particles_from_height",
    "site_to_line_pos",
    "solve_rho",
    "speed",
    "speed_extended",
    "speed_gradient",
]
