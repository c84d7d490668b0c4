"""fliplab: corner-flip interface dynamics and their continuum limits.

Three nearest-neighbour height models on {0, 1/2N, ..., 1} with weak
asymmetry (bridge; bridge above a hard wall; ordered non-crossing pair),
their Gibbs stationary states, event-driven simulation with reflection
measures, and the matching continuum objects (stochastic heat equations
with and without obstacle, Brownian bridge/excursion samplers).
"""

from .lattice_core import (
    AsymmetryProfile,
    IntegerInterface,
    ModelKind,
    PairInterface,
    RateTable,
    allowed_flips,
    apply_flip,
    build_rates,
    discrete_laplacian,
    from_particles,
    scaled_weight_exponent,
    to_particles,
    weighted_area,
)
from .dynamics import (
    Event,
    ReflectionMeasure,
    SimulationRun,
    Trajectory,
    interpolate,
    kernel_backend,
    simulate,
    support_check,
    zeta_integral,
)

__version__ = "0.1.0"

__all__ = [
    "AsymmetryProfile", "IntegerInterface", "ModelKind", "PairInterface",
    "RateTable", "allowed_flips", "apply_flip", "build_rates",
    "discrete_laplacian", "from_particles", "scaled_weight_exponent",
    "to_particles", "weighted_area",
    "Event", "ReflectionMeasure", "SimulationRun", "Trajectory",
    "interpolate", "kernel_backend", "simulate", "support_check",
    "zeta_integral",
    "__version__",
]
