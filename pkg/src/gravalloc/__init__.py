"""Gravitational allocation of the sphere to finite point sets.

A sphere of surface area n carries n source points; the log-distance
potential they generate drives a gradient flow whose basins of attraction
partition the sphere into n cells of equal area. This package evaluates
the field (directly and through a hierarchical accelerator), integrates
the flow, samples uniform and polynomial-root source processes, counts
certified local maxima, builds matchings between point sets, and ships a
CLI that reproduces every quantitative law as a seeded Monte Carlo study.
"""

from .config import (
    Configuration,
    configuration_from_json,
    configuration_to_json,
    make_configuration,
)
from .critical import CriticalOptions, CriticalPoint, classify_critical_point, find_local_maxima
from .errors import (
    ConfigInvalid,
    DegenerateWeights,
    EmptySample,
    GravallocError,
    NonFiniteState,
    NotCritical,
    PoleSingularity,
    RootFindingFailed,
    SourceSingularity,
    StudyFailed,
    TreeNotBuilt,
)
from .flow import (
    UNASSIGNED,
    FlowOptions,
    FlowOutcome,
    allocate_arrays,
    allocate_many,
    basin_raster,
    integrate_to_basin,
)
from .forces import (
    force_direct,
    force_jacobian_plane,
    force_plane,
    force_tree,
    mean_force_magnitude,
    potential,
)
from .geometry import (
    SphereParams,
    chordal_distance_sq_via_projection,
    lift_to_sphere,
    mu_density,
    project_to_plane,
    recenter_rotation,
    rho,
)
from .matching import (
    MatchingResult,
    coupling_match,
    greedy_nearest_pair_match,
    online_gravitational_match,
    optimal_match,
)
from .processes import (
    kostlan_coefficients,
    sample_kostlan_roots,
    sample_uniform,
)
from .report import ExperimentReport
from .stats import ks_statistic
from .studies import run as run_study
from .tree import ForceTree, build_force_tree

__version__ = "0.1.0"
