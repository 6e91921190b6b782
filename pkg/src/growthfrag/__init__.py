"""Simulation and numerical analysis of self-similar growth-fragmentation processes."""

from .cellsystem import (
    CellRecord,
    CellSystem,
    TruncationPolicy,
    branching_walk,
    build_system,
    export_tree,
    fragments_at,
    intrinsic_martingale,
    simulate_cell,
)
from .cumulant import (
    CumulantModel,
    RegimeReport,
    build_spine_triplet,
    find_roots,
    kappa,
    kappa_prime,
    kappa_theta,
    regime_classify,
    spine_exponent,
    tilted_measure,
    validate_spine_triplet,
)
from .area import (
    AreaProfile,
    FragmentStats,
    TaggedLeaf,
    aggregate_fragment_stats,
    area_profile,
    branching_identity_check,
    fragment_stats,
    profile_estimate,
    small_time_check,
    tag_leaf,
)
from .dimension import (
    DimensionEstimate,
    EnergyReport,
    LeafSample,
    b_energy,
    b_energy_report,
    correlation_dimension,
    fourier_pair_diagnostic,
    regime_report,
)
from .lamperti import (
    DensityEstimate,
    ExpFunctionalSamples,
    PssmpPath,
    absorption_time,
    estimate_density_k,
    inverse_moment_check,
    lamperti_transform,
    sample_exp_functional,
    unit_clock,
)
from .levy import (
    BUILTIN_TRIPLETS,
    FiniteAtoms,
    JumpDensity,
    LevyTriplet,
    PathGrid,
    drift_sign,
    laplace_exponent,
    reference_dyadic,
    sample_path,
    validate_model,
)

__version__ = "0.1.0"
