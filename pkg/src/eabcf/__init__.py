"""Car-following calibration, reaction-pattern classification, hysteresis
quantification, and mixed-platoon simulation.

The package is organised around a handful of small, composable pieces:

``trajectory``
    Trajectory containers, pairing, resampling, and file I/O.
``newell``
    Grid calibration of the two-parameter kinematic-wave follower model.
``eab``
    The time-varying response-scaling follower model: simulation, the
    inverse mapping from observed spacing to the scaling series, and
    reaction-pattern classification.
``abc_smc``
    Likelihood-free sequential calibration of the scaling parameters.
``validation``
    Posterior-predictive assignment metrics and distribution distances.
``hysteresis``
    Flow-density loop construction from trajectory zones, loop
    classification, and loop comparison.
``platoon``
    Mixed-fleet platoon simulation across automation penetration rates.
``synthetic``
    Reproducible synthetic scenario generation for tests and demos.
``config`` / ``pipeline`` / ``cli``
    Batch configuration, the end-to-end pipeline, and the command line.
"""

from .trajectory import (
    DEFAULT_DT,
    CFPair,
    LeaderPhases,
    PairLabel,
    Trajectory,
    align_pair,
    central_diff,
    detect_phases,
    interp_extrap,
    load_trajectories,
    newell_shift,
    resample,
    save_trajectories,
)
from .newell import (
    DELTA_GRID,
    TAU_GRID,
    NewellParams,
    NewellResult,
    calibrate_newell,
    grid_values,
    load_newell,
    nrmse,
    save_newell,
)
from .eab import (
    EABParams,
    EtaSeries,
    NonMonotoneMappingError,
    ReactionPattern,
    SpacingCollapseError,
    classify_pattern,
    eta_eval,
    measure_eta,
    simulate_follower,
    smooth_symmetric,
    theta_valid,
)
from .abc_smc import (
    DiagnosticsTrace,
    GofWeights,
    Particle,
    ParticlePopulation,
    PreparedPair,
    PriorSpec,
    ProposalCapExhaustedError,
    asmc_iterate,
    evaluate_gofs,
    gof_eab,
    init_population,
    load_posterior,
    posterior_quantiles,
    prepare_pair,
    run_calibration,
    sample_posterior,
    save_diagnostics,
    save_posterior,
)
from .validation import (
    AssignmentResult,
    jsd,
    select_representative,
    ws_metric,
)
from .hysteresis import (
    EdieZone,
    HysteresisLoop,
    build_loop,
    build_zones,
    classified,
    classify_hysteresis,
    compare_hysteresis,
    cross_products,
    edie_measure,
    smooth_loop,
)
from .platoon import (
    PlatoonResult,
    PlatoonRunFailureError,
    PlatoonSpec,
    assign_types,
    run_platoon_batch,
    simulate_platoon,
    sweep_penetration,
)
from .synthetic import (
    SCENARIOS,
    generate_dataset,
    synthetic_pair,
    theta_for_pattern,
    trapezoid_leader,
)
from .config import RunConfig
from .pipeline import PipelineStageError, run_pipeline, split_pairs

__version__ = "0.1.0"

__all__ = [
    "DEFAULT_DT",
    "DELTA_GRID",
    "TAU_GRID",
    "SCENARIOS",
    "AssignmentResult",
    "CFPair",
    "DiagnosticsTrace",
    "EABParams",
    "EdieZone",
    "EtaSeries",
    "GofWeights",
    "HysteresisLoop",
    "LeaderPhases",
    "NewellParams",
    "NewellResult",
    "NonMonotoneMappingError",
    "PairLabel",
    "Particle",
    "ParticlePopulation",
    "PipelineStageError",
    "PlatoonResult",
    "PlatoonRunFailureError",
    "PlatoonSpec",
    "PreparedPair",
    "PriorSpec",
    "ProposalCapExhaustedError",
    "ReactionPattern",
    "RunConfig",
    "SpacingCollapseError",
    "Trajectory",
    "align_pair",
    "asmc_iterate",
    "assign_types",
    "build_loop",
    "build_zones",
    "calibrate_newell",
    "central_diff",
    "classified",
    "classify_hysteresis",
    "classify_pattern",
    "compare_hysteresis",
    "cross_products",
    "detect_phases",
    "edie_measure",
    "eta_eval",
    "evaluate_gofs",
    "generate_dataset",
    "gof_eab",
    "grid_values",
    "init_population",
    "interp_extrap",
    "jsd",
    "load_newell",
    "load_posterior",
    "load_trajectories",
    "measure_eta",
    "newell_shift",
    "nrmse",
    "posterior_quantiles",
    "prepare_pair",
    "resample",
    "run_calibration",
    "run_pipeline",
    "run_platoon_batch",
    "sample_posterior",
    "save_diagnostics",
    "save_newell",
    "save_posterior",
    "save_trajectories",
    "select_representative",
    "simulate_follower",
    "simulate_platoon",
    "smooth_loop",
    "smooth_symmetric",
    "split_pairs",
    "sweep_penetration",
    "synthetic_pair",
    "theta_for_pattern",
    "theta_valid",
    "trapezoid_leader",
    "ws_metric",
]
