"""Gradient flows, geodesic unitary tracking and observable tracking for
finite-dimensional quantum control, with landscape diagnostics and
maximum-likelihood state reconstruction."""

from ._backend import backend_name, has_compiled, use_backend
from .dmorph import (
    GeodesicTrack,
    GMatrix,
    TrackingOptions,
    assemble_G,
    condition_number,
    dirac_kernel_diagnostic,
    dmorph_step,
    fluence_free_function,
    geodesic,
    morph_term,
    run_unitary_tracking,
    track_delta,
)
from .dynamics import (
    ControlField,
    DipoleTrace,
    PropagatorTrajectory,
    SystemModel,
    TimeGrid,
    dipole_trace,
    propagate,
)
from .errors import (
    BranchCutWarning,
    ConfigError,
    DimensionError,
    IllConditionedWarning,
    InvalidField,
    InvalidInput,
    InvalidPovm,
    InvalidRecord,
    InvalidSpectrum,
    NearCriticalSingularity,
    NumericalFailure,
    QTrackError,
    RankWarning,
    SingularGamma,
    SingularGMatrix,
    StalledOptimization,
)
from .estimation import (
    MeasurementRecord,
    MLEEstimate,
    PovmSet,
    default_povms,
    fisher_covariance,
    mle_reconstruct,
    pauli_povms,
    simulate_measurements,
    trace_distance,
)
from .landscape import (
    CriticalManifoldSet,
    GradientField,
    OptimizationTrace,
    StepRecord,
    StopRule,
    analytic_pure_flow,
    critical_manifolds,
    distance_dynamics,
    double_bracket_rhs,
    expectation,
    grad_field,
    grad_unitary,
    gradient_subspace_dim,
    integrate_double_bracket,
    kinematic_optimum,
    nearest_optimum,
    run_gradient_flow,
    unitary_pathlength,
)
from .linalg import (
    geodesic_distance,
    hermitian_basis,
    log_unitary,
    unvec_hermitian,
    vec_hermitian,
)
from .observables import (
    GammaMatrix,
    ObservableBasis,
    ObservableTrackingOptions,
    ObservableTrackSpec,
    assemble_Gamma,
    default_basis,
    degenerate_manifold_dim,
    grad_observable_vector,
    linear_ramp,
    observable_vector,
    orthogonalize,
    pauli_basis,
    run_observable_tracking,
    scalar_targets_from_geodesic,
    scalar_track_step,
    targets_from_geodesic,
    vector_track_step,
)

__version__ = "0.1.0"
