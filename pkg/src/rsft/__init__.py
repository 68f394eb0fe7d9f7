"""Momentum-space lattice simulator for a thermostatted fluctuating scalar
field, with correlator reconstruction and a truncated Fock operator algebra."""

from .action import BathParams, MatterActionKind, extended_action, matter_action, matter_grad, total_action
from .dynamics import (
    ExtendedState,
    IntegratorParams,
    StepFailureError,
    flip_momenta,
    init_state,
    leapfrog_step,
    make_rng,
    run,
    sample_stream,
)
from .estimators import (
    CorrelatorAccumulator,
    CorrelatorGrid,
    CovarianceAccumulator,
    EstimatorError,
    GridSpec,
    MgfAccumulator,
    RunningMoments,
    VarianceAccumulator,
    average,
    correlator,
    default_batch_len,
    mgf_covariance_check,
    mode_covariance,
)
from .lattice import (
    FixedShell,
    GlobalDynamicShell,
    LocalDynamicShell,
    MomentumLattice,
    effective_mass,
    frequencies,
    omega,
)
from .operator_algebra import (
    AlgebraError,
    CheckResult,
    FockRep,
    GaussianPacket,
    GramAccumulator,
    GramMatrix,
    HilbertContext,
    LinearObservable,
    MicrocausalityResult,
    algebra_report,
    annihilation_matrix,
    commutator_check,
    creation_matrix,
    field_operator,
    gram,
    gram_exact,
    gram_sampled,
    microcausality_ratio,
    number_operator,
    packet_coefficients,
    quotient_orthonormalize,
    standard_packet_configuration,
)
from .oracles import (
    ExactCovariance,
    OracleUnavailableError,
    QuadratureError,
    continuum_wightman,
    exact_covariance,
    expected_correlator,
    pauli_jordan_discrete,
    smeared_commutator,
)
from .config import ConfigError, RunConfig, parse_config
from .storage import CheckpointError, read_checkpoint, write_checkpoint

__version__ = "0.1.0"
