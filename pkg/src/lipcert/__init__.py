"""Certified local and global Lipschitz bounds for feedforward networks.

The certifier walks a network layer by layer, carrying an SPD messenger
matrix that summarizes everything certification-relevant about the
prefix.  Per layer it refines activation slope bounds from the input
region, solves a small subproblem for the diagonal multiplier (closed
form, scalar search, or a small SDP), and advances the messenger.  The
final bound is provably valid; independent oracles re-check every
certificate.
"""

from .certify import (
    CertRequest,
    Certificate,
    InputRegion,
    certify,
    certify_selection,
    neuron_bounds,
    sweep_radius,
)
from .linalg import (
    NonConvergence,
    NotPositiveDefinite,
    SpdFactor,
    diag_quadratic,
    factor_spd,
    max_eig_sym,
    min_eig_sym,
    spd_solve,
)
from .network import (
    ActivationSpec,
    LayerSelection,
    Network,
    NetworkFormatError,
    UnknownActivation,
    center_values,
    forward,
    jacobian,
    load,
    merge_affine,
    save,
    slice_network,
)
from .oracles import (
    OracleReport,
    assemble_full_lmi,
    jacobian_lower_bound,
    sampled_lower_bound,
    verify_certificate,
)
from .slopes import (
    LayerSlopeBounds,
    NeuronRanges,
    adjust_for_cf,
    global_bounds,
    propagate_ranges,
    refine_interval,
    refine_layer,
)
from .stage import (
    MaxIterations,
    NoFeasibleLambda,
    StageInput,
    StageResult,
    SubsolverFailed,
    lmi_margin,
    messenger_update,
    sdp_subsolve,
    solve_acc,
    solve_cf,
    solve_fast,
)

__version__ = "0.1.0"
