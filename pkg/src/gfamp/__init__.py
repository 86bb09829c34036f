"""Grant-free random access simulator with AMP-family multi-measurement receivers.

The package covers the full chain: random-access signal synthesis with
per-user delays and variable data lengths, row-sparse recovery of the
expanded-dictionary coefficient matrix (plain and backward-propagating
AMP, plus their unfolded learned variants), user detection / channel
estimation / data recovery, and a brute-force verifier for the
uniqueness condition underlying the recovery problem.

``learned_recovery`` pulls in torch, so it is imported lazily; plain
``import gfamp`` stays numpy-only.
"""

from .system_model import (
    SystemConfig,
    SpreadingPool,
    ExpandedDictionary,
    TransmissionRealization,
    Observation,
    build_spreading_pool,
    expand_dictionary,
    draw_realization,
    synthesize_observation,
    ground_truth_support,
    row_index,
    row_to_pair,
)
from .modulation import qam_constellation, qam_demod
from .sparse_recovery import (
    AmpConfig,
    RecoveryResult,
    amp_mmv,
    amp_bp,
    row_soft_threshold,
    prior_aided_threshold,
    extract_support,
    ls_reinitialize,
    alpha_schedule,
)
from .detection_pipeline import (
    DetectionConfig,
    ReceiverOutput,
    MetricsReport,
    detect_rows,
    estimate_channels,
    recover_data,
    run_receiver,
    evaluate,
)
from .theory_checks import (
    UniquenessTrialConfig,
    UniquenessReport,
    admissible_sparsity,
    support_count,
    brute_force_mmv,
    verify_uniqueness_bound,
)

_LEARNED = (
    "LampParams",
    "TrainConfig",
    "TrainResult",
    "Dataset",
    "amp_init",
    "generate_dataset",
    "merge_datasets",
    "lamp_mmv_forward",
    "lamp_bp_forward",
    "train_lamp",
    "save_params",
    "load_params",
)


def __getattr__(name):
    # defer the torch import until a learned-recovery symbol is touched
    if name in _LEARNED:
        from . import learned_recovery

        return getattr(learned_recovery, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")


__all__ = [
    "SystemConfig",
    "SpreadingPool",
    "ExpandedDictionary",
    "TransmissionRealization",
    "Observation",
    "build_spreading_pool",
    "expand_dictionary",
    "draw_realization",
    "synthesize_observation",
    "ground_truth_support",
    "row_index",
    "row_to_pair",
    "qam_constellation",
    "qam_demod",
    "AmpConfig",
    "RecoveryResult",
    "amp_mmv",
    "amp_bp",
    "row_soft_threshold",
    "prior_aided_threshold",
    "extract_support",
    "ls_reinitialize",
    "alpha_schedule",
    "DetectionConfig",
    "ReceiverOutput",
    "MetricsReport",
    "detect_rows",
    "estimate_channels",
    "recover_data",
    "run_receiver",
    "evaluate",
    "UniquenessTrialConfig",
    "UniquenessReport",
    "admissible_sparsity",
    "support_count",
    "brute_force_mmv",
    "verify_uniqueness_bound",
    *_LEARNED,
]

__version__ = "0.1.0"
