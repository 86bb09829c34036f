"""Named experiment presets.

Each preset bundles a scenario, solver settings, and sweep defaults that
run end to end in minutes on one core. The *-desk presets are reduced
dimensions picked so a full sweep stays interactive; the *-nominal
presets carry the full-size scenario (1000 users, 100-sequence pool,
spreading length 70) with trial counts cut down accordingly.
"""

from .config import ConfigBundle
from .detection_pipeline import DetectionConfig
from .sparse_recovery import AmpConfig
from .system_model import SystemConfig

# reduced scenario used by the paired-comparison and training workflows
_DESK = dict(n_users=1000, n_sequences=40, seq_len=32, guard=3, max_delay=3,
             n_pilot=1, max_data=3, n_antennas=1, snr_db=30.0)
# full-size scenario; sweeps at these dims take hours at high trial counts
_NOMINAL = dict(n_users=1000, n_sequences=100, seq_len=70, guard=3, max_delay=3,
                n_pilot=1, max_data=3, n_antennas=1, snr_db=30.0)
# small noiseless scenario where exact support recovery is achievable
_TINY = dict(n_users=50, n_sequences=8, seq_len=16, guard=2, max_delay=2,
             n_pilot=1, max_data=3, n_antennas=1, snr_db=float("inf"))

_DESK_AMP = dict(n_iters=200, alpha=2.5)
_TINY_AMP = dict(n_iters=60, alpha=2.5)

_TRAIN_DESK = dict(n_train=50_000, batch_size=1000, lr_initial=0.1,
                   lr_decay_factor=0.1, lr_floor=1e-4,
                   max_steps_per_stage=40, seed=0,
                   n_layers=10, variant="bp", alpha=3.0)


def _bundle(system, amp, train=None, experiment=None):
    return ConfigBundle(
        system=SystemConfig(**system),
        amp=AmpConfig(**amp),
        detection=DetectionConfig(),
        train=dict(train or {}),
        experiment=dict(experiment or {}),
    )


def _preset_tiny():
    return _bundle(
        dict(_TINY, n_active=2), _TINY_AMP,
        experiment=dict(sweep_axis="n_active", sweep_values=[2],
                        n_trials=5, solvers=["amp_bp"], seed=0),
    )


def _preset_noiseless_exact():
    return _bundle(
        dict(_TINY, n_active=3), _TINY_AMP,
        experiment=dict(sweep_axis="n_active", sweep_values=[3],
                        n_trials=100, solvers=["amp_bp"], seed=0),
    )


def _preset_users_sweep_desk():
    return _bundle(
        dict(_DESK, n_active=12), _DESK_AMP, train=_TRAIN_DESK,
        experiment=dict(sweep_axis="n_active", sweep_values=[8, 12, 16],
                        n_trials=200, solvers=["amp", "amp_bp"], seed=0),
    )


def _preset_users_sweep_wide():
    return _bundle(
        dict(_DESK, n_active=12), _DESK_AMP,
        experiment=dict(sweep_axis="n_active",
                        sweep_values=[8, 12, 16, 20, 24],
                        n_trials=100, solvers=["amp_bp"], seed=0),
    )


def _preset_seqlen_sweep_desk():
    sys = dict(_DESK, n_sequences=50, seq_len=40, n_active=24)
    return _bundle(
        sys, _DESK_AMP,
        experiment=dict(sweep_axis="seq_len", sweep_values=[40, 50, 60, 70],
                        n_trials=100, solvers=["amp_bp"], seed=0),
    )


def _preset_snr_sweep_desk():
    return _bundle(
        dict(_DESK, n_active=12), _DESK_AMP,
        experiment=dict(sweep_axis="snr_db",
                        sweep_values=[5, 10, 15, 20, 25, 30],
                        n_trials=100, solvers=["amp_bp"], seed=0),
    )


def _preset_guard_sweep_desk():
    # high load: recovery difficulty, not collision luck, drives the trend
    return _bundle(
        dict(_DESK, n_active=24), _DESK_AMP,
        experiment=dict(sweep_axis="guard", sweep_values=[3, 5],
                        n_trials=200, solvers=["amp", "amp_bp"], seed=0),
    )


def _preset_users_sweep_nominal():
    return _bundle(
        dict(_NOMINAL, n_active=12), _DESK_AMP,
        experiment=dict(sweep_axis="n_active",
                        sweep_values=[8, 12, 16, 20, 24],
                        n_trials=50, solvers=["amp", "amp_bp"], seed=0),
    )


def _preset_seqlen_sweep_nominal():
    sys = dict(_NOMINAL, seq_len=40, n_active=24)
    return _bundle(
        sys, _DESK_AMP,
        experiment=dict(sweep_axis="seq_len", sweep_values=[40, 50, 60, 70],
                        n_trials=50, solvers=["amp_bp"], seed=0),
    )


def _preset_snr_sweep_nominal():
    return _bundle(
        dict(_NOMINAL, n_active=24), _DESK_AMP,
        experiment=dict(sweep_axis="snr_db",
                        sweep_values=[0, 5, 10, 15, 20, 25, 30],
                        n_trials=50, solvers=["amp_bp"], seed=0),
    )


def _preset_guard_sweep_nominal():
    return _bundle(
        dict(_NOMINAL, n_active=24), _DESK_AMP,
        experiment=dict(sweep_axis="guard", sweep_values=[3, 5],
                        n_trials=50, solvers=["amp", "amp_bp"], seed=0),
    )


def _preset_train_desk():
    return _bundle(
        dict(_DESK, n_active=12), _DESK_AMP, train=_TRAIN_DESK,
        experiment=dict(sweep_axis="n_active", sweep_values=[12],
                        n_trials=50, solvers=["amp_bp", "lamp_bp"], seed=0),
    )


PRESETS = {
    "tiny": _preset_tiny,
    "noiseless-exact": _preset_noiseless_exact,
    "users-sweep-desk": _preset_users_sweep_desk,
    "users-sweep-wide": _preset_users_sweep_wide,
    "seqlen-sweep-desk": _preset_seqlen_sweep_desk,
    "snr-sweep-desk": _preset_snr_sweep_desk,
    "guard-sweep-desk": _preset_guard_sweep_desk,
    "users-sweep-nominal": _preset_users_sweep_nominal,
    "seqlen-sweep-nominal": _preset_seqlen_sweep_nominal,
    "snr-sweep-nominal": _preset_snr_sweep_nominal,
    "guard-sweep-nominal": _preset_guard_sweep_nominal,
    "train-desk": _preset_train_desk,
}


def preset_names() -> list:
    return sorted(PRESETS)


def get_preset(name: str) -> ConfigBundle:
    try:
        factory = PRESETS[name]
    except KeyError:
        raise ValueError(
            f"unknown preset {name!r}; available: {', '.join(preset_names())}"
        ) from None
    return factory()
