"""Reproducible experiment drivers: single solves, Monte-Carlo sweeps,
training runs, and uniqueness checks.

Seeding discipline: every random draw gets its seed from derive_seed,
which hashes the master seed together with a string path naming the draw
("pool", axis/value/trial, ...). Trial seeds do not depend on the solver,
so all solvers at a sweep point consume the same realizations (common
random numbers) and paired per-trial differences are meaningful.
"""

import math
import time
from dataclasses import dataclass, field, fields, replace
from hashlib import sha256
from pathlib import Path

import numpy as np

from .config import ConfigBundle
from .detection_pipeline import DetectionConfig, MetricsReport, evaluate, run_receiver
from .io import content_digest, write_csv, write_json
from .sparse_recovery import AmpConfig, RecoveryResult, amp_bp, amp_mmv
from .system_model import (
    SystemConfig,
    build_spreading_pool,
    draw_realization,
    expand_dictionary,
    synthesize_observation,
)
from .theory_checks import UniquenessTrialConfig, verify_uniqueness_bound

SOLVERS = ("amp", "amp_bp", "lamp", "lamp_bp")
SWEEP_AXES = ("n_active", "seq_len", "snr_db", "guard")

TRIALS_CSV_SCHEMA = "gfamp-trials-v1"
TRIALS_CSV_FIELDS = [
    "schema", "solver", "axis", "value", "trial", "realization_seed",
    "noise_seed", "realization_sha256", "failed", "f1", "mu_p", "mu_r",
    "nmse_db", "mu_data", "n_active", "collisions", "misdetections",
    "false_alarms", "degenerate",
]
CURVES_CSV_FIELDS = ["stage", "step", "lr", "train_loss", "val_loss"]

METRIC_KEYS = ("f1", "mu_p", "mu_r", "nmse_db", "mu_data")


def derive_seed(master: int, *path) -> int:
    """Stable 63-bit seed from a master seed and a draw-naming path."""
    h = sha256()
    h.update(str(int(master)).encode())
    for part in path:
        h.update(b"/")
        h.update(str(part).encode())
    return int.from_bytes(h.digest()[:8], "little") >> 1


@dataclass
class ExperimentSpec:
    system: SystemConfig = field(default_factory=SystemConfig)
    amp: AmpConfig = field(default_factory=AmpConfig)
    detection: DetectionConfig = field(default_factory=DetectionConfig)
    sweep_axis: str = "n_active"
    sweep_values: tuple = (8, 12, 16)
    n_trials: int = 100
    solvers: tuple = ("amp_bp",)
    seed: int = 0
    pool_seed: int | None = None
    train: dict = field(default_factory=dict)

    def __post_init__(self):
        self.sweep_values = tuple(self.sweep_values)
        # "amp-bp" and "amp_bp" are the same solver; outputs use the
        # underscore form.
        self.solvers = tuple(str(s).replace("-", "_") for s in self.solvers)
        if self.sweep_axis not in SWEEP_AXES:
            raise ValueError(
                f"sweep_axis must be one of {SWEEP_AXES}, got {self.sweep_axis!r}")
        if not self.sweep_values:
            raise ValueError("sweep_values must be nonempty")
        diffs = np.diff(np.asarray(self.sweep_values, dtype=float))
        if len(self.sweep_values) > 1 and not (np.all(diffs > 0) or np.all(diffs < 0)):
            raise ValueError(
                f"sweep_values must be strictly monotone, got {self.sweep_values}")
        if self.n_trials < 1:
            raise ValueError(f"n_trials must be >= 1, got {self.n_trials}")
        if not self.solvers:
            raise ValueError("solvers must be nonempty")
        for s in self.solvers:
            if s not in SOLVERS:
                raise ValueError(f"unknown solver {s!r}; valid: {SOLVERS}")

    @property
    def resolved_pool_seed(self) -> int:
        if self.pool_seed is not None:
            return self.pool_seed
        return derive_seed(self.seed, "pool")


def spec_from_bundle(bundle: ConfigBundle, **overrides) -> ExperimentSpec:
    exp = dict(bundle.experiment)
    exp.update({k: v for k, v in overrides.items() if v is not None})
    kw = {k: exp[k] for k in
          ("sweep_axis", "sweep_values", "n_trials", "solvers", "seed", "pool_seed")
          if k in exp}
    return ExperimentSpec(system=bundle.system, amp=bundle.amp,
                          detection=bundle.detection, train=dict(bundle.train), **kw)


def apply_axis(system: SystemConfig, axis: str, value) -> SystemConfig:
    """Scenario at one sweep point. Sweeping the guard keeps the load
    matched by letting the delay spread grow with it."""
    if axis == "n_active":
        return replace(system, n_active=int(value))
    if axis == "seq_len":
        return replace(system, seq_len=int(value))
    if axis == "snr_db":
        return replace(system, snr_db=float(value))
    if axis == "guard":
        return replace(system, guard=int(value), max_delay=int(value))
    raise ValueError(f"unknown sweep axis {axis!r}")


def _lamp_solve(solver, y, dic, lamp_params, n_antennas):
    from . import learned_recovery as lr

    if lamp_params is None:
        raise ValueError(f"solver {solver!r} needs trained parameters")
    if solver == "lamp":
        x = lr.lamp_mmv_forward(y[None], dic, lamp_params)[0]
    else:
        x = lr.lamp_bp_forward(y[None], dic, lamp_params)[0]
    return RecoveryResult(x_hat=x, diagnostics={"solver": solver})


def solve_observation(solver, y, dic, amp_cfg, n_antennas=1, lamp_params=None):
    if solver == "amp":
        return amp_mmv(y, dic, amp_cfg)
    if solver == "amp_bp":
        return amp_bp(y, dic, amp_cfg, n_antennas=n_antennas)
    if solver in ("lamp", "lamp_bp"):
        return _lamp_solve(solver, y, dic, lamp_params, n_antennas)
    raise ValueError(f"unknown solver {solver!r}; valid: {SOLVERS}")


@dataclass
class SingleRun:
    realization: object
    observation: object
    recovery: RecoveryResult
    receiver: object
    report: MetricsReport
    realization_seed: int
    noise_seed: int
    realization_sha256: str


def run_point(system, amp_cfg, det_cfg, solver, master, axis, value, trial,
              pool=None, dic=None, lamp_params=None) -> SingleRun:
    """One generate -> solve -> detect -> evaluate pass at a sweep point."""
    if pool is None:
        pool = build_spreading_pool(system, derive_seed(master, "pool"))
    if dic is None:
        dic = expand_dictionary(pool, system.guard)
    r_seed = derive_seed(master, axis, value, trial, "real")
    n_seed = derive_seed(master, axis, value, trial, "noise")
    real = draw_realization(system, pool, r_seed)
    obs = synthesize_observation(real, dic, system.snr_db, n_seed)
    rec = solve_observation(solver, obs.y, dic, amp_cfg,
                            n_antennas=system.n_antennas, lamp_params=lamp_params)
    out = run_receiver(rec.x_hat, system, det_cfg, obs.noise_var)
    rep = evaluate(real, out)
    return SingleRun(
        realization=real, observation=obs, recovery=rec, receiver=out,
        report=rep, realization_seed=r_seed, noise_seed=n_seed,
        realization_sha256=content_digest(real.x_true),
    )


def run_single(spec: ExperimentSpec, trial: int = 0):
    """End-to-end solve with exactly one solver; returns (RecoveryResult,
    MetricsReport, SingleRun) with all seeds recorded on the SingleRun."""
    if len(spec.solvers) != 1:
        raise ValueError(
            f"run_single needs exactly one solver, got {len(spec.solvers)}")
    solver = spec.solvers[0]
    system = apply_axis(spec.system, spec.sweep_axis, spec.sweep_values[0])
    pool = build_spreading_pool(system, spec.resolved_pool_seed)
    dic = expand_dictionary(pool, system.guard)
    run = run_point(system, spec.amp, spec.detection, solver, spec.seed,
                    spec.sweep_axis, spec.sweep_values[0], trial,
                    pool=pool, dic=dic)
    return run.recovery, run.report, run


def _trial_row(solver, axis, value, trial, run: SingleRun | None, err=None):
    row = {
        "schema": TRIALS_CSV_SCHEMA, "solver": solver, "axis": axis,
        "value": value, "trial": trial,
        "realization_seed": "", "noise_seed": "", "realization_sha256": "",
        "failed": 0, "f1": "", "mu_p": "", "mu_r": "", "nmse_db": "",
        "mu_data": "", "n_active": "", "collisions": "",
        "misdetections": "", "false_alarms": "", "degenerate": "",
    }
    if run is None:
        row["failed"] = 1
        row["degenerate"] = str(err) if err is not None else "failed"
        return row
    rep = run.report
    row.update({
        "realization_seed": run.realization_seed,
        "noise_seed": run.noise_seed,
        "realization_sha256": run.realization_sha256,
        "f1": rep.f1, "mu_p": rep.mu_p, "mu_r": rep.mu_r,
        "nmse_db": rep.nmse_db, "mu_data": rep.mu_data,
        "n_active": rep.n_active, "collisions": rep.collided_users,
        "misdetections": rep.misdetections, "false_alarms": rep.false_alarms,
        "degenerate": int(rep.degenerate),
    })
    return row


@dataclass
class SweepResult:
    spec: ExperimentSpec
    trials: list
    aggregates: list
    n_failed: int
    wall_time_s: float
    csv_path: Path | None = None
    summary_path: Path | None = None


def _aggregate(trials):
    cells = {}
    for row in trials:
        if row["failed"]:
            continue
        cells.setdefault((row["solver"], row["value"]), []).append(row)
    out = []
    for (solver, value), rows in sorted(cells.items(), key=lambda kv: (kv[0][0], kv[0][1])):
        agg = {"solver": solver, "value": value, "n_trials": len(rows)}
        for key in METRIC_KEYS:
            vals = np.asarray([r[key] for r in rows], dtype=float)
            agg[f"{key}_mean"] = float(vals.mean())
            agg[f"{key}_se"] = float(vals.std(ddof=1) / math.sqrt(len(vals))) \
                if len(vals) > 1 else 0.0
        out.append(agg)
    return out


def run_sweep(spec: ExperimentSpec, out_dir=None, lamp_params=None) -> SweepResult:
    """Full factorial over sweep values and solvers with common random
    numbers: each (value, trial) cell draws one realization and every
    solver consumes that same observation. Failed trials are recorded and
    skipped in the aggregates; the caller sees the count."""
    lamp_params = lamp_params or {}
    for s in spec.solvers:
        if s in ("lamp", "lamp_bp") and s not in lamp_params:
            raise ValueError(f"solver {s!r} requested but no parameters supplied")
    t0 = time.monotonic()
    trials = []
    n_failed = 0
    for value in spec.sweep_values:
        system = apply_axis(spec.system, spec.sweep_axis, value)
        pool = build_spreading_pool(system, spec.resolved_pool_seed)
        dic = expand_dictionary(pool, system.guard)
        for trial in range(spec.n_trials):
            r_seed = derive_seed(spec.seed, spec.sweep_axis, value, trial, "real")
            n_seed = derive_seed(spec.seed, spec.sweep_axis, value, trial, "noise")
            real = draw_realization(system, pool, r_seed)
            obs = synthesize_observation(real, dic, system.snr_db, n_seed)
            sha = content_digest(real.x_true)
            for solver in spec.solvers:
                try:
                    rec = solve_observation(
                        solver, obs.y, dic, spec.amp,
                        n_antennas=system.n_antennas,
                        lamp_params=lamp_params.get(solver))
                    out = run_receiver(rec.x_hat, system, spec.detection,
                                       obs.noise_var)
                    rep = evaluate(real, out)
                    run = SingleRun(real, obs, rec, out, rep, r_seed, n_seed, sha)
                    trials.append(_trial_row(solver, spec.sweep_axis, value,
                                             trial, run))
                except (FloatingPointError, np.linalg.LinAlgError, ValueError) as e:
                    n_failed += 1
                    trials.append(_trial_row(solver, spec.sweep_axis, value,
                                             trial, None, err=e))
    aggregates = _aggregate(trials)
    result = SweepResult(spec=spec, trials=trials, aggregates=aggregates,
                         n_failed=n_failed, wall_time_s=time.monotonic() - t0)
    if out_dir is not None:
        out_dir = Path(out_dir)
        result.csv_path = out_dir / "trials.csv"
        result.summary_path = out_dir / "summary.json"
        write_csv(result.csv_path, trials, TRIALS_CSV_FIELDS)
        write_json(result.summary_path, sweep_summary(result))
    return result


def sweep_summary(result: SweepResult) -> dict:
    spec = result.spec
    return {
        "csv_schema": TRIALS_CSV_SCHEMA,
        "sweep_axis": spec.sweep_axis,
        "sweep_values": list(spec.sweep_values),
        "solvers": list(spec.solvers),
        "n_trials": spec.n_trials,
        "seed": spec.seed,
        "pool_seed": spec.resolved_pool_seed,
        "n_failed": result.n_failed,
        "wall_time_s": result.wall_time_s,
        "aggregates": result.aggregates,
    }


def paired_rows(result: SweepResult, solver_a: str, solver_b: str, value):
    """Per-trial rows of two solvers at one sweep point, trial-aligned."""
    rows = {}
    for row in result.trials:
        if row["value"] == value and not row["failed"]:
            rows.setdefault(row["trial"], {})[row["solver"]] = row
    pairs = [(r[solver_a], r[solver_b]) for r in rows.values()
             if solver_a in r and solver_b in r]
    return pairs


def paired_diff_stats(result: SweepResult, solver_a: str, solver_b: str,
                      value, metric: str) -> dict:
    """Mean, stderr, and 95% CI of per-trial metric differences (a - b)."""
    pairs = paired_rows(result, solver_a, solver_b, value)
    if not pairs:
        raise ValueError(f"no paired trials at value {value!r}")
    diffs = np.asarray([ra[metric] - rb[metric] for ra, rb in pairs], dtype=float)
    mean = float(diffs.mean())
    se = float(diffs.std(ddof=1) / math.sqrt(len(diffs))) if len(diffs) > 1 else 0.0
    return {
        "metric": metric, "value": value, "n": len(diffs),
        "mean": mean, "se": se,
        "ci95": (mean - 1.96 * se, mean + 1.96 * se),
        "n_positive": int(np.sum(diffs > 0)),
        "n_negative": int(np.sum(diffs < 0)),
    }


def sign_test_p(n_positive: int, n_negative: int) -> float:
    """One-sided exact sign test: P[wins >= n_positive | p = 1/2], ties
    dropped. Small values support 'positive direction is real'."""
    n = n_positive + n_negative
    if n == 0:
        return 1.0
    total = sum(math.comb(n, k) for k in range(n_positive, n + 1))
    return total / 2.0 ** n


def trend_sign_test(result: SweepResult, solver: str, metric: str,
                    decreasing: bool) -> dict:
    """Sign test for a monotone trend across the sweep endpoints.

    Pairs per-trial metric values at the first and last sweep points
    (common random numbers make the trials comparable by index) and
    tests whether the claimed direction dominates.
    """
    lo, hi = result.spec.sweep_values[0], result.spec.sweep_values[-1]
    first = {r["trial"]: r[metric] for r in result.trials
             if r["solver"] == solver and r["value"] == lo and not r["failed"]}
    last = {r["trial"]: r[metric] for r in result.trials
            if r["solver"] == solver and r["value"] == hi and not r["failed"]}
    common = sorted(set(first) & set(last))
    diffs = [first[t] - last[t] for t in common]
    wins = sum(1 for d in diffs if d > 0) if decreasing else \
        sum(1 for d in diffs if d < 0)
    losses = sum(1 for d in diffs if d < 0) if decreasing else \
        sum(1 for d in diffs if d > 0)
    return {
        "solver": solver, "metric": metric,
        "direction": "decreasing" if decreasing else "increasing",
        "endpoints": (lo, hi), "n_pairs": len(diffs),
        "wins": wins, "losses": losses, "ties": len(diffs) - wins - losses,
        "p_value": sign_test_p(wins, losses),
    }


def run_training(spec: ExperimentSpec, out_dir=None):
    """Train the requested learned variant and persist params + curves."""
    from . import learned_recovery as lr

    train = dict(spec.train)
    variant = train.pop("variant", "mmv")
    n_layers = int(train.pop("n_layers", 10))
    alpha = train.pop("alpha", 2.5)
    tc_fields = {f.name for f in fields(lr.TrainConfig)}
    extra = set(train) - tc_fields
    if extra:
        raise ValueError(f"unknown train keys: {sorted(extra)}")
    tcfg = lr.TrainConfig(**train)

    system = spec.system
    pool = build_spreading_pool(system, spec.resolved_pool_seed)
    dic = expand_dictionary(pool, system.guard)
    init = lr.amp_init(
        dic, n_layers=n_layers, variant=variant, alpha=alpha,
        n_subnetworks=system.n_slots if variant == "bp" else None,
        n_antennas=system.n_antennas,
    )
    data_seed = derive_seed(spec.seed, "train-data")
    dataset = lr.generate_dataset(system, dic, tcfg.n_train, seed=data_seed)
    result = lr.train_lamp(dataset, dic, init, tcfg)
    if out_dir is not None:
        out_dir = Path(out_dir)
        lr.save_params(result.params, out_dir / "params.bin")
        write_csv(out_dir / "curves.csv", result.curves, CURVES_CSV_FIELDS)
        write_json(out_dir / "training.json", {
            "variant": variant, "n_layers": n_layers,
            "alpha_init": alpha, "aborted": result.aborted,
            "steps_per_stage": list(result.steps_per_stage),
            "seed": spec.seed, "pool_seed": spec.resolved_pool_seed,
            "data_seed": data_seed, "dict_sha256": init.dict_sha256,
            "n_train": tcfg.n_train,
        })
    return result


def run_theory_check(cfg: UniquenessTrialConfig, out_path=None):
    report = verify_uniqueness_bound(cfg)
    if out_path is not None:
        Path(out_path).parent.mkdir(parents=True, exist_ok=True)
        Path(out_path).write_text(report.to_json() + "\n")
    return report
