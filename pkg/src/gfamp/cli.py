"""Command-line driver.

Subcommands cover the full workflow: draw scenarios (generate), run one
solve end to end (solve), Monte-Carlo sweeps (sweep), train the learned
solvers (train), check the uniqueness bound (theory-check), and
re-aggregate an existing trials CSV (report). Every command takes
--preset or --config plus --seed/--out; identical seeds give
byte-identical output files.
"""

import argparse
import csv
import sys
from pathlib import Path

from . import experiment as ex
from .config import ConfigBundle, ConfigError, load_config, _parse_number_list
from .io import save_matrix, write_csv, write_json
from .presets import get_preset, preset_names
from .system_model import build_spreading_pool, expand_dictionary
from .theory_checks import UniquenessTrialConfig


def _solver_name(s: str) -> str:
    return s.strip().replace("-", "_")


def _load_bundle(args) -> ConfigBundle:
    if getattr(args, "preset", None) and getattr(args, "config", None):
        raise SystemExit("use either --preset or --config, not both")
    if getattr(args, "preset", None):
        return get_preset(args.preset)
    if getattr(args, "config", None):
        return load_config(args.config)
    return ConfigBundle()


def _spec(args, bundle: ConfigBundle) -> ex.ExperimentSpec:
    overrides = {}
    if getattr(args, "seed", None) is not None:
        overrides["seed"] = args.seed
    if getattr(args, "axis", None):
        overrides["sweep_axis"] = args.axis
    if getattr(args, "values", None):
        overrides["sweep_values"] = _parse_number_list("--values", args.values)
    if getattr(args, "trials", None) is not None:
        overrides["n_trials"] = args.trials
    if getattr(args, "solvers", None):
        overrides["solvers"] = [_solver_name(s)
                                for s in args.solvers.split(",") if s.strip()]
    if getattr(args, "solver", None):
        overrides["solvers"] = [_solver_name(args.solver)]
    if getattr(args, "pool_seed", None) is not None:
        overrides["pool_seed"] = args.pool_seed
    return ex.spec_from_bundle(bundle, **overrides)


def _load_lamp_params(spec, path):
    needed = [s for s in spec.solvers if s in ("lamp", "lamp_bp")]
    if not needed:
        return {}
    if path is None:
        raise SystemExit(
            f"solver(s) {needed} need --params pointing at a trained parameter file")
    from . import learned_recovery as lr

    params = lr.load_params(path)
    table = {}
    for s in needed:
        want = "mmv" if s == "lamp" else "bp"
        if params.variant != want:
            raise SystemExit(
                f"parameter file holds variant {params.variant!r} but solver "
                f"{s!r} needs {want!r}")
        table[s] = params
    return table


def cmd_generate(args) -> int:
    bundle = _load_bundle(args)
    spec = _spec(args, bundle)
    system = ex.apply_axis(spec.system, spec.sweep_axis, spec.sweep_values[0])
    pool = build_spreading_pool(system, spec.resolved_pool_seed)
    dic = expand_dictionary(pool, system.guard)
    r_seed = ex.derive_seed(spec.seed, spec.sweep_axis, spec.sweep_values[0],
                            args.trial, "real")
    n_seed = ex.derive_seed(spec.seed, spec.sweep_axis, spec.sweep_values[0],
                            args.trial, "noise")
    from .system_model import draw_realization, synthesize_observation

    real = draw_realization(system, pool, r_seed)
    obs = synthesize_observation(real, dic, system.snr_db, n_seed)
    out = Path(args.out)
    seeds = {"master": spec.seed, "pool": spec.resolved_pool_seed,
             "realization": r_seed, "noise": n_seed}
    save_matrix(out / "observation.txt", obs.y, layout="slot-major",
                seeds=seeds, meta={"noise_var": obs.noise_var})
    save_matrix(out / "ground_truth.txt", real.x_true, layout="slot-major",
                seeds=seeds)
    write_json(out / "realization.json", {
        "seeds": seeds,
        "noise_var": obs.noise_var,
        "zero_signal": obs.zero_signal,
        "users": real.users.tolist(),
        "sequences": real.seq.tolist(),
        "delays": real.delay.tolist(),
        "data_lengths": real.data_len.tolist(),
    })
    print(f"wrote observation ({obs.y.shape[0]}x{obs.y.shape[1]}), ground truth, "
          f"and realization metadata to {out}")
    return 0


def cmd_solve(args) -> int:
    bundle = _load_bundle(args)
    spec = _spec(args, bundle)
    if len(spec.solvers) != 1:
        raise SystemExit("solve needs exactly one --solver")
    lamp_params = _load_lamp_params(spec, args.params)
    solver = spec.solvers[0]
    system = ex.apply_axis(spec.system, spec.sweep_axis, spec.sweep_values[0])
    pool = build_spreading_pool(system, spec.resolved_pool_seed)
    dic = expand_dictionary(pool, system.guard)
    run = ex.run_point(system, spec.amp, spec.detection, solver, spec.seed,
                       spec.sweep_axis, spec.sweep_values[0], args.trial,
                       pool=pool, dic=dic, lamp_params=lamp_params.get(solver))
    rep = run.report
    out = Path(args.out)
    row = ex._trial_row(solver, spec.sweep_axis, spec.sweep_values[0],
                        args.trial, run)
    write_csv(out / "trials.csv", [row], ex.TRIALS_CSV_FIELDS)
    write_json(out / "metrics.json", rep.to_dict())
    if args.save_estimate:
        save_matrix(out / "estimate.txt", run.recovery.x_hat,
                    layout="slot-major",
                    seeds={"master": spec.seed,
                           "realization": run.realization_seed,
                           "noise": run.noise_seed})
    print(f"{solver}: f1={rep.f1:.4f} nmse_db={rep.nmse_db:.2f} "
          f"mu_data={rep.mu_data:.4f} -> {out}")
    return 0


def cmd_sweep(args) -> int:
    bundle = _load_bundle(args)
    spec = _spec(args, bundle)
    lamp_params = _load_lamp_params(spec, args.params)
    result = ex.run_sweep(spec, out_dir=args.out, lamp_params=lamp_params)
    for agg in result.aggregates:
        print(f"{agg['solver']:8s} {spec.sweep_axis}={agg['value']:<6} "
              f"f1={agg['f1_mean']:.4f} mu_data={agg['mu_data_mean']:.4f} "
              f"nmse_db={agg['nmse_db_mean']:.2f} (n={agg['n_trials']})")
    print(f"{len(result.trials)} trials in {result.wall_time_s:.1f}s "
          f"({result.n_failed} failed) -> {args.out}")
    return 0 if result.n_failed == 0 else 1


def cmd_train(args) -> int:
    bundle = _load_bundle(args)
    spec = _spec(args, bundle)
    if not spec.train:
        raise SystemExit(
            "no [train] settings; pick a preset with training defaults "
            "(e.g. train-desk) or add a [train] section to the config")
    if args.variant:
        spec.train["variant"] = args.variant
    result = ex.run_training(spec, out_dir=args.out)
    last = {}
    for row in result.curves:
        last[row["stage"]] = row
    for stage in sorted(last):
        row = last[stage]
        print(f"stage {stage}: {row['step']} steps, "
              f"val_loss {row['val_loss']:.6f}")
    print(f"{'aborted' if result.aborted else 'done'} -> {args.out}")
    return 1 if result.aborted else 0


def cmd_theory_check(args) -> int:
    cfg = UniquenessTrialConfig(
        m_dim=args.m_dim, n_dim=args.n_dim, l_dim=args.l_dim,
        r_known=args.r_known, trials=args.trials, seed=args.seed or 0,
    )
    out_path = Path(args.out) / "uniqueness.json" if args.out else None
    report = ex.run_theory_check(cfg, out_path=out_path)
    print(f"bound r={report.bound} unique_fraction={report.unique_fraction:.3f} "
          f"redraws={report.redraws} wall={report.wall_time_s:.2f}s")
    if out_path:
        print(f"-> {out_path}")
    return 0 if report.unique_fraction == 1.0 else 1


def cmd_report(args) -> int:
    path = Path(args.trials)
    with path.open(newline="") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        raise SystemExit(f"{path}: no trial rows")
    numeric = []
    for row in rows:
        r = dict(row)
        r["failed"] = int(r.get("failed") or 0)
        r["trial"] = int(r["trial"])
        for key in ex.METRIC_KEYS:
            r[key] = float(r[key]) if r.get(key) else float("nan")
        try:
            val = float(row["value"])
            r["value"] = int(val) if val == int(val) else val
        except ValueError:
            pass
        numeric.append(r)
    aggregates = ex._aggregate(numeric)
    for agg in aggregates:
        print(f"{agg['solver']:8s} value={agg['value']:<6} "
              f"f1={agg['f1_mean']:.4f} mu_data={agg['mu_data_mean']:.4f} "
              f"nmse_db={agg['nmse_db_mean']:.2f} (n={agg['n_trials']})")
    n_failed = sum(r["failed"] for r in numeric)
    if args.out:
        write_json(Path(args.out) / "summary.json", {
            "csv_schema": rows[0].get("schema", ""),
            "source": str(path),
            "n_failed": n_failed,
            "aggregates": aggregates,
        })
    return 0 if n_failed == 0 else 1


def _add_common(p, out_required=True, with_solver_list=False):
    p.add_argument("--preset", choices=preset_names(),
                   help="named built-in configuration")
    p.add_argument("--config", help="INI config file")
    p.add_argument("--seed", type=int, help="master seed (default from preset/config)")
    p.add_argument("--pool-seed", type=int, dest="pool_seed",
                   help="spreading-pool seed (default derived from master seed)")
    p.add_argument("--out", required=out_required, help="output directory")
    p.add_argument("--axis", choices=ex.SWEEP_AXES, help="sweep axis override")
    p.add_argument("--values", help="comma-separated sweep values override")
    p.add_argument("--trials", type=int, help="trials per sweep point")
    if with_solver_list:
        p.add_argument("--solvers", help="comma-separated solver list "
                                         "(amp, amp-bp, lamp, lamp-bp)")
    p.add_argument("--params", help="trained parameter file for lamp solvers")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gfamp",
        description="Grant-free random access simulator: sparse-recovery "
                    "solvers, Monte-Carlo sweeps, learned-solver training, "
                    "and uniqueness checks.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="draw one scenario and save it")
    _add_common(p)
    p.add_argument("--trial", type=int, default=0, help="trial index to draw")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("solve", help="run one end-to-end solve")
    _add_common(p)
    p.add_argument("--solver", default=None,
                   help="amp, amp-bp, lamp, or lamp-bp")
    p.add_argument("--trial", type=int, default=0)
    p.add_argument("--save-estimate", action="store_true",
                   help="also save the recovered matrix")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("sweep", help="Monte-Carlo sweep over one axis")
    _add_common(p, with_solver_list=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("train", help="train a learned solver")
    _add_common(p)
    p.add_argument("--variant", choices=["mmv", "bp"],
                   help="override the [train] variant")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("theory-check",
                       help="brute-force check of the uniqueness bound")
    p.add_argument("--m-dim", type=int, default=6)
    p.add_argument("--n-dim", type=int, default=12)
    p.add_argument("--l-dim", type=int, default=2)
    p.add_argument("--r-known", type=int, default=0)
    p.add_argument("--trials", type=int, default=100)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", help="output directory for the JSON report")
    p.set_defaults(func=cmd_theory_check)

    p = sub.add_parser("report", help="re-aggregate an existing trials CSV")
    p.add_argument("--trials", required=True, help="path to trials.csv",
                   dest="trials")
    p.add_argument("--out", help="directory for summary.json")
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    except ValueError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
