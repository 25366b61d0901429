"""Command-line interface.

Subcommands: generate-data, run-slev, run-sled, run-baselines,
safety-check, bound-check, report.  Each command reads an optional JSON
experiment config (--config) and applies flag overrides on top; worker
count comes from --workers or the SHORTLONG_WORKERS environment
variable.  All outputs are UTF-8 CSV or JSON.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys

import numpy as np

from .core import load_dataset, save_dataset
from .envs import load_curves, make_env, save_curves
from .harness import (
    BoundInputs,
    ExperimentConfig,
    SyntheticBoundSpec,
    risk_bound,
    verify_bound_empirically,
    write_report,
)
from .experiments import (
    BatteryExperimentConfig,
    generate_seed_data,
    make_battery_population,
    run_battery_experiment,
    run_experiment,
)
from .seeding import worker_count
from .sled import battery_classify, battery_fit_base, battery_fit_lifetime


def _load_config(args) -> ExperimentConfig:
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            cfg = ExperimentConfig.from_json(fh.read())
    else:
        cfg = ExperimentConfig()
    if getattr(args, "env", None):
        cfg.env_id = args.env
    if getattr(args, "seed", None) is not None:
        cfg.seeds = (args.seed,)
    if getattr(args, "seeds", None):
        cfg.seeds = tuple(int(s) for s in args.seeds.split(","))
    if getattr(args, "out", None):
        cfg.out_dir = args.out
    if getattr(args, "k", None) is not None:
        cfg.k = args.k
    if getattr(args, "weighted", None) is not None:
        cfg.weighted = args.weighted == "on"
    if getattr(args, "ell", None) is not None:
        env = make_env(cfg.env_id)
        cfg.ell_fractions = (args.ell / env.horizon,)
        cfg.safety_ell_fraction = args.ell / env.horizon
    if getattr(args, "methods", None):
        cfg.methods = tuple(args.methods.split(","))
    return cfg


def _write_predictions(path: str, rows: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("policy_id,ell,prediction,truth\n")
        for r in sorted(rows, key=lambda r: (r["ell"], r["policy_id"])):
            fh.write(f'{r["policy_id"]},{r["ell"]},'
                     f'{format(r["prediction"], ".17g")},{format(r["truth"], ".17g")}\n')
    print(f"wrote {path} ({len(rows)} predictions)")


def _run_and_emit(cfg: ExperimentConfig, out: str) -> None:
    run_rows, _ = run_experiment(cfg, workers=worker_count(None))
    _write_predictions(out, run_rows)


def cmd_generate_data(args) -> None:
    cfg = _load_config(args)
    os.makedirs(args.out, exist_ok=True)
    if args.battery:
        train, test = make_battery_population(BatteryExperimentConfig(seed=cfg.seeds[0]))
        save_curves(train, os.path.join(args.out, "train_curves.csv"))
        for c in test:
            c.lifetime = None  # test curves ship unlabeled
        save_curves(test, os.path.join(args.out, "test_curves.csv"))
        print(f"wrote {len(train)} train / {len(test)} test curves to {args.out}")
        return
    for seed in cfg.seeds:
        data = generate_seed_data(cfg.env_id, cfg.policygen, seed)
        save_dataset(data.train, os.path.join(args.out, f"{cfg.env_id}-seed{seed}-train.jsonl"))
        save_dataset(data.test, os.path.join(args.out, f"{cfg.env_id}-seed{seed}-test.jsonl"))
        print(f"seed {seed}: {len(data.train.records)} train / {len(data.test.records)} test policies")


def cmd_run_slev(args) -> None:
    cfg = _load_config(args)
    cfg.methods = ("slev",)
    if args.grid:
        with open(args.grid, "r", encoding="utf-8") as fh:
            g = json.load(fh)
        cfg.slev_learning_rates = tuple(g.get("learning_rates", cfg.slev_learning_rates))
        if "weight_decays" in g:
            cfg.slev_weight_decays = tuple(g["weight_decays"])
        cfg.slev_max_updates = g.get("max_updates", cfg.slev_max_updates)
    _run_and_emit(cfg, args.out)


def cmd_run_sled(args) -> None:
    if args.curves:
        # battery mode: labeled train curves + unlabeled test curves in, predictions out
        train = load_curves(args.train_curves)
        test = load_curves(args.curves)
        base = battery_fit_base(train, k=args.k or 10)
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write("cell_index,lfc,label\n")
            for i, curve in enumerate(test):
                pre = curve.prefix(min(args.prefix_cycles, len(curve.cycles)))
                pts = np.stack([pre.cycles.astype(float), pre.capacities], axis=1)
                lfc = battery_fit_lifetime(base, pts)
                fh.write(f"{i},{format(lfc, '.17g')},{battery_classify(lfc, args.threshold)}\n")
        print(f"wrote {args.out} ({len(test)} cells)")
        return
    cfg = _load_config(args)
    cfg.methods = ("sled",)
    if args.adapter_family:
        cfg.sled_adapter_families = (args.adapter_family,)
    _run_and_emit(cfg, args.out)


def cmd_run_baselines(args) -> None:
    cfg = _load_config(args)
    _run_and_emit(cfg, args.out)


def cmd_safety_check(args) -> None:
    cfg = _load_config(args)
    if args.threshold_mode:
        cfg.safety_mode = args.threshold_mode
    if args.threshold_value is not None:
        cfg.safety_value = args.threshold_value
    _, safety_rows = run_experiment(cfg, workers=worker_count(None))
    with open(args.out, "w", encoding="utf-8") as fh:
        fh.write("method,ell,seed,accuracy,threshold\n")
        for r in sorted(safety_rows, key=lambda r: (r["method"], r["seed"])):
            fh.write(f'{r["method"]},{r["ell"]},{r["seed"]},'
                     f'{format(r["accuracy"], ".17g")},{format(r["threshold"], ".17g")}\n')
    print(f"wrote {args.out} ({len(safety_rows)} rows)")


def cmd_bound_check(args) -> None:
    spec = SyntheticBoundSpec(n=args.n, f_size=args.f_size, delta=args.delta, noise=args.noise)
    report = verify_bound_empirically(spec, trials=args.trials, seed=args.seed or 0)
    spot = risk_bound(BoundInputs(m=report.m, v_max=report.v_max, n=spec.n,
                                  f_size=spec.f_size, delta=spec.delta))
    out = dataclasses.asdict(report)
    out["risk_bound"] = spot
    out["target_coverage"] = 1.0 - 4.0 * spec.delta
    text = json.dumps(out, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text + "\n")
    print(text)


def cmd_report(args) -> None:
    cfg = _load_config(args)
    run_rows, safety_rows = run_experiment(cfg, workers=worker_count(None))
    battery_rows = None
    if args.battery:
        battery_rows, _ = run_battery_experiment(BatteryExperimentConfig(seed=cfg.seeds[0]))
    path = write_report(cfg.out_dir, cfg, run_rows, safety_rows, battery_rows)
    print(f"wrote report to {cfg.out_dir} (manifest {path})")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="shortlong", description=__doc__)
    p.add_argument("--workers", type=int, default=None,
                   help="parallel workers (default: SHORTLONG_WORKERS or 1)")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, out_required=True):
        sp.add_argument("--config", help="experiment config JSON")
        sp.add_argument("--env", choices=("hiv", "kidney"))
        sp.add_argument("--seed", type=int)
        sp.add_argument("--seeds", help="comma-separated seed list")
        sp.add_argument("--out", required=out_required)

    sp = sub.add_parser("generate-data", help="roll out policy datasets or battery curves")
    common(sp)
    sp.add_argument("--battery", action="store_true")

    sp = sub.add_parser("run-slev", help="short-feature regression predictions")
    common(sp)
    sp.add_argument("--ell", type=int)
    sp.add_argument("--k", type=int)
    sp.add_argument("--grid", help="JSON with learning_rates / weight_decays / max_updates")
    sp.add_argument("--weighted", choices=("on", "off"))

    sp = sub.add_parser("run-sled", help="adapted-dynamics predictions")
    common(sp)
    sp.add_argument("--ell", type=int)
    sp.add_argument("--adapter-family", choices=("identity", "output_affine", "input_shift"))
    sp.add_argument("--curves", help="unlabeled test curves CSV (battery mode)")
    sp.add_argument("--train-curves", help="labeled train curves CSV (battery mode)")
    sp.add_argument("--prefix-cycles", type=int, default=5)
    sp.add_argument("--threshold", type=float, default=550.0)
    sp.add_argument("--k", type=int)

    sp = sub.add_parser("run-baselines", help="baseline estimator predictions")
    common(sp)
    sp.add_argument("--ell", type=int)
    sp.add_argument("--methods", default="fqe,online,avg,last,mean")

    sp = sub.add_parser("safety-check", help="unsafe-policy detection accuracy")
    common(sp)
    sp.add_argument("--ell", type=int)
    sp.add_argument("--methods")
    sp.add_argument("--threshold-mode", choices=("percentile", "absolute"))
    sp.add_argument("--threshold-value", type=float)

    sp = sub.add_parser("bound-check", help="deviation bound and empirical coverage")
    sp.add_argument("--n", type=int, default=500)
    sp.add_argument("--f-size", type=int, default=8)
    sp.add_argument("--delta", type=float, default=0.05)
    sp.add_argument("--noise", type=float, default=0.25)
    sp.add_argument("--trials", type=int, default=200)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out")

    sp = sub.add_parser("report", help="full experiment with CSV/manifest report")
    common(sp, out_required=False)
    sp.add_argument("--methods")
    sp.add_argument("--battery", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.workers is not None:
        os.environ["SHORTLONG_WORKERS"] = str(args.workers)
    handlers = {
        "generate-data": cmd_generate_data,
        "run-slev": cmd_run_slev,
        "run-sled": cmd_run_sled,
        "run-baselines": cmd_run_baselines,
        "safety-check": cmd_safety_check,
        "bound-check": cmd_bound_check,
        "report": cmd_report,
    }
    handlers[args.command](args)
    return 0


if __name__ == "__main__":
    sys.exit(main())
