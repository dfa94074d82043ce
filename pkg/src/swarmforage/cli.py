"""Command-line entry point: ``swarmforage <subcommand> [flags]``."""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from dataclasses import replace
from pathlib import Path

from . import harness as hz
from .errors import SwarmForageError
from .microsim import run_manifest
from .scenario import save_scenario


def _plan_from_args(args) -> hz.ExperimentPlan:
    if args.plan:
        with open(args.plan) as fh:
            data = json.load(fh)
        if "plans" in data:
            raise hz.PlanValidationError("this subcommand takes a single plan; use 'sweep' for a plan list")
        plan = hz.ExperimentPlan.from_dict(data)
    elif args.regime:
        plan = hz.default_plan(args.regime)
    else:
        raise hz.PlanValidationError("give --plan <file> or --regime <name>")
    return _override(plan, args)


def _override(plan, args):
    kw = {}
    if args.seed is not None:
        kw["seed"] = args.seed
    if args.replicates is not None:
        kw["replicates"] = args.replicates
    if args.horizon is not None:
        kw["horizon"] = args.horizon
    if args.dtheta_sign is not None:
        kw["sign"] = 1 if args.dtheta_sign == "plus" else -1
    if getattr(args, "workers", None):
        kw["workers"] = args.workers
    plan = replace(plan, **kw)
    plan.validate()
    return plan


def _out(args) -> Path:
    p = Path(args.out)
    p.mkdir(parents=True, exist_ok=True)
    return p


def cmd_generate(args):
    plan = _plan_from_args(args)
    out = _out(args) / "scenarios"
    out.mkdir(exist_ok=True)
    for kind, n, rho in plan.points():
        s = hz.build_scenario(plan, kind, n, rho)
        save_scenario(s, out / f"{kind}-N{n}-rho{rho:g}.json")
    print(f"wrote {len(plan.points())} scenarios to {out}")


def cmd_calibrate(args):
    plan = _plan_from_args(args)
    cal = hz.calibrate(plan)
    out = _out(args)
    hz.save_calibration(cal, out)
    hz.save_plan(plan, out / "plan.json")
    sys.stdout.write(hz.calibration_kv(cal))


def _calibration(args, plan):
    if args.fit_from:
        cal = hz.load_calibration(args.fit_from)
        missing = [k for k in plan.kinds if k not in cal]
        if missing:
            raise hz.PlanValidationError(f"--fit-from lacks calibration for {missing}")
        return cal
    return None


def cmd_predict(args):
    plan = _plan_from_args(args)
    cal = _calibration(args, plan) or hz.calibrate(plan)
    out = _out(args)
    with open(out / "predictions.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kind", "N", "rho", "pred_nh", "pred_nav", "pred_p", "tau_h", "alpha_b", "alpha_r", "tau_av", "error"])
        for kind, n, rho in plan.points():
            s = hz.build_scenario(plan, kind, n, rho)
            single = hz.single_robot(plan, s)
            try:
                pr = hz.predict_point(s, cal[kind].fit, single, sign=plan.sign)
            except SwarmForageError as exc:
                # keep going; the failed point is marked in its row
                w.writerow([kind, n, hz._fmt(rho)] + ["nan"] * 7 + [f"{type(exc).__name__}: {exc}"])
                continue
            mp = pr.params
            w.writerow(
                [kind, n, hz._fmt(rho)]
                + [hz._fmt(v) for v in (pr.nh, pr.nav, pr.p, mp.tau_h, mp.alpha_b, mp.alpha_r, mp.tau_av)]
                + [""]
            )
    print(f"wrote {out / 'predictions.csv'}")


def cmd_simulate(args):
    plan = _plan_from_args(args)
    out = _out(args)
    manifests = []
    with open(out / "simulations.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kind", "N", "rho", "sim_nh_mean", "sim_nh_lo", "sim_nh_hi", "sim_nav_mean", "sim_nav_lo", "sim_nav_hi", "sim_p_mean"])
        for kind, n, rho in plan.points():
            s = hz.build_scenario(plan, kind, n, rho)
            seed = hz.derive_seed(plan.seed, hz._SEED_VALIDATE, kind, n, rho)
            series = hz.run(s, plan.horizon, plan.replicates, seed)
            q = hz.steady_stats(series).quantities
            w.writerow(
                [kind, n, hz._fmt(rho)]
                + [hz._fmt(v) for v in (q["n_h"].mean, q["n_h"].lo, q["n_h"].hi, q["n_av"].mean, q["n_av"].lo, q["n_av"].hi, q["collection_rate"].mean)]
            )
            manifests.append(f"[{kind} N={n} rho={rho:g}]\n" + run_manifest(s, plan.horizon, seed, series))
    (out / "manifest.txt").write_text("\n".join(manifests))
    print(f"wrote {out / 'simulations.csv'}")


def cmd_compare(args):
    plan = _plan_from_args(args)
    res = hz.run_plan(plan, _calibration(args, plan), out_dir=_out(args))
    sys.stdout.write(hz.report(res.rows, res.calibration, res.runtime))


def cmd_sweep(args):
    if args.plan:
        with open(args.plan) as fh:
            data = json.load(fh)
        plans = [hz.ExperimentPlan.from_dict(d) for d in data.get("plans", [data])]
    else:
        names = [args.regime] if args.regime else list(hz.REGIMES)
        plans = [hz.default_plan(r) for r in names]
    plans = [_override(p, args) for p in plans]
    out = _out(args)
    rows, cal = [], {}
    t0 = time.perf_counter()
    for p in plans:
        res = hz.run_plan(p, _calibration(args, p), out_dir=out / p.regime)
        rows += res.rows
        cal.update({f"{p.regime}.{k}": v for k, v in res.calibration.items()})
    (out / "rows.csv").write_text(hz.rows_csv(rows))
    text = hz.report(rows, cal, time.perf_counter() - t0)
    (out / "report.txt").write_text(text)
    hz.plot_rows(rows, out)
    sys.stdout.write(text)


def cmd_report(args):
    out = Path(args.out)
    regime = ""
    if (out / "plan.json").exists():
        regime = hz.load_plan(out / "plan.json").regime
    rows = hz.read_rows_csv(out / "rows.csv", regime=regime)
    cal = hz.load_calibration(out) if (out / "calibration.json").exists() else None
    text = hz.report(rows, cal)
    (out / "report.txt").write_text(text)
    hz.plot_rows(rows, out)
    sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="swarmforage", description="Foraging-swarm model calibration and validation.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, out_required=True):
        p.add_argument("--plan", help="experiment plan (JSON)")
        p.add_argument("--regime", choices=hz.REGIMES, help="use the built-in plan for a regime")
        p.add_argument("--seed", type=int, help="plan seed (u64)")
        p.add_argument("--out", required=out_required, help="output directory")
        p.add_argument("--replicates", type=int)
        p.add_argument("--horizon", type=float, help="simulated seconds")
        p.add_argument("--dtheta-sign", choices=("plus", "minus"))
        p.add_argument("--workers", type=int, default=0, help="process pool size for plan points")

    handlers = {
        "generate": (cmd_generate, "write the scenario files of a plan"),
        "calibrate": (cmd_calibrate, "simulate calibration sizes and fit sigma_m, chi_m"),
        "predict": (cmd_predict, "model predictions for every plan point"),
        "simulate": (cmd_simulate, "microsimulation statistics for every plan point"),
        "compare": (cmd_compare, "calibrate, predict, simulate and report one plan"),
        "sweep": (cmd_sweep, "run several plans (default: all four regimes)"),
        "report": (cmd_report, "rebuild report.txt and plots from rows.csv"),
    }
    for name, (fn, help_) in handlers.items():
        p = sub.add_parser(name, help=help_)
        if name == "report":
            p.add_argument("--out", required=True, help="directory holding rows.csv")
        else:
            common(p)
        if name in ("predict", "compare", "sweep"):
            p.add_argument("--fit-from", help="directory (or calibration.json) from a previous calibrate run")
        p.set_defaults(func=fn)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        args.func(args)
    except SwarmForageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
