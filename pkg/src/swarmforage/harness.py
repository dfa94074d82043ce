"""Experiment orchestration: calibrate, predict, simulate, compare, report.

A plan names a regime, the scenario kinds, the swarm sizes or densities and
the simulation budget.  Every random stream is derived from the plan seed, so
rerunning a plan reproduces ``rows.csv`` byte for byte.
"""

from __future__ import annotations

import csv
import io
import json
import math
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from .analytic import CONTROL_PERIOD, ModelParams, derive_params
from .errors import PlanValidationError, SwarmForageError
from .fit import (
    CalibrationPoint,
    CharacterizationTable,
    FitResult,
    LegacyFitResult,
    fit_characterizations,
    fit_legacy_params,
)
from .microsim import SimConfig, SingleRobotCalibration, SteadyStats, measure_single_robot, run, steady_stats
from .odemodel import solve_generalized
from .scenario import KINDS, Scenario, arena_dims_for, make_density_scenario

REGIMES = ("const-rho-large", "const-rho-small", "var-rho-large", "var-rho-small")

CSV_COLUMNS = (
    "kind",
    "N",
    "rho",
    "pred_nh",
    "pred_nav",
    "pred_p",
    "sim_nh_mean",
    "sim_nh_lo",
    "sim_nh_hi",
    "sim_nav_mean",
    "sim_nav_lo",
    "sim_nav_hi",
    "sim_p_mean",
    "in_ci_nh",
    "in_ci_nav",
)

DEFAULT_HORIZON = 20_000.0
DEFAULT_REPLICATES = 8
DEFAULT_ARENA_AREA = 500.0
CALIBRATION_SIZES = (5, 10, 20)
SINGLE_ROBOT_HORIZON = 50_000.0
DIVERGENCE_THRESHOLD = 0.25  # relative N_av error that marks divergence
LEGACY_DT = 2.0
LEGACY_ROUNDS = 400

# purposes for seed derivation
_SEED_SCENARIO = 0
_SEED_CALIB = 1
_SEED_VALIDATE = 2
_SEED_SINGLE = 3


@dataclass(frozen=True)
class ExperimentPlan:
    regime: str
    kinds: tuple[str, ...]
    sizes: tuple[int, ...] = ()
    densities: tuple[float, ...] = (0.01,)
    horizon: float = DEFAULT_HORIZON
    replicates: int = DEFAULT_REPLICATES
    seed: int = 0
    arena_area: float = DEFAULT_ARENA_AREA
    calibration_sizes: tuple[int, ...] = CALIBRATION_SIZES
    single_robot_horizon: float = SINGLE_ROBOT_HORIZON
    sign: int = 1
    legacy_baseline: bool = True
    workers: int = 1

    def validate(self) -> None:
        if self.regime not in REGIMES:
            raise PlanValidationError(f"unknown regime {self.regime!r}")
        if not self.kinds:
            raise PlanValidationError("plan has no scenario kinds")
        bad = [k for k in self.kinds if k not in KINDS]
        if bad:
            raise PlanValidationError(f"unknown scenario kinds {bad}")
        if not self.densities or any(not (r > 0) for r in self.densities):
            raise PlanValidationError("densities must be a non-empty list of positive numbers")
        if self.is_const_rho and not self.sizes:
            raise PlanValidationError("constant-density regimes need swarm sizes")
        if any(n < 1 for n in self.sizes):
            raise PlanValidationError("swarm sizes must be positive")
        if self.replicates < 2:
            raise PlanValidationError("need at least 2 replicates for interval reporting")
        if not (self.horizon > 0):
            raise PlanValidationError("horizon must be positive")
        if len(set(self.calibration_sizes)) < 2:
            raise PlanValidationError("need at least two distinct calibration sizes")
        if self.sign not in (1, -1):
            raise PlanValidationError("sign must be +1 or -1")
        if not self.is_const_rho and not (self.arena_area > 0):
            raise PlanValidationError("arena_area must be positive")

    @property
    def is_const_rho(self) -> bool:
        return self.regime.startswith("const-rho")

    def points(self) -> list[tuple[str, int, float]]:
        """``(kind, N, rho)`` for every validation point, in emission order."""
        out = []
        for kind in self.kinds:
            if self.is_const_rho:
                for rho in self.densities:
                    for n in self.sizes:
                        out.append((kind, int(n), float(rho)))
            else:
                for rho in self.densities:
                    n = max(1, int(round(rho * self.arena_area)))
                    out.append((kind, n, float(rho)))
        return out

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> ExperimentPlan:
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise PlanValidationError(f"unknown plan fields {sorted(unknown)}")
        d = dict(d)
        for key in ("kinds", "sizes", "densities", "calibration_sizes"):
            if key in d:
                d[key] = tuple(d[key])
        try:
            plan = cls(**d)
        except TypeError as exc:
            raise PlanValidationError(str(exc)) from exc
        plan.validate()
        return plan


def default_plan(regime: str, **overrides) -> ExperimentPlan:
    """Desk-scale stand-ins for the four experiment sets."""
    base = {
        "const-rho-small": dict(kinds=("SS", "DS"), sizes=(5, 10, 20, 50), densities=(0.01,)),
        "const-rho-large": dict(kinds=("SS", "DS"), sizes=(50, 100, 200), densities=(0.01,)),
        "var-rho-small": dict(kinds=("SS",), densities=(0.01, 0.02, 0.04, 0.06, 0.08, 0.1), arena_area=500.0),
        "var-rho-large": dict(kinds=("SS",), densities=(0.01, 0.02, 0.04, 0.06, 0.08, 0.1), arena_area=2000.0),
    }
    if regime not in base:
        raise PlanValidationError(f"unknown regime {regime!r}")
    plan = ExperimentPlan(regime=regime, **{**base[regime], **overrides})
    plan.validate()
    return plan


def load_plan(path) -> ExperimentPlan:
    with open(path) as fh:
        return ExperimentPlan.from_dict(json.load(fh))


def save_plan(plan: ExperimentPlan, path) -> None:
    Path(path).write_text(json.dumps(plan.to_dict(), indent=2) + "\n")


def derive_seed(seed: int, purpose: int, kind: str, n: int, rho: float = 0.0) -> int:
    """64-bit seed for one (purpose, point) pair, independent across purposes."""
    key = (purpose, KINDS.index(kind), int(n), int(round(rho * 1e6)))
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=key)
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def build_scenario(plan: ExperimentPlan, kind: str, n: int, rho: float) -> Scenario:
    dims = None if plan.is_const_rho else arena_dims_for(kind, 1, 1.0 / plan.arena_area)
    return make_density_scenario(kind, n, rho, seed=derive_seed(plan.seed, _SEED_SCENARIO, kind, n, rho), arena_dims=dims)


def calibration_points(plan: ExperimentPlan, kind: str, config: SimConfig | None = None):
    """Simulate the calibration sizes on seeds disjoint from the validation runs."""
    rho = plan.densities[0]
    pts = []
    for n in plan.calibration_sizes:
        r = rho if plan.is_const_rho else n / plan.arena_area
        s = build_scenario(plan, kind, n, r)
        stats = steady_stats(run(s, plan.horizon, plan.replicates, derive_seed(plan.seed, _SEED_CALIB, kind, n, r), config))
        single = single_robot(plan, s, config)
        pts.append(CalibrationPoint(s, stats["n_h"].mean, stats["n_av"].mean, single))
    return pts


def single_robot(plan: ExperimentPlan, s: Scenario, config: SimConfig | None = None) -> SingleRobotCalibration:
    seed = derive_seed(plan.seed, _SEED_SINGLE, s.kind, s.robot_count, round(s.arena.area, 6))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return measure_single_robot(s, plan.single_robot_horizon, seed, config)


@dataclass
class KindCalibration:
    fit: FitResult
    legacy: LegacyFitResult | None = None

    def to_dict(self) -> dict:
        d = {"fit": self.fit.to_dict()}
        if self.legacy is not None:
            lp = self.legacy
            d["legacy"] = {
                "params": asdict(lp.params),
                "residual": lp.residual,
                "rounds": lp.rounds,
            }
        return d

    @classmethod
    def from_dict(cls, d) -> KindCalibration:
        from .odemodel import LegacyParams

        legacy = None
        if "legacy" in d:
            ld = d["legacy"]
            legacy = LegacyFitResult(LegacyParams(**ld["params"]), ld["residual"], [], ld.get("rounds", 0))
        return cls(FitResult.from_dict(d["fit"]), legacy)


def calibrate(plan: ExperimentPlan, config: SimConfig | None = None) -> dict[str, KindCalibration]:
    plan.validate()
    out = {}
    for kind in plan.kinds:
        pts = calibration_points(plan, kind, config)
        fit = fit_characterizations(kind, pts, t_ref=(config or SimConfig()).dt, sign=plan.sign)
        legacy = None
        if plan.legacy_baseline:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                legacy = fit_legacy_params(pts, plan.horizon, dt=LEGACY_DT, max_rounds=LEGACY_ROUNDS)
        out[kind] = KindCalibration(fit, legacy)
    return out


def save_calibration(cal: dict[str, KindCalibration], out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "calibration.json").write_text(json.dumps({k: v.to_dict() for k, v in cal.items()}, indent=2) + "\n")
    (out / "calibration.txt").write_text(calibration_kv(cal))


def load_calibration(path) -> dict[str, KindCalibration]:
    p = Path(path)
    if p.is_dir():
        p = p / "calibration.json"
    with open(p) as fh:
        return {k: KindCalibration.from_dict(v) for k, v in json.load(fh).items()}


def calibration_kv(cal: dict[str, KindCalibration]) -> str:
    table = CharacterizationTable({k: v.fit for k, v in cal.items()})
    parts = []
    for kind in sorted(cal):
        c = cal[kind]
        parts.append(c.fit.to_kv(prefix=f"fit.{kind}"))
        if "RN" in table:
            parts.append(f"fit.{kind}.chi_rel_rn = {table.relative_chi(kind):.12g}\n")
        if c.legacy is not None:
            parts.append(c.legacy.to_kv(prefix=f"legacy.{kind}"))
    return "".join(parts)


# -- prediction and simulation ----------------------------------------------


@dataclass(frozen=True)
class Prediction:
    nh: float
    nav: float
    p: float
    params: ModelParams
    converged: bool


def predict_point(s: Scenario, fit: FitResult, single: SingleRobotCalibration, *, sign: int = 1, t_ref: float = CONTROL_PERIOD) -> Prediction:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        mp = derive_params(s, fit.sigma_m, fit.chi_m, single.tau_av, single.alpha_r1, single.n_av1, t_ref=t_ref, sign=sign)
    rep = solve_generalized(mp, s)
    st = rep.steady_state
    return Prediction(st.n_h, st.n_av, rep.performance, mp, rep.converged)


@dataclass
class ComparisonRow:
    kind: str
    N: int
    rho: float
    pred_nh: float = math.nan
    pred_nav: float = math.nan
    pred_p: float = math.nan
    sim_nh_mean: float = math.nan
    sim_nh_lo: float = math.nan
    sim_nh_hi: float = math.nan
    sim_nav_mean: float = math.nan
    sim_nav_lo: float = math.nan
    sim_nav_hi: float = math.nan
    sim_p_mean: float = math.nan
    sim_ns_mean: float = math.nan
    regime: str = ""
    error: str = ""

    @property
    def in_ci_nh(self) -> bool:
        return bool(self.sim_nh_lo <= self.pred_nh <= self.sim_nh_hi)

    @property
    def in_ci_nav(self) -> bool:
        return bool(self.sim_nav_lo <= self.pred_nav <= self.sim_nav_hi)

    @property
    def failed(self) -> bool:
        return bool(self.error)

    def rel_err(self, quantity: str) -> float:
        pred = getattr(self, f"pred_{quantity}")
        sim = getattr(self, f"sim_{quantity}_mean")
        return abs(pred - sim) / sim if sim else math.inf

    def csv_values(self) -> list[str]:
        vals = []
        for col in CSV_COLUMNS:
            v = getattr(self, col)
            if isinstance(v, bool):
                vals.append("true" if v else "false")
            elif isinstance(v, float):
                vals.append(_fmt(v))
            else:
                vals.append(str(v))
        return vals


def _fmt(v: float) -> str:
    return "nan" if math.isnan(v) else f"{v:.10g}"


def simulate_point(plan: ExperimentPlan, s: Scenario, rho: float, config: SimConfig | None = None) -> SteadyStats:
    seed = derive_seed(plan.seed, _SEED_VALIDATE, s.kind, s.robot_count, rho)
    return steady_stats(run(s, plan.horizon, plan.replicates, seed, config))


def _point_task(args):
    plan, kind, n, rho, fit, config = args
    row = ComparisonRow(kind, n, rho, regime=plan.regime)
    try:
        s = build_scenario(plan, kind, n, rho)
        single = single_robot(plan, s, config)
        pred = predict_point(s, fit, single, sign=plan.sign, t_ref=(config or SimConfig()).dt)
        row.pred_nh, row.pred_nav, row.pred_p = pred.nh, pred.nav, pred.p
        st = simulate_point(plan, s, rho, config)
        q = st.quantities
        row.sim_nh_mean, row.sim_nh_lo, row.sim_nh_hi = q["n_h"].mean, q["n_h"].lo, q["n_h"].hi
        row.sim_nav_mean, row.sim_nav_lo, row.sim_nav_hi = q["n_av"].mean, q["n_av"].lo, q["n_av"].hi
        row.sim_p_mean = q["collection_rate"].mean
        row.sim_ns_mean = q["n_s"].mean
    except SwarmForageError as exc:
        row.error = f"{type(exc).__name__}: {exc}"
    return row


@dataclass
class PlanResult:
    plan: ExperimentPlan
    rows: list[ComparisonRow]
    calibration: dict[str, KindCalibration]
    runtime: float = 0.0
    failures: dict[str, str] = field(default_factory=dict)


def run_plan(
    plan: ExperimentPlan,
    calibration: dict[str, KindCalibration] | None = None,
    config: SimConfig | None = None,
    out_dir=None,
) -> PlanResult:
    """Calibrate (unless given), then predict and simulate every plan point."""
    plan.validate()
    t0 = time.perf_counter()
    failures = {}
    if calibration is None:
        calibration = {}
        for kind in plan.kinds:
            try:
                calibration.update(calibrate(replace(plan, kinds=(kind,)), config))
            except SwarmForageError as exc:
                failures[kind] = f"{type(exc).__name__}: {exc}"
    tasks = []
    rows = []
    for kind, n, rho in plan.points():
        if kind not in calibration:
            msg = failures.get(kind, "no calibration for this kind")
            rows.append(ComparisonRow(kind, n, rho, regime=plan.regime, error=msg))
            continue
        tasks.append((plan, kind, n, rho, calibration[kind].fit, config))
    if plan.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=plan.workers) as pool:
            rows += list(pool.map(_point_task, tasks))
    else:
        rows += [_point_task(t) for t in tasks]
    order = {(k, n, r): i for i, (k, n, r) in enumerate(plan.points())}
    rows.sort(key=lambda r: order[(r.kind, r.N, r.rho)])
    result = PlanResult(plan, rows, calibration, time.perf_counter() - t0, failures)
    if out_dir is not None:
        write_outputs(result, out_dir)
    return result


# -- outputs -----------------------------------------------------------------


def rows_csv(rows: list[ComparisonRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for r in rows:
        w.writerow(r.csv_values())
    return buf.getvalue()


def read_rows_csv(path, regime: str = "") -> list[ComparisonRow]:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.DictReader(fh):
            kw = {k: float(rec[k]) for k in CSV_COLUMNS[3:13]}
            rows.append(ComparisonRow(rec["kind"], int(rec["N"]), float(rec["rho"]), regime=regime, **kw))
    return rows


def divergence_density(rows: list[ComparisonRow], threshold: float = DIVERGENCE_THRESHOLD) -> float | None:
    """Lowest density from which the N_av prediction stays off by more than ``threshold``."""
    ok = sorted((r for r in rows if not r.failed), key=lambda r: r.rho)
    for i, r in enumerate(ok):
        if all(x.rel_err("nav") > threshold and not x.in_ci_nav for x in ok[i:]):
            return r.rho
    return None


def report(
    rows: list[ComparisonRow],
    calibration: dict[str, KindCalibration] | None = None,
    runtime: float | None = None,
) -> str:
    """Plain-text summary, one section per regime."""
    if not rows:
        raise ValueError("report needs at least one row")
    out = io.StringIO()
    regimes = sorted({r.regime for r in rows}, key=lambda g: (g not in REGIMES, REGIMES.index(g) if g in REGIMES else 0, g))
    for regime in regimes:
        sect = [r for r in rows if r.regime == regime]
        good = [r for r in sect if not r.failed]
        out.write(f"== regime {regime or 'unspecified'} ==\n")
        out.write(f"points = {len(sect)}\n")
        out.write(f"failed = {len(sect) - len(good)}\n")
        if good:
            f_nh = sum(r.in_ci_nh for r in good) / len(good)
            f_nav = sum(r.in_ci_nav for r in good) / len(good)
            f_both = sum(r.in_ci_nh and r.in_ci_nav for r in good) / len(good)
            out.write(f"within_ci.n_h = {f_nh:.4f}\n")
            out.write(f"within_ci.n_av = {f_nav:.4f}\n")
            out.write(f"within_ci.both = {f_both:.4f}\n")
            for q in ("nh", "nav", "p"):
                worst = max(good, key=lambda r: r.rel_err(q))
                out.write(f"worst_rel_err.{q} = {worst.rel_err(q):.4f} ({worst.kind} N={worst.N} rho={worst.rho:g})\n")
            if regime.startswith("var-rho"):
                for kind in sorted({r.kind for r in good}):
                    krows = [r for r in good if r.kind == kind]
                    dd = divergence_density(krows)
                    f = sum(r.in_ci_nh for r in krows) / len(krows)
                    out.write(f"{kind}.n_h_within_ci = {f:.4f}\n")
                    out.write(f"{kind}.divergence_density = {'none' if dd is None else f'{dd:g}'}\n")
        for r in sect:
            if r.failed:
                out.write(f"FAILED {r.kind} N={r.N} rho={r.rho:g}: {r.error}\n")
        out.write("\n")
    out.write("== points ==\n")
    for r in rows:
        if r.failed:
            continue
        out.write(
            f"{r.kind} N={r.N} rho={r.rho:g}  "
            f"N_h pred {r.pred_nh:.3f} sim {r.sim_nh_mean:.3f} [{r.sim_nh_lo:.3f}, {r.sim_nh_hi:.3f}] {'in' if r.in_ci_nh else 'out'}  "
            f"N_av pred {r.pred_nav:.3f} sim {r.sim_nav_mean:.3f} [{r.sim_nav_lo:.3f}, {r.sim_nav_hi:.3f}] {'in' if r.in_ci_nav else 'out'}  "
            f"P pred {r.pred_p:.5f} sim {r.sim_p_mean:.5f}\n"
        )
    if calibration:
        out.write("\n== calibration ==\n")
        out.write(calibration_kv(calibration))
        sides = [(k, c.fit.residual, c.legacy.residual) for k, c in sorted(calibration.items()) if c.legacy is not None]
        if sides:
            out.write("\n== residuals (generalized vs legacy) ==\n")
            for k, g, lg in sides:
                out.write(f"{k}: generalized {g:.6g}  legacy {lg:.6g}\n")
    if runtime is not None:
        out.write(f"\nruntime_s = {runtime:.1f}\n")
    out.write("intervals = 95% Student t across replicates of post-burn-in time averages\n")
    return out.getvalue()


def plot_rows(rows: list[ComparisonRow], out_dir, regime: str | None = None) -> list[Path]:
    """One SVG per (regime, quantity); a pure function of the rows."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for reg in sorted({regime or r.regime for r in rows}):
        sect = [r for r in rows if (regime or r.regime) == reg and not r.failed]
        if not sect:
            continue
        labels = [f"{r.kind}\nN={r.N}\nρ={r.rho:g}" for r in sect]
        x = np.arange(len(sect))
        for q, name in (("nh", "N_h"), ("nav", "N_av")):
            with plt.rc_context({"svg.hashsalt": "swarmforage", "svg.fonttype": "none"}):
                fig, ax = plt.subplots(figsize=(max(4.0, 0.8 * len(sect) + 2), 3.5))
                mean = np.array([getattr(r, f"sim_{q}_mean") for r in sect])
                lo = np.array([getattr(r, f"sim_{q}_lo") for r in sect])
                hi = np.array([getattr(r, f"sim_{q}_hi") for r in sect])
                pred = np.array([getattr(r, f"pred_{q}") for r in sect])
                ax.errorbar(x, mean, yerr=[mean - lo, hi - mean], fmt="o", capsize=3, label="simulated (95% CI)")
                ax.plot(x, pred, "x", markersize=8, label="predicted")
                ax.set_xticks(x)
                ax.set_xticklabels(labels, fontsize=7)
                ax.set_ylabel(name)
                ax.set_title(f"{reg}: {name}")
                ax.legend(fontsize=7)
                fig.tight_layout()
                path = out / f"{reg or 'plan'}-{name}.svg"
                fig.savefig(path, format="svg", metadata={"Date": None})
                plt.close(fig)
            paths.append(path)
    return paths


def write_outputs(result: PlanResult, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    save_plan(result.plan, out / "plan.json")
    (out / "rows.csv").write_text(rows_csv(result.rows))
    if result.calibration:
        save_calibration(result.calibration, out)
    (out / "report.txt").write_text(report(result.rows, result.calibration, result.runtime))
    plot_rows(result.rows, out)
