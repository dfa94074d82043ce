"""Post-hoc estimation of the per-scenario characterizations.

The generalized model has two remaining free knobs per scenario family, the
diffusion characterization ``sigma_m`` and the collision-avoidance
characterization ``chi_m``.  They are fitted jointly to steady-state
calibration data with a deterministic log-grid search followed by local
refinement.  The legacy five-parameter model is fitted to the same data for
comparison.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .analytic import CONTROL_PERIOD, derive_params
from .errors import ConfigError, UnderdeterminedFitWarning, UnidentifiableFitError
from .microsim import SingleRobotCalibration
from .odemodel import LegacyParams, steady_generalized_batch
from .scenario import Scenario

GRID_BOUNDS = (1e-3, 1e3)
GRID_POINTS = 61
REFINE_ROUNDS = 3
REFINE_POINTS = 11
FIT_DT = 2.0
FIT_HORIZON = 400_000.0
FLAT_SPREAD = 1e-12


@dataclass(frozen=True)
class CalibrationPoint:
    scenario: Scenario
    observed_nh: float
    observed_nav: float
    single: SingleRobotCalibration

    @property
    def n(self) -> int:
        return self.scenario.robot_count


@dataclass
class FitResult:
    sigma_m: float
    chi_m: float
    residual: float
    calibration_points: list[tuple[int, float, float]]
    scenario_kind: str
    evaluations: int = 0
    predictions: list[tuple[float, float]] = field(default_factory=list)

    def to_kv(self, prefix: str = "") -> str:
        p = f"{prefix}." if prefix else ""
        lines = [
            f"{p}kind = {self.scenario_kind}",
            f"{p}sigma_m = {self.sigma_m:.12g}",
            f"{p}chi_m = {self.chi_m:.12g}",
            f"{p}residual = {self.residual:.12g}",
        ]
        for n, nh, nav in self.calibration_points:
            lines.append(f"{p}calib.N{n} = nh {nh:.12g} nav {nav:.12g}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "sigma_m": self.sigma_m,
            "chi_m": self.chi_m,
            "residual": self.residual,
            "calibration_points": [list(p) for p in self.calibration_points],
            "scenario_kind": self.scenario_kind,
            "evaluations": self.evaluations,
        }

    @classmethod
    def from_dict(cls, d) -> FitResult:
        return cls(
            sigma_m=d["sigma_m"],
            chi_m=d["chi_m"],
            residual=d["residual"],
            calibration_points=[tuple(p) for p in d["calibration_points"]],
            scenario_kind=d["scenario_kind"],
            evaluations=d.get("evaluations", 0),
        )


class CharacterizationTable(dict):
    """Fit results keyed by scenario kind; RN is the reference for ``chi``."""

    def relative_chi(self, kind: str) -> float:
        if "RN" not in self:
            raise KeyError("no RN fit available as the chi reference")
        return self[kind].chi_m / self["RN"].chi_m


# -- generalized model -------------------------------------------------------


def predict_steady(points, sigmas, chis, *, t_ref=CONTROL_PERIOD, sign=1, dt=FIT_DT, horizon=FIT_HORIZON):
    """Steady ``(N_h, N_av)`` from the derivation + ODE pipeline.

    Returns two arrays of shape ``(len(sigmas), len(points))``; entries are
    NaN where the candidate leaves the admissible region.
    """
    sigmas = np.atleast_1d(np.asarray(sigmas, dtype=float))
    chis = np.atleast_1d(np.asarray(chis, dtype=float))
    K, P = sigmas.size, len(points)
    rows = np.zeros((K * P, 6))
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for k in range(K):
            for p, pt in enumerate(points):
                mp = derive_params(
                    pt.scenario,
                    sigmas[k],
                    chis[k],
                    pt.single.tau_av,
                    pt.single.alpha_r1,
                    pt.single.n_av1,
                    t_ref=t_ref,
                    sign=sign,
                )
                rows[k * P + p] = (mp.alpha_b, mp.alpha_r, mp.tau_h, mp.tau_av, pt.n, pt.scenario.total_blocks)
    y, ok = steady_generalized_batch(*rows.T, dt=dt, horizon=horizon)
    nh = np.where(ok, y[:, 1], np.nan).reshape(K, P)
    nav = np.where(ok, y[:, 2] + y[:, 3], np.nan).reshape(K, P)
    return nh, nav


def _objective(points, nh, nav):
    n = np.array([pt.n for pt in points], dtype=float)
    obs_h = np.array([pt.observed_nh for pt in points])
    obs_av = np.array([pt.observed_nav for pt in points])
    err = ((nh - obs_h) / n) ** 2 + ((nav - obs_av) / n) ** 2
    res = err.sum(axis=1)
    return np.where(np.isfinite(res), res, np.inf)


def fit_characterizations(
    kind: str,
    points: list[CalibrationPoint],
    *,
    bounds: tuple[float, float] = GRID_BOUNDS,
    grid_points: int = GRID_POINTS,
    rounds: int = REFINE_ROUNDS,
    t_ref: float = CONTROL_PERIOD,
    sign: int = 1,
) -> FitResult:
    """Jointly fit ``(sigma_m, chi_m)`` to steady ``N_h`` and ``N_av`` observations.

    The objective is the sum over calibration points of squared errors
    relative to the swarm size.  A log-spaced grid covers ``bounds`` on both
    axes; each refinement round re-grids a +/- one-step box around the current
    best with five times finer spacing.  Ties go to the smaller
    ``(sigma_m, chi_m)``.
    """
    points = list(points)
    if len({pt.n for pt in points}) < 2:
        raise UnidentifiableFitError("need at least two calibration points with distinct N")
    lo, hi = math.log10(bounds[0]), math.log10(bounds[1])
    ls = np.linspace(lo, hi, grid_points)
    lc = np.linspace(lo, hi, grid_points)
    step = (hi - lo) / (grid_points - 1)
    kw = dict(t_ref=t_ref, sign=sign)

    def evaluate(ls_axis, lc_axis):
        S, C = np.meshgrid(ls_axis, lc_axis, indexing="ij")
        nh, nav = predict_steady(points, 10 ** S.ravel(), 10 ** C.ravel(), **kw)
        return S.ravel(), C.ravel(), _objective(points, nh, nav)

    S, C, R = evaluate(ls, lc)
    evaluations = R.size
    finite = R[np.isfinite(R)]
    if finite.size == 0:
        raise UnidentifiableFitError("no admissible candidate on the search grid")
    spread = (finite.max() - finite.min()) / max(abs(finite.max()), 1e-300)
    if finite.size < 2 or spread < FLAT_SPREAD:
        raise UnidentifiableFitError(f"objective is flat over the grid (relative spread {spread:.3g})")
    # argmin returns the first minimum; the grid is ordered by (sigma, chi) ascending
    best = int(np.argmin(R))
    bs, bc, br = S[best], C[best], R[best]
    for _ in range(rounds):
        ls = np.clip(np.linspace(bs - step, bs + step, REFINE_POINTS), lo, hi)
        lc = np.clip(np.linspace(bc - step, bc + step, REFINE_POINTS), lo, hi)
        S, C, R = evaluate(np.unique(ls), np.unique(lc))
        evaluations += R.size
        i = int(np.argmin(R))
        if R[i] < br or (R[i] == br and (S[i], C[i]) < (bs, bc)):
            bs, bc, br = S[i], C[i], R[i]
        step = 2 * step / (REFINE_POINTS - 1)
    sigma, chi = float(10**bs), float(10**bc)
    nh, nav = predict_steady(points, [sigma], [chi], **kw)
    return FitResult(
        sigma_m=sigma,
        chi_m=chi,
        residual=float(br),
        calibration_points=[(pt.n, pt.observed_nh, pt.observed_nav) for pt in points],
        scenario_kind=kind,
        evaluations=evaluations,
        predictions=list(zip(nh[0].tolist(), nav[0].tolist())),
    )


# -- legacy model ------------------------------------------------------------

LEGACY_NAMES = ("alpha_r", "alpha_r_prime", "alpha_b", "tau_h", "tau_av")
LEGACY_BOUNDS = ((1e-9, 1.0), (1e-9, 1.0), (1e-9, 1.0), (1e-1, 1e5), (1e-1, 1e3))
LEGACY_START = (1e-4, 1e-4, 1e-4, 100.0, 2.0)


@dataclass
class LegacyFitResult:
    params: LegacyParams
    residual: float
    calibration_points: list[tuple[int, float, float]]
    rounds: int = 0
    underdetermined: bool = False

    def to_kv(self, prefix: str = "legacy") -> str:
        p = f"{prefix}." if prefix else ""
        vals = dict(zip(LEGACY_NAMES, self.params.as_array()))
        lines = [f"{p}{k} = {v:.12g}" for k, v in vals.items()]
        lines.append(f"{p}residual = {self.residual:.12g}")
        return "\n".join(lines) + "\n"


@njit(cache=True)
def _legacy_rhs(y, n, a_r, a_rp, a_b, t_h, t_av, out):
    n_s, n_h, av_s, av_h, b = y[0], y[1], y[2], y[3], y[4]
    pickup = a_b * n_s * (b - n_h - av_h)
    enc_s = a_r * n_s * (n_s + n)
    enc_h = a_rp * n_h * (n_h + n)
    deliver = n_h / t_h
    out[0] = -pickup - enc_s + deliver + av_s / t_av
    out[1] = pickup - enc_h - deliver + av_h / t_av
    out[2] = enc_s - av_s / t_av
    out[3] = enc_h - av_h / t_av
    out[4] = -deliver


@njit(cache=True)
def _legacy_averages(params, n, b0, steps, start, dt, nh_out, nav_out):
    k1 = np.empty(5)
    k2 = np.empty(5)
    k3 = np.empty(5)
    k4 = np.empty(5)
    tmp = np.empty(5)
    for r in range(params.shape[0]):
        a_r, a_rp, a_b, t_h, t_av = params[r, 0], params[r, 1], params[r, 2], params[r, 3], params[r, 4]
        y = np.zeros(5)
        y[0] = n[r]
        y[4] = b0[r]
        acc_h = 0.0
        acc_av = 0.0
        ok = True
        for k in range(1, steps + 1):
            _legacy_rhs(y, n[r], a_r, a_rp, a_b, t_h, t_av, k1)
            for c in range(5):
                tmp[c] = y[c] + 0.5 * dt * k1[c]
            _legacy_rhs(tmp, n[r], a_r, a_rp, a_b, t_h, t_av, k2)
            for c in range(5):
                tmp[c] = y[c] + 0.5 * dt * k2[c]
            _legacy_rhs(tmp, n[r], a_r, a_rp, a_b, t_h, t_av, k3)
            for c in range(5):
                tmp[c] = y[c] + dt * k3[c]
            _legacy_rhs(tmp, n[r], a_r, a_rp, a_b, t_h, t_av, k4)
            prev_h = y[1]
            prev_av = y[2] + y[3]
            for c in range(5):
                v = y[c] + dt / 6.0 * (k1[c] + 2.0 * k2[c] + 2.0 * k3[c] + k4[c])
                if not math.isfinite(v) or (c < 4 and v < -1e-6 * n[r]):
                    ok = False
                tmp[c] = v if v > 0.0 else 0.0
            if not ok:
                break
            for c in range(5):
                y[c] = tmp[c]
            if k > start:
                # trapezoid rule over [start, steps]
                acc_h += 0.5 * (prev_h + y[1])
                acc_av += 0.5 * (prev_av + y[2] + y[3])
        span = max(steps - start, 1)
        nh_out[r] = acc_h / span if ok else np.nan
        nav_out[r] = acc_av / span if ok else np.nan


def legacy_observables(params, n_robots, b0, horizon, *, dt=1.0, burn_frac=0.2):
    """Time-averaged ``(N_h, N_av)`` of the legacy model after burn-in.

    ``params`` has shape ``(K, 5)``; ``n_robots`` and ``b0`` shape ``(K,)``.
    Rows that blow up or go negative come back as NaN.
    """
    params = np.ascontiguousarray(np.atleast_2d(params), dtype=float)
    K = params.shape[0]
    n = np.broadcast_to(np.asarray(n_robots, dtype=float), (K,)).copy()
    b0 = np.broadcast_to(np.asarray(b0, dtype=float), (K,)).copy()
    steps = int(round(horizon / dt))
    start = int(round(burn_frac * steps))
    nh = np.empty(K)
    nav = np.empty(K)
    _legacy_averages(params, n, b0, steps, start, float(dt), nh, nav)
    return nh, nav


def fit_legacy_params(
    points: list[CalibrationPoint],
    horizon: float,
    *,
    dt: float = 1.0,
    burn_frac: float = 0.2,
    start=LEGACY_START,
    max_rounds: int = 400,
    min_step: float = 1e-7,
    offsets: int = 4,
) -> LegacyFitResult:
    """Fit the five legacy parameters to the same calibration data.

    Deterministic pattern search in log space: every round probes
    ``offsets`` points each side of the incumbent along every axis, moves to
    the best improving probe, and halves the step when none improves.
    """
    points = list(points)
    n_obs = 2 * len(points)
    under = n_obs < len(LEGACY_NAMES)
    if under:
        warnings.warn(
            f"{len(LEGACY_NAMES)} legacy parameters but only {n_obs} observations",
            UnderdeterminedFitWarning,
            stacklevel=2,
        )
    if not points:
        raise ConfigError("no calibration points")
    lo = np.log10([b[0] for b in LEGACY_BOUNDS])
    hi = np.log10([b[1] for b in LEGACY_BOUNDS])
    P = len(points)
    n = np.array([pt.n for pt in points], dtype=float)
    b0 = np.array([pt.scenario.total_blocks for pt in points], dtype=float)

    def residuals(logp):
        logp = np.atleast_2d(logp)
        K = logp.shape[0]
        params = np.repeat(10**logp, P, axis=0)
        nh, nav = legacy_observables(params, np.tile(n, K), np.tile(b0, K), horizon, dt=dt, burn_frac=burn_frac)
        return _objective(points, nh.reshape(K, P), nav.reshape(K, P))

    x = np.clip(np.log10(np.asarray(start, dtype=float)), lo, hi)
    fx = float(residuals(x)[0])
    step = np.full(5, 1.0)
    rounds = 0
    frac = np.concatenate([-np.arange(offsets, 0, -1), np.arange(1, offsets + 1)]) / offsets
    for rounds in range(1, max_rounds + 1):
        cands = []
        for a in range(5):
            for f_ in frac:
                c = x.copy()
                c[a] = np.clip(c[a] + f_ * step[a], lo[a], hi[a])
                cands.append(c)
        cands = np.array(cands)
        r = residuals(cands)
        i = int(np.argmin(r))
        if r[i] < fx:
            x, fx = cands[i], float(r[i])
        else:
            step /= 2
        if step.max() < min_step or fx < 1e-14:
            break
    return LegacyFitResult(
        params=LegacyParams(*(10**x)),
        residual=fx,
        calibration_points=[(pt.n, pt.observed_nh, pt.observed_nav) for pt in points],
        rounds=rounds,
        underdetermined=under,
    )

