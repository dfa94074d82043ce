"""Population ODEs for central-place foraging and a fixed-step RK4 solver.

State vectors are laid out as ``[n_s, n_h, n_av_s, n_av_h, b_1, ..., b_J]``.
The array-level right-hand sides accept an extra leading batch axis so that
many parameter sets can be integrated at once (the fitting code relies on
this).
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .analytic import ModelParams
from .errors import ConfigError, InstabilityError
from .scenario import Scenario, distributable_area

COMPONENTS = ("n_s", "n_h", "n_av_s", "n_av_h")
STEADY_TOL = 1e-9  # times N, on max |dX/dt|
STEADY_WINDOW = 100
NEG_TOL = 1e-9
DEFAULT_DT = 0.5
DEFAULT_HORIZON = 200_000.0


@dataclass(frozen=True)
class OdeState:
    n_s: float
    n_h: float
    n_av_s: float
    n_av_h: float
    b_j: tuple[float, ...] = ()

    @property
    def n_av(self) -> float:
        return self.n_av_s + self.n_av_h

    @property
    def n_robots(self) -> float:
        return self.n_s + self.n_h + self.n_av_s + self.n_av_h

    @property
    def b_total(self) -> float:
        return math.fsum(self.b_j)

    def to_array(self) -> np.ndarray:
        return np.array([self.n_s, self.n_h, self.n_av_s, self.n_av_h, *self.b_j], dtype=float)

    @classmethod
    def from_array(cls, y) -> OdeState:
        y = np.asarray(y, dtype=float)
        return cls(*(float(v) for v in y[:4]), b_j=tuple(float(v) for v in y[4:]))


@dataclass(frozen=True)
class LegacyParams:
    """Free parameters of the finite-block-pool model."""

    alpha_r: float
    alpha_r_prime: float
    alpha_b: float
    tau_h: float
    tau_av: float

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha_r, self.alpha_r_prime, self.alpha_b, self.tau_h, self.tau_av])


@dataclass
class SolveReport:
    times: np.ndarray
    trajectory: np.ndarray  # (samples, 4 + J)
    steady_state: OdeState
    steady_time: float | None
    performance: float = 0.0
    converged: bool = False
    meta: dict = field(default_factory=dict)

    def states(self) -> list[OdeState]:
        return [OdeState.from_array(row) for row in self.trajectory]

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("t,n_s,n_h,n_av_s,n_av_h,b_total\n")
        for t, row in zip(self.times, self.trajectory):
            vals = ",".join(f"{v:.12g}" for v in (*row[:4], row[4:].sum()))
            buf.write(f"{t:.6f},{vals}\n")
        return buf.getvalue()


# -- right-hand sides --------------------------------------------------------


def generalized_rhs_array(y, alpha_b, alpha_r, tau_h, tau_av, weights):
    """Array form of the generalized model.

    ``alpha_b`` etc. broadcast against the batch axis of ``y``; ``weights`` are
    the area fractions ``A_j / A_d`` (shape ``(J,)`` or ``(batch, J)``).
    The robot-encounter flow ``alpha_r`` is split between the searching and
    homing contexts in proportion to their occupancy, so the avoidance pools
    receive exactly what leaves the moving states.
    """
    y = np.asarray(y, dtype=float)
    n_s, n_h, av_s, av_h = y[..., 0], y[..., 1], y[..., 2], y[..., 3]
    moving = n_s + n_h
    with np.errstate(invalid="ignore", divide="ignore"):
        frac_s = np.where(moving > 0, n_s / moving, 0.5)
    enc_s = alpha_r * frac_s
    enc_h = alpha_r - enc_s
    deliver = n_h / tau_h
    dy = np.empty_like(y)
    dy[..., 0] = -alpha_b - enc_s + deliver + av_s / tau_av
    dy[..., 1] = alpha_b - enc_h - deliver + av_h / tau_av
    dy[..., 2] = enc_s - av_s / tau_av
    dy[..., 3] = enc_h - av_h / tau_av
    if y.shape[-1] > 4:
        dy[..., 4:] = np.asarray(deliver - alpha_b)[..., None] * weights
    return dy


def generalized_rhs(state: OdeState, params: ModelParams, s: Scenario) -> OdeState:
    w = area_weights(s)
    dy = generalized_rhs_array(state.to_array(), params.alpha_b, params.alpha_r, params.tau_h, params.tau_av, w)
    return OdeState.from_array(dy)


def legacy_rhs_array(y, n_robots, alpha_r, alpha_rp, alpha_b, tau_h, tau_av):
    """Finite-block-pool model.

    The printed avoidance equation feeds the searching-context pool from the
    homing encounter term; here each avoidance pool is fed by its own
    context's encounter term so robots are conserved.
    """
    y = np.asarray(y, dtype=float)
    n_s, n_h, av_s, av_h = y[..., 0], y[..., 1], y[..., 2], y[..., 3]
    b = y[..., 4:].sum(axis=-1)
    pickup = alpha_b * n_s * (b - n_h - av_h)
    enc_s = alpha_r * n_s * (n_s + n_robots)
    enc_h = alpha_rp * n_h * (n_h + n_robots)
    deliver = n_h / tau_h
    dy = np.empty_like(y)
    dy[..., 0] = -pickup - enc_s + deliver + av_s / tau_av
    dy[..., 1] = pickup - enc_h - deliver + av_h / tau_av
    dy[..., 2] = enc_s - av_s / tau_av
    dy[..., 3] = enc_h - av_h / tau_av
    if y.shape[-1] > 4:
        dy[..., 4] = -deliver
        dy[..., 5:] = 0.0
    return dy


def legacy_rhs(state: OdeState, legacy: LegacyParams, s: Scenario) -> OdeState:
    y = state.to_array()
    dy = legacy_rhs_array(y, s.robot_count, *legacy.as_array())
    return OdeState.from_array(dy)


def area_weights(s: Scenario) -> np.ndarray:
    ad = distributable_area(s)
    return np.array([c.area / ad for c in s.clusters])


# -- integration -------------------------------------------------------------


def _rk4_step(f, y, dt):
    k1 = f(y)
    k2 = f(y + 0.5 * dt * k1)
    k3 = f(y + 0.5 * dt * k2)
    k4 = f(y + dt * k3)
    return y + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4), k1


def integrate(
    rhs: Callable[[np.ndarray], np.ndarray],
    initial,
    dt: float = DEFAULT_DT,
    horizon: float = DEFAULT_HORIZON,
    *,
    stride: int = 100,
    n_robots: float | None = None,
    stop_at_steady: bool = True,
    check_blocks: bool = True,
) -> SolveReport:
    """Fixed-step RK4 integration of ``rhs`` (array in, array out).

    Steady state is declared once ``max |dX/dt| < 1e-9 N`` has held for 100
    consecutive steps.  Negative excursions down to ``-1e-9`` are clamped to
    zero; anything further, any non-finite value, or a component above
    ``10 N`` raises :class:`InstabilityError`.
    """
    if dt <= 0:
        raise ConfigError("dt must be positive")
    if horizon < dt:
        raise ConfigError("horizon must be at least one step")
    y = initial.to_array() if isinstance(initial, OdeState) else np.asarray(initial, dtype=float).copy()
    if n_robots is None:
        n_robots = float(y[:4].sum())
    cap = np.full(y.shape, 10.0 * n_robots)
    cap[4:] = 10.0 * (y[4:].sum() + n_robots)
    names = list(COMPONENTS) + [f"b_{j}" for j in range(len(y) - 4)]
    tol = STEADY_TOL * n_robots
    n_steps = int(round(horizon / dt))
    times, rows = [0.0], [y.copy()]
    quiet = 0
    steady_time = None
    t = 0.0
    for k in range(1, n_steps + 1):
        y_new, dy = _rk4_step(rhs, y, dt)
        quiet = quiet + 1 if np.max(np.abs(dy)) < tol else 0
        t = k * dt
        _check_state(y_new, cap, names, t, check_blocks)
        y = np.where(y_new < 0, 0.0, y_new)
        if k % stride == 0:
            times.append(t)
            rows.append(y.copy())
        if quiet >= STEADY_WINDOW and steady_time is None:
            steady_time = t
            if stop_at_steady:
                break
    if times[-1] != t:
        times.append(t)
        rows.append(y.copy())
    return SolveReport(
        times=np.array(times),
        trajectory=np.array(rows),
        steady_state=OdeState.from_array(y),
        steady_time=steady_time,
        converged=steady_time is not None,
    )


def _check_state(y, cap, names, t, check_blocks):
    if not np.all(np.isfinite(y)):
        bad = int(np.flatnonzero(~np.isfinite(y))[0])
        raise InstabilityError(f"{names[bad]} became non-finite at t={t:g}", names[bad], t)
    limit = len(y) if check_blocks else 4
    over = np.flatnonzero(y[:limit] > cap[:limit])
    if over.size:
        raise InstabilityError(f"{names[over[0]]} diverged at t={t:g}", names[over[0]], t)
    under = np.flatnonzero(y[:limit] < -NEG_TOL)
    if under.size:
        raise InstabilityError(
            f"{names[under[0]]} went negative ({y[under[0]]:.3g}) at t={t:g}", names[under[0]], t
        )


def initial_state(s: Scenario) -> OdeState:
    """All robots searching; clusters hold their configured blocks."""
    return OdeState(float(s.robot_count), 0.0, 0.0, 0.0, tuple(float(c.block_count) for c in s.clusters))


def predict_performance(params: ModelParams, mu_h: float = 1.0) -> float:
    """Steady block-collection rate ``alpha_b / mu_h``."""
    if not mu_h > 0:
        raise ConfigError("mu_h must be positive")
    return params.alpha_b / mu_h


def solve_generalized(
    params: ModelParams,
    s: Scenario,
    dt: float = DEFAULT_DT,
    horizon: float = DEFAULT_HORIZON,
    *,
    stride: int = 100,
    mu_h: float = 1.0,
) -> SolveReport:
    w = area_weights(s)

    def rhs(y):
        return generalized_rhs_array(y, params.alpha_b, params.alpha_r, params.tau_h, params.tau_av, w)

    rep = integrate(rhs, initial_state(s), dt, horizon, stride=stride, n_robots=s.robot_count)
    rep.performance = predict_performance(params, mu_h)
    return rep


def solve_legacy(
    legacy: LegacyParams,
    s: Scenario,
    dt: float = DEFAULT_DT,
    horizon: float = DEFAULT_HORIZON,
    *,
    stride: int = 100,
) -> SolveReport:
    n = s.robot_count
    init = OdeState(float(n), 0.0, 0.0, 0.0, (float(s.total_blocks),))

    def rhs(y):
        return legacy_rhs_array(y, n, *legacy.as_array())

    rep = integrate(rhs, init, dt, horizon, stride=stride, n_robots=n, stop_at_steady=False)
    return rep


# -- batched solvers used by the fitting code --------------------------------


def steady_generalized_batch(alpha_b, alpha_r, tau_h, tau_av, n_robots, b0, dt=DEFAULT_DT, horizon=DEFAULT_HORIZON):
    """Integrate many generalized-model instances to steady state.

    Every argument is a 1-D array of equal length.  Blocks are tracked as a
    single total (the per-cluster split does not feed back).  Returns
    ``(y, ok)`` where rows with ``ok == False`` either left the admissible
    region or failed to settle within ``horizon``.
    """
    alpha_b, alpha_r, tau_h, tau_av, n_robots, b0 = (
        np.asarray(v, dtype=float) for v in (alpha_b, alpha_r, tau_h, tau_av, n_robots, b0)
    )
    K = alpha_b.size
    y = np.zeros((K, 5))
    y[:, 0] = n_robots
    y[:, 4] = b0
    ok = np.ones(K, dtype=bool)
    done = np.zeros(K, dtype=bool)
    quiet = np.zeros(K, dtype=int)
    tol = STEADY_TOL * n_robots
    cap = 10.0 * n_robots
    one = np.ones(1)
    active = np.arange(K)
    for _ in range(int(round(horizon / dt))):
        if active.size == 0:
            break
        ab, ar, th, ta = alpha_b[active], alpha_r[active], tau_h[active], tau_av[active]

        def f(z):
            return generalized_rhs_array(z, ab, ar, th, ta, one)

        y_new, dy = _rk4_step(f, y[active], dt)
        small = np.max(np.abs(dy), axis=1) < tol[active]
        quiet[active] = np.where(small, quiet[active] + 1, 0)
        robots = y_new[:, :4]
        bad = ~np.all(np.isfinite(y_new), axis=1) | np.any(robots < -NEG_TOL, axis=1)
        bad |= np.any(robots > cap[active, None], axis=1)
        y[active] = np.where(y_new < 0, 0.0, y_new)
        ok[active[bad]] = False
        finished = quiet[active] >= STEADY_WINDOW
        done[active[finished]] = True
        active = active[~(bad | finished)]
    ok &= done
    return y, ok
