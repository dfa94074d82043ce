"""Agent-based 2D kinematic simulator of the foraging state machine.

Robots perform a correlated random walk while searching, pick up a block when
their center passes over its footprint, head straight for a drop point inside
the nest, and re-enter search after redistributing the block into a cluster.
Any robot or approached wall within sensing range starts a fixed-length
avoidance maneuver in the current context (searching or homing).

Each replicate is deterministic given its seed: all randomness is drawn in
chunks from a numpy ``Generator`` and handed to the compiled kernel.
"""

from __future__ import annotations

import io
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats as sps

from . import _kernel as K
from .errors import ConfigError, InsufficientHorizonWarning
from .scenario import Scenario, apportion, distributable_area

log = logging.getLogger(__name__)

STATE_NAMES = ("Searching", "Homing", "AvoidingWhileSearching", "AvoidingWhileHoming")
LEGAL_TRANSITIONS = frozenset({(0, 1), (1, 0), (0, 2), (2, 0), (1, 3), (3, 1)})
N_UNIFORMS = 7


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.2
    body_radius: float = 0.15
    sensing_radius: float = 0.3
    avoid_time: float = 2.0
    footprint: float = 0.2
    sample_stride: int = 50
    chunk_steps: int = 2000

    @property
    def avoid_steps(self) -> int:
        return max(1, int(round(self.avoid_time / self.dt)))


@dataclass
class Robot:
    position: tuple[float, float]
    heading: float
    state: str
    carried_block: int | None
    avoidance_timer: float
    nest_target: tuple[float, float] | None


@dataclass
class TimeSeries:
    times: np.ndarray
    n_s: np.ndarray
    n_h: np.ndarray
    n_av_s: np.ndarray
    n_av_h: np.ndarray
    collected_cum: np.ndarray
    replicate_id: int = 0
    seed: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def n_av(self) -> np.ndarray:
        return self.n_av_s + self.n_av_h

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("t,n_s,n_h,n_av_s,n_av_h,collected_cum\n")
        for row in zip(self.times, self.n_s, self.n_h, self.n_av_s, self.n_av_h, self.collected_cum):
            buf.write(f"{row[0]:.6f},{row[1]},{row[2]},{row[3]},{row[4]},{row[5]}\n")
        return buf.getvalue()


class SimWorld:
    """Mutable simulation state for one replicate."""

    def __init__(self, scenario: Scenario, seed: int = 0, config: SimConfig | None = None, *, max_samples=None):
        self.scenario = scenario
        self.config = cfg = config or SimConfig()
        self.rng_seed = int(seed)
        self.rng = np.random.default_rng(np.random.SeedSequence(self.rng_seed))
        rng = self.rng
        a = scenario.arena
        n = scenario.robot_count
        self.step_count = 0

        # robots start spread over the nest with random headings
        nx, ny = a.nest_center
        half = a.nest_side / 2
        lo_x, hi_x = max(nx - half, cfg.body_radius), min(nx + half, a.width - cfg.body_radius)
        lo_y, hi_y = max(ny - half, cfg.body_radius), min(ny + half, a.height - cfg.body_radius)
        self.px = lo_x + rng.random(n) * (hi_x - lo_x)
        self.py = lo_y + rng.random(n) * (hi_y - lo_y)
        self.hd = rng.random(n) * 2 * math.pi - math.pi
        self.st = np.zeros(n, dtype=np.int64)
        self.carry = np.full(n, -1, dtype=np.int64)
        self.timer = np.zeros(n, dtype=np.int64)
        self.tx = np.zeros(n)
        self.ty = np.zeros(n)
        self.trip_start = np.zeros(n, dtype=np.int64)

        # blocks: exactly the configured count per cluster
        clusters = np.array([c.bounds for c in scenario.clusters], dtype=float)
        counts = apportion(scenario.total_blocks, [c.block_count for c in scenario.clusters]) if any(
            c.block_count for c in scenario.clusters
        ) else apportion(scenario.total_blocks, [c.area for c in scenario.clusters])
        cluster_of = np.repeat(np.arange(len(counts)), counts)
        nb = scenario.total_blocks
        u = rng.random((nb, 2))
        self.bx = clusters[cluster_of, 0] + u[:, 0] * (clusters[cluster_of, 2] - clusters[cluster_of, 0])
        self.by = clusters[cluster_of, 1] + u[:, 1] * (clusters[cluster_of, 3] - clusters[cluster_of, 1])
        self.clusters = clusters
        ad = distributable_area(scenario)
        w = np.array([c.area / ad for c in scenario.clusters])
        self.cum_w = np.cumsum(w)
        self.cum_w[-1] = 1.0

        cs = cfg.footprint
        self.ncx = max(1, int(math.ceil(a.width / cs)))
        self.ncy = max(1, int(math.ceil(a.height / cs)))
        self.head = np.full(self.ncx * self.ncy, -1, dtype=np.int64)
        self.bcell = np.full(nb, -1, dtype=np.int64)
        self.bnext = np.full(nb, -1, dtype=np.int64)
        self.bprev = np.full(nb, -1, dtype=np.int64)
        for b in range(nb):
            K.grid_insert(b, self.bx, self.by, self.bcell, self.bnext, self.bprev, self.head, cs, self.ncx, self.ncy)

        self.geom = np.array(
            [
                a.width,
                a.height,
                nx,
                ny,
                half,
                scenario.search_speed,
                scenario.homing_speed,
                scenario.crw_half_angle,
                cfg.dt,
                cfg.body_radius,
                cfg.sensing_radius,
                cfg.avoid_steps,
                cs,
                self.ncx,
                self.ncy,
                cfg.footprint / 2,
            ]
        )
        self.counters = np.zeros(K.N_COUNTERS, dtype=np.int64)
        self.occupancy = np.zeros(4, dtype=np.int64)
        self.transitions = np.zeros((4, 4), dtype=np.int64)
        cap = 1 if max_samples is None else max_samples
        self.out_counts = np.zeros((cap, 4), dtype=np.int64)
        self.out_collected = np.zeros(cap, dtype=np.int64)
        self.out_steps = np.zeros(cap, dtype=np.int64)
        self.n_out = 0

    # -- inspection ---------------------------------------------------------

    @property
    def clock(self) -> float:
        return self.step_count * self.config.dt

    @property
    def robots(self) -> list[Robot]:
        out = []
        for i in range(self.scenario.robot_count):
            s = int(self.st[i])
            homing = s in (K.HOMING, K.AVOID_HOMING)
            out.append(
                Robot(
                    position=(float(self.px[i]), float(self.py[i])),
                    heading=float(self.hd[i]),
                    state=STATE_NAMES[s],
                    carried_block=int(self.carry[i]) if self.carry[i] >= 0 else None,
                    avoidance_timer=float(self.timer[i]) * self.config.dt,
                    nest_target=(float(self.tx[i]), float(self.ty[i])) if homing else None,
                )
            )
        return out

    @property
    def blocks(self) -> np.ndarray:
        """Positions of blocks lying on the floor."""
        on_floor = self.bcell >= 0
        return np.column_stack([self.bx[on_floor], self.by[on_floor]])

    @property
    def block_total(self) -> int:
        return int((self.bcell >= 0).sum() + (self.carry >= 0).sum())

    def state_counts(self) -> np.ndarray:
        return np.bincount(self.st, minlength=4)

    # -- dynamics -----------------------------------------------------------

    def advance(self, n_steps: int) -> SimWorld:
        cfg = self.config
        done = 0
        while done < n_steps:
            m = min(cfg.chunk_steps, n_steps - done)
            rand = self.rng.random((m, self.scenario.robot_count, N_UNIFORMS))
            self.n_out = K.run_steps(
                m,
                self.step_count,
                rand,
                self.px,
                self.py,
                self.hd,
                self.st,
                self.carry,
                self.timer,
                self.tx,
                self.ty,
                self.trip_start,
                self.bx,
                self.by,
                self.bcell,
                self.bnext,
                self.bprev,
                self.head,
                self.clusters,
                self.cum_w,
                self.geom,
                self.counters,
                self.occupancy,
                self.transitions,
                cfg.sample_stride,
                self.out_counts,
                self.out_collected,
                self.out_steps,
                self.n_out,
            )
            self.step_count += m
            done += m
        return self

    def step(self) -> SimWorld:
        return self.advance(1)

    def illegal_transitions(self) -> list[tuple[str, str]]:
        bad = []
        for a, b in zip(*np.nonzero(self.transitions)):
            if (int(a), int(b)) not in LEGAL_TRANSITIONS:
                bad.append((STATE_NAMES[a], STATE_NAMES[b]))
        return bad


def step(world: SimWorld) -> SimWorld:
    """Advance ``world`` by one control period (in place) and return it."""
    return world.step()


def nest_target_choice(entry, center, rng=None, u: float | None = None) -> np.ndarray:
    """Drop point a uniform fraction of the way from the nest entry to its center."""
    if u is None:
        rng = rng if rng is not None else np.random.default_rng()
        u = rng.random()
    entry = np.asarray(entry, dtype=float)
    center = np.asarray(center, dtype=float)
    return entry + u * (center - entry)


def replicate_seed(seed: int, replicate: int) -> int:
    """64-bit seed for one replicate, derived from the base seed."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=(int(replicate),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def simulate_replicate(s: Scenario, horizon: float, seed: int, replicate: int = 0, config: SimConfig | None = None):
    cfg = config or SimConfig()
    n_steps = int(round(horizon / cfg.dt))
    rseed = replicate_seed(seed, replicate)
    world = SimWorld(s, rseed, cfg, max_samples=n_steps // cfg.sample_stride + 1)
    counts0 = world.state_counts()
    world.advance(n_steps)
    n = world.n_out
    steps = np.concatenate([[0], world.out_steps[:n]])
    counts = np.vstack([counts0, world.out_counts[:n]])
    collected = np.concatenate([[0], world.out_collected[:n]])
    c = world.counters
    meta = {
        "replicate_seed": rseed,
        "episodes": int(c[K.C_EPISODES]),
        "episodes_wall": int(c[K.C_EPISODES_WALL]),
        "episodes_robot": int(c[K.C_EPISODES_ROBOT]),
        "episodes_done": int(c[K.C_EPISODES_DONE]),
        "avoid_robot_steps": int(c[K.C_EPISODE_STEPS]),
        "trips": int(c[K.C_TRIPS]),
        "mean_trip_time": float(c[K.C_TRIP_STEPS]) * cfg.dt / c[K.C_TRIPS] if c[K.C_TRIPS] else math.nan,
        "occupancy": world.occupancy.tolist(),
        "transitions": world.transitions.tolist(),
        "block_total": world.block_total,
        "steps": n_steps,
    }
    return TimeSeries(
        times=steps * cfg.dt,
        n_s=counts[:, 0],
        n_h=counts[:, 1],
        n_av_s=counts[:, 2],
        n_av_h=counts[:, 3],
        collected_cum=collected,
        replicate_id=replicate,
        seed=int(seed),
        meta=meta,
    )


def _replicate_task(args):
    return simulate_replicate(*args)


def run(
    s: Scenario,
    horizon: float,
    replicates: int = 1,
    seed: int = 0,
    config: SimConfig | None = None,
    workers: int = 1,
) -> list[TimeSeries]:
    """Simulate independent replicates; replicate ``r`` uses ``replicate_seed(seed, r)``."""
    cfg = config or SimConfig()
    if s.robot_count < 1:
        raise ConfigError("need at least one robot")
    if replicates < 1:
        raise ConfigError("replicates must be >= 1")
    if horizon < cfg.dt * cfg.sample_stride:
        raise ConfigError("horizon shorter than one sampling interval")
    tasks = [(s, horizon, seed, r, cfg) for r in range(replicates)]
    if workers > 1 and replicates > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            out = list(pool.map(_replicate_task, tasks))
    else:
        out = [_replicate_task(t) for t in tasks]
    return sorted(out, key=lambda ts: ts.replicate_id)


def run_manifest(s: Scenario, horizon: float, seed: int, series: list[TimeSeries], config: SimConfig | None = None) -> str:
    cfg = config or SimConfig()
    lines = [
        f"seed = {seed}",
        f"scenario_hash = {s.digest()}",
        f"kind = {s.kind}",
        f"robots = {s.robot_count}",
        f"blocks = {s.total_blocks}",
        f"horizon = {horizon:g}",
        f"dt = {cfg.dt:g}",
        f"replicates = {len(series)}",
        f"body_radius = {cfg.body_radius:g}",
        f"sensing_radius = {cfg.sensing_radius:g}",
        f"avoid_time = {cfg.avoid_time:g}",
        f"sample_stride = {cfg.sample_stride}",
    ]
    lines += [f"replicate.{ts.replicate_id}.seed = {ts.meta.get('replicate_seed')}" for ts in series]
    return "\n".join(lines) + "\n"


# -- single-robot calibration ------------------------------------------------


@dataclass(frozen=True)
class SingleRobotCalibration:
    tau_av: float
    alpha_r1: float
    n_av1: float
    episodes: int = 0
    horizon: float = 0.0


def measure_single_robot(
    s: Scenario, horizon: float, seed: int = 0, config: SimConfig | None = None
) -> SingleRobotCalibration:
    """Avoidance time, wall-encounter rate and avoidance occupancy of a lone robot."""
    cfg = config or SimConfig()
    solo = s.with_robots(1)
    n_steps = int(round(horizon / cfg.dt))
    world = SimWorld(solo, replicate_seed(seed, 0), cfg)
    world.advance(n_steps)
    c = world.counters
    episodes = int(c[K.C_EPISODES])
    done = int(c[K.C_EPISODES_DONE])
    avoid_steps = int(world.occupancy[2] + world.occupancy[3])
    t = n_steps * cfg.dt
    if episodes == 0:
        warnings.warn(
            f"no avoidance episodes in {horizon:g} s; falling back to the configured maneuver time",
            InsufficientHorizonWarning,
            stacklevel=2,
        )
        return SingleRobotCalibration(cfg.avoid_time, 0.0, 0.0, 0, t)
    # exclude the elapsed part of an episode still running at the horizon
    running = int(cfg.avoid_steps - world.timer[0]) if world.st[0] >= K.AVOID_SEARCHING else 0
    tau_av = (avoid_steps - running) * cfg.dt / done if done else avoid_steps * cfg.dt / episodes
    return SingleRobotCalibration(
        tau_av=tau_av,
        alpha_r1=episodes / t,
        n_av1=avoid_steps / n_steps,
        episodes=episodes,
        horizon=t,
    )


# -- steady-state statistics -------------------------------------------------


@dataclass(frozen=True)
class Interval:
    mean: float
    lo: float
    hi: float
    per_replicate: tuple[float, ...] = ()

    def contains(self, x: float) -> bool:
        return self.lo <= x <= self.hi


@dataclass
class SteadyStats:
    quantities: dict[str, Interval]
    n_robots: int
    burn_in: float
    replicates: int
    nonstationary: list[str] = field(default_factory=list)

    def __getitem__(self, key) -> Interval:
        return self.quantities[key]


TREND_THRESHOLD = 0.1


def t_interval(values, confidence: float = 0.95) -> Interval:
    v = np.asarray(values, dtype=float)
    m = float(v.mean())
    if v.size < 2:
        return Interval(m, m, m, tuple(v))
    sd = float(v.std(ddof=1))
    half = float(sps.t.ppf(0.5 + confidence / 2, v.size - 1)) * sd / math.sqrt(v.size)
    return Interval(m, m - half, m + half, tuple(float(x) for x in v))


def steady_stats(series: list[TimeSeries], burn_in: float | None = None, confidence: float = 0.95) -> SteadyStats:
    """Post-burn-in time averages per replicate, then a t-interval across replicates.

    ``burn_in`` defaults to 20% of the horizon.  Quantities whose pooled
    post-burn-in linear trend moves more than 10% of their mean (or of one
    robot, whichever is larger) over the window are listed in
    ``nonstationary``.
    """
    if not series:
        raise ConfigError("no series given")
    horizon = float(series[0].times[-1])
    if burn_in is None:
        burn_in = 0.2 * horizon
    if not burn_in < horizon:
        raise ConfigError("burn_in must be shorter than the horizon")
    per = {k: [] for k in ("n_s", "n_h", "n_av_s", "n_av_h", "n_av", "collection_rate")}
    pooled = {k: [] for k in ("n_s", "n_h", "n_av")}
    n_robots = None
    for ts in series:
        sel = ts.times >= burn_in
        if sel.sum() < 2:
            raise ConfigError("fewer than two samples after burn-in")
        t = ts.times[sel]
        n_robots = int(ts.n_s[0] + ts.n_h[0] + ts.n_av_s[0] + ts.n_av_h[0])
        vals = {
            "n_s": ts.n_s[sel],
            "n_h": ts.n_h[sel],
            "n_av_s": ts.n_av_s[sel],
            "n_av_h": ts.n_av_h[sel],
            "n_av": ts.n_av[sel],
        }
        for k, v in vals.items():
            per[k].append(float(np.mean(v)))
        for k in pooled:
            pooled[k].append((t, vals[k]))
        c = ts.collected_cum[sel]
        per["collection_rate"].append(float(c[-1] - c[0]) / float(t[-1] - t[0]))
    quantities = {k: t_interval(v, confidence) for k, v in per.items()}
    flagged = []
    for k, chunks in pooled.items():
        t = np.concatenate([c[0] for c in chunks])
        v = np.concatenate([c[1] for c in chunks]).astype(float)
        if np.ptp(t) == 0:
            continue
        slope = np.polyfit(t, v, 1)[0]
        drift = abs(slope) * np.ptp(t)
        if drift > TREND_THRESHOLD * max(abs(v.mean()), 1.0):
            flagged.append(k)
    return SteadyStats(quantities, n_robots, burn_in, len(series), flagged)
