import math

import numpy as np
import pytest

from swarmforage import _kernel as K
from swarmforage.analytic import congestion_shortening, derive_params
from swarmforage.errors import ConfigError, InsufficientHorizonWarning
from swarmforage.microsim import (
    LEGAL_TRANSITIONS,
    SimConfig,
    SimWorld,
    TimeSeries,
    measure_single_robot,
    nest_target_choice,
    run,
    run_manifest,
    simulate_replicate,
    step,
    steady_stats,
)
from swarmforage.scenario import KINDS, make_density_scenario, make_scenario


@pytest.fixture(scope="module")
def ss10():
    return make_density_scenario("SS", 10, 0.01, seed=3)


def _empty_floor(world):
    world.head[:] = -1
    world.bcell[:] = -1


class TestStep:
    def test_lone_robot_without_blocks(self):
        s = make_density_scenario("RN", 1, 0.05, seed=0)
        w = SimWorld(s, seed=5)
        _empty_floor(w)
        w.advance(20_000)
        assert w.occupancy[K.HOMING] == 0 and w.occupancy[K.AVOID_HOMING] == 0
        assert w.counters[K.C_EPISODES] > 0
        assert w.counters[K.C_EPISODES] == w.counters[K.C_EPISODES_WALL]

    def test_pickup_on_block(self, ss10):
        w = SimWorld(ss10, seed=1)
        b = 0
        w.px[0], w.py[0] = w.bx[b], w.by[b]
        w.hd[0] = 0.0
        # park the other robots in the nest so nothing triggers avoidance
        before = w.block_total
        step(w)
        assert w.st[0] == K.HOMING
        assert w.carry[0] == b
        assert w.block_total == before
        assert w.robots[0].carried_block == b
        assert w.robots[0].nest_target is not None

    def test_blocks_conserved_long_run(self, ss10):
        w = SimWorld(ss10, seed=2)
        for _ in range(10):
            w.advance(1000)
            assert w.block_total == ss10.total_blocks
        assert w.clock == pytest.approx(10_000 * 0.2)

    def test_step_matches_advance(self, ss10):
        a = SimWorld(ss10, seed=9)
        b = SimWorld(ss10, seed=9)
        a.advance(300)
        for _ in range(300):
            step(b)
        assert np.array_equal(a.px, b.px) and np.array_equal(a.st, b.st)

    def test_robot_view_invariants(self, ss10):
        w = SimWorld(ss10, seed=4)
        for _ in range(40):
            w.advance(250)
            for r in w.robots:
                assert (r.state in ("Homing", "AvoidingWhileHoming")) == (r.carried_block is not None)
                assert (r.avoidance_timer > 0) == r.state.startswith("Avoiding")
                assert 0 <= r.position[0] <= ss10.arena.width
                assert 0 <= r.position[1] <= ss10.arena.height


class TestNestTarget:
    def test_endpoints(self):
        e, c = (1.0, 2.0), (3.0, 2.0)
        assert np.allclose(nest_target_choice(e, c, u=0.0), e)
        assert np.allclose(nest_target_choice(e, c, u=1.0), c)
        assert np.allclose(nest_target_choice(e, c, u=0.25), (1.5, 2.0))

    def test_rng_draw_in_segment(self):
        rng = np.random.default_rng(0)
        pts = np.array([nest_target_choice((0.0, 0.0), (1.0, 1.0), rng) for _ in range(100)])
        assert np.allclose(pts[:, 0], pts[:, 1])
        assert pts.min() >= 0 and pts.max() <= 1

    @pytest.mark.xfail(
        strict=True,
        reason="a uniform fraction of an entry-to-center segment shortens the path by at most "
        "0.354 L on average, below 0.95 d_cr = 0.363 L for any entry distribution",
    )
    def test_mean_shortening_matches_d_cr(self):
        s = make_density_scenario("RN", 20, 0.02, seed=1)
        w = SimWorld(s, seed=3)
        nx, ny = s.arena.nest_center
        half = s.arena.nest_side / 2
        short = []
        for _ in range(400):
            w.advance(25)
            homing = np.flatnonzero((w.st == K.HOMING) | (w.st == K.AVOID_HOMING))
            for i in homing:
                dx, dy = w.tx[i] - nx, w.ty[i] - ny
                m = max(abs(dx), abs(dy))
                if m == 0:
                    continue
                # the entry point sits on the nest boundary along the same ray
                ex, ey = nx + dx * half / m, ny + dy * half / m
                short.append(math.hypot(w.tx[i] - ex, w.ty[i] - ey))
        assert len(short) > 200
        assert np.mean(short) == pytest.approx(congestion_shortening(s.arena.nest_side), rel=0.05)


class TestRun:
    def test_same_seed_identical(self, ss10):
        a = run(ss10, 2000, replicates=2, seed=7)
        b = run(ss10, 2000, replicates=2, seed=7)
        for x, y in zip(a, b):
            assert x.to_csv() == y.to_csv()
        assert a[0].to_csv() != a[1].to_csv()

    def test_rejects_zero_robots(self, ss10):
        with pytest.raises(ConfigError):
            run(ss10.with_robots(0), 1000)

    def test_rejects_bad_budget(self, ss10):
        with pytest.raises(ConfigError):
            run(ss10, 1000, replicates=0)
        with pytest.raises(ConfigError):
            run(ss10, 1.0)

    def test_single_robot_collection_slope(self):
        s = make_density_scenario("RN", 1, 0.01, seed=0)
        ts = run(s, 40_000, replicates=2, seed=1)
        cal = measure_single_robot(s, 40_000, seed=2)
        mp = derive_params(s, 1.0, 1.0, cal.tau_av, cal.alpha_r1, cal.n_av1)
        predicted = 1.0 / (mp.tau_h1 + 1.0 / mp.alpha_b)
        for x in ts:
            keep = x.times >= 8000
            slope = np.polyfit(x.times[keep], x.collected_cum[keep], 1)[0]
            assert slope > 0
            assert 0.1 < slope / predicted < 10
            # and roughly linear: both halves collect at similar rates
            mid = keep.sum() // 2
            t, c = x.times[keep], x.collected_cum[keep]
            r1 = (c[mid] - c[0]) / (t[mid] - t[0])
            r2 = (c[-1] - c[mid]) / (t[-1] - t[mid])
            assert r2 == pytest.approx(r1, rel=0.35)

    def test_timeseries_invariants(self, ss10):
        for x in run(ss10, 4000, replicates=2, seed=3):
            total = x.n_s + x.n_h + x.n_av_s + x.n_av_h
            assert np.all(total == 10)
            assert np.all(np.diff(x.collected_cum) >= 0)
            assert x.times[1] == pytest.approx(50 * 0.2)

    def test_csv_and_manifest(self, ss10):
        series = run(ss10, 1000, replicates=2, seed=11)
        head = series[0].to_csv().splitlines()[0]
        assert head == "t,n_s,n_h,n_av_s,n_av_h,collected_cum"
        man = run_manifest(ss10, 1000, 11, series)
        assert "seed = 11" in man and f"scenario_hash = {ss10.digest()}" in man
        assert f"replicate.1.seed = {series[1].meta['replicate_seed']}" in man

    def test_parallel_matches_serial(self, ss10):
        a = run(ss10, 1000, replicates=3, seed=5)
        b = run(ss10, 1000, replicates=3, seed=5, workers=2)
        assert [x.to_csv() for x in a] == [x.to_csv() for x in b]


class TestSingleRobot:
    def test_avoid_time_and_occupancy(self):
        s = make_density_scenario("SS", 10, 0.01, seed=0)
        cal = measure_single_robot(s, 50_000, seed=1)
        assert cal.episodes > 50
        assert cal.tau_av == pytest.approx(2.0, rel=0.01)
        assert cal.n_av1 == pytest.approx(cal.tau_av * cal.alpha_r1, rel=0.05)
        assert 0 <= cal.n_av1 <= 1

    def test_larger_arena_fewer_walls(self):
        small = make_density_scenario("RN", 1, 0.02, seed=0)
        large = make_density_scenario("RN", 1, 0.002, seed=0)
        a = measure_single_robot(small, 50_000, seed=1)
        b = measure_single_robot(large, 50_000, seed=1)
        assert b.alpha_r1 < a.alpha_r1

    def test_short_horizon_warns(self):
        s = make_density_scenario("RN", 1, 0.0001, seed=0)
        with pytest.warns(InsufficientHorizonWarning):
            cal = measure_single_robot(s, 1.0, seed=0)
        assert cal.tau_av == SimConfig().avoid_time


class TestSteadyStats:
    def test_identical_replicates_zero_width(self, ss10):
        one = simulate_replicate(ss10, 4000, seed=1)
        st = steady_stats([one, one, one])
        q = st["n_h"]
        assert q.lo == q.mean == q.hi

    def test_means_sum_to_n(self, ss10):
        st = steady_stats(run(ss10, 4000, replicates=3, seed=2))
        total = st["n_s"].mean + st["n_h"].mean + st["n_av"].mean
        assert total == pytest.approx(10, abs=1e-12)

    def test_flow_balance(self, ss10):
        series = run(ss10, 20_000, replicates=4, seed=6)
        st = steady_stats(series)
        trip = np.mean([x.meta["mean_trip_time"] for x in series])
        assert st["collection_rate"].mean * trip == pytest.approx(st["n_h"].mean, rel=0.1)

    def test_burn_in_validation(self, ss10):
        series = run(ss10, 1000, replicates=2, seed=2)
        with pytest.raises(ConfigError):
            steady_stats(series, burn_in=5000)

    def test_trend_flag(self):
        t = np.arange(0, 1001, 10.0)
        ramp = np.linspace(0, 8, t.size).round()
        ts = TimeSeries(t, 10 - ramp, ramp, np.zeros_like(t), np.zeros_like(t), np.zeros_like(t))
        st = steady_stats([ts, ts])
        assert "n_h" in st.nonstationary


@pytest.mark.parametrize("kind", KINDS)
def test_conservation_suite_short(kind):
    s = make_scenario(kind, (20.0, 20.0) if kind in ("RN", "PL") else (28.0, 14.0), 8, 150, seed=4)
    w = SimWorld(s, seed=1, max_samples=100)
    w.advance(2000)
    assert w.block_total == s.total_blocks
    assert set(map(tuple, np.argwhere(w.transitions))) <= LEGAL_TRANSITIONS
    assert w.illegal_transitions() == []
