import math
import warnings

import numpy as np
import pytest

import swarmforage.fit as fitmod
from swarmforage.errors import UnderdeterminedFitWarning, UnidentifiableFitError
from swarmforage.fit import (
    CalibrationPoint,
    CharacterizationTable,
    FitResult,
    fit_characterizations,
    fit_legacy_params,
    legacy_observables,
    predict_steady,
)
from swarmforage.microsim import SingleRobotCalibration
from swarmforage.scenario import make_density_scenario

SINGLE = SingleRobotCalibration(tau_av=2.0, alpha_r1=0.005, n_av1=0.01)


def _synthetic(kind, sigma, chi, sizes=(5, 10, 20)):
    scen = [make_density_scenario(kind, n, 0.01, seed=1) for n in sizes]
    blank = [CalibrationPoint(s, 0.0, 0.0, SINGLE) for s in scen]
    nh, nav = predict_steady(blank, [sigma], [chi])
    return [CalibrationPoint(s, nh[0, i], nav[0, i], SINGLE) for i, s in enumerate(scen)]


@pytest.fixture(scope="module")
def off_grid_points():
    return _synthetic("SS", 2.5, 0.4)


def test_recovers_off_grid_parameters(off_grid_points):
    fr = fit_characterizations("SS", off_grid_points)
    # three refinement rounds leave a log10 resolution of 0.1 / 125
    assert fr.sigma_m == pytest.approx(2.5, rel=0.01)
    assert fr.chi_m == pytest.approx(0.4, rel=0.01)
    assert fr.residual < 1e-6
    assert fr.scenario_kind == "SS"
    assert [p[0] for p in fr.calibration_points] == [5, 10, 20]


def test_deterministic(off_grid_points):
    a = fit_characterizations("SS", off_grid_points, grid_points=21)
    b = fit_characterizations("SS", off_grid_points, grid_points=21)
    assert a == b


def test_residual_below_every_grid_point(off_grid_points):
    fr = fit_characterizations("SS", off_grid_points, grid_points=13)
    axis = 10 ** np.linspace(-3, 3, 13)
    S, C = np.meshgrid(axis, axis, indexing="ij")
    nh, nav = predict_steady(off_grid_points, S.ravel(), C.ravel())
    grid = fitmod._objective(off_grid_points, nh, nav)
    assert fr.residual <= grid.min()


def test_single_point_unidentifiable():
    pts = _synthetic("SS", 1.0, 1.0, sizes=(10,))
    with pytest.raises(UnidentifiableFitError):
        fit_characterizations("SS", pts)


def test_duplicate_sizes_unidentifiable():
    pts = _synthetic("SS", 1.0, 1.0, sizes=(10,))
    with pytest.raises(UnidentifiableFitError):
        fit_characterizations("SS", pts + pts)


def test_flat_objective(monkeypatch, off_grid_points):
    def flat(points, sigmas, chis, **kw):
        k = np.size(sigmas)
        return np.ones((k, len(points))), np.ones((k, len(points)))

    monkeypatch.setattr(fitmod, "predict_steady", flat)
    with pytest.raises(UnidentifiableFitError):
        fit_characterizations("SS", off_grid_points)


def test_no_admissible_candidate(monkeypatch, off_grid_points):
    def nothing(points, sigmas, chis, **kw):
        k = np.size(sigmas)
        return np.full((k, len(points)), np.nan), np.full((k, len(points)), np.nan)

    monkeypatch.setattr(fitmod, "predict_steady", nothing)
    with pytest.raises(UnidentifiableFitError):
        fit_characterizations("SS", off_grid_points)


def test_tie_break_prefers_smaller(monkeypatch, off_grid_points):
    # objective depends on sigma only, so every chi ties
    def sigma_only(points, sigmas, chis, **kw):
        s = np.log10(np.asarray(sigmas, dtype=float))[:, None]
        v = np.repeat((s - 0.5) ** 2, len(points), axis=1)
        obs = np.array([p.observed_nh for p in points])
        return obs + v * np.array([p.n for p in points]), np.array([[p.observed_nav for p in points]] * len(s))

    monkeypatch.setattr(fitmod, "predict_steady", sigma_only)
    fr = fit_characterizations("SS", off_grid_points, grid_points=61)
    assert fr.chi_m == pytest.approx(1e-3)
    assert fr.sigma_m == pytest.approx(10**0.5, rel=1e-9)


def test_relative_chi():
    table = CharacterizationTable(
        RN=FitResult(1.0, 2.0, 0.0, [], "RN"),
        SS=FitResult(1.0, 5.0, 0.0, [], "SS"),
    )
    assert table.relative_chi("SS") == pytest.approx(2.5)
    assert table.relative_chi("RN") == 1.0
    with pytest.raises(KeyError):
        CharacterizationTable(SS=table["SS"]).relative_chi("SS")


def test_fit_result_roundtrip():
    fr = FitResult(1.5, 0.5, 1e-3, [(5, 1.0, 0.1), (10, 2.0, 0.2)], "DS", 42)
    again = FitResult.from_dict(fr.to_dict())
    assert again.sigma_m == fr.sigma_m and again.calibration_points == fr.calibration_points
    kv = fr.to_kv(prefix="fit.DS")
    assert "fit.DS.sigma_m = 1.5\n" in kv
    assert "fit.DS.calib.N10 = nh 2 nav 0.2" in kv


class TestLegacy:
    def test_underdetermined_warning(self):
        scen = [make_density_scenario("SS", n, 0.01, seed=1) for n in (5, 10)]
        pts = [CalibrationPoint(s, 1.0, 0.1, SINGLE) for s in scen]
        with pytest.warns(UnderdeterminedFitWarning):
            res = fit_legacy_params(pts, 500.0, max_rounds=3)
        assert res.underdetermined

    def test_synthetic_recovery(self):
        scen = [make_density_scenario("SS", n, 0.01, seed=1) for n in (5, 10, 20)]
        true = np.array([3e-4, 1e-4, 2e-4, 150.0, 2.5])
        nh, nav = legacy_observables(np.tile(true, (3, 1)), [5, 10, 20], [s.total_blocks for s in scen], 2000.0)
        pts = [CalibrationPoint(s, nh[i], nav[i], SINGLE) for i, s in enumerate(scen)]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            res = fit_legacy_params(pts, 2000.0)
        assert res.residual < 1e-6
        assert "legacy.alpha_b = " in res.to_kv()

    def test_observables_match_reference_integrator(self):
        from swarmforage.odemodel import integrate, legacy_rhs_array

        p = np.array([1e-4, 2e-4, 3e-4, 120.0, 2.0])
        nh, nav = legacy_observables(p[None], [10], [300], 2000.0, dt=1.0)
        rep = integrate(
            lambda y: legacy_rhs_array(y, 10, *p), np.array([10.0, 0, 0, 0, 300.0]), 1.0, 2000.0, stride=1, stop_at_steady=False
        )
        keep = rep.times >= 400
        ref_h = np.trapezoid(rep.trajectory[keep, 1], rep.times[keep]) / 1600
        ref_av = np.trapezoid(rep.trajectory[keep, 2] + rep.trajectory[keep, 3], rep.times[keep]) / 1600
        assert nh[0] == pytest.approx(ref_h, rel=1e-12)
        assert nav[0] == pytest.approx(ref_av, rel=1e-12)

    def test_blow_up_is_nan(self):
        nh, nav = legacy_observables(np.array([[1.0, 1.0, 1.0, 1e-1, 1e-1]]), [50], [1000], 100.0, dt=2.0)
        assert math.isnan(nh[0]) or nh[0] >= 0
