import numpy as np
import pytest

import mogrid.mpc as mpc
from mogrid.admm import AdmmConfig
from mogrid.dataset import NetConsumptionSeries, perturb_forecast, synth_scenario
from mogrid.horizon import HorizonProblem
from mogrid.mpc import open_loop_run, run_mpc, write_trace_csv
from mogrid.objectives import TubeSpec
from mogrid.prosumer import Controls, ProsumerParams, TimeGrid, max_violation

N = 8
CFG = AdmmConfig(kappa=0.5)


@pytest.fixture(scope="module")
def scenario():
    series = synth_scenario(3, 3, 40)
    tube = TubeSpec.from_segments([(0, 0.2, 0.4), (20, 0.6, 0.8)], len(series))
    return series, tube


@pytest.fixture(scope="module")
def trace(scenario):
    series, tube = scenario
    return run_mpc(series, ProsumerParams(), tube, 1.0, 12, CFG, N=N)


def test_trace_is_complete_and_feasible(trace, scenario):
    series, _ = scenario
    assert trace.steps == 12
    assert trace.u_minus.shape == (12, 3) and trace.soc.shape == (13, 3)
    assert trace.max_violation <= 1e-9
    assert np.all(trace.converged) and not trace.events
    assert np.all(trace.soc >= 0) and np.all(trace.soc <= 2.0)
    # realized demand follows from the applied controls and the measured consumption
    np.testing.assert_allclose(trace.z, series.w[:, :12].T + trace.u_plus + trace.u_minus, atol=1e-15)
    np.testing.assert_allclose(trace.z_bar, trace.z.mean(axis=1))
    p = ProsumerParams()
    for t in range(12):
        for i in range(3):
            step = Controls(trace.u_minus[t, i : i + 1], trace.u_plus[t, i : i + 1])
            assert max_violation(trace.soc[t, i], step, p, TimeGrid(0.5, 1)) <= 1e-9


def test_deterministic(trace, scenario):
    series, tube = scenario
    again = run_mpc(series, ProsumerParams(), tube, 1.0, 12, CFG, N=N)
    np.testing.assert_array_equal(again.u_minus, trace.u_minus)
    np.testing.assert_array_equal(again.u_plus, trace.u_plus)
    np.testing.assert_array_equal(again.soc, trace.soc)


def test_no_storage_leaves_demand_unchanged(scenario):
    series, tube = scenario
    tr = run_mpc(series, ProsumerParams(capacity=0.0), tube, 0.0, 5, CFG, N=N)
    np.testing.assert_array_equal(tr.z_bar, series.w[:, :5].mean(axis=0))
    assert np.all(tr.u_minus == 0) and np.all(tr.u_plus == 0)


def test_constant_demand_inside_wide_tube_stays_idle():
    series = NetConsumptionSeries(np.full((2, 30), 0.4))
    tube = TubeSpec.constant(-5.0, 5.0, 30)
    tr = run_mpc(series, ProsumerParams(), tube, 1.0, 6, CFG.with_kappa(1.0), N=N)
    assert np.all(tr.u_minus == 0) and np.all(tr.u_plus == 0)
    # the trailing mean of a constant differs from it only by roundoff
    np.testing.assert_allclose(tr.stage_g, 0.0, atol=1e-30)


def test_first_step_equals_open_loop(scenario):
    series, tube = scenario
    x0 = np.array([0.4, 1.0, 1.6])
    tr = run_mpc(series, ProsumerParams(), tube, x0, 1, CFG, N=N)
    hp = HorizonProblem.from_series(series, ProsumerParams(), tube, x0, 0, N)
    ol = open_loop_run(hp, CFG)
    np.testing.assert_array_equal(tr.u_minus[0], [u.u_minus[0] for u in ol.controls])
    np.testing.assert_array_equal(tr.u_plus[0], [u.u_plus[0] for u in ol.controls])
    np.testing.assert_array_equal(tr.soc[1], ol.soc[:, 1])


@pytest.mark.parametrize("kappa", [0.0, 1.0])
def test_open_loop_slack_equals_refined_value(scenario, kappa):
    series, tube = scenario
    hp = HorizonProblem.from_series(series, ProsumerParams(), tube, 1.0, 4, N)
    ol = open_loop_run(hp, CFG.with_kappa(kappa))
    assert ol.converged
    assert ol.h_hat_val == pytest.approx(ol.h_val, abs=1e-5)
    assert ol.g_hat_val == pytest.approx(ol.g_val, abs=1e-5)


def test_kappa_schedule_and_forecast_noise(scenario):
    series, tube = scenario
    tr = run_mpc(
        series, ProsumerParams(), tube, 1.0, 4, CFG, N=N,
        kappa_schedule=lambda k: 0.2 if k < 2 else 0.8,
        forecast=lambda k, window: perturb_forecast(window, k, 0.05),
    )
    np.testing.assert_array_equal(tr.kappa, [0.2, 0.2, 0.8, 0.8])
    assert tr.max_violation <= 1e-9


def test_solver_failure_idles_batteries(scenario, monkeypatch):
    series, tube = scenario

    def boom(*args, **kwargs):
        raise FloatingPointError("diverged")

    monkeypatch.setattr(mpc, "solve_point", boom)
    tr = run_mpc(series, ProsumerParams(), tube, 1.0, 2, CFG, N=N)
    assert np.all(tr.u_minus == 0) and np.all(tr.u_plus == 0)
    assert len(tr.events) == 2 and "solver failure" in tr.events[0]
    assert not np.any(tr.converged)


def test_unconverged_step_is_applied_and_logged(scenario):
    series, tube = scenario
    tr = run_mpc(series, ProsumerParams(), tube, 1.0, 2, AdmmConfig(kappa=0.5, max_iters=1), N=N)
    assert not np.any(tr.converged)
    assert any("stopped before tolerance" in e for e in tr.events)
    assert tr.max_violation <= 1e-9


def test_input_errors(scenario):
    series, tube = scenario
    with pytest.raises(ValueError, match="scenario exhausted"):
        run_mpc(series, ProsumerParams(), tube, 1.0, 40, CFG, N=N)
    with pytest.raises(ValueError, match="at least two"):
        run_mpc(series, ProsumerParams(), tube, 1.0, 2, CFG, N=1)
    with pytest.raises(ValueError):
        run_mpc(series, ProsumerParams(), tube, 1.0, 0, CFG, N=N)


def test_trace_csv(trace, tmp_path):
    write_trace_csv(trace, tmp_path / "trace.csv")
    lines = (tmp_path / "trace.csv").read_text().splitlines()
    assert len(lines) == 1 + trace.steps * 4
    assert lines[0].split(",")[:3] == ["k", "prosumer", "kappa"]
    assert lines[4].split(",")[1] == "aggregate"


def test_closed_loop_objectives(trace):
    assert trace.J1 == pytest.approx(np.mean((trace.z_bar - trace.zeta_bar) ** 2))
    assert trace.J2 >= 0
