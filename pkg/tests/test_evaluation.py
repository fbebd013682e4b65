import math

import numpy as np
import pytest

from reactorgp.evaluation import (EvalReport, control_deviation, evaluate_pair,
                                  policy_controller, reduction_pct)
from reactorgp.expr import Binary, Const, Var
from reactorgp.reactor import Recipe, run_batch


def _log(T):
    T = np.asarray(T, dtype=float)
    out = np.zeros((len(T), 11))
    out[:, 0] = np.arange(len(T))
    out[:, 4] = T
    return out


def test_perfect_tracking_is_zero():
    assert control_deviation(_log(np.full(50, 358.0)), 358.0) == (0.0, 0.0)


def test_constant_offset():
    dev, rmse = control_deviation(_log(np.full(100, 357.0)), 358.0)
    assert dev == 100.0 and rmse == 1.0


def test_sawtooth_closed_form():
    # error cycles 0, 0.1, ..., 0.9 K, ten full periods: sum of squares = 10 * 2.85
    err = np.tile(np.arange(10) / 10.0, 10)
    dev, rmse = control_deviation(_log(358.0 - err), 358.0, from_feed_start=False)
    assert dev == pytest.approx(28.5, rel=1e-12)
    assert rmse == pytest.approx(math.sqrt(0.285), rel=1e-12)


def test_feed_start_window():
    T = np.concatenate([np.full(20, 350.0), np.full(10, 357.5)])
    assert control_deviation(_log(T), 358.0) == (pytest.approx(2.5), pytest.approx(0.5))
    assert control_deviation(_log(T), 358.0, from_feed_start=False)[0] == pytest.approx(20 * 64 + 2.5)
    with pytest.raises(ValueError):
        control_deviation(np.zeros((0, 11)), 358.0)


def test_reduction_definition():
    assert reduction_pct(200.0, 150.0) == 25.0
    assert reduction_pct(100.0, 300.0) == -200.0
    assert math.isnan(reduction_pct(0.0, 1.0))


def test_identity_policy_matches_default(ref_stats, params):
    """T-hat = S as an evolved expression reproduces the default controller."""
    rep = evaluate_pair(Var("S"), ref_stats, params, setpoints=(358.0, 362.0), seed=3)
    for r in rep.results:
        assert r.status == "ok"
        assert r.reduction_pct == pytest.approx(0.0, abs=1e-9)
        np.testing.assert_allclose(r.traj_policy.data, r.traj_default.data, atol=1e-9)


def test_policy_controller_reads_grid_taps(ref_stats, params):
    recipe = Recipe(358.0, max_duration=200.0)
    ctrl = policy_controller(Var("T", 30), ref_stats)
    tr = run_batch(recipe, ctrl, params, control_period=10)
    That, T = tr.column("That"), tr.column("T")
    # the action chosen at t = 100 s uses T at 70 s
    assert That[101] == pytest.approx(np.clip(T[70], 352, 365), abs=1e-9)


def test_evaluation_deterministic(ref_stats, params):
    e = Binary("+", Var("S"), Const(0.1))
    a = evaluate_pair(e, ref_stats, params, setpoints=(362.0,), seed=1)
    b = evaluate_pair(e, ref_stats, params, setpoints=(362.0,), seed=1)
    assert a.results[0].traj_policy.data.tobytes() == b.results[0].traj_policy.data.tobytes()
    assert a.results[0].dev_policy == b.results[0].dev_policy


def test_failed_setpoint_is_marked(ref_stats, params):
    # the product overflows, so the policy yields a non-finite setpoint
    huge = Binary("*", Const(1e308), Const(1e308))
    rep = evaluate_pair(huge, ref_stats, params, setpoints=(365.0,), seed=0)
    assert rep.results[0].status == "failed"
    assert math.isnan(rep.mean_reduction)
    assert "failed" in rep.summary()


def test_report_outputs(ref_stats, params, tmp_path):
    rep = evaluate_pair(Binary("-", Var("S"), Const(0.05)), ref_stats, params,
                        setpoints=(358.0, 365.0), seed=0)
    rep.to_csv(tmp_path / "r.csv")
    lines = (tmp_path / "r.csv").read_text().splitlines()
    assert lines[0] == "setpoint,dev_default,dev_policy,rmse_default,rmse_policy,reduction_pct,status"
    assert len(lines) == 3 and lines[1].startswith("358,")
    rep.dump_trajectories(tmp_path / "t")
    assert sorted(p.name for p in (tmp_path / "t").iterdir()) == [
        "traj_358_default.csv", "traj_358_policy.csv", "traj_365_default.csv",
        "traj_365_policy.csv"]
    assert rep.mean_reduction == pytest.approx(np.mean([r.reduction_pct for r in rep.results]))
    assert rep.reduction(365.0) == rep.results[1].reduction_pct
    assert "mean reduction" in rep.summary()
