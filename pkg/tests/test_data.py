import numpy as np
import pytest
from hypothesis import given, strategies as st

from reactorgp.data import (CH, CHANNELS, DegenerateChannel, NormalizationStats, TransitionBatch,
                            fit_normalization, largest_remainder, plan_exploration,
                            resample_grid, split, split_counts, to_series, windowize)
from reactorgp.reactor import Recipe, default_controller, run_batch


def test_plan_ranges_and_count(params):
    plans = plan_exploration(100, 0, params)
    assert len(plans) == 100
    for p in plans:
        assert 100 <= p.step_time <= 600
        assert 352 <= p.step_value <= 365
        assert 352 <= p.recipe.setpoint <= 365
        assert 0.8 <= p.recipe.impurity <= 1.2


def test_plan_deterministic(params):
    assert plan_exploration(1, 5, params) == plan_exploration(1, 5, params)
    assert plan_exploration(1, 5, params) != plan_exploration(1, 6, params)


def test_plan_step_value_law_of_large_numbers(params):
    v = np.array([p.step_value for p in plan_exploration(1000, 3, params)])
    assert v.min() >= 352 and v.max() <= 365
    # U[352, 365]: mean 358.5, sd of the mean 3.75/sqrt(1000) ~ 0.12
    assert abs(v.mean() - 358.5) < 0.5


def test_plan_rejects_zero(params):
    with pytest.raises(ValueError):
        plan_exploration(0, 0, params)


def test_step_attempt_controller(params):
    plan = plan_exploration(1, 2, params)[0]
    ctrl = plan.controller()
    before = np.zeros((1, 11))
    before[-1, 0] = plan.step_time - 1
    after = np.zeros((1, 11))
    after[-1, 0] = plan.step_time + 1
    assert ctrl(before).That == plan.recipe.setpoint
    assert ctrl(after).That == plan.step_value


def _fake_log(duration):
    t = np.arange(duration + 1, dtype=float)
    return np.column_stack([t] + [np.full_like(t, 1.0 + i) for i in range(10)])


def test_resample_600s_gives_61_rows():
    assert len(resample_grid(_fake_log(600))) == 61


def test_resample_5s_gives_one_row():
    g = resample_grid(_fake_log(5))
    assert len(g) == 1 and g[0, 0] == 0


def test_resample_constant_and_empty():
    g = resample_grid(_fake_log(100))
    assert np.all(g[:, 4] == 4.0)
    assert np.all(np.diff(g[:, 0]) == 10)
    with pytest.raises(ValueError):
        resample_grid(np.zeros((0, 11)))


def test_to_series_channel_order(params):
    recipe = Recipe(358.0, max_duration=300.0)
    tr = run_batch(recipe, default_controller(recipe), params)
    s = to_series(tr.data)
    assert s.shape == (31, len(CHANNELS))
    assert np.all(s[:, CH["S"]] == 358.0)
    np.testing.assert_array_equal(s[:, CH["T"]], tr.column("T")[::10])


def test_normalization_population_convention():
    a = np.zeros((2, 8))
    a[:, :] = np.arange(8) + 1.0
    a[0, CH["M"]], a[1, CH["M"]] = 0.0, 2.0
    a[0, CH["S"]], a[1, CH["S"]] = 350.0, 352.0
    a[0, CH["T"]], a[1, CH["T"]] = 351.0, 353.0
    a[0, CH["That"]], a[1, CH["That"]] = 350.5, 352.5
    for c in ("Mhat", "P", "UA", "Q"):
        a[1, CH[c]] += 1.0
    st_ = fit_normalization([a])
    assert st_.mean["M"] == 1.0 and st_.std["M"] == 1.0
    pooled = np.array([350.0, 352.0, 351.0, 353.0, 350.5, 352.5])
    for c in ("S", "T", "That"):
        assert st_.mean[c] == pytest.approx(pooled.mean())
        assert st_.std[c] == pytest.approx(pooled.std())


def test_normalization_rejects_constant_channel():
    a = np.random.default_rng(0).normal(size=(10, 8))
    a[:, CH["UA"]] = 1.0
    with pytest.raises(DegenerateChannel, match="degenerate channel"):
        fit_normalization([a])


def test_normalize_reference_constant(ref_stats):
    assert ref_stats.normalize(365.0, "T") == pytest.approx(0.9088, abs=5e-5)


@given(st.floats(-1e4, 1e4))
def test_normalize_roundtrip(x):
    s = NormalizationStats({c: 359.12 for c in CHANNELS}, {c: 6.47 for c in CHANNELS})
    assert s.denormalize(s.normalize(x, "T"), "T") == pytest.approx(x, abs=1e-12 * max(1, abs(x)))


def test_window_counts():
    assert len(windowize(np.zeros((20, 8)))) == 1
    assert len(windowize(np.zeros((61, 8)))) == 42
    assert len(windowize(np.zeros((19, 8)))) == 0


def test_window_layout():
    z = np.arange(30 * 8, dtype=float).reshape(30, 8)
    w = windowize(z, 10, 10)
    first = w[0]
    # history rows 0..9, states then actions
    np.testing.assert_array_equal(first.history[:, :5], z[0:10][:, [3, 4, 5, 6, 7]])
    np.testing.assert_array_equal(first.history[:, 5:], z[0:10][:, [1, 2]])
    np.testing.assert_array_equal(first.future_states, z[10:20][:, [3, 4, 5, 6, 7]])
    np.testing.assert_array_equal(first.future_actions, z[10:20][:, [1, 2]])


def test_constant_series_constant_targets():
    w = windowize(np.full((40, 8), 0.25))
    assert np.all(w.future_states == 0.25)


def test_split_counts_examples():
    assert split_counts(100) == [70, 20, 10]
    assert split_counts(10) == [7, 2, 1]
    assert min(split_counts(3)) == 1
    with pytest.raises(ValueError):
        split_counts(2)


@given(st.integers(3, 400))
def test_split_partition(n):
    labels = split(n, 1)
    counts = [labels.count(s) for s in ("train", "validation", "generalization")]
    assert sum(counts) == n and min(counts) >= 1
    assert labels == split(n, 1)


@given(st.integers(0, 1000), st.lists(st.floats(0.01, 1.0), min_size=1, max_size=6))
def test_largest_remainder_sums(n, ratios):
    c = largest_remainder(n, ratios)
    assert sum(c) == n and all(x >= 0 for x in c)


def test_dataset_invariants(small_dataset):
    ds = small_dataset
    train = np.concatenate([ds.normalized(i) for i in ds.indices("train")])
    for c in ("M", "P", "UA", "Q", "Mhat"):
        assert abs(train[:, CH[c]].mean()) < 1e-9
        assert abs(train[:, CH[c]].std() - 1) < 1e-9
    temps = train[:, [CH["S"], CH["That"], CH["T"]]].ravel()
    assert abs(temps.mean()) < 1e-9 and abs(temps.std() - 1) < 1e-9
    for i in range(len(ds.series)):
        raw, z = ds.series[i], ds.normalized(i)
        assert np.all(np.sign(z[:, CH["S"]] - z[:, CH["T"]]) == np.sign(raw[:, CH["S"]] - raw[:, CH["T"]]))


def test_dataset_save_load_exact(small_dataset, tmp_path):
    small_dataset.save(tmp_path / "ds")
    back = TransitionBatch.load(tmp_path / "ds")
    assert back.labels == small_dataset.labels
    assert back.stats == small_dataset.stats
    for a, b in zip(back.series, small_dataset.series):
        assert a.tobytes() == b.tobytes()
    assert (tmp_path / "ds" / "series_000.csv").exists()
    assert (tmp_path / "ds" / "normalization.json").exists()
