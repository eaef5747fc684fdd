import csv

import numpy as np
import pytest

from varicast.data import Normalizer, make_windows, synth_series
from varicast.errors import ContractError
from varicast.forecast import Forecaster, evaluate_split, write_forecast_csv, write_plot_csv
from varicast.model import ForecastModel, ModelConfig

from oracles import sigma_propagation_np

TINY = ModelConfig(
    d_model=8, heads=2, h_lstm=4, stat_hidden=6, latent=8, n_tok=2,
    resformer_layers=1, resformer_heads=2, enc_hidden=8, dec_hidden=8,
    head_hidden=6, imp_hidden=4,
)


def make_forecaster(seed=0, d=2):
    model = ForecastModel(TINY, d=d, seed=seed)
    norm = Normalizer(mean=np.full(d, 5.0), std=np.full(d, 2.0))
    return Forecaster(model, norm, target_idx=[d - 1])


def window(seed=0, n=6, d=2):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(n, d)), rng.normal(size=d)


def test_forecast_one_mean_latent_deterministic():
    fc = make_forecaster()
    hist, x_t = window()
    a = fc.forecast_one(hist, x_t)
    b = fc.forecast_one(hist, x_t)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_forecast_one_sampled_same_seed():
    fc = make_forecaster()
    hist, x_t = window()
    a = fc.forecast_one(hist, x_t, mode="sampled", rng=np.random.default_rng(7))
    b = fc.forecast_one(hist, x_t, mode="sampled", rng=np.random.default_rng(7))
    np.testing.assert_array_equal(a[0], b[0])
    c = fc.forecast_one(hist, x_t, mode="sampled", rng=np.random.default_rng(8))
    assert not np.array_equal(a[0], c[0])


def test_forecast_multi_base_case_matches_forecast_one():
    fc = make_forecaster()
    hist, x_t = window(seed=1)
    one_mean, one_sigma = fc.forecast_one(hist, x_t)
    result = fc.forecast_multi(hist, x_t, horizon=1)
    np.testing.assert_array_equal(result.means[0], one_mean)
    np.testing.assert_array_equal(result.sigmas[0], one_sigma)
    np.testing.assert_array_equal(result.per_step_unc[0], one_sigma)


def test_forecast_multi_pythagorean_accumulation():
    fc = make_forecaster()
    fake = iter([
        (np.array([0.1, 0.2]), np.array([3.0, 1.0])),
        (np.array([0.3, 0.4]), np.array([4.0, 1.0])),
    ])
    fc._step = lambda hist, x_t, eps: next(fake)
    result = fc.forecast_multi(*window(seed=2), horizon=2)
    # normalized (3, 4) accumulates to 5; denormalization scales by std = 2
    assert result.sigmas[1, 0] == pytest.approx(10.0, abs=1e-12)
    assert result.per_step_unc[1, 0] == pytest.approx(8.0)


def test_forecast_multi_sigma_monotone_and_identity():
    fc = make_forecaster(seed=3)
    hist, x_t = window(seed=4)
    result = fc.forecast_multi(hist, x_t, horizon=6)
    assert np.all(np.diff(result.sigmas, axis=0) >= 0.0)
    np.testing.assert_allclose(result.sigmas, sigma_propagation_np(result.per_step_unc), atol=1e-12)


def test_forecast_multi_rolling_window_consistency():
    fc = make_forecaster(seed=5)
    hist, x_t = window(seed=6)
    n = hist.shape[0]
    seen = []
    real_step = Forecaster._step

    def spy(h, x, eps):
        seen.append((h.copy(), x.copy()))
        return real_step(fc, h, x, eps)

    fc._step = spy
    result = fc.forecast_multi(hist, x_t, horizon=4)
    rows = list(hist) + [x_t] + [m for m in _normalized_means(fc, result)]
    for k, (h_seen, x_seen) in enumerate(seen):
        expected = np.stack(rows[k : k + n])
        np.testing.assert_allclose(h_seen, expected, atol=1e-12)


def _normalized_means(fc, result):
    return list(fc.normalizer.transform(result.means))


def test_forecast_multi_teacher_covariates():
    fc = make_forecaster(seed=7)
    hist, x_t = window(seed=8)
    future = np.random.default_rng(9).normal(size=(3, 2))
    seen = []
    real_step = Forecaster._step

    def spy(h, x, eps):
        seen.append(x.copy())
        return real_step(fc, h, x, eps)

    fc._step = spy
    result = fc.forecast_multi(hist, x_t, horizon=3, future_rows=future)
    normed_means = fc.normalizer.transform(result.means)
    for k in range(1, 3):
        # covariate column (index 0) comes from the provided truth,
        # the target column (index 1) from the previous prediction
        assert seen[k][0] == pytest.approx(future[k - 1][0])
        assert seen[k][1] == pytest.approx(normed_means[k - 1][1])


def test_forecast_multi_contracts():
    fc = make_forecaster()
    hist, x_t = window()
    with pytest.raises(ContractError):
        fc.forecast_multi(hist, x_t, horizon=0)
    with pytest.raises(ContractError):
        fc.forecast_one(hist, x_t, mode="bogus")
    with pytest.raises(ContractError):
        fc.forecast_multi(hist, x_t, horizon=5, future_rows=np.zeros((2, 2)))


def test_denormalization_affine_equivariance():
    table = synth_series("heteroskedastic", 300, seed=10)
    scaled = synth_series("heteroskedastic", 300, seed=10)
    scaled.columns["value"] = 3.0 * scaled.columns["value"] + 40.0
    base = make_windows(table, n=6)
    other = make_windows(scaled, n=6)
    model = ForecastModel(TINY, d=2, seed=11)
    fc_a = Forecaster(model, base.normalizer, base.target_idx)
    fc_b = Forecaster(model, other.normalizer, other.target_idx)
    i = 4
    ra = fc_a.forecast_multi(base.test.hist[i], base.test.x_t[i], horizon=3)
    rb = fc_b.forecast_multi(other.test.hist[i], other.test.x_t[i], horizon=3)
    np.testing.assert_allclose(rb.means[:, 1], 3.0 * ra.means[:, 1] + 40.0, atol=1e-6)
    np.testing.assert_allclose(rb.sigmas[:, 1], 3.0 * ra.sigmas[:, 1], atol=1e-6)


def test_evaluate_split_alignment():
    table = synth_series("heteroskedastic", 240, seed=12)
    splits = make_windows(table, n=6)
    model = ForecastModel(TINY, d=2, seed=13)
    ev = evaluate_split(model, splits, "test")
    ds = splits.test
    assert ev.means.shape == ds.x_t.shape
    raw = table.values()
    np.testing.assert_array_equal(ev.y_true, raw[ds.t_index + 1])
    assert ev.timestamps[0] == table.timestamps[ds.t_index[0] + 1]
    assert np.all(ev.sigmas > 0.0)


def test_evaluate_split_sampled_order_independent():
    table = synth_series("heteroskedastic", 240, seed=14)
    splits = make_windows(table, n=6)
    model = ForecastModel(TINY, d=2, seed=15)
    a = evaluate_split(model, splits, "test", mode="sampled", seed=3, chunk=256)
    b = evaluate_split(model, splits, "test", mode="sampled", seed=3, chunk=7)
    np.testing.assert_array_equal(a.means, b.means)


def test_forecast_csv_outputs(tmp_path):
    fc = make_forecaster(seed=16)
    hist, x_t = window(seed=17)
    result = fc.forecast_multi(hist, x_t, horizon=4)
    fpath = tmp_path / "forecast.csv"
    write_forecast_csv(fpath, result, "2020-01-01", ["driver", "value"], [1])
    rows = list(csv.DictReader(open(fpath)))
    assert len(rows) == 4
    assert rows[0]["target_name"] == "value"
    lo, hi = float(rows[2]["lo95"]), float(rows[2]["hi95"])
    mean, sigma = float(rows[2]["mean"]), float(rows[2]["sigma"])
    assert lo == pytest.approx(mean - 1.96 * sigma)
    assert hi == pytest.approx(mean + 1.96 * sigma)

    ppath = tmp_path / "plot.csv"
    write_plot_csv(ppath, result, target_j=1)
    plot_rows = list(csv.DictReader(open(ppath)))
    assert [r["horizon"] for r in plot_rows] == ["1", "2", "3", "4"]
