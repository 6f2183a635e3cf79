import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mrssm.data import TimeSeries, generate_synthetic, regular_grid
from mrssm.errors import NumericalSingularityError, ValidationError
from mrssm.evaluation import (
    AttractorSettings,
    ComparisonReport,
    Forecast,
    ForecastResult,
    ModelVariant,
    box_stats,
    choose_starts,
    decile_means,
    evaluate,
    nrmse,
    nrmse_per_sample,
    run_protocol,
    standard_variants,
    write_trajectory_csv,
)
from mrssm.models import StructuralSpec


class Oracle:
    """Forecasts the truth itself."""

    name = "oracle"

    def forecast(self, series, start, horizon):
        v = series.values[start:start + horizon]
        return Forecast(v.copy(), np.zeros(horizon))


class Constant:
    def __init__(self, name, value):
        self.name, self.value = name, value

    def forecast(self, series, start, horizon):
        return Forecast(np.full(horizon, self.value), np.ones(horizon))


class Flaky:
    name = "flaky"

    def forecast(self, series, start, horizon):
        if start % 2:
            raise NumericalSingularityError("S", 1e16)
        return Forecast(np.zeros(horizon), np.zeros(horizon))


def ramp(n=200):
    return TimeSeries(regular_grid("2019-01-01", n), np.arange(n, dtype=float), np.zeros(n, bool))


@pytest.fixture(scope="module")
def inflection_data():
    return generate_synthetic(7, days=50)


# -- metrics --------------------------------------------------------------------

def test_nrmse_exact_forecast():
    assert nrmse([1.0, 2.0], [1.0, 2.0], 0.0, 3.0) == 0.0


def test_nrmse_unit_error():
    assert nrmse([0.0, 0.0], [1.0, 1.0], 0.0, 1.0) == pytest.approx(100.0)


def test_nrmse_half_range():
    assert nrmse([0.0, 2.0], [1.0, 1.0], 0.0, 2.0) == pytest.approx(50.0)


def test_per_sample_values():
    np.testing.assert_array_equal(nrmse_per_sample([1.0, 2.0], [1.0, 2.0], 0, 1), [0.0, 0.0])
    assert nrmse_per_sample([0.0], [0.5], 0.0, 1.0)[0] == pytest.approx(50.0)


@pytest.mark.parametrize("fn", [nrmse, nrmse_per_sample])
def test_metric_errors(fn):
    with pytest.raises(ValidationError):
        fn([1.0], [1.0], 2.0, 2.0)
    with pytest.raises(ValidationError):
        fn([1.0, 2.0], [1.0], 0.0, 1.0)
    with pytest.raises(ValidationError):
        fn([], [], 0.0, 1.0)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 200), st.integers(0, 2**32 - 1))
def test_per_sample_rms_equals_total(n, seed):
    rng = np.random.default_rng(seed)
    y, f = rng.normal(size=n), rng.normal(size=n)
    lo, hi = -3.0, 4.0
    per = nrmse_per_sample(y, f, lo, hi)
    assert abs(np.sqrt(np.mean(per**2)) - nrmse(y, f, lo, hi)) <= 1e-9


# -- forecast result --------------------------------------------------------------

def test_forecast_result_invariants():
    kw = dict(start=0, obs_mean=np.zeros(3), latent=None, latent_names=(), truth=np.zeros(3),
              nrmse_total=0.0, nrmse_per_sample=np.zeros(3), wall_time=0.0)
    ForecastResult(obs_std=np.zeros(3), **kw)
    with pytest.raises(ValidationError):
        ForecastResult(obs_std=np.zeros(2), **kw)
    with pytest.raises(ValidationError):
        ForecastResult(obs_std=-np.ones(3), **kw)


def test_variant_result_shapes(inflection_data):
    v = ModelVariant("LDS_MR", StructuralSpec(), AttractorSettings(), train_len=960)
    res = evaluate(v, inflection_data.series, 2400, 200)
    assert res.horizon == 200
    assert res.latent.shape == (200, 4)
    assert res.latent_names[0] == "trend"
    assert np.all(res.obs_std >= 0)
    assert res.wall_time > 0


def test_missing_truth_skipped():
    s = ramp(20)
    mask = np.zeros(20, bool)
    mask[12] = True
    s = s.with_mask(mask)
    res = evaluate(Constant("c", 0.0), s, 10, 5, y_range=(0.0, 100.0))
    assert np.isnan(res.nrmse_per_sample[2])
    expected = np.sqrt(np.mean(np.array([10, 11, 13, 14.0]) ** 2))
    assert res.nrmse_total == pytest.approx(expected)


def test_handheld_variant_masks_training_only(inflection_data):
    v = ModelVariant("LDS", StructuralSpec(), None, train_len=960, handheld=True)
    w = v.training_window(inflection_data.series, 2400)
    assert w.observed.sum() == 30
    res = evaluate(v, inflection_data.series, 2400, 96)
    assert np.all(np.isfinite(res.truth))


def test_training_window_too_short(inflection_data):
    v = ModelVariant("LDS", train_len=5000)
    with pytest.raises(ValidationError):
        v.training_window(inflection_data.series, 100)


# -- starts -------------------------------------------------------------------------

def test_choose_starts_deterministic_and_admissible():
    a = choose_starts(1000, 5, 100, 200, seed=3)
    assert a == choose_starts(1000, 5, 100, 200, seed=3)
    assert len(set(a)) == 5 and a == sorted(a)
    assert all(200 <= s <= 900 for s in a)


def test_choose_starts_from_candidates():
    s = choose_starts(1000, 2, 100, 200, seed=0, candidates=[50, 300, 500, 950])
    assert s == [300, 500]


def test_choose_starts_too_many():
    with pytest.raises(ValidationError):
        choose_starts(100, 5, 90, 8, seed=0)


# -- protocol ------------------------------------------------------------------------

def test_box_stats_quartiles_and_whiskers():
    s = box_stats([1, 2, 3, 4, 100])
    assert s["median"] == 3 and s["q1"] == 2 and s["q3"] == 4
    assert s["whisker_low"] == 1 and s["whisker_high"] == 4
    assert s["outliers"] == [100.0]
    assert s["mean"] == pytest.approx(22.0)
    assert box_stats([None]) is None


def test_protocol_oracle_is_zero():
    rep = run_protocol([Oracle()], ramp(), [100], 50)
    assert rep.mean("dataset", "oracle") == 0.0


def test_protocol_identical_models_identical_rows():
    rep = run_protocol([Constant("a", 3.0), Constant("b", 3.0)], ramp(), [60, 120], 40)
    assert rep.values("dataset", "a") == rep.values("dataset", "b")


def test_protocol_records_failed_cells():
    rep = run_protocol([Flaky(), Oracle()], ramp(), [10, 11, 12], 20)
    assert rep.values("dataset", "flaky")[1] is None
    assert rep.values("dataset", "flaky")[0] is not None
    assert len(rep.values("dataset", "oracle")) == 3
    d = rep.to_dict()
    assert len(d["datasets"]["dataset"]["models"]["flaky"]["failed"]) == 1
    assert json.loads(rep.to_json())["datasets"]["dataset"]["models"]["flaky"]["nrmse"][1] is None


def test_protocol_validates_starts():
    with pytest.raises(ValidationError):
        run_protocol([Oracle()], ramp(50), [40], 20)
    with pytest.raises(ValidationError):
        run_protocol([Oracle(), Oracle()], ramp(50), [0], 20)


def test_protocol_uses_full_series_range():
    rep = run_protocol([Constant("zero", 0.0)], ramp(100), [90], 10)
    expected = 100 * np.sqrt(np.mean(np.arange(90, 100.0) ** 2)) / 99.0
    assert rep.mean("dataset", "zero") == pytest.approx(expected)


def test_report_text_layout():
    rep = run_protocol([Constant("A", 1.0), Flaky()], ramp(), [11], 10, dataset_name="DO")
    lines = rep.to_text().splitlines()
    assert lines[0].split() == ["Dataset", "A", "flaky", "SARIMA", "Prophet"]
    row = lines[2].split()
    assert row[0] == "DO" and row[2] == "failed" and row[-2:] == ["n/a", "n/a"]
    assert lines[-1].startswith("Time (s)")


def test_report_merge_adds_average_row():
    a = run_protocol([Constant("A", 1.0)], ramp(), [20], 10, dataset_name="x")
    b = run_protocol([Constant("A", 1.0)], ramp(), [40], 10, dataset_name="y")
    m = a.merge(b)
    assert m.datasets == ["x", "y"]
    avg = [l for l in m.to_text().splitlines() if l.startswith("Average")][0]
    assert float(avg.split()[1]) == pytest.approx((m.mean("x", "A") + m.mean("y", "A")) / 2, abs=0.01)
    with pytest.raises(ValidationError):
        a.merge(a)


def test_report_dict_timing_separate():
    rep = run_protocol([Oracle()], ramp(), [100], 10)
    assert "timing" in rep.to_dict()
    no_t = rep.to_dict(include_timing=False)
    assert "timing" not in no_t and "wall_time" not in json.dumps(no_t)


def test_standard_variants_names():
    names = [v.name for v in standard_variants()]
    assert names == ["LDS", "LDS_MR", "LDS_WMR", "DLM", "DLM_MR", "DLM_WMR", "NL", "NL_MR"]
    wmr = [v for v in standard_variants() if v.name.endswith("WMR")]
    assert all(v.reversion.lam == 0.1 for v in wmr)


def test_trajectory_csv(tmp_path):
    res = evaluate(Constant("c", 1.5), ramp(30), 10, 3)
    write_trajectory_csv(res, tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines == ["step,mean,std,truth", "1,1.5,1.0,10.0", "2,1.5,1.0,11.0", "3,1.5,1.0,12.0"]


def test_decile_means():
    assert decile_means(np.arange(100.0)) == (4.5, 94.5)


def test_reversion_beats_plain_lds_on_inflection_data(inflection_data):
    series = inflection_data.series
    starts = choose_starts(len(series), 3, 960, 1920, seed=1)
    variants = [
        ModelVariant("LDS", StructuralSpec(), None, train_len=1920),
        ModelVariant("LDS_MR", StructuralSpec(), AttractorSettings(), train_len=1920),
    ]
    rep = run_protocol(variants, series, starts, 960)
    assert rep.mean("dataset", "LDS_MR") < rep.mean("dataset", "LDS")


def test_protocol_deterministic(inflection_data):
    variants = standard_variants(train_len=960)[:3]
    a = run_protocol(variants, inflection_data.series, [1500, 2500], 300)
    b = run_protocol(variants, inflection_data.series, [1500, 2500], 300)
    assert a.to_json(include_timing=False) == b.to_json(include_timing=False)
