import math
from datetime import date, datetime, timedelta, timezone

import numpy as np
import pytest
from hypothesis import given, strategies as st

from epf.backtest import (
    BacktestConfig,
    BacktestError,
    DnnSettings,
    EnsembleError,
    ForecastSet,
    RuntimeReport,
    actual_prices,
    ensemble,
    naive_forecast,
    read_forecast_csv,
    recalibration_days,
    run_backtest,
)
from epf.dnn import HyperConfig
from epf.features import CovariateConfig, MissingDataError
from epf.timeseries import HourlySeries, MarketDataset

COV = CovariateConfig("BE", ("load", "wind"), ("DE-LU",), "DE-LU")
START = date(2023, 1, 2)  # small_market fixture


def price_dataset(values, start=date(2024, 1, 1)):
    v = np.asarray(values, dtype=float).reshape(-1)
    s = HourlySeries("price", "BE", "EUR/MWh", datetime(start.year, start.month, start.day, tzinfo=timezone.utc),
                     timedelta(hours=1), v)
    return MarketDataset({s.key: s}, (start, start + timedelta(days=len(v) // 24 - 1)))


class TestSchedule:
    year = (date(2024, 1, 1), date(2024, 12, 31))

    def test_counts_over_2024(self):
        counts = {rf: len(recalibration_days(self.year, rf)) for rf in ("daily", "weekly", "monthly", "once")}
        assert counts == {"daily": 366, "weekly": 53, "monthly": 12, "once": 1}

    def test_monthly_first_quarter(self):
        assert recalibration_days((date(2024, 1, 1), date(2024, 3, 31)), "monthly") == [
            date(2024, 1, 1), date(2024, 2, 1), date(2024, 3, 1)]

    def test_anchors(self):
        days = recalibration_days((date(2024, 1, 3), date(2024, 1, 20)), "weekly")
        assert days == [date(2024, 1, 3), date(2024, 1, 8), date(2024, 1, 15)]
        assert recalibration_days((date(2024, 1, 15), date(2024, 3, 2)), "monthly") == [
            date(2024, 1, 15), date(2024, 2, 1), date(2024, 3, 1)]

    @given(st.dates(date(2000, 1, 1), date(2040, 1, 1)), st.integers(0, 800))
    def test_monotone_in_frequency(self, first, n):
        r = (first, first + timedelta(days=n))
        c = [len(recalibration_days(r, rf)) for rf in ("daily", "weekly", "monthly", "once")]
        assert c[0] >= c[1] >= c[2] >= c[3] == 1 and c[0] == n + 1


class TestNaive:
    def test_constant_and_weekly_periodic(self):
        assert np.all(naive_forecast(price_dataset(np.full((30, 24), 37.5)), (date(2024, 1, 8), date(2024, 1, 30)),
                                     "BE").values == 37.5)
        week = np.random.default_rng(0).normal(50, 10, (7, 24))
        ds = price_dataset(np.tile(week, (5, 1)))
        rng_ = (date(2024, 1, 8), date(2024, 2, 4))
        assert np.array_equal(naive_forecast(ds, rng_, "BE").values, actual_prices(ds, rng_, "BE").values)

    def test_single_value(self):
        v = np.zeros((20, 24))
        v[3, 5] = 42.0
        fc = naive_forecast(price_dataset(v), (date(2024, 1, 11), date(2024, 1, 11)), "BE")
        assert fc.values[0, 5] == 42.0 and fc.values.sum() == 42.0

    def test_needs_history(self):
        with pytest.raises(BacktestError):
            naive_forecast(price_dataset(np.zeros((20, 24))), (date(2024, 1, 5), date(2024, 1, 10)), "BE")


def member(label, values, days=None):
    days = days or tuple(date(2024, 1, 1) + timedelta(days=i) for i in range(len(values)))
    return ForecastSet(label, days, values)


class TestEnsemble:
    def test_identical_members(self):
        x = np.random.default_rng(1).normal(50, 20, (3, 24))
        e = ensemble([member(f"m{i}", x) for i in range(8)], strict=True)
        assert np.array_equal(e.values, x)

    def test_symmetric_members_cancel(self):
        x = np.random.default_rng(2).normal(0, 30, (2, 24))
        assert np.all(ensemble([member("a", x), member("b", -x)]).values == 0.0)

    def test_hand_mean(self):
        vals = [10, 20, 30, 40, 10, 20, 30, 40]
        e = ensemble([member(f"m{i}", np.full((1, 24), v)) for i, v in enumerate(vals)])
        assert np.all(e.values == 25.0)

    @given(st.lists(st.floats(-1e6, 1e6), min_size=2, max_size=8), st.randoms(use_true_random=False))
    def test_member_order_does_not_matter(self, cells, shuffle):
        ms = [member(f"m{i}", np.full((1, 24), v)) for i, v in enumerate(cells)]
        perm = list(ms)
        shuffle.shuffle(perm)
        assert np.array_equal(ensemble(ms).values, ensemble(perm).values)

    def test_errors(self):
        a = member("a", np.zeros((2, 24)))
        b = member("b", np.zeros((2, 24)), (date(2024, 1, 2), date(2024, 1, 3)))
        with pytest.raises(EnsembleError, match="'b'"):
            ensemble([a, b])
        with pytest.raises(EnsembleError):
            ensemble([a, a], strict=True)
        with pytest.raises(EnsembleError):
            ensemble([])

    def test_runtime_is_slowest_member(self):
        rts = [RuntimeReport(t, t / 2, 1) for t in (3.0, 5.0, 1.0)]
        ms = [ForecastSet(f"m{i}", (date(2024, 1, 1), date(2024, 1, 2)), np.zeros((2, 24)), r)
              for i, r in enumerate(rts)]
        rt = ensemble(ms).runtime
        assert rt.total_wall_seconds == 5.0 and rt.per_day_average_seconds == 2.5 and rt.sum_wall_seconds == 9.0


class TestForecastSet:
    def test_csv_round_trip(self, tmp_path):
        x = np.random.default_rng(3).normal(50, 20, (4, 24))
        fc = member("LEAR CW56 base", x)
        fc.write_csv(tmp_path / "f.csv")
        back = read_forecast_csv(tmp_path / "f.csv")
        assert back.label == fc.label and back.days == fc.days and np.array_equal(back.values, x)

    def test_csv_errors(self, tmp_path):
        p = tmp_path / "bad.csv"
        p.write_text("day,hour,value,label\n2024-01-01,24,1.0,a\n")
        with pytest.raises(ValueError, match="hour 24"):
            read_forecast_csv(p)
        p.write_text("day,hour,value,label\n2024-01-01,0,1.0,a\n")
        with pytest.raises(ValueError, match="missing hours"):
            read_forecast_csv(p)
        p.write_text("day,value\n")
        with pytest.raises(ValueError, match="missing columns"):
            read_forecast_csv(p)

    def test_contiguity(self):
        with pytest.raises(ValueError):
            ForecastSet("x", (date(2024, 1, 1), date(2024, 1, 3)), np.zeros((2, 24)))


class TestRun:
    def cfg(self, rf="weekly", first=date(2023, 2, 15), last=date(2023, 2, 28), **kw):
        return BacktestConfig("LEAR", 28, rf, COV, (first, last), **kw)

    def test_lear_backtest(self, small_market):
        res = run_backtest(small_market, self.cfg(), keep_fits=True)
        fc = res.forecast
        assert fc.label == "LEAR CW28 DE-LU" and len(fc) == 14 and np.all(np.isfinite(fc.values))
        assert fc.runtime.recalibration_count == 3 == len(res.fits)
        assert fc.runtime.per_day_average_seconds == pytest.approx(fc.runtime.total_wall_seconds / 14)
        assert [(f[1], f[2]) for f in res.fits] == [(date(2023, 2, 15), date(2023, 2, 19)),
                                                    (date(2023, 2, 20), date(2023, 2, 26)),
                                                    (date(2023, 2, 27), date(2023, 2, 28))]
        naive = naive_forecast(small_market, fc.days and (fc.days[0], fc.days[-1]), "BE")
        actual = actual_prices(small_market, (fc.days[0], fc.days[-1]), "BE")
        assert np.mean(np.abs(fc.values - actual.values)) < np.mean(np.abs(naive.values - actual.values))

    def test_daily_first_day_reproduced(self, small_market):
        full = run_backtest(small_market, self.cfg("daily", last=date(2023, 2, 19)))
        one = run_backtest(small_market, self.cfg("daily", last=date(2023, 2, 15)))
        assert np.array_equal(full.values[0], one.values[0])

    def test_deterministic(self, small_market):
        a = run_backtest(small_market, self.cfg("once"))
        b = run_backtest(small_market, self.cfg("once"))
        assert np.array_equal(a.values, b.values)

    def test_dnn_backtest(self, small_market):
        hyper = HyperConfig(16, 16, epochs_max=40, patience=10)
        cfg = BacktestConfig("DNN", 28, "weekly", COV, (date(2023, 2, 15), date(2023, 2, 21)),
                             dnn=DnnSettings(hyper=hyper))
        res = run_backtest(small_market, cfg, keep_fits=True)
        assert res.hyper == hyper and res.forecast.runtime.recalibration_count == 2
        assert np.array_equal(res.forecast.values, run_backtest(small_market, cfg).values)

    def test_window_checks(self, small_market):
        with pytest.raises(BacktestError, match="needs data from"):
            run_backtest(small_market, self.cfg(first=date(2023, 2, 1)))
        with pytest.raises(BacktestError, match="ends after"):
            run_backtest(small_market, self.cfg(last=date(2023, 6, 1)))
        for bad in ({"model": "GBM"}, {"rf": "hourly"}, {"cw_days": 3}):
            args = {"model": "LEAR", "cw_days": 28, "rf": "daily"} | bad
            with pytest.raises(ValueError):
                BacktestConfig(args["model"], args["cw_days"], args["rf"], COV, (date(2023, 2, 15),) * 2)

    def test_model_errors_carry_the_day(self, small_market):
        s = small_market.get("load", "BE")
        v = s.values.copy()
        v[(date(2023, 2, 20) - START).days * 24 + 3] = math.nan
        series = dict(small_market.series)
        series[s.key] = s.replace_values(v)
        broken = MarketDataset(series, small_market.span, small_market.holidays)
        with pytest.raises(MissingDataError, match="load/BE is missing at 2023-02-20T03:00"):
            run_backtest(broken, self.cfg())

    def test_model_errors_name_the_day(self, small_market, monkeypatch):
        import epf.lear

        real = epf.lear.fit_lear

        def flaky(design, **kw):
            if design.days[-1] == date(2023, 2, 19):
                raise epf.lear.ConvergenceError("stuck")
            return real(design, **kw)

        monkeypatch.setattr(epf.lear, "fit_lear", flaky)
        with pytest.raises(BacktestError, match="failed on 2023-02-20: stuck"):
            run_backtest(small_market, self.cfg())
