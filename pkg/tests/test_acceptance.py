"""Acceptance suite: one test per criterion, each at its stated tolerance.

Run with ``pytest tests/test_acceptance.py -v``; a summary section lists a
PASS/FAIL line per criterion.
"""

import json
import statistics
import sys
import time
from datetime import date, timedelta
from pathlib import Path

import numpy as np
import pytest

from epf import metrics
from epf.backtest import BacktestConfig, recalibration_days, run_backtest
from epf.cli import bundled_config, cmd_backtest
from epf.dnn import HyperConfig, forward, init_params, loss_and_gradient
from epf.features import CovariateConfig, build_raw, scale
from epf.ingest import RegimeShift, SyntheticConfig, ZoneSpec, generate_synthetic
from epf.interpret import anc, grouped_contributions
from epf.lear import coordinate_descent, cv_select_lambda, lambda_max, lasso_objective, make_cv_plan, \
    predict_normalized
from epf.significance import gw_test

sys.path.insert(0, str(Path(__file__).parent))
import oracles  # noqa: E402

GOLDEN = Path(__file__).parent / "golden"


def subgradient_violation(X, y, beta, b0, lam):
    """Independent vectorised check of the optimality conditions of RSS + lam * L1."""
    g = 2.0 * X.T @ (y - b0 - X @ beta)
    on = beta != 0
    v_on = np.abs(g[on] - lam * np.sign(beta[on]))
    v_off = np.maximum(np.abs(g[~on]) - lam, 0.0)
    return float(max(v_on.max(initial=0.0), v_off.max(initial=0.0)))


def test_c01_kkt_certificate(criterion):
    t0 = time.perf_counter()
    worst_kkt, worst_ls = 0.0, 0.0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        n = int(rng.integers(20, 201))
        p = int(rng.integers(1, min(50, n - 5) + 1))
        X = rng.standard_normal((n, p)) * rng.uniform(0.5, 2.0, p)
        y = 2.0 + X @ np.where(rng.random(p) < 0.3, rng.normal(0, 2, p), 0.0) + rng.standard_normal(n)
        lam = rng.uniform(0.01, 1.0) * lambda_max(X, y)
        beta, b0 = coordinate_descent(X, y, lam, tol=1e-6)
        worst_kkt = max(worst_kkt, subgradient_violation(X, y, beta, b0, lam))
        beta0, b00 = coordinate_descent(X, y, 0.0, tol=1e-10)
        A = np.column_stack([np.ones(n), X])
        ref = np.linalg.lstsq(A, y, rcond=None)[0]
        worst_ls = max(worst_ls, float(np.max(np.abs(np.r_[b00, beta0] - ref))))
    elapsed = time.perf_counter() - t0
    criterion(1, "LASSO KKT certificate", worst_kkt <= 1e-6 and worst_ls <= 1e-8 and elapsed < 60,
              f"max KKT residual {worst_kkt:.2e}, max |beta - lstsq| at lambda=0 {worst_ls:.2e}, {elapsed:.1f} s")


def test_c02_bruteforce(criterion):
    rows = json.loads((GOLDEN / "lasso_bruteforce.json").read_text())
    worst = -np.inf
    for row in rows:
        X, y, lam = oracles.lasso_instance(row["seed"])
        beta, b0 = coordinate_descent(X, y, lam)
        worst = max(worst, lasso_objective(X, y, beta, b0, lam) - row["grid_minimum"])
    criterion(2, "LASSO brute-force equivalence", len(rows) == 20 and worst <= 1e-6,
              f"20 seeds, max (solver - grid minimum) {worst:.2e}")


def test_c03_sparse_recovery(criterion):
    hits = 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        X = rng.standard_normal((200, 50))
        truth = np.zeros(50)
        support = rng.choice(50, 3, replace=False)
        truth[support] = rng.choice([-1.0, 1.0], 3) * rng.uniform(0.5, 2.0, 3)
        y = X @ truth + 0.01 * rng.standard_normal(200)
        plan = make_cv_plan(range(200), 7, seed, X, y)
        lam, _ = cv_select_lambda(X, y, plan)
        beta, _ = coordinate_descent(X, y, lam)
        hits += set(support) <= set(np.flatnonzero(beta)) and np.max(np.abs(beta - truth)) < 0.05
    criterion(3, "sparse recovery", hits >= 18, f"{hits}/20 seeds")


def test_c04_gradient_check(criterion):
    worst = 0.0
    for seed in range(50):
        rng = np.random.default_rng(1000 + seed)
        n_in = int(rng.integers(1, 21))
        cfg = HyperConfig(int(rng.integers(1, 17)), int(rng.integers(1, 17)), ("tanh", "sigmoid", "relu")[seed % 3],
                          ("variance-scaled-uniform", "variance-scaled-normal")[seed % 2])
        params = init_params(n_in, cfg, rng)
        for v in params.arrays().values():
            v += 0.1 * rng.standard_normal(v.shape)
        x, y = rng.standard_normal((6, n_in)), rng.standard_normal((6, 24))
        _, grads = loss_and_gradient(params, (x, y))
        for name, arr in params.arrays().items():
            fd = oracles.central_difference(lambda: float(np.mean((forward(params, x) - y) ** 2)), arr, h=1e-5)
            # elementwise; entries below 1e-6 in both are compared on the 1e-6 scale
            rel = np.abs(grads[name] - fd) / np.maximum(np.maximum(np.abs(grads[name]), np.abs(fd)), 1e-6)
            worst = max(worst, float(rel.max()))
    criterion(4, "DNN gradient check", worst < 1e-4, f"50 nets, max relative error {worst:.2e}")


def test_c05_metric_identities(criterion):
    rng = np.random.default_rng(5)
    ok = True
    worst_r2 = 0.0
    for _ in range(1000):
        n = int(rng.integers(2, 200))
        p = rng.normal(60, 40, n)
        q = p + rng.normal(0, rng.uniform(0.1, 50), n)
        naive = p + rng.normal(0, 20, n)
        ok &= metrics.rmae(p, naive, naive) == 1.0
        worst_r2 = max(worst_r2, abs(metrics.r2(p, np.full(n, p.mean()))))
        s = metrics.smape(p, q)
        ok &= 0.0 <= s <= 200.0 and metrics.rmse(p, q) >= metrics.mae(p, q)
    criterion(5, "metric identities", ok and worst_r2 <= 1e-12, f"1000 vectors, max |r2(mean)| {worst_r2:.1e}")


def test_c06_gw_size_and_power(criterion):
    rng = np.random.default_rng(6)
    n, reps = 200, 1000
    size = power = 0
    worst_sym = 0.0
    for _ in range(reps):
        ea, eb = rng.standard_normal((n, 24)), rng.standard_normal((n, 24))
        ab, ba = gw_test(ea, eb), gw_test(eb, ea)
        size += ab.p_one_sided < 0.05
        worst_sym = max(worst_sym, abs(ab.p_one_sided + ba.p_one_sided - 1.0))
        # daily losses that differ by 5 on average, with unit noise on top
        base = np.abs(rng.normal(20, 4, n))
        la, lb = base + 5.0 + rng.standard_normal(n), base
        power += gw_test(np.repeat(la[:, None] / 24, 24, 1), np.repeat(lb[:, None] / 24, 24, 1)).p_one_sided < 0.05
    size_rate, power_rate = size / reps, power / reps
    criterion(6, "GW size and power", 0.02 <= size_rate <= 0.09 and power_rate > 0.95 and worst_sym <= 0.02,
              f"size {size_rate:.3f}, power {power_rate:.3f}, max |p_AB + p_BA - 1| {worst_sym:.1e}")


@pytest.fixture(scope="module")
def coupled_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("coupled")
    t0 = time.perf_counter()
    cmd_backtest(bundled_config("coupled.json"), out)
    elapsed = time.perf_counter() - t0
    rows = {(m["label"], m["slice"]): m for m in json.loads((out / "metrics.json").read_text())["metrics"]}
    gw = json.loads((out / "gw.json").read_text())
    return rows, gw, elapsed


def test_c07_cross_border_value(coupled_run, criterion):
    rows, gw, elapsed = coupled_run
    base = rows[("ensemble base", "all")]["mae"]
    nb = rows[("ensemble AT/DE-LU/CH", "all")]["mae"]
    i, j = gw["labels"].index("ensemble base"), gw["labels"].index("ensemble AT/DE-LU/CH")
    p = gw["p_values"][i][j]
    gain = 1 - nb / base
    criterion(7, "cross-border value on synthetic", gain >= 0.10 and p < 0.05 and elapsed < 600,
              f"MAE {base:.2f} -> {nb:.2f} ({100 * gain:.1f}% lower), GW p {p:.1e}, {elapsed:.0f} s")


def test_c08_extreme_slices(coupled_run, criterion):
    rows, _, _ = coupled_run
    parts, ok = [], True
    for s in ("bottom5", "top5"):
        b, n = rows[("ensemble base", s)]["mae"], rows[("ensemble AT/DE-LU/CH", s)]["mae"]
        ok &= n <= b
        parts.append(f"{s} {b:.2f} -> {n:.2f}")
    criterion(8, "extreme-slice analogue", ok, ", ".join(parts))


RFS = ("daily", "weekly", "monthly", "once")


def test_c09_recalibration_tradeoff(criterion):
    counts = [len(recalibration_days((date(2024, 1, 1), date(2024, 12, 31)), rf)) for rf in RFS]

    zones = (ZoneSpec("BE"), ZoneSpec("DE-LU"))
    ds = generate_synthetic(SyntheticConfig(seed=9, n_days=140, zones=zones, start=date(2024, 1, 1)))
    cov = CovariateConfig("BE", ("load", "wind", "solar"), ("DE-LU",), "DE-LU")
    test = (date(2024, 3, 20), date(2024, 5, 14))  # crosses two month starts
    medians = []
    for rf in RFS:
        times = []
        for _ in range(3):
            fc = run_backtest(ds, BacktestConfig("LEAR", 56, rf, cov, test))
            times.append(fc.runtime.total_wall_seconds)
        medians.append(statistics.median(times))
    timing_ok = all(a >= b for a, b in zip(medians, medians[1:]))

    shift_day = 200
    shifted = generate_synthetic(SyntheticConfig(
        seed=11, n_days=300, zones=zones, start=date(2024, 1, 1),
        regime_shift=RegimeShift(shift_day, level_shift=25.0, load_coef_scale=2.0, coupling_scale=1.5)))
    first = date(2024, 1, 1) + timedelta(days=shift_day - 30)
    test = (first, date(2024, 1, 1) + timedelta(days=299))
    actual = shifted.day_matrix("price", "BE")[shifted.day_index(test[0]):]
    mae = {rf: metrics.mae(actual, run_backtest(shifted, BacktestConfig("LEAR", 56, rf, cov, test)).values)
           for rf in ("daily", "once")}
    ok = counts == [366, 53, 12, 1] and timing_ok and mae["daily"] <= mae["once"]
    criterion(9, "RF/CW trade-off", ok,
              f"counts {counts}, median runtimes {[round(m, 3) for m in medians]} s, "
              f"regime-shift MAE daily {mae['daily']:.2f} vs once {mae['once']:.2f}")


def test_c10_anc(criterion):
    zones = (ZoneSpec("AT", spike_prob=0.02, spike_scale=40), ZoneSpec("BE", mirror_of="AT", mirror_weight=0.9))
    ds = generate_synthetic(SyntheticConfig(seed=10, n_days=150, zones=zones, start=date(2024, 1, 1)))
    cov = CovariateConfig("BE", ("load", "wind", "solar"), ("AT",), "AT")
    test = (date(2024, 4, 1), date(2024, 5, 29))
    res = run_backtest(ds, BacktestConfig("LEAR", 56, "weekly", cov, test), keep_fits=True)
    raw = build_raw(ds, cov, test[0], test[1])
    pairs, worst = [], 0.0
    for fit, d0, d1 in res.fits:
        days = [d0 + timedelta(days=i) for i in range((d1 - d0).days + 1)]
        rows = scale(raw, days, fit.x_scaler, fit.y_scaler)
        C, _ = grouped_contributions(fit, rows)
        worst = max(worst, float(np.max(np.abs(C.sum(axis=1) + fit.intercept - predict_normalized(fit, rows.X)))))
        pairs.append((fit, rows))
    rep = anc(pairs)
    n_hours = len(res.forecast.days) * 24
    ok = worst <= 1e-10 and rep.ranking[0] == "price AT D" and rep.n_forecasts == n_hours
    criterion(10, "ANC reconstruction and ranking", ok,
              f"max reconstruction error {worst:.1e} over {rep.n_forecasts} hours, top group {rep.ranking[0]!r}")


def test_c11_determinism(tmp_path, criterion):
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        manifest = cmd_backtest(bundled_config("small.json"), out)
        runs.append((out, manifest))
    (a, ma), (b, mb) = runs
    csvs = [f for f in ma["files"] if f.endswith(".csv")]
    same = ma["files"] == mb["files"] and all((a / f).read_bytes() == (b / f).read_bytes() for f in ma["files"])
    same &= (a / "manifest.json").read_bytes() == (b / "manifest.json").read_bytes()
    criterion(11, "determinism", same and len(csvs) >= 10,
              f"{len(ma['files'])} files incl. {len(csvs)} CSVs byte-identical across two runs")
