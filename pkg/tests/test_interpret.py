import sys
from dataclasses import replace
from datetime import date
from pathlib import Path

import numpy as np
import pytest

from epf.features import CovariateConfig, DesignMatrix, ScalerState, build_design
from epf.ingest import SyntheticConfig, ZoneSpec, generate_synthetic
from epf.interpret import GroupMismatchError, anc, grouped_contributions
from epf.lear import LassoFit, fit_lear, predict_normalized

sys.path.insert(0, str(Path(__file__).parent))
import oracles  # noqa: E402


def toy(beta, X, groups):
    cols = tuple(f"c{i}" for i in range(len(beta)))
    gmap = dict(zip(cols, groups))
    s = ScalerState("Norm", np.zeros(len(cols)), np.ones(len(cols)))
    ys = ScalerState("Norm", [0.0], [1.0])
    fit = LassoFit(cols, np.asarray(beta, float), 0.5, 1.0, s, ys, groups=gmap)
    d = DesignMatrix((), cols, gmap, np.asarray(X, float), np.zeros(len(X)), s, ys)
    return fit, d


def test_absolute_value_of_signed_contributions():
    fit, d = toy([2.0], [[1.0], [-1.0], [1.0], [-1.0]], ["g"])
    rep = anc([(fit, d)])
    assert rep.values == {"g": 2.0} and rep.n_forecasts == 4


def test_zero_coefficients():
    fit, d = toy([0.0, 0.0], np.ones((3, 2)), ["a", "b"])
    assert anc([(fit, d)]).values == {"a": 0.0, "b": 0.0}


def test_against_loop_oracle():
    rng = np.random.default_rng(0)
    groups = ["a", "b", "a", "c", "b"]
    fit, d = toy(rng.normal(size=5), rng.normal(size=(7, 5)), groups)
    C, names = grouped_contributions(fit, d)
    assert names == ["a", "b", "c"]
    ref = oracles.contributions(d.X, fit.beta, groups, names)
    assert np.allclose(C, ref, rtol=0, atol=1e-14)
    assert np.allclose(C.sum(axis=1) + fit.intercept, predict_normalized(fit, d.X), rtol=0, atol=1e-12)


def test_pairs_each_row_with_its_fit():
    f1, d1 = toy([1.0], [[3.0], [3.0]], ["g"])
    f2, d2 = toy([-2.0], [[1.0]], ["g"])
    rep = anc([(f1, d1), (f2, d2)])
    assert rep.values["g"] == pytest.approx((3 + 3 + 2) / 3)
    assert rep.to_dict()["ranking"] == ["g"]


def test_mismatch_errors():
    fit, d = toy([1.0, 2.0], np.ones((2, 2)), ["a", "b"])
    with pytest.raises(GroupMismatchError):
        grouped_contributions(fit, replace(d, columns=("c1", "c0")))
    with pytest.raises(GroupMismatchError):
        grouped_contributions(fit, replace(d, groups={"c0": "a", "c1": "z"}))
    with pytest.raises(GroupMismatchError):
        grouped_contributions(fit, d, groups=["a"])
    with pytest.raises(ValueError):
        anc([])


def test_ranking_is_descending():
    fit, d = toy([1.0, 5.0, 3.0], np.ones((2, 3)), ["x", "y", "z"])
    assert anc([(fit, d)]).ranking == ["y", "z", "x"]


def test_mirror_zone_ranks_first_and_reconstructs():
    zones = (ZoneSpec("AT", spike_prob=0.02, spike_scale=40), ZoneSpec("BE", mirror_of="AT", mirror_weight=0.9))
    ds = generate_synthetic(SyntheticConfig(seed=1, n_days=120, zones=zones, start=date(2024, 1, 1)))
    cfg = CovariateConfig("BE", ("load", "wind", "solar"), ("AT",), "AT")
    d = build_design(ds, cfg, (date(2024, 1, 8), date(2024, 4, 29)))
    fit = fit_lear(d, tol=1e-3, relative_tol=True)
    rep = anc([(fit, d)])
    assert rep.ranking[0] == "price AT D"
    C, _ = grouped_contributions(fit, d)
    assert np.max(np.abs(C.sum(axis=1) + fit.intercept - predict_normalized(fit, d.X))) < 1e-10
