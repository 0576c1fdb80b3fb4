import json
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import pytest

from epf.significance import gw_matrix, gw_test, matrix_to_csv, matrix_to_json, matrix_to_text

sys.path.insert(0, str(Path(__file__).parent))
import oracles  # noqa: E402

GOLDEN = json.loads((Path(__file__).parent / "golden" / "gw_reference.json").read_text())


def daily_errors(daily_loss):
    """Errors whose daily absolute-loss sums equal ``daily_loss`` (spread over 24 hours)."""
    return np.repeat(np.asarray(daily_loss)[:, None] / 24.0, 24, axis=1)


def test_golden_reference():
    res = gw_test(daily_errors(GOLDEN["loss_a"]), daily_errors(GOLDEN["loss_b"]))
    assert res.statistic == pytest.approx(GOLDEN["statistic"], rel=1e-10)
    assert res.p_one_sided == pytest.approx(GOLDEN["p_one_sided"], rel=1e-10)
    assert res.n == 59 and res.instrument_dim == 2 and not res.degenerate


@pytest.mark.parametrize("seed", range(5))
def test_matches_explicit_sums(seed):
    rng = np.random.default_rng(seed)
    ea = rng.normal(0, 3, (40, 24))
    eb = rng.normal(0, 2.8, (40, 24))
    res = gw_test(ea, eb)
    stat, p = oracles.gw_statistic(np.abs(ea).sum(axis=1), np.abs(eb).sum(axis=1))
    assert res.statistic == pytest.approx(stat, rel=1e-9) and res.p_one_sided == pytest.approx(p, rel=1e-9)


def test_identical_errors_are_degenerate():
    e = np.random.default_rng(0).normal(size=(60, 24))
    res = gw_test(e, e)
    assert res.degenerate and res.p_one_sided == 1.0


def test_large_gap_and_swap():
    rng = np.random.default_rng(1)
    eb = rng.normal(size=(200, 24))
    ea = eb + 5 + 0.1 * rng.normal(size=(200, 24))
    ab, ba = gw_test(ea, eb), gw_test(eb, ea)
    assert ab.p_one_sided < 0.01 and ba.p_one_sided > 0.99
    assert ab.p_one_sided + ba.p_one_sided == pytest.approx(1.0)


def test_input_checks():
    with pytest.raises(ValueError, match="at least 30"):
        gw_test(np.zeros((29, 24)), np.ones((29, 24)))
    with pytest.raises(ValueError):
        gw_test(np.zeros((40, 24)), np.zeros((40, 23)))
    with pytest.raises(ValueError):
        gw_test(np.zeros((40, 12)), np.zeros((40, 12)))


@dataclass
class F:
    label: str
    values: np.ndarray


def test_matrix():
    rng = np.random.default_rng(3)
    actual = rng.normal(50, 10, (60, 24))
    good = F("good", actual + rng.normal(0, 1, actual.shape))
    mid = F("mid", actual + rng.normal(0, 5, actual.shape))
    bad = F("bad", actual + rng.normal(0, 5.5, actual.shape))
    labels, pv = gw_matrix([mid, good, bad, F("copy", good.values.copy())], actual)
    assert labels == ["mid", "good", "bad", "copy"]
    assert np.isnan(np.diag(pv)).all()
    assert pv[0, 1] < 0.05 and pv[2, 1] < 0.05  # good beats both rows
    assert pv[1, 3] == 1.0 and pv[3, 1] == 1.0  # duplicates are degenerate
    off = ~np.eye(4, dtype=bool)
    sym = (pv + pv.T)[off]
    assert np.all((np.abs(sym - 1) < 0.02) | (sym == 2.0))
    with pytest.raises(ValueError):
        gw_matrix([good], actual)


def test_renderings():
    labels = ["a", "b"]
    pv = np.array([[np.nan, 0.01], [0.99, np.nan]])
    assert matrix_to_csv(labels, pv).splitlines() == ["benchmark,a,b", "a,,0.01", "b,0.99,"]
    doc = json.loads(matrix_to_json(labels, pv))
    assert doc["p_values"] == [[None, 0.01], [0.99, None]]
    text = matrix_to_text(labels, pv)
    assert "0.010*" in text and "0.990 " in text
