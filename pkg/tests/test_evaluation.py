import json

import numpy as np
import pytest

from pcqkit.errors import DegenerateInput
from pcqkit.evaluation import (error_stats, evaluate, fit_logistic, logistic,
                               pearson, spearman)


# ---------------------------------------------------------------------------
# correlation statistics

def test_pearson_hand_value():
    # x = 1,2,3  y = 1,3,2: cov = 1/3, sx = sqrt(2/3), sy = sqrt(2/3)
    assert pearson([1, 2, 3], [1, 3, 2]) == pytest.approx(0.5, abs=1e-12)
    assert pearson([1, 2, 3], [2, 4, 6]) == pytest.approx(1.0, abs=1e-12)
    assert pearson([1, 2, 3], [6, 4, 2]) == pytest.approx(-1.0, abs=1e-12)


def test_spearman_hand_value_and_ties():
    assert spearman([1, 2, 3], [1, 3, 2]) == pytest.approx(0.5, abs=1e-12)
    # tied inputs share the average rank: x ranks 1.5, 1.5, 3
    assert spearman([5, 5, 9], [1, 2, 3]) == pytest.approx(
        np.sqrt(3.0) / 2.0, abs=1e-12)


def test_correlation_degenerate_input():
    with pytest.raises(DegenerateInput):
        pearson([1.0, 1.0, 1.0], [1, 2, 3])
    with pytest.raises(DegenerateInput):
        spearman([1, 2, 3], [4.0, 4.0, 4.0])


def test_spearman_invariant_under_monotone_transform():
    rng = np.random.default_rng(1)
    x = rng.normal(size=50)
    y = rng.normal(size=50)
    base = spearman(x, y)
    for transform in (np.exp, np.tanh, lambda v: v ** 3, lambda v: 5 * v + 2):
        assert spearman(transform(x), y) == pytest.approx(base, abs=1e-12)


# ---------------------------------------------------------------------------
# logistic fitting

def test_logistic_self_recovery():
    beta = np.array([0.1, 0.9, 1.7, 0.4])
    x = np.linspace(-1.5, 2.5, 60)
    y = logistic(x, beta)
    fit = fit_logistic(x, y)
    assert fit.rmse < 1e-6
    assert np.allclose(fit.beta, beta, atol=1e-3)
    assert np.allclose(fit(x), y, atol=1e-6)


def test_logistic_matches_best_line_on_linear_data():
    # the near-linear surrogate start guarantees the fit never loses to
    # ordinary least squares on straight-line data
    rng = np.random.default_rng(2)
    x = rng.uniform(0, 10, size=40)
    y = 0.31 * x + 1.2
    fit = fit_logistic(x, y)
    assert fit.rmse <= 1e-9


def test_logistic_beats_line_on_noisy_data():
    rng = np.random.default_rng(3)
    x = np.linspace(0, 1, 80)
    y = logistic(x, np.array([0.0, 1.0, 12.0, 0.5])) + \
        0.02 * rng.normal(size=80)
    fit = fit_logistic(x, y)
    slope, icept = np.polyfit(x, y, 1)
    line_rmse = float(np.sqrt(np.mean((slope * x + icept - y) ** 2)))
    assert fit.rmse < line_rmse


def test_logistic_handles_decreasing_metric():
    x = np.linspace(0, 1, 30)
    y = logistic(x, np.array([0.9, 0.1, 6.0, 0.5]))  # high score = low MOS
    fit = fit_logistic(x, y)
    assert fit.rmse < 1e-6


def test_logistic_degenerate_inputs():
    with pytest.raises(DegenerateInput):
        fit_logistic([1.0, 2.0, 3.0, 4.0], [1.0, 2.0, 3.0, 4.0])  # < 5 rows
    with pytest.raises(DegenerateInput):
        fit_logistic(np.ones(8), np.linspace(0, 1, 8))  # constant scores


def test_logistic_extreme_arguments_do_not_overflow():
    beta = np.array([0.0, 1.0, 50.0, 0.0])
    values = logistic(np.array([-1e6, 1e6]), beta)
    assert np.all(np.isfinite(values))
    assert values[0] == pytest.approx(0.0, abs=1e-12)
    assert values[1] == pytest.approx(1.0, abs=1e-12)


# ---------------------------------------------------------------------------
# error statistics

def test_error_stats_hand_values():
    rmse, ratio, fallback = error_stats(
        [1.0, 2.0, 4.0], [1.0, 2.0, 3.0], mos_std=[0.3, 0.3, 0.3])
    assert rmse == pytest.approx(np.sqrt(1.0 / 3.0), abs=1e-12)
    assert ratio == pytest.approx(1.0 / 3.0, abs=1e-12)
    assert fallback is False


def test_error_stats_fallback_threshold():
    rng = np.random.default_rng(4)
    y = rng.normal(size=200)
    pred = y + rng.normal(size=200)
    rmse, ratio, fallback = error_stats(pred, y)
    assert fallback is True
    resid = np.abs(pred - y)
    assert ratio == pytest.approx(np.mean(resid > 2.0 * rmse), abs=1e-12)


# ---------------------------------------------------------------------------
# full report

def test_evaluate_normalizes_and_reports():
    rng = np.random.default_rng(5)
    x = np.linspace(0, 1, 40)
    mos = 1.0 + 4.0 * logistic(x, np.array([0.0, 1.0, 8.0, 0.5]))
    noisy = x + 0.01 * rng.normal(size=40)
    report = evaluate([("good", x), ("noisy", noisy)], mos,
                      mos_std=np.full(40, 0.2))
    assert report.mos_min == pytest.approx(float(mos.min()))
    assert report.mos_max == pytest.approx(float(mos.max()))
    good, noisy_report = report.metrics
    assert good.name == "good"
    assert good.pcc > 0.9999 and good.srocc == pytest.approx(1.0)
    assert good.rmse < 1e-6
    assert noisy_report.pcc < good.pcc + 1e-12
    assert not good.or_fallback

    payload = json.loads(report.to_json())
    assert [m["name"] for m in payload["metrics"]] == ["good", "noisy"]
    table = report.table()
    assert "PCC" in table and "good" in table


def test_evaluate_fallback_note_in_table():
    x = np.linspace(0, 1, 20)
    mos = 1.0 + 3.0 * x
    report = evaluate([("m", x)], mos)
    assert report.metrics[0].or_fallback
    assert "2 RMSE" in report.table()


def test_evaluate_constant_mos_rejected():
    with pytest.raises(DegenerateInput):
        evaluate([("m", np.linspace(0, 1, 10))], np.full(10, 3.0))
