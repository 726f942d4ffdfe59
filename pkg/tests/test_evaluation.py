import math

import numpy as np
import pytest

from groupfts.evaluation import (EvaluationError, EvaluationPlan, expanding_window, format_report, mafe, rmsfe,
                                 summarize)
from groupfts.pipeline import ForecastOptions
from groupfts.synthetic import SyntheticSpec, generate

OPTS = ForecastOptions(p_max=1, q_max=1)


@pytest.mark.parametrize("actual, forecast, expected", [
    ([0.01, 0.02], [0.01, 0.02], 0.0),
    ([0.01, 0.02], [0.02, 0.01], 0.01),
    ([[0.01, 0.02], [0.03, 0.04]], [[0.02, 0.01], [0.02, 0.05]], 0.01),
])
def test_mafe_hand_cases(actual, forecast, expected):
    assert mafe(actual, forecast) == pytest.approx(expected, abs=1e-15)


def test_rmsfe_hand_case():
    assert rmsfe([0.10, 0.02], [0.05, 0.02]) == pytest.approx(math.sqrt(0.0025 / 2))
    assert rmsfe([0.10, 0.02], [0.05, 0.02]) == pytest.approx(0.0354, abs=1e-4)


def test_missing_actual_adds_nothing_but_keeps_denominator():
    a = [0.01, np.nan, 0.0]
    f = [0.03, 5.0, 7.0]
    assert mafe(a, f, h=1, A=3, H=1) == pytest.approx(0.02 / 3)
    assert mafe(a, f, h=1, A=3, H=1, divide_by_observed=True) == pytest.approx(0.02)


def test_denominator_uses_horizon_window_count():
    # H = 5, h = 3: three windows contribute, 2 ages each
    a = np.full((3, 2), 0.02)
    f = np.full((3, 2), 0.01)
    assert mafe(a, f, h=3, A=2, H=5) == pytest.approx(0.01)
    assert rmsfe(a, f, h=3, A=2, H=5) == pytest.approx(0.01)


def test_empty_input():
    with pytest.raises(EvaluationError):
        mafe(np.empty((0, 2)), np.empty((0, 2)))


@pytest.mark.parametrize("first, last, H, counts", [
    (2011, 2016, 5, [5, 4, 3, 2, 1]),
    (2011, 2016, 1, [5]),
    (2011, 2016, 3, [5, 4, 3]),
    (2014, 2016, 2, [2, 1]),
])
def test_window_counts(first, last, H, counts):
    plan = EvaluationPlan(first, last, H)
    assert [plan.n_windows(h) for h in range(1, H + 1)] == counts
    assert sum(counts) == sum(plan.steps(T) for T in plan.train_ends)


@pytest.mark.parametrize("kwargs", [dict(first_train_end=2016), dict(max_horizon=0), dict(max_horizon=6),
                                    dict(methods=("base", "WLS"))])
def test_plan_validation(kwargs):
    with pytest.raises(ValueError):
        EvaluationPlan(**kwargs)


@pytest.fixture(scope="module")
def small_run():
    panel, _ = generate(SyntheticSpec(seed=3, n_areas=2, n_regions=1, n_years=12, first_year=2000))
    plan = EvaluationPlan(2008, 2011, 3)
    archive = expanding_window(panel, plan, OPTS)
    return panel, plan, archive, summarize(archive, panel)


def test_summary_matches_brute_force(small_run):
    panel, plan, archive, report = small_run
    A = len(panel.ages)
    for model, method in [("FPCA", "base"), ("MFPCA", "MinT"), ("MFPCA", "Comb_av")]:
        for i, key in enumerate(panel.series):
            per_h = []
            for h in range(1, 4):
                total_abs = total_sq = 0.0
                count = 0
                for T in plan.train_ends:
                    if T + h > plan.last_year:
                        continue
                    count += 1
                    fc = archive.windows[T].get(model, method)[h - 1, i]
                    act = panel.rates[panel.year_index(T + h), :, i]
                    for a in range(A):
                        if np.isfinite(act[a]) and act[a] > 0:
                            total_abs += abs(act[a] - fc[a])
                            total_sq += (act[a] - fc[a]) ** 2
                got = report.series_errors[(model, method, str(key), h)]
                assert got[0] == pytest.approx(total_abs / (A * count), rel=1e-12)
                assert got[1] == pytest.approx(math.sqrt(total_sq / (A * count)), rel=1e-12)
                per_h.append(got[0])
            assert report.series_errors[(model, method, str(key), 0)][0] == pytest.approx(np.mean(per_h))


def test_level_mean_and_rmsfe_bound(small_run):
    panel, _, _, report = small_run
    for (model, method, level, h), (a, r) in report.level_errors.items():
        assert r >= a - 1e-15
        members = [s for s, lv in report.series_level.items() if lv == level]
        assert a == pytest.approx(np.mean([report.series_errors[(model, method, s, h)][0] for s in members]))
    assert set(report.levels()) == {"National", "Sex", "Region", "Sex x Region", "Area", "Sex x Area"}


def test_summary_is_deterministic(small_run):
    panel, plan, archive, report = small_run
    again = summarize(expanding_window(panel, plan, OPTS), panel)
    assert again.level_errors == report.level_errors


def test_report_text(small_run):
    text = format_report(small_run[3])
    assert text.startswith("Mean(MAFE) x 100")
    assert "Sex x Area" in text and "MFPCA MinT" in text


def test_missing_years_raise():
    panel, _ = generate(SyntheticSpec(seed=1, n_years=10, first_year=2000))
    with pytest.raises(EvaluationError, match="lacks years"):
        expanding_window(panel, EvaluationPlan(2008, 2012, 2), OPTS)
