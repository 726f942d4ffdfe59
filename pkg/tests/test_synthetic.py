import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from groupfts.data_model import SeriesKey, verify_coherence
from groupfts.decomposition import decompose
from groupfts.synthetic import (ScoreDynamics, SyntheticSpec, eigenfunctions, generate, true_rates,
                                write_truth)


def test_reproducible_bit_for_bit():
    spec = SyntheticSpec(seed=5)
    a, ta = generate(spec)
    b, tb = generate(spec)
    np.testing.assert_array_equal(a.deaths, b.deaths)
    np.testing.assert_array_equal(a.exposures, b.exposures)
    np.testing.assert_array_equal(ta.scores, tb.scores)
    c, _ = generate(SyntheticSpec(seed=6))
    assert not np.array_equal(a.deaths, c.deaths)


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 10_000), st.booleans())
def test_generated_panels_are_coherent(seed, poisson):
    panel, _ = generate(SyntheticSpec(seed=seed, n_years=3, poisson=poisson))
    for year in panel.years:
        assert verify_coherence(panel, int(year)) <= 1e-10


def test_positive_rates_and_exposures():
    panel, truth = generate(SyntheticSpec(seed=1))
    assert np.all(panel.exposures > 0)
    assert np.all(panel.deaths >= 1)
    assert np.all(np.exp(truth.log_rates) > 0)


@pytest.mark.parametrize("noise", [0.02, 0.05, 0.2])
def test_rounding_is_small_against_noise(noise):
    panel, _ = generate(SyntheticSpec(seed=3, noise_scale=noise))
    cols = [panel.series_index(k) for k in panel.structure.bottom_keys]
    # rounding moves log D by at most 0.5 / D
    assert 0.5 / panel.deaths[:, :, cols].min() <= noise / 10


def test_mean_curves_increase_above_65():
    _, truth = generate(SyntheticSpec(seed=0))
    x = truth.ages.x
    assert np.all(np.diff(truth.means, axis=0)[x[:-1] >= 65] > 0)


def test_noise_free_rank_one_block():
    spec = SyntheticSpec(seed=4, noise_scale=0.0, latent_rank=1)
    panel, truth = generate(spec)
    key = truth.bottom_keys[0]
    logr = np.log(panel.rates[:, :, panel.series_index(key)])
    lam = decompose(logr[None]).eigenvalues
    # numerically zero eigenvalues may be dropped altogether
    assert len(lam) == 1 or lam[1] / lam[0] <= 1e-8


def test_full_correlation_gives_identical_shapes():
    spec = SyntheticSpec(seed=8, noise_scale=0.0, cross_series_correlation=1.0)
    panel, truth = generate(spec)
    a = np.log(panel.rates[:, :, panel.series_index(truth.bottom_keys[0])])
    b = np.log(panel.rates[:, :, panel.series_index(truth.bottom_keys[2])])
    dev = (a - b) - (a - b).mean(axis=0)
    assert np.max(np.abs(dev)) <= 1e-10


def test_eigenfunctions_orthonormal():
    x = np.linspace(2, 87.5, 18)
    phi = eigenfunctions(x, 4)
    np.testing.assert_allclose(phi @ phi.T, np.eye(4), atol=1e-12)


def test_future_years_and_truth_rates():
    panel, truth = generate(SyntheticSpec(seed=2, n_years=10, n_future=3))
    assert len(panel.years) == 10 and len(truth.years) == 13
    rates = true_rates(truth)
    j = truth.full_panel.series_index(truth.bottom_keys[1])
    np.testing.assert_allclose(rates[:, :, j], np.exp(truth.log_rates[:, :, 1]))


def test_structure_shapes():
    assert len(SyntheticSpec(n_areas=11, n_regions=0).structure().all_keys) == 1 + 2 + 11 * 3
    s = SyntheticSpec(n_areas=4, n_regions=2).structure()
    assert SeriesKey("Area", "A4", "M") in s.bottom_keys


@pytest.mark.parametrize("kwargs", [dict(cross_series_correlation=1.5), dict(latent_rank=0), dict(noise_scale=-1),
                                    dict(n_years=1)])
def test_spec_validation(kwargs):
    with pytest.raises(ValueError):
        SyntheticSpec(**kwargs)


def test_dynamics_validation():
    with pytest.raises(ValueError):
        ScoreDynamics(1, 0, 0, ar=(1.2,))
    with pytest.raises(ValueError):
        ScoreDynamics(2, 0, 0, ar=(0.5,))


def test_truth_bundle(tmp_path):
    _, truth = generate(SyntheticSpec(seed=1, n_years=3))
    write_truth(truth, tmp_path)
    for name in ("truth_rates.csv", "truth_scores.csv", "truth_eigenfunctions.csv", "truth_means.csv"):
        with open(tmp_path / name) as fh:
            rows = list(csv.reader(fh))
        assert len(rows) > 1
