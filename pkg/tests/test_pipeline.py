from dataclasses import replace

import numpy as np
import pytest

from groupfts import artifacts
from groupfts.data_model import build_summing_matrix, coherence_residual
from groupfts.pipeline import ForecastOptions, model_blocks, run_window
from groupfts.smoothing import smooth_panel
from groupfts.synthetic import SyntheticSpec, generate


@pytest.fixture(scope="module")
def window():
    panel, _ = generate(SyntheticSpec(seed=11, n_areas=2, n_regions=1, n_years=12, first_year=2000))
    curves = smooth_panel(panel)
    fs = run_window(panel, curves, 2011, 3, ForecastOptions(p_max=1, q_max=1))
    return panel, curves, fs


def test_reconciled_forecasts_are_coherent(window):
    panel, _, fs = window
    S = build_summing_matrix(panel, 2011)
    for (model, method), arr in fs.reconciled.items():
        for h in range(3):
            res, _ = coherence_residual(arr[h], S)
            assert res <= 1e-9, (model, method, h)
    assert set(fs.base) == {"FPCA", "MFPCA"}
    assert all(np.all(arr > 0) for arr in fs.base.values())


def test_error_vectors_cover_every_series(window):
    panel, _, fs = window
    for E in fs.errors.values():
        assert E.shape[1] == len(panel.series)
        assert np.isfinite(E).all()
        assert E.shape[0] % len(panel.ages) == 0


def test_blocks_partition_the_series(window):
    panel = window[0]
    for model in ("FPCA", "MFPCA"):
        flat = [k for b in model_blocks(panel.structure, model) for k in b]
        assert sorted(map(str, flat)) == sorted(map(str, panel.series))
    with pytest.raises(ValueError):
        model_blocks(panel.structure, "PCA")


def test_series_order_is_checked(window):
    panel, curves, _ = window
    with pytest.raises(ValueError):
        run_window(panel, replace(curves, series=curves.series[::-1]), 2005, 1)


def test_forecast_and_error_files_round_trip(tmp_path, window):
    panel, _, fs = window
    artifacts.write_forecasts(fs, tmp_path / "base.csv")
    for model, arr in fs.base.items():
        T, back = artifacts.read_base_forecasts(tmp_path / "base.csv", model, list(fs.series), panel.ages.centers)
        assert T == 2011
        np.testing.assert_array_equal(back, arr)
    artifacts.write_errors(fs.errors, fs.series, tmp_path / "err.csv")
    np.testing.assert_array_equal(artifacts.read_errors(tmp_path / "err.csv", "MFPCA", fs.series), fs.errors["MFPCA"])


def test_staging_discards_output_on_failure(tmp_path):
    with pytest.raises(RuntimeError):
        with artifacts.Staging(tmp_path) as stage:
            stage.path("a.txt").write_text("x")
            raise RuntimeError("boom")
    assert list(tmp_path.iterdir()) == []
    with artifacts.Staging(tmp_path) as stage:
        stage.path("sub/a.txt").write_text("x")
    assert (tmp_path / "sub" / "a.txt").read_text() == "x"
    assert [p.name for p in tmp_path.iterdir()] == ["sub"]
