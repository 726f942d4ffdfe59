import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from groupfts.decomposition import (FpcaModel, decompose, estimate_mean, quadrature_weights, reconstruct,
                                    select_K)
from oracles import jacobi_eigh, rank_one_block


@pytest.mark.parametrize("seed", range(5))
def test_eigenpairs_match_jacobi_oracle(seed):
    rng = np.random.default_rng(seed)
    block = rng.normal(size=(1, 30, 10)) @ rng.normal(size=(10, 10))
    model = decompose(block)
    Xc = block[0] - block[0].mean(axis=0)
    lam, V = jacobi_eigh(Xc.T @ Xc / 29)
    np.testing.assert_allclose(model.eigenvalues, lam, atol=1e-8)
    for k in range(10):
        v = model.eigenfunctions[k, 0]
        assert min(np.max(np.abs(v - V[:, k])), np.max(np.abs(v + V[:, k]))) <= 1e-8


def test_estimate_mean_cases(rng):
    c = rng.normal(size=5)
    np.testing.assert_array_equal(estimate_mean(np.stack([c, -c])[None]), np.zeros((1, 5)))
    np.testing.assert_allclose(estimate_mean(np.tile(c, (4, 1))[None]), c[None], atol=1e-15)
    block = rng.normal(size=(3, 4, 6))
    oracle = np.zeros((3, 6))
    for l in range(3):
        for t in range(4):
            oracle[l] += block[l, t]
    np.testing.assert_allclose(estimate_mean(block), oracle / 4, atol=1e-14)


@pytest.mark.parametrize("omega", [1, 2, 3])
def test_rank_one_recovery(rng, omega):
    block, beta, phi = rank_one_block(rng, omega)
    model = decompose(block)
    assert len(model.eigenvalues) == 1 or model.eigenvalues[1] / model.eigenvalues[0] <= 1e-10
    sign = np.sign(np.sum(model.eigenfunctions[0] * phi))
    np.testing.assert_allclose(model.eigenfunctions[0] * sign, phi, atol=1e-8)
    assert abs(np.corrcoef(model.scores[:, 0], beta)[0, 1]) >= 1 - 1e-10
    assert model.K == 1


def test_identical_series_double_eigenvalues(rng):
    one = rng.normal(size=(1, 15, 8))
    single = decompose(one)
    pair = decompose(np.concatenate([one, one]))
    np.testing.assert_allclose(pair.eigenvalues, 2 * single.eigenvalues, rtol=1e-8, atol=1e-12)
    np.testing.assert_allclose(pair.eigenfunctions[:, 0], pair.eigenfunctions[:, 1], atol=1e-8)


@pytest.mark.parametrize("lam, K", [([0.9, 0.05, 0.05], 2), ([1.0], 1), ([0.5, 0.3, 0.15, 0.05], 3)])
def test_select_K(lam, K):
    assert select_K(lam) == K


def test_select_K_degenerate_warns():
    with pytest.warns(UserWarning, match="degenerate"):
        assert select_K([0.0, 0.0]) == 1


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1), st.integers(1, 3), st.integers(3, 12), st.integers(2, 9),
       st.sampled_from(["equal", "trapezoid"]))
def test_decomposition_invariants(seed, omega, n, p, rule):
    rng = np.random.default_rng(seed)
    block = rng.normal(size=(omega, n, p))
    q = quadrature_weights(np.cumsum(rng.uniform(1, 5, size=p)), rule)
    model = decompose(block, q)
    r = len(model.eigenvalues)
    phi = model.eigenfunctions.reshape(r, -1)
    qq = np.tile(q, omega)
    np.testing.assert_allclose((phi * qq) @ phi.T, np.eye(r), atol=1e-8)
    assert np.all(np.diff(model.eigenvalues) <= 1e-12)
    assert np.all(model.eigenvalues >= 0)
    cov = np.cov(model.scores, rowvar=False, ddof=1).reshape(r, r)
    np.testing.assert_allclose(cov, np.diag(model.eigenvalues), atol=1e-8 * max(1.0, model.eigenvalues[0]))
    centred = block - block.mean(axis=1, keepdims=True)
    energy = np.sum(centred ** 2 * q)
    assert energy == pytest.approx((n - 1) * model.eigenvalues.sum(), rel=1e-6)
    # full-rank reconstruction reproduces the input
    full = reconstruct(model.truncate(r), model.scores)
    np.testing.assert_allclose(np.transpose(full, (1, 0, 2)), block, atol=1e-8)


@pytest.mark.parametrize("seed", range(3))
def test_primal_and_dual_agree(seed):
    rng = np.random.default_rng(seed)
    block = rng.normal(size=(2, 8, 6))
    a = decompose(block, method="primal")
    b = decompose(block, method="dual")
    np.testing.assert_allclose(a.eigenvalues, b.eigenvalues, atol=1e-10)
    np.testing.assert_allclose(a.eigenfunctions, b.eigenfunctions, atol=1e-8)
    np.testing.assert_allclose(a.scores, b.scores, atol=1e-8)


def test_reconstruction_error_non_increasing_in_K(rng):
    block = rng.normal(size=(2, 12, 7))
    model = decompose(block)
    target = np.transpose(block, (1, 0, 2))
    errs = [np.sum((reconstruct(model.truncate(K), model.scores[:, :K]) - target) ** 2)
            for K in range(1, len(model.eigenvalues) + 1)]
    assert all(b <= a + 1e-10 for a, b in zip(errs, errs[1:]))


def test_reconstruct_zero_scores_and_length_check(rng):
    model = decompose(rng.normal(size=(2, 10, 5)))
    np.testing.assert_array_equal(reconstruct(model, np.zeros(model.K)), model.mean)
    with pytest.raises(ValueError):
        reconstruct(model, np.zeros(model.K + 1))


def test_sign_rule_and_determinism(rng):
    block = rng.normal(size=(2, 10, 5))
    a = decompose(block)
    b = decompose(block.copy())
    np.testing.assert_array_equal(a.eigenfunctions, b.eigenfunctions)
    stacked = a.eigenfunctions.reshape(len(a.eigenvalues), -1)
    assert np.all(stacked[np.arange(len(stacked)), np.argmax(np.abs(stacked), axis=1)] > 0)


def test_single_series_equals_univariate_path(rng):
    data = rng.normal(size=(9, 6))
    a = decompose(data)
    b = decompose(data[None])
    np.testing.assert_array_equal(a.eigenvalues, b.eigenvalues)
    np.testing.assert_array_equal(a.scores, b.scores)


def test_non_finite_input_names_cell(rng):
    block = rng.normal(size=(2, 5, 4))
    block[1, 3, 2] = np.nan
    with pytest.raises(ValueError, match="series 1, year index 3, age index 2"):
        decompose(block)


def test_csv_bundle_round_trip(tmp_path, rng):
    model = decompose(rng.normal(size=(2, 10, 5)), threshold=0.8)
    model.save(tmp_path)
    again = FpcaModel.load(tmp_path)
    assert again.K == model.K
    for name in ("mean", "eigenvalues", "eigenfunctions", "scores", "quadrature"):
        np.testing.assert_array_equal(getattr(again, name), getattr(model, name))
