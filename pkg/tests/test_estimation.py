import numpy as np
import pytest

from tensorcatch.estimation import (
    EmptyClassError,
    LabeledDataset,
    SingularMatrixError,
    apply_pd_policy,
    check_pd_condition,
    estimate_alpha,
    estimate_covariate_block,
    estimate_mu,
    estimate_parameters,
    estimate_priors,
    estimate_sigmas,
    perturb_sigma,
    pooled_reference_variance,
    residuals,
)
from tensorcatch.simulation import CovSpec, make_cov, sample_tn
from tensorcatch.tensor import mode_matricize

from oracles import per_entry_ols


def toy_data(rng, shape=(3, 4), n_per=(15, 20, 25), q=2, effect=1.0):
    K = len(n_per)
    Y = np.repeat(np.arange(1, K + 1), n_per)
    n = Y.size
    U = rng.standard_normal((n, q)) + 0.5 * Y[:, None]
    alpha = effect * rng.standard_normal(shape + (q,))
    X = rng.standard_normal(shape + (n,)) + np.einsum("...q,nq->...n", alpha, U)
    X[(0,) * len(shape)] += Y
    return X, U, Y


class TestPriors:
    def test_balanced(self):
        assert np.allclose(estimate_priors([1, 1, 2, 2]), [0.5, 0.5])

    def test_unbalanced(self):
        assert np.allclose(estimate_priors([1, 2, 2, 2]), [0.25, 0.75])

    def test_imbalanced_design(self):
        Y = np.repeat([1, 2], [40, 200])
        assert np.allclose(estimate_priors(Y), [1 / 6, 5 / 6])

    def test_empty_class_named(self):
        with pytest.raises(EmptyClassError) as exc:
            estimate_priors([1, 1, 3], K=3)
        assert exc.value.label == 2
        assert "class 2" in str(exc.value)


class TestCovariateBlock:
    def test_formulas(self, rng):
        _, U, Y = toy_data(rng)
        cb = estimate_covariate_block(U, Y)
        for k in (1, 2, 3):
            assert np.allclose(cb.phi[k - 1], U[Y == k].mean(axis=0))
        C = U - cb.phi[Y - 1]
        assert np.allclose(cb.psi, C.T @ C / Y.size)
        assert np.allclose(cb.gamma[0], 0.0)
        assert np.allclose(cb.psi @ cb.gamma[2], cb.phi[2] - cb.phi[0])

    def test_degenerate_scatter(self):
        U = np.array([[0.0], [0.0], [1.0], [1.0]])
        with pytest.raises(SingularMatrixError, match="Psi"):
            estimate_covariate_block(U, [1, 1, 2, 2])

    def test_equal_means_give_zero_direction(self):
        U = np.array([[1.0], [-1.0], [1.0], [-1.0]])
        cb = estimate_covariate_block(U, [1, 1, 2, 2])
        assert np.allclose(cb.gamma[1], 0.0)

    def test_large_sample(self, rng):
        n = 100_000
        Y = rng.integers(1, 3, size=n)
        U = rng.standard_normal(n) + 0.8 * (Y == 2)
        cb = estimate_covariate_block(U, Y)
        assert cb.psi[0, 0] == pytest.approx(1.0, abs=0.05)
        assert cb.gamma[1, 0] == pytest.approx(cb.phi[1, 0] - cb.phi[0, 0], abs=0.05)


class TestAlpha:
    def test_matches_per_entry_ols(self, rng):
        X, U, Y = toy_data(rng)
        a = estimate_alpha(X, U, Y)
        assert a.shape == (3, 4, 2)
        assert np.max(np.abs(a - per_entry_ols(X, U, Y, 3))) < 1e-10

    def test_no_effect_large_n(self, rng):
        n = 10_000
        Y = rng.integers(1, 3, size=n)
        U = rng.standard_normal((n, 1))
        X = rng.standard_normal((2, 2, n))
        assert np.max(np.abs(estimate_alpha(X, U, Y))) < 0.05

    def test_constant_within_class_is_singular(self):
        Y = np.array([1, 1, 2, 2])
        U = np.array([[0.0], [0.0], [3.0], [3.0]])
        with pytest.raises(SingularMatrixError):
            estimate_alpha(np.zeros((2, 4)), U, Y)


class TestMeansAndResiduals:
    def test_zero_alpha_gives_class_means(self, rng):
        X, U, Y = toy_data(rng)
        mu = estimate_mu(X, U, Y, np.zeros((3, 4, 2)))
        assert np.allclose(mu[1], X[..., Y == 2].mean(axis=-1))
        assert np.allclose(estimate_mu(X, None, Y)[2], X[..., Y == 3].mean(axis=-1))

    def test_hand_case(self):
        # one observation per class, q = 1, 2 x 2 tensor
        X = np.stack([np.array([[1.0, 2.0], [3.0, 4.0]]), np.array([[5.0, 6.0], [7.0, 8.0]])], axis=-1)
        U = np.array([[2.0], [-1.0]])
        alpha = np.full((2, 2, 1), 0.5)
        mu = estimate_mu(X, U, [1, 2], alpha)
        assert np.allclose(mu[0], X[..., 0] - 1.0)
        assert np.allclose(mu[1], X[..., 1] + 0.5)

    def test_residuals_center_within_class(self, rng):
        X, U, Y = toy_data(rng)
        a = estimate_alpha(X, U, Y)
        E = residuals(X, U, Y, a)
        for k in (1, 2, 3):
            assert np.max(np.abs(E[..., Y == k].sum(axis=-1))) < 1e-12

    def test_residuals_without_alpha(self, rng):
        X, _, Y = toy_data(rng)
        E = residuals(X, None, Y)
        assert np.allclose(E[..., Y == 1], X[..., Y == 1] - X[..., Y == 1].mean(axis=-1, keepdims=True))


class TestSigmas:
    def test_identity_noise(self, rng):
        E = rng.standard_normal((3, 4, 10_000))
        for S in estimate_sigmas(E):
            assert np.max(np.abs(S - np.eye(S.shape[0]))) <= 0.05

    def test_scaling(self, rng):
        E = 2.0 * rng.standard_normal((3, 4, 2, 50))
        S = estimate_sigmas(E)
        assert S[0][0, 0] == 1.0 and S[1][0, 0] == 1.0
        implied = S[0][0, 0] * S[1][0, 0] * S[2][0, 0]
        assert implied == pytest.approx(pooled_reference_variance(E), abs=1e-12)

    def test_ar_structure(self, rng):
        sig = [make_cov(CovSpec("AR", 3, 0.7)), np.eye(3)]
        W = sample_tn(np.zeros((3, 3)), sig, 10_000, rng)
        S = estimate_sigmas(W)
        assert S[0][0, 1] == pytest.approx(0.7, abs=0.05)

    def test_order_invariant(self, rng):
        E = rng.standard_normal((3, 2, 40))
        perm = rng.permutation(40)
        for a, b in zip(estimate_sigmas(E), estimate_sigmas(E[..., perm])):
            assert np.allclose(a, b, atol=1e-12)

    def test_covariance_of_matricization(self, rng):
        # E[W_(j) W_(j)^T] = Omega_j * prod_{l != j} tr(Omega_l)
        dims = (3, 4, 3)
        omegas = [make_cov(CovSpec("AR", 3, 0.5)), make_cov(CovSpec("CS", 4, 0.3)), 2.0 * np.eye(3)]
        W = sample_tn(np.zeros(dims), omegas, 10_000, rng)
        n = W.shape[-1]
        for j in range(1, 4):
            emp = mode_matricize(W, j) @ mode_matricize(W, j).T / n
            expect = omegas[j - 1] * np.prod([np.trace(o) for l, o in enumerate(omegas) if l != j - 1])
            assert np.max(np.abs(emp - expect)) / np.max(np.abs(expect)) <= 0.05


class TestPositiveDefiniteness:
    def test_condition_examples(self):
        assert check_pd_condition(10, 2, (4, 4))[0]
        assert check_pd_condition(4, 3, (5, 5)) == [False, False]
        assert check_pd_condition(3, 2, (2, 2)) == [False, False]

    def test_perturb(self):
        assert np.allclose(perturb_sigma(np.zeros((2, 2)), 0.1), 0.1 * np.eye(2))
        assert np.allclose(perturb_sigma(np.eye(2), 1.0), 2 * np.eye(2))
        with pytest.raises(ValueError):
            perturb_sigma(np.eye(2), 0.0)

    def test_rank_deficient(self):
        v = np.array([[1.0], [2.0], [0.5]])
        out = perturb_sigma(v @ v.T, 0.3)
        assert np.linalg.eigvalsh(out)[0] >= 0.3 - 1e-12

    def test_policy_only_touches_failing_modes(self, rng):
        sig = [np.eye(3), np.eye(50)]
        out, touched = apply_pd_policy(sig, n=4, K=2, gamma_rel=1e-4)
        # (n-K) p_-j = 2*50 > 3 holds for mode 1; 2*3 = 6 < 50 fails for mode 2
        assert touched == [2]
        assert np.array_equal(out[0], np.eye(3))
        assert np.allclose(out[1], np.eye(50) * (1 + 1e-4))


class TestPipeline:
    def test_estimate_parameters(self, rng):
        X, U, Y = toy_data(rng)
        m = estimate_parameters(LabeledDataset(X, Y, U))
        assert m.K == 3 and m.shape == (3, 4) and m.has_covariates
        assert np.allclose(m.priors.sum(), 1.0, atol=1e-12)
        assert m.sigmas[0][0, 0] == 1.0
        assert np.allclose(m.B, 0.0)

    def test_without_covariates(self, rng):
        X, U, Y = toy_data(rng)
        m = estimate_parameters(LabeledDataset(X, Y))
        assert m.covariates is None and m.alpha is None
        assert np.allclose(m.mu[0], X[..., Y == 1].mean(axis=-1))

    def test_dataset_validation(self, rng):
        with pytest.raises(ValueError):
            LabeledDataset(np.zeros((2, 2, 3)), [1, 2])
        with pytest.raises(ValueError):
            LabeledDataset(np.zeros((2, 3)), [1, 2, 3], U=np.zeros((2, 1)))
        small = LabeledDataset(np.zeros((2, 2)), [1, 2])
        with pytest.raises(ValueError):
            small.check_estimable()
