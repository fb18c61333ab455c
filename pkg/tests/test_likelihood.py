import numpy as np
import pytest

from stratcox import (
    StratifiedSurvivalDataset,
    StratumBlock,
    breslow_baseline,
    build_risk_index,
    derivative_bundle,
    hessian,
    neg_log_partial_likelihood,
    score,
    sigma_hat,
    weighted_averages,
)
from stratcox.likelihood import eta_gradient_weights, stacked_covariates

from conftest import random_dataset


def brute_force_loss(data, beta):
    """Direct double-loop evaluation of the averaged negative log
    stratified partial likelihood; the independent oracle for fast paths."""
    beta = np.asarray(beta, dtype=float)
    total = 0.0
    for block in data.strata:
        eta = block.covariates @ beta
        for i in range(block.n):
            if block.events[i] != 1:
                continue
            at_risk = block.times >= block.times[i]
            total -= eta[i] - np.log(np.exp(eta[at_risk]).sum() / block.n)
    return total / data.N


class TestHandValues:
    def test_loss_two_subjects(self, two_subject):
        data, idx = two_subject
        val = neg_log_partial_likelihood(data, idx, [0.0])
        assert val == pytest.approx(-np.log(2) / 2, abs=1e-12)

    def test_score_two_subjects(self, two_subject):
        data, idx = two_subject
        np.testing.assert_allclose(score(data, idx, [0.0]), [-0.25], atol=1e-12)

    def test_hessian_two_subjects(self, two_subject):
        data, idx = two_subject
        np.testing.assert_allclose(hessian(data, idx, [0.0]), [[0.125]], atol=1e-12)

    def test_sigma_two_subjects(self, two_subject):
        data, idx = two_subject
        np.testing.assert_allclose(sigma_hat(data, idx, [0.0]), [[0.125]], atol=1e-12)

    def test_all_censored_gives_zero(self):
        data = StratifiedSurvivalDataset(
            (StratumBlock("a", [1.0, 2.0, 3.0], [0, 0, 0], np.eye(3)),)
        )
        idx = build_risk_index(data)
        beta = np.array([0.3, -1.0, 2.0])
        assert neg_log_partial_likelihood(data, idx, beta) == 0.0
        np.testing.assert_array_equal(score(data, idx, beta), np.zeros(3))
        np.testing.assert_array_equal(hessian(data, idx, beta), np.zeros((3, 3)))
        np.testing.assert_array_equal(sigma_hat(data, idx, beta), np.zeros((3, 3)))

    def test_loss_at_zero_counts_risk_sets(self):
        rng = np.random.default_rng(3)
        data = random_dataset(rng, K=4, n_k=15, p=3)
        idx = build_risk_index(data)
        expected = 0.0
        for block in data.strata:
            for i in range(block.n):
                if block.events[i] == 1:
                    n_at_risk = int((block.times >= block.times[i]).sum())
                    expected -= np.log(block.n / n_at_risk)
        expected /= data.N
        assert neg_log_partial_likelihood(data, idx, np.zeros(3)) == pytest.approx(
            expected, rel=1e-12
        )

    def test_matches_brute_force_with_ties(self):
        rng = np.random.default_rng(5)
        times = np.round(rng.uniform(0.5, 3.0, 30), 1)  # forces many ties
        data = StratifiedSurvivalDataset(
            (StratumBlock("a", times, rng.integers(0, 2, 30), rng.normal(size=(30, 2))),)
        )
        idx = build_risk_index(data)
        beta = rng.normal(size=2)
        assert neg_log_partial_likelihood(data, idx, beta) == pytest.approx(
            brute_force_loss(data, beta), rel=1e-12
        )


class TestFiniteDifferences:
    @pytest.mark.parametrize("seed", range(5))
    def test_score_matches_fd(self, seed):
        rng = np.random.default_rng(seed)
        data = random_dataset(rng, K=3, n_k=20, p=4)
        idx = build_risk_index(data)
        beta = rng.normal(scale=0.5, size=4)
        g = score(data, idx, beta)
        h = 1e-5
        fd = np.empty(4)
        for j in range(4):
            e = np.zeros(4)
            e[j] = h
            fd[j] = (
                neg_log_partial_likelihood(data, idx, beta + e)
                - neg_log_partial_likelihood(data, idx, beta - e)
            ) / (2 * h)
        assert np.max(np.abs(fd - g)) / max(1.0, np.max(np.abs(g))) < 1e-6

    @pytest.mark.parametrize("seed", range(3))
    def test_hessian_matches_fd_of_score(self, seed):
        rng = np.random.default_rng(100 + seed)
        data = random_dataset(rng, K=2, n_k=25, p=3)
        idx = build_risk_index(data)
        beta = rng.normal(scale=0.5, size=3)
        H = hessian(data, idx, beta)
        h = 1e-5
        fd = np.empty((3, 3))
        for j in range(3):
            e = np.zeros(3)
            e[j] = h
            fd[:, j] = (score(data, idx, beta + e) - score(data, idx, beta - e)) / (2 * h)
        assert np.max(np.abs(fd - H)) / max(1.0, np.max(np.abs(H))) < 1e-5


class TestProperties:
    def test_convex_along_segments(self):
        rng = np.random.default_rng(21)
        data = random_dataset(rng, K=2, n_k=20, p=3)
        idx = build_risk_index(data)
        for _ in range(20):
            b1, b2 = rng.normal(size=(2, 3))
            t = rng.uniform(0.05, 0.95)
            lhs = neg_log_partial_likelihood(data, idx, t * b1 + (1 - t) * b2)
            rhs = t * neg_log_partial_likelihood(data, idx, b1) + (1 - t) * neg_log_partial_likelihood(data, idx, b2)
            assert lhs <= rhs + 1e-10

    def test_location_invariance_per_stratum(self):
        rng = np.random.default_rng(22)
        data = random_dataset(rng, K=3, n_k=15, p=3)
        shifted_blocks = []
        for k, block in enumerate(data.strata):
            shift = rng.normal(size=3) * (k + 1)
            shifted_blocks.append(
                StratumBlock(block.stratum_id, block.times, block.events, block.covariates + shift)
            )
        shifted = StratifiedSurvivalDataset(tuple(shifted_blocks))
        idx, idx2 = build_risk_index(data), build_risk_index(shifted)
        beta = rng.normal(size=3)
        assert neg_log_partial_likelihood(data, idx, beta) == pytest.approx(
            neg_log_partial_likelihood(shifted, idx2, beta), rel=1e-9
        )
        np.testing.assert_allclose(score(data, idx, beta), score(shifted, idx2, beta), atol=1e-10)
        np.testing.assert_allclose(hessian(data, idx, beta), hessian(shifted, idx2, beta), atol=1e-10)
        np.testing.assert_allclose(sigma_hat(data, idx, beta), sigma_hat(shifted, idx2, beta), atol=1e-10)

    def test_quadratic_forms_nonnegative(self):
        rng = np.random.default_rng(23)
        data = random_dataset(rng, K=2, n_k=30, p=4)
        idx = build_risk_index(data)
        beta = rng.normal(scale=0.4, size=4)
        H = hessian(data, idx, beta)
        S = sigma_hat(data, idx, beta)
        for _ in range(25):
            v = rng.normal(size=4)
            assert v @ H @ v >= -1e-10
            assert v @ S @ v >= -1e-10

    def test_symmetry(self):
        rng = np.random.default_rng(24)
        data = random_dataset(rng, K=2, n_k=30, p=5)
        idx = build_risk_index(data)
        beta = rng.normal(scale=0.3, size=5)
        H = hessian(data, idx, beta)
        S = sigma_hat(data, idx, beta)
        assert np.max(np.abs(H - H.T)) < 1e-12
        assert np.max(np.abs(S - S.T)) < 1e-12

    def test_overflow_guard(self, two_subject):
        data, idx = two_subject
        val = neg_log_partial_likelihood(data, idx, [800.0])
        assert np.isfinite(val)
        assert np.all(np.isfinite(score(data, idx, [800.0])))

    def test_dimension_mismatch(self, two_subject):
        data, idx = two_subject
        with pytest.raises(ValueError):
            neg_log_partial_likelihood(data, idx, [0.0, 1.0])


class TestWeightedAverages:
    def test_eta_in_convex_hull(self):
        rng = np.random.default_rng(31)
        data = random_dataset(rng, K=2, n_k=20, p=3)
        idx = build_risk_index(data)
        beta = rng.normal(scale=0.3, size=3)
        wa = weighted_averages(data, idx, beta)
        for st, avg in zip(build_risk_index(data).strata, wa.strata):
            assert np.all(avg.mu0 > 0)
            for i, pos in enumerate(st.risk_start[st.event_pos]):
                at_risk = st.covariates[pos:]
                assert np.all(avg.eta[i] <= at_risk.max(axis=0) + 1e-12)
                assert np.all(avg.eta[i] >= at_risk.min(axis=0) - 1e-12)

    def test_mu2_shapes(self, two_subject):
        data, idx = two_subject
        wa = weighted_averages(data, idx, [0.0], with_mu2=True)
        assert wa.strata[0].mu2.shape == (2, 1, 1)
        # at the first event time both subjects are at risk: mu2 = mean of X^2
        assert wa.strata[0].mu2[0, 0, 0] == pytest.approx(0.5)


class TestBreslow:
    def test_hand_values(self, two_subject):
        data, idx = two_subject
        bh = breslow_baseline(data, idx, [0.0])
        np.testing.assert_allclose(bh.jump_times[0], [1.0, 2.0])
        np.testing.assert_allclose(bh.cumulative[0], [0.5, 1.5])
        assert bh.evaluate("a", 2.0) == pytest.approx(1.5)
        assert bh.evaluate("a", 0.5) == 0.0

    def test_no_events_zero(self):
        data = StratifiedSurvivalDataset(
            (StratumBlock("a", [1.0, 2.0], [0, 0], [[0.0], [1.0]]),)
        )
        idx = build_risk_index(data)
        bh = breslow_baseline(data, idx, [0.0])
        assert bh.jump_times[0].size == 0
        assert bh.evaluate("a", 10.0) == 0.0

    def test_strata_decouple(self):
        rng = np.random.default_rng(41)
        data = random_dataset(rng, K=2, n_k=12, p=2)
        scaled = StratifiedSurvivalDataset(
            (
                data.strata[0],
                StratumBlock(
                    "other",
                    data.strata[1].times,
                    data.strata[1].events,
                    data.strata[1].covariates * 5.0,
                ),
            )
        )
        beta = np.array([0.4, -0.2])
        bh1 = breslow_baseline(data, build_risk_index(data), beta)
        bh2 = breslow_baseline(scaled, build_risk_index(scaled), beta)
        np.testing.assert_allclose(bh1.cumulative[0], bh2.cumulative[0])


class TestEtaWeights:
    def test_gradient_consistency(self):
        # X^T u must reproduce the score
        rng = np.random.default_rng(51)
        data = random_dataset(rng, K=3, n_k=18, p=3)
        idx = build_risk_index(data)
        beta = rng.normal(scale=0.4, size=3)
        u, w = eta_gradient_weights(data, idx, beta)
        X = stacked_covariates(idx)
        np.testing.assert_allclose(X.T @ u, score(data, idx, beta), atol=1e-12)
        assert np.all(w >= 0)

    def test_weights_match_fd_in_eta(self):
        rng = np.random.default_rng(52)
        data = random_dataset(rng, K=1, n_k=12, p=2)
        idx = build_risk_index(data)
        beta = rng.normal(scale=0.3, size=2)
        u, w = eta_gradient_weights(data, idx, beta)
        # perturb a single observation's covariate row along beta to move its
        # linear predictor only; compare against finite differences
        st = idx.strata[0]
        X = st.covariates
        h = 1e-6

        def loss_with_eta_shift(q, delta):
            Xq = X.copy()
            # shift eta_q by delta while leaving other rows untouched
            direction = beta / (beta @ beta)
            Xq[q] = Xq[q] + delta * direction
            block = StratumBlock("a", st.times, st.events, Xq)
            d2 = StratifiedSurvivalDataset((block,))
            from stratcox import build_risk_index as bri

            return neg_log_partial_likelihood(d2, bri(d2), beta)

        for q in [0, 5, 11]:
            fd = (loss_with_eta_shift(q, h) - loss_with_eta_shift(q, -h)) / (2 * h)
            assert fd == pytest.approx(u[q], abs=1e-7)


def test_bundle_contents(two_subject):
    data, idx = two_subject
    bundle = derivative_bundle(data, idx, [0.0], with_hessian=True, with_sigma=True)
    assert bundle.value == pytest.approx(-np.log(2) / 2)
    np.testing.assert_allclose(bundle.gradient, [-0.25])
    np.testing.assert_allclose(bundle.hessian, [[0.125]])
    np.testing.assert_allclose(bundle.sigma_hat, [[0.125]])
