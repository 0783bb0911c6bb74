import numpy as np
import pytest
from scipy.stats import multivariate_normal

from v2tex.classifier import (Evaluation, confusion_from_predictions, evaluate, fit_qda, gap_features,
                              predict_many, predict_qda, qda_scores, read_features_csv,
                              write_confusion_csv, write_features_csv)


def _gaussian_classes(rng, sep, n=500, d=10, k=2):
    X = np.concatenate([rng.standard_normal((n, d)) + sep * np.eye(d)[c] for c in range(k)])
    return X, np.repeat(np.arange(k), n)


class TestGap:
    def test_constant(self):
        np.testing.assert_array_equal(gap_features(np.full((3, 4, 5), 2.5)), 2.5)

    def test_mean(self):
        assert gap_features(np.array([[[2.0, 4.0, 6.0]]]))[0] == 4.0

    def test_batched(self):
        r = np.random.default_rng(0).random((2, 3, 4, 4))
        np.testing.assert_allclose(gap_features(r), r.mean(axis=(2, 3)))

    def test_empty(self):
        with pytest.raises(ValueError):
            gap_features(np.zeros((3, 0, 4)))


class TestFit:
    def test_hand_1d(self):
        m = fit_qda([[-1.0], [1.0], [9.0], [11.0]], [0, 0, 1, 1], shrinkage=0.0)
        np.testing.assert_allclose(m.means[:, 0], [0, 10])
        np.testing.assert_allclose(m.covs[:, 0, 0], [2, 2])
        np.testing.assert_allclose(m.priors, [0.5, 0.5])

    def test_full_shrinkage(self):
        X = np.random.default_rng(1).standard_normal((30, 4)) * [1, 2, 3, 4]
        S = np.cov(X, rowvar=False)
        m = fit_qda(np.vstack([X, X + 50]), [0] * 30 + [1] * 30, shrinkage=1.0)
        np.testing.assert_allclose(m.covs[0], np.trace(S) / 4 * np.eye(4))
        assert np.trace(m.covs[0]) == pytest.approx(np.trace(S))

    def test_duplication_keeps_means(self):
        rng = np.random.default_rng(2)
        X, y = rng.standard_normal((20, 3)), [0, 1] * 10
        a = fit_qda(X, y)
        b = fit_qda(np.vstack([X, X]), y + y)
        np.testing.assert_allclose(a.means, b.means)

    def test_shrinkage_eigen_floor(self):
        rng = np.random.default_rng(3)
        X = rng.standard_normal((12, 8)) @ rng.standard_normal((8, 8))
        y = [0] * 6 + [1] * 6
        for g in (0.05, 0.3, 0.9):
            m = fit_qda(X, y, g)
            for k in range(2):
                S = np.cov(X[np.array(y) == k], rowvar=False)
                assert np.linalg.eigvalsh(m.covs[k]).min() >= g * np.trace(S) / 8 * (1 - 1e-12)
                np.testing.assert_array_equal(m.covs[k], m.covs[k].T)
            assert m.priors.sum() == pytest.approx(1.0)

    def test_priors_and_uniform_flag(self):
        X = np.random.default_rng(4).standard_normal((10, 2))
        y = [0] * 7 + [1] * 3
        np.testing.assert_allclose(fit_qda(X, y).priors, [0.7, 0.3])
        np.testing.assert_allclose(fit_qda(X, y, uniform_prior=True).priors, [0.5, 0.5])

    def test_errors(self):
        with pytest.raises(ValueError, match="fewer than 2"):
            fit_qda([[0.0], [1.0], [2.0]], ["a", "a", "b"])
        with pytest.raises(ValueError, match="non-finite"):
            fit_qda([[0.0], [np.nan], [1.0], [2.0]], [0, 0, 1, 1])


class TestPredict:
    def test_1d_boundary(self):
        m = fit_qda([[-1.0], [1.0], [9.0], [11.0]], [0, 0, 1, 1], shrinkage=0.0)
        assert predict_qda(m, [4.0])[0] == 0
        assert predict_qda(m, [6.0])[0] == 1

    def test_prior_breaks_coincident_means(self):
        X = np.array([[-1.0], [1.0]] * 3 + [[-1.0], [1.0]])
        m = fit_qda(X, ["a"] * 6 + ["b"] * 2, shrinkage=0.0)
        assert predict_qda(m, [0.0])[0] == "a"

    def test_exact_tie_lowest_index(self):
        X = np.array([[-1.0], [1.0], [-1.0], [1.0]])
        m = fit_qda(X, [1, 1, 0, 0], shrinkage=0.0)
        label, scores = predict_qda(m, [0.0])
        assert scores[0] == scores[1] and label == 0

    def test_shift_invariance_of_argmax(self):
        rng = np.random.default_rng(5)
        X, y = _gaussian_classes(rng, 1.0, n=40, d=3, k=3)
        m = fit_qda(X, y)
        s = qda_scores(m, X)
        np.testing.assert_array_equal(np.argmax(s + 123.4, axis=1), np.argmax(s, axis=1))

    def test_equal_covariances_reduce_to_mahalanobis(self):
        rng = np.random.default_rng(6)
        for _ in range(5):
            d = 4
            A = rng.standard_normal((d, d))
            cov = A @ A.T + np.eye(d)
            m = fit_qda(rng.standard_normal((20, d)), [0, 1] * 10)
            m.covs[:] = cov
            m.precisions[:] = np.linalg.inv(cov)
            m.logdets[:] = np.linalg.slogdet(cov)[1]
            m.priors[:] = 0.5
            Xq = rng.standard_normal((200, d)) * 3
            P = np.linalg.inv(cov)
            maha = np.stack([np.einsum("nd,de,ne->n", Xq - mu, P, Xq - mu) for mu in m.means], axis=1)
            assert predict_many(m, Xq) == list(np.argmin(maha, axis=1))

    def test_matches_scipy_log_density(self):
        rng = np.random.default_rng(7)
        X, y = _gaussian_classes(rng, 2.0, n=30, d=3, k=2)
        m = fit_qda(X, y)
        q = rng.standard_normal((5, 3))
        for k in range(2):
            ref = multivariate_normal(m.means[k], m.covs[k]).logpdf(q) + np.log(m.priors[k]) + 1.5 * np.log(2 * np.pi)
            np.testing.assert_allclose(qda_scores(m, q)[:, k], ref, rtol=1e-10)

    def test_dimension_mismatch(self):
        m = fit_qda(np.random.default_rng(8).standard_normal((6, 2)), [0, 1] * 3)
        with pytest.raises(ValueError, match="dimension"):
            predict_qda(m, [1.0, 2.0, 3.0])

    def test_well_separated(self):
        rng = np.random.default_rng(9)
        X, y = _gaussian_classes(rng, 6.0)
        Xt, yt = _gaussian_classes(rng, 6.0)
        assert evaluate(fit_qda(X, y), Xt, yt).accuracy >= 0.999


class TestEvaluate:
    def test_perfect(self):
        ev = confusion_from_predictions(["a", "b"], ["a", "b", "b"], ["a", "b", "b"])
        assert ev.accuracy == 1.0
        np.testing.assert_array_equal(ev.per_class_accuracy, [1, 1])

    def test_single_class_predictions(self):
        labels = [0, 1, 2, 3] * 5
        ev = confusion_from_predictions([0, 1, 2, 3], labels, [2] * 20)
        assert ev.accuracy == 0.25

    def test_trace_identity(self):
        rng = np.random.default_rng(10)
        X, y = _gaussian_classes(rng, 0.8, n=60, d=4, k=3)
        ev = evaluate(fit_qda(X, y), X, y)
        assert ev.accuracy == np.trace(ev.confusion) / ev.confusion.sum()
        np.testing.assert_array_equal(ev.confusion.sum(axis=1), [60, 60, 60])

    def test_unseen_label(self):
        m = fit_qda(np.random.default_rng(11).standard_normal((6, 2)), [0, 1] * 3)
        with pytest.raises(ValueError, match="not seen"):
            evaluate(m, np.zeros((1, 2)), [5])

    def test_empty(self):
        with pytest.raises(ValueError):
            confusion_from_predictions([0], [], [])


class TestCsv:
    def test_features_round_trip(self, tmp_path):
        F = np.random.default_rng(12).standard_normal((3, 60))
        write_features_csv(tmp_path / "f.csv", ["i0", "i1", "i2"], ["a", "b", "a"], F)
        head = (tmp_path / "f.csv").read_text().splitlines()[0].split(",")
        assert head[:3] == ["id", "label", "f0"] and head[-1] == "f59"
        ids, labels, G = read_features_csv(tmp_path / "f.csv")
        assert ids == ["i0", "i1", "i2"] and labels == ["a", "b", "a"]
        np.testing.assert_array_equal(G, F)

    def test_confusion_csv(self, tmp_path):
        ev = Evaluation(0.5, np.array([[1, 1], [0, 2]]), ["x", "y"])
        write_confusion_csv(tmp_path / "c.csv", ev)
        assert (tmp_path / "c.csv").read_text().splitlines() == ["true\\pred,x,y", "x,1,1", "y,0,2"]
