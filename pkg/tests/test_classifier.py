import numpy as np
import pytest

from rscn.classifier import classify, predict_unseen, update_centroids
from rscn.losses import center_loss
from rscn.model import SubspaceNet
from rscn.nn import softmax


def test_zero_head_is_uniform():
    _, p = classify(np.ones(4), np.zeros((4, 3)), np.zeros(3))
    np.testing.assert_allclose(p, 1 / 3)


def test_dominant_logit():
    _, p = classify(np.array([1.0]), np.array([[50.0, 0.0, 0.0]]), np.zeros(3))
    # 1 - 1e-20 rounds to 1.0 in float64, so compare the complement mass
    assert p[1:].sum() < 1e-20
    assert p[0] == 1.0
    assert p[1] == pytest.approx(np.exp(-50) / (1 + 2 * np.exp(-50)), rel=1e-12)


def test_probabilities_sum_to_one(rng):
    W, b = rng.standard_normal((5, 4)) * 10, rng.standard_normal(4)
    _, P = classify(rng.standard_normal((1000, 5)), W, b)
    assert np.abs(P.sum(axis=1) - 1).max() < 1e-12


def test_softmax_translation_invariance(rng):
    z = rng.standard_normal((20, 6))
    np.testing.assert_allclose(softmax(z + 123.4), softmax(z), atol=1e-12)


def test_latent_length_mismatch():
    with pytest.raises(ValueError, match="head expects"):
        classify(np.ones(3), np.zeros((4, 2)), np.zeros(2))


def _deep_model():
    return SubspaceNet((1, 8, 8), 3, [{"filters": 2, "kernel": 3, "stride": 2}], seed=4)


def test_predict_matches_training_forward(rng):
    model = _deep_model()
    X = rng.random((6, 1, 8, 8))
    logits = model.head.forward(model.encode(X))
    np.testing.assert_array_equal(predict_unseen(X, model), np.argmax(logits, axis=1))


def test_batch_agrees_with_single(rng):
    model = _deep_model()
    X = rng.random((5, 1, 8, 8))
    batch = predict_unseen(X, model)
    assert [predict_unseen(x, model) for x in X] == list(batch)
    assert isinstance(predict_unseen(X[0], model), int)


def test_predict_without_representation_matrix(rng, tmp_path):
    model = _deep_model()
    assert model.C is None
    model.save(tmp_path / "m.bin")
    loaded = SubspaceNet.load(tmp_path / "m.bin")
    assert loaded.C is None
    X = rng.random((4, 1, 8, 8))
    np.testing.assert_array_equal(predict_unseen(X, loaded), predict_unseen(X, model))


def test_single_cluster_centroid_is_mean(rng):
    logits = rng.standard_normal((7, 2))
    np.testing.assert_allclose(update_centroids(logits, np.zeros(7, int), k=1), [logits.mean(axis=0)])


def test_symmetric_clusters():
    logits = np.array([[-1.0], [-1.0], [1.0], [1.0]])
    np.testing.assert_array_equal(update_centroids(logits, [0, 0, 1, 1], k=2), [[-1.0], [1.0]])


def test_empty_cluster_keeps_previous():
    prev = np.array([[5.0], [7.0]])
    out = update_centroids(np.array([[1.0], [3.0]]), [0, 0], previous=prev)
    np.testing.assert_array_equal(out, [[2.0], [7.0]])


def test_fresh_centroids_do_not_increase_center_loss(rng):
    labels = np.array([0, 1, 2] * 4)
    stale = rng.standard_normal((3, 3))
    for _ in range(20):
        logits = rng.standard_normal((12, 3))
        fresh = update_centroids(logits, labels, stale)
        assert center_loss(logits, labels, fresh) <= center_loss(logits, labels, stale)
        stale = fresh
