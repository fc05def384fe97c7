"""Classifier math against finite-difference oracles, plus registry behaviour."""

import numpy as np
import pytest

from lexiground.classifiers import (
    ATTRIBUTE_CATEGORY,
    AttributeClassifier,
    Band,
    ClassifierRegistry,
    ConfidenceBands,
    TrainingJudgement,
    band_for,
    normalize_blocks,
)
from lexiground.vision import FEATURE_DIM, HSV_DIM

from oracles import fd_gradient


# ---------------------------------------------------------------------------
# the SGD step against central finite differences


def test_update_matches_finite_difference_gradient():
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(100):
        dim = int(rng.integers(2, 12))
        w = rng.normal(0.0, 1.0, dim)
        b = float(rng.normal())
        x = rng.normal(0.0, 1.0, dim)
        y = int(rng.integers(0, 2))
        lam = float(rng.choice([0.0, 1e-4, 1e-2]))

        clf = AttributeClassifier("red", dim, eta0=0.1, lam=lam)
        clf.weights = w.copy()
        clf.bias = b
        clf.update(x, float(y))

        # recover the gradient implied by the step; eta at t=0 is eta0
        gw_step = (w - clf.weights) / clf.eta0
        gb_step = (b - clf.bias) / clf.eta0
        gw_fd, gb_fd = fd_gradient(w, b, x, y, lam)

        scale = max(np.linalg.norm(gw_fd), abs(gb_fd), 1e-12)
        err = max(np.linalg.norm(gw_step - gw_fd), abs(gb_step - gb_fd))
        worst = max(worst, err / scale)
    assert worst < 1e-5


def test_fresh_classifier_predicts_half():
    clf = AttributeClassifier("red", 10)
    assert clf.predict_prob(np.ones(10)) == pytest.approx(0.5)


def test_logit_four_gives_expected_probability():
    clf = AttributeClassifier("red", 4)
    clf.weights = np.array([4.0, 0.0, 0.0, 0.0])
    x = np.array([1.0, 5.0, -2.0, 0.0])
    assert clf.predict_prob(x) == pytest.approx(0.9820, abs=1e-3)


def test_positive_label_moves_weights_along_positive_coordinates():
    clf = AttributeClassifier("red", 3, lam=0.0)
    x = np.array([0.5, 0.0, -0.25])
    clf.update(x, 1.0)
    assert clf.weights[0] > 0
    assert clf.weights[1] == 0
    assert clf.weights[2] < 0
    assert clf.bias > 0


def test_zero_input_without_regularization_only_moves_bias():
    clf = AttributeClassifier("red", 3, lam=0.0)
    clf.weights = np.array([1.0, -2.0, 3.0])
    before = clf.weights.copy()
    clf.update(np.zeros(3), 1.0)
    assert np.array_equal(clf.weights, before)
    assert clf.bias > 0


def test_learning_rate_decays_with_update_count():
    clf = AttributeClassifier("red", 2, eta0=0.5, lam=0.1)
    x = np.array([1.0, 0.0])
    for expected_t in range(4):
        assert clf.updates_seen == expected_t
        clf.update(x, 1.0)
    # after 3 updates the 4th used eta = eta0 / (1 + eta0*lam*3)
    eta3 = 0.5 / (1 + 0.5 * 0.1 * 3)
    assert eta3 == pytest.approx(0.4347826, abs=1e-6)


def test_dimension_mismatch_rejected():
    clf = AttributeClassifier("red", 4)
    with pytest.raises(ValueError):
        clf.predict_prob(np.ones(5))
    with pytest.raises(ValueError):
        clf.update(np.ones(3), 1.0)


def _toy_split(rng, n):
    half = n // 2
    pos = rng.normal(0.0, 0.5, (half, 5)) + np.array([2.0, 2.0, 0.0, 0.0, 0.0])
    neg = rng.normal(0.0, 0.5, (half, 5)) - np.array([2.0, 2.0, 0.0, 0.0, 0.0])
    X = np.vstack([pos, neg])
    y = np.array([1.0] * half + [0.0] * half)
    order = rng.permutation(n)
    return X[order], y[order]


def test_separable_toy_set_reaches_confident_probabilities():
    rng = np.random.default_rng(11)
    X, y = _toy_split(rng, 200)
    Xte, yte = _toy_split(rng, 100)
    clf = AttributeClassifier("red", 5)
    for xi, yi in zip(X, y):
        clf.update(xi, yi)
    assert clf.updates_seen <= 200
    held_pos = np.array([clf.predict_prob(x) for x, t in zip(Xte, yte) if t == 1.0])
    held_neg = np.array([clf.predict_prob(x) for x, t in zip(Xte, yte) if t == 0.0])
    assert held_pos.mean() > 0.9
    assert held_neg.mean() < 0.1


def test_training_order_shifts_probabilities_only_modestly():
    rng = np.random.default_rng(23)
    X, y = _toy_split(rng, 500)
    Xte, _ = _toy_split(rng, 100)

    probs = []
    for seed in (1, 2):
        order = np.random.default_rng(seed).permutation(500)
        clf = AttributeClassifier("red", 5)
        for i in order:
            clf.update(X[i], y[i])
        probs.append(np.array([clf.predict_prob(x) for x in Xte]))
    assert np.mean(np.abs(probs[0] - probs[1])) < 0.15


def test_weight_norm_stays_bounded_under_regularization():
    rng = np.random.default_rng(3)
    clf = AttributeClassifier("red", 8, eta0=0.5, lam=1e-2)
    for _ in range(10_000):
        clf.update(rng.normal(0.0, 1.0, 8), float(rng.integers(0, 2)))
    norm = np.linalg.norm(clf.weights)
    assert np.isfinite(norm)
    assert norm < 1e3


# ---------------------------------------------------------------------------
# confidence bands


def test_band_boundaries_are_a_step_function():
    bands = ConfidenceBands(0.5, 0.9)
    eps = 1e-9
    table = [
        (0.0, Band.UNKNOWN),
        (0.5 - eps, Band.UNKNOWN),
        (0.5, Band.UNSURE),
        (0.9 - eps, Band.UNSURE),
        (0.9, Band.CONFIDENT),
        (1.0, Band.CONFIDENT),
    ]
    for prob, expected in table:
        assert band_for(prob, bands) is expected


def test_bands_validate_ordering():
    with pytest.raises(ValueError):
        ConfidenceBands(0.9, 0.5)
    with pytest.raises(ValueError):
        ConfidenceBands(0.0, 0.9)
    with pytest.raises(ValueError):
        ConfidenceBands(0.5, 1.5)


# ---------------------------------------------------------------------------
# block normalization


def test_normalize_blocks_gives_unit_norms_and_keeps_input():
    rng = np.random.default_rng(5)
    x = np.abs(rng.normal(0.0, 1.0, FEATURE_DIM))
    x_before = x.copy()
    out = normalize_blocks(x)
    assert np.array_equal(x, x_before)
    assert np.linalg.norm(out[:HSV_DIM]) == pytest.approx(1.0)
    assert np.linalg.norm(out[HSV_DIM:]) == pytest.approx(1.0)


def test_normalize_blocks_passes_zero_blocks_through():
    x = np.zeros(FEATURE_DIM)
    x[:HSV_DIM] = 1.0 / HSV_DIM
    out = normalize_blocks(x)
    assert np.linalg.norm(out[:HSV_DIM]) == pytest.approx(1.0)
    assert np.all(out[HSV_DIM:] == 0.0)


# ---------------------------------------------------------------------------
# the registry


def _feature(rng):
    x = np.abs(rng.normal(0.0, 1.0, FEATURE_DIM))
    x[:HSV_DIM] /= x[:HSV_DIM].sum()
    x[HSV_DIM:] /= x[HSV_DIM:].sum()
    return x


def test_registry_starts_empty_and_creates_lazily():
    reg = ClassifierRegistry()
    assert reg.classifiers == {}
    assert reg.known("colour") == []
    reg.ensure("red")
    assert ATTRIBUTE_CATEGORY["red"] == "colour"
    assert reg.known("colour") == ["red"]
    assert "red" in reg.classifiers
    reg.ensure("red")
    assert reg.known("colour") == ["red"]


def test_empty_category_verdict_is_unknown_without_attribute():
    reg = ClassifierRegistry()
    v = reg.verdict("shape", np.zeros(FEATURE_DIM))
    assert v.band is Band.UNKNOWN
    assert v.attribute is None
    assert v.prob is None


def test_missing_classifier_probability_is_half():
    reg = ClassifierRegistry()
    assert reg.prob("red", np.zeros(FEATURE_DIM)) == pytest.approx(0.5)


def test_registry_training_preconditions_inputs():
    rng = np.random.default_rng(9)
    x = _feature(rng)
    reg = ClassifierRegistry(eta0=0.2, lam=1e-3)
    reg.train(TrainingJudgement(x, "red", True))

    manual = AttributeClassifier("red", FEATURE_DIM, eta0=0.2, lam=1e-3)
    manual.update(normalize_blocks(x), 1.0)

    assert np.array_equal(reg.classifiers["red"].weights, manual.weights)
    assert reg.classifiers["red"].bias == manual.bias
    assert reg.prob("red", x) == pytest.approx(manual.predict_prob(normalize_blocks(x)))


def test_verdict_picks_the_most_probable_attribute():
    rng = np.random.default_rng(13)
    x = _feature(rng)
    reg = ClassifierRegistry()
    reg.train(TrainingJudgement(x, "red", True))
    reg.train(TrainingJudgement(x, "blue", False))
    v = reg.verdict("colour", x)
    assert v.attribute == "red"
    assert v.prob == pytest.approx(reg.prob("red", x))
    assert v.band in (Band.UNSURE, Band.CONFIDENT)


def test_prob_matrix_agrees_with_scalar_path():
    rng = np.random.default_rng(17)
    X = np.stack([_feature(rng) for _ in range(6)])
    reg = ClassifierRegistry()
    for i in range(4):
        reg.train(TrainingJudgement(X[i], "red", i % 2 == 0))
        reg.train(TrainingJudgement(X[i], "square", i % 2 == 1))
    attrs = ["red", "square", "green"]
    M = reg.prob_matrix(attrs, X)
    assert M.shape == (6, 3)
    for i in range(6):
        for j, a in enumerate(attrs):
            assert M[i, j] == pytest.approx(reg.prob(a, X[i]), abs=1e-12)
    assert np.all(M[:, 2] == 0.5)


def test_registry_persistence_roundtrip_is_exact(tmp_path):
    rng = np.random.default_rng(19)
    reg = ClassifierRegistry(eta0=0.3, lam=1e-3, bands=ConfidenceBands(0.4, 0.8))
    for _ in range(25):
        reg.train(
            TrainingJudgement(
                _feature(rng),
                str(rng.choice(["red", "blue", "square"])),
                bool(rng.integers(0, 2)),
            )
        )
    path = tmp_path / "model.npz"
    reg.save(str(path))
    loaded = ClassifierRegistry.load(str(path))

    assert loaded.weight_bytes() == reg.weight_bytes()
    assert loaded.bands == reg.bands
    assert loaded.eta0 == reg.eta0
    assert loaded.lam == reg.lam
    assert loaded.categories == reg.categories
    x = _feature(rng)
    for a in ("red", "blue", "square", "green"):
        assert loaded.prob(a, x) == reg.prob(a, x)


def test_load_rejects_unknown_version(tmp_path):
    path = tmp_path / "model.npz"
    np.savez(path, version=np.array([99]))
    with pytest.raises(ValueError):
        ClassifierRegistry.load(str(path))
