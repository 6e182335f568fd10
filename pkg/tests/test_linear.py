import numpy as np
import pytest

from droughtcast.features import DesignMatrix, WindowSpec
from droughtcast.labels import LabelCube
from droughtcast.linear import (
    fit_logreg,
    fit_majority,
    load_baseline,
    load_linear,
    logreg_loss_grad,
    predict_constant,
    predict_logreg,
    predict_rolling,
    save_baseline,
    save_linear,
)


def make_labels(labels, mask=None, n_classes=2):
    labels = np.asarray(labels, dtype=np.int16)
    if mask is None:
        mask = np.ones_like(labels, dtype=bool)
    return LabelCube(labels=labels, mask=mask, n_classes=n_classes)


def make_design(x, y, n_classes=2):
    x = np.asarray(x, dtype=np.float64)
    return DesignMatrix(
        features=x,
        targets=np.asarray(y, dtype=np.int16),
        provenance=np.zeros((x.shape[0], 3), dtype=np.int32),
        n_classes=n_classes,
        spec=WindowSpec(history_len=1, horizon=1, neighborhood=1),
    )


def test_majority_counts_and_prior():
    labels = np.array([[[0, 0, 0, 1]]], dtype=np.int16).reshape(1, 1, 4)
    model = fit_majority(make_labels(labels))
    assert model.majority_class == 0
    assert np.allclose(model.class_prior, [0.75, 0.25])
    assert model.class_prior.sum() == pytest.approx(1.0, abs=1e-12)


def test_majority_tie_takes_lower_class():
    labels = np.array([0, 1, 0, 1], dtype=np.int16).reshape(1, 1, 4)
    assert fit_majority(make_labels(labels)).majority_class == 0


def test_constant_prediction_shape_and_values():
    labels = np.array([0, 0, 0, 1], dtype=np.int16).reshape(1, 1, 4)
    model = fit_majority(make_labels(labels))
    fc = predict_constant(model, t_len=5, rows=2, cols=3)
    assert fc.probs.shape == (5, 2, 2, 3)
    assert (fc.probs[:, 1] == 0.25).all()
    assert fc.predicted.all()


def test_rolling_window_one_is_persistence():
    rng = np.random.default_rng(0)
    labels = rng.integers(0, 2, (20, 2, 2)).astype(np.int16)
    fc = predict_rolling(make_labels(labels), window=1)
    for t in range(1, 20):
        picked = fc.probs[t].argmax(axis=0)
        assert np.array_equal(picked, labels[t - 1])


def test_rolling_full_window_matches_global_majority_on_final_month():
    # majority is stable: class 0 dominates every prefix
    labels = np.array([0, 0, 0, 1, 0, 0, 1, 0], dtype=np.int16).reshape(8, 1, 1)
    lc = make_labels(labels)
    fc = predict_rolling(lc, window=8)
    global_major = fit_majority(lc).majority_class
    assert fc.probs[7].argmax(axis=0)[0, 0] == global_major


def test_rolling_matches_sliding_window_oracle():
    rng = np.random.default_rng(1)
    labels = rng.integers(0, 3, (30, 2, 3)).astype(np.int16)
    mask = rng.random((30, 2, 3)) > 0.2
    lc = make_labels(labels, mask, n_classes=3)
    window = 6
    fc = predict_rolling(lc, window=window)
    prior = fit_majority(lc).class_prior
    for t in range(30):
        for r in range(2):
            for c in range(3):
                lo = max(0, t - window)
                hist = [labels[s, r, c] for s in range(lo, t) if mask[s, r, c]]
                if t == 0 or not hist:
                    assert np.allclose(fc.probs[t, :, r, c], prior)
                else:
                    counts = np.bincount(hist, minlength=3)
                    assert fc.probs[t, counts.argmax(), r, c] == 1.0


def test_rolling_window_validation():
    lc = make_labels(np.zeros((5, 1, 1), dtype=np.int16))
    with pytest.raises(ValueError):
        predict_rolling(lc, window=0)
    with pytest.raises(ValueError):
        predict_rolling(lc, window=6)


def scalar_logreg_oracle(xs, ys, l2):
    """1-D Newton on mean CE + (l2/2) w^2 for a no-bias check via fine grid polish."""
    w = 0.0
    for _ in range(100):
        z = w * xs
        p = 1.0 / (1.0 + np.exp(-z))
        grad = float((xs * (p - ys)).mean()) + l2 * w
        hess = float((xs * xs * p * (1.0 - p)).mean()) + l2
        w -= grad / hess
    return w


def test_two_point_problem_matches_scalar_oracle():
    xs = np.array([-1.0, 1.0])
    ys = np.array([0.0, 1.0])
    design = make_design(xs[:, None], ys.astype(np.int16))
    model = fit_logreg(design, l2_strength=1.0, max_epochs=2000, tol=1e-12)
    expected = scalar_logreg_oracle(xs, ys, 1.0)
    assert model.weights[0, 0] == pytest.approx(expected, abs=1e-8)
    assert model.bias[0] == pytest.approx(0.0, abs=1e-8)  # symmetric data


@pytest.mark.parametrize("n_classes", [2, 3])
def test_gradient_matches_finite_differences(n_classes):
    rng = np.random.default_rng(2)
    x = rng.standard_normal((20, 5))
    y = rng.integers(0, n_classes, 20)
    l2 = 0.1
    if n_classes == 2:
        w = rng.standard_normal(5)
        b = 0.5
        y_arg = y.astype(np.float64)
    else:
        w = rng.standard_normal((n_classes, 5))
        b = rng.standard_normal(n_classes)
        y_arg = y
    _, gw, gb = logreg_loss_grad(w, b, x, y_arg, n_classes, l2)
    eps = 1e-7
    gw_flat = np.asarray(gw).reshape(-1)
    w_flat = np.asarray(w, dtype=np.float64).reshape(-1)
    for idx in range(w_flat.size):
        orig = w_flat[idx]
        w_flat[idx] = orig + eps
        lp, _, _ = logreg_loss_grad(w_flat.reshape(np.shape(w)), b, x, y_arg, n_classes, l2)
        w_flat[idx] = orig - eps
        lm, _, _ = logreg_loss_grad(w_flat.reshape(np.shape(w)), b, x, y_arg, n_classes, l2)
        w_flat[idx] = orig
        num = (lp - lm) / (2 * eps)
        assert abs(num - gw_flat[idx]) / max(abs(num), abs(gw_flat[idx]), 1e-8) <= 1e-6


def test_duplicated_dataset_same_weights():
    rng = np.random.default_rng(3)
    x = rng.standard_normal((30, 4))
    y = (x[:, 0] + 0.3 * rng.standard_normal(30) > 0).astype(np.int16)
    d1 = make_design(x, y)
    d2 = make_design(np.vstack([x, x]), np.concatenate([y, y]))
    m1 = fit_logreg(d1, max_epochs=200)
    m2 = fit_logreg(d2, max_epochs=200)
    assert np.allclose(m1.weights, m2.weights, atol=1e-12)
    assert np.allclose(m1.bias, m2.bias, atol=1e-12)


def test_loss_non_increasing_and_convex_agreement():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((60, 3))
    y = (x @ np.array([1.0, -2.0, 0.5]) > 0).astype(np.int16)
    design = make_design(x, y)
    m1 = fit_logreg(design, l2_strength=0.1, max_epochs=5000, tol=1e-10)
    m2 = fit_logreg(
        design, l2_strength=0.1, max_epochs=5000, tol=1e-10,
        init_weights=rng.standard_normal(3), init_bias=1.5,
    )
    hist = np.array(m1.loss_history)
    assert (np.diff(hist) <= 0).all()
    assert abs(m1.train_objective - m2.train_objective) <= 1e-8


def test_predict_probabilities():
    rng = np.random.default_rng(5)
    design = make_design(rng.standard_normal((10, 4)), rng.integers(0, 2, 10))
    model = fit_logreg(design, max_epochs=5)
    p = predict_logreg(model, design)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-9)
    zero = fit_logreg(design, max_epochs=0)
    assert (predict_logreg(zero, design) == 0.5).all()
    big = predict_logreg(
        type(model)(weights=np.array([[50.0] * 4]), bias=np.array([0.0]), n_classes=2),
        np.ones((1, 4)),
    )
    assert big[0, 1] >= 1.0 - 1e-6


def test_multiclass_predict_sums_to_one():
    rng = np.random.default_rng(6)
    design = make_design(rng.standard_normal((40, 3)), rng.integers(0, 3, 40), n_classes=3)
    model = fit_logreg(design, max_epochs=50)
    p = predict_logreg(model, design)
    assert p.shape == (40, 3)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-9)


def test_feature_width_mismatch():
    design = make_design(np.zeros((4, 3)), [0, 1, 0, 1])
    model = fit_logreg(design, max_epochs=1)
    with pytest.raises(ValueError):
        predict_logreg(model, np.zeros((2, 5)))


def test_standardize_fits_on_train_and_applies_at_predict():
    rng = np.random.default_rng(7)
    x = rng.standard_normal((50, 2)) * np.array([100.0, 0.01])
    y = (x[:, 0] > 0).astype(np.int16)
    design = make_design(x, y)
    model = fit_logreg(design, standardize=True, max_epochs=300)
    assert model.scale_mean is not None
    p = predict_logreg(model, design)
    assert ((p[:, 1] > 0.5) == y.astype(bool)).mean() > 0.9


def test_linear_serialization_round_trip(tmp_path):
    rng = np.random.default_rng(8)
    design = make_design(rng.standard_normal((30, 4)), rng.integers(0, 2, 30))
    model = fit_logreg(design, standardize=True, max_epochs=50)
    path = tmp_path / "m.txt"
    save_linear(model, path)
    back = load_linear(path)
    assert np.array_equal(back.weights, model.weights)
    assert np.array_equal(back.bias, model.bias)
    assert np.array_equal(back.scale_mean, model.scale_mean)
    assert np.allclose(predict_logreg(back, design), predict_logreg(model, design))


def test_baseline_serialization_round_trip(tmp_path):
    labels = np.array([0, 1, 1], dtype=np.int16).reshape(1, 1, 3)
    model = fit_majority(make_labels(labels))
    path = tmp_path / "b.txt"
    save_baseline(model, path)
    back = load_baseline(path)
    assert back.majority_class == model.majority_class
    assert np.array_equal(back.class_prior, model.class_prior)


def test_argmax_invariant_to_constant_logit_shift():
    rng = np.random.default_rng(9)
    design = make_design(rng.standard_normal((40, 3)), rng.integers(0, 3, 40), n_classes=3)
    model = fit_logreg(design, max_epochs=50)
    shifted = type(model)(
        weights=model.weights, bias=model.bias + 7.5, n_classes=3,
        scale_mean=model.scale_mean, scale_sd=model.scale_sd,
    )
    a = predict_logreg(model, design).argmax(axis=1)
    b = predict_logreg(shifted, design).argmax(axis=1)
    assert np.array_equal(a, b)
