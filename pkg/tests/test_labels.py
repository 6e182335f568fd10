import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from droughtcast.cube import PdsiCube
from droughtcast.labels import ClassScheme, bin_multiclass, binarize, severity_class


def make_cube(values):
    return PdsiCube(values=np.asarray(values, dtype=np.float32))


def test_binarize_examples():
    c = make_cube([[[-2.5, 0.0, -2.0]]])
    out = binarize(c, -2.0)
    assert out.labels[0, 0].tolist() == [1, 0, 1]


def test_binarize_preserves_mask():
    values = np.array([[[np.nan, -3.0]]], dtype=np.float32)
    out = binarize(make_cube(values), -2.0)
    assert not out.mask[0, 0, 0]
    assert out.mask[0, 0, 1]
    assert out.labels[0, 0, 1] == 1


def test_multiclass_three_class_intervals():
    scheme = ClassScheme.three_class()
    c = make_cube([[[-1.5, 0.0, 2.0]]])
    out = bin_multiclass(c, scheme)
    assert out.labels[0, 0].tolist() == [0, 1, 2]
    assert out.n_classes == 3


def test_multiclass_five_class_lowest_bin():
    scheme = ClassScheme.five_class()
    out = bin_multiclass(make_cube([[[-4.0]]]), scheme)
    assert out.labels[0, 0, 0] == 0
    assert out.n_classes == 5


def test_multiclass_histogram_matches_interval_oracle():
    rng = np.random.default_rng(0)
    values = rng.uniform(-6, 6, (5, 4, 4)).astype(np.float32)
    c = make_cube(values)
    scheme = ClassScheme.five_class()
    out = bin_multiclass(c, scheme)
    # brute-force interval membership per entry
    for t in range(5):
        for r in range(4):
            for col in range(4):
                v = values[t, r, col]
                expected = sum(1 for cut in scheme.thresholds if cut < v)
                assert out.labels[t, r, col] == expected


def test_binary_agrees_with_single_threshold_multiclass():
    c = make_cube(np.linspace(-5, 5, 24, dtype=np.float32).reshape(2, 3, 4))
    binary = binarize(c, -2.0)
    two_bin = bin_multiclass(c, ClassScheme(thresholds=(-2.0,)))
    # class 0 of the two-bin scheme is the drought class
    assert np.array_equal(binary.labels, 1 - two_bin.labels)


@given(st.lists(st.floats(min_value=-15, max_value=15, width=32), min_size=2, max_size=30))
def test_multiclass_monotone_in_value(raw):
    values = np.sort(np.array(raw, dtype=np.float32)).reshape(1, 1, -1)
    out = bin_multiclass(make_cube(values), ClassScheme.five_class())
    labels = out.labels[0, 0]
    assert (np.diff(labels) >= 0).all()


def test_scheme_validation():
    with pytest.raises(ValueError):
        ClassScheme(thresholds=(1.0, -1.0))
    with pytest.raises(ValueError):
        ClassScheme(thresholds=())


@pytest.mark.parametrize(
    "value,name",
    [
        (4.5, "Extreme wet spell"),
        (-2.5, "Moderate dry spell"),
        (0.0, "Normal"),
        (-0.5, "Normal"),
        (1.5, "Mild wet spell"),
        (-4.5, "Extreme dry spell"),
        (3.2, "Severe wet spell"),
        (2.0, "Moderate wet spell"),
        (-1.5, "Mild dry spell"),
        (-3.01, "Severe dry spell"),
    ],
)
def test_severity_names(value, name):
    assert severity_class(value) == name


def test_severity_rejects_non_finite():
    with pytest.raises(ValueError):
        severity_class(float("nan"))


def test_labeling_keeps_dims_and_mask():
    rng = np.random.default_rng(1)
    values = rng.uniform(-5, 5, (6, 3, 4)).astype(np.float32)
    values[rng.random((6, 3, 4)) < 0.3] = np.nan
    c = make_cube(values)
    for out in (binarize(c), bin_multiclass(c, ClassScheme.three_class())):
        assert out.labels.shape == c.shape
        assert np.array_equal(out.mask, c.mask)
