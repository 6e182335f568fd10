import numpy as np

from droughtcast.labels import binarize
from droughtcast.synth import SynthParams, generate, smooth_field


def test_pure_seasonal_limit():
    params = SynthParams(
        t_len=36, rows=3, cols=3, ar_coeff=0.5, spatial_sigma=1.0,
        seasonal_amp=1.0, noise_sd=0.0, value_scale=0.0, seed=5,
    )
    got = generate(params)
    for t in range(36):
        expected = np.sin(2.0 * np.pi * t / 12.0)
        assert np.allclose(got.values[t], expected, atol=1e-6)


def test_determinism_bytes():
    params = SynthParams(t_len=24, rows=8, cols=9, seed=77)
    a = generate(params)
    b = generate(params)
    assert a.values.tobytes() == b.values.tobytes()
    assert generate(SynthParams(t_len=24, rows=8, cols=9, seed=78)) != a


def test_lag1_autocorrelation_oracle():
    params = SynthParams(
        t_len=600, rows=4, cols=4, ar_coeff=0.95, spatial_sigma=1.0,
        seasonal_amp=0.0, noise_sd=1.0, value_scale=1.0, seed=3,
    )
    got = generate(params)
    series = got.values.reshape(600, -1).astype(np.float64)
    x = series - series.mean(axis=0)
    num = (x[1:] * x[:-1]).sum(axis=0)
    den = (x * x).sum(axis=0)
    autocorr = num / den
    assert 0.85 <= autocorr.mean() <= 0.99
    assert (autocorr > 0.8).all()


def test_spatial_smoothing_raises_neighbor_correlation():
    params = SynthParams(
        t_len=400, rows=12, cols=12, ar_coeff=0.3, spatial_sigma=1.5,
        seasonal_amp=0.0, noise_sd=1.0, value_scale=1.0, seed=9,
    )
    got = generate(params)
    series = got.values.astype(np.float64)

    def corr(a, b):
        a = a - a.mean()
        b = b - b.mean()
        return (a * b).sum() / np.sqrt((a * a).sum() * (b * b).sum())

    adjacent = corr(series[:, 5, 5], series[:, 5, 6])
    distant = corr(series[:, 5, 5], series[:, 5, 11])
    assert adjacent > distant + 0.2


def test_persistence_beats_prevalence():
    params = SynthParams(t_len=500, rows=8, cols=8, ar_coeff=0.95, seed=21)
    got = generate(params)
    threshold = float(np.percentile(got.values, 30))
    labels = binarize(got, threshold).labels
    persisted = (labels[1:] == labels[:-1]).mean()
    prevalence = max(labels.mean(), 1 - labels.mean())
    assert persisted > prevalence + 0.05


def test_smooth_field_preserves_mass_profile():
    field = np.zeros((9, 9))
    field[4, 4] = 1.0
    out = smooth_field(field, 1.0)
    assert out[4, 4] == out.max()
    assert np.isclose(out.sum(), 1.0, atol=0.05)
    assert out[4, 3] > out[4, 1]


def test_all_entries_valid():
    got = generate(SynthParams(t_len=10, rows=5, cols=5, seed=1))
    assert got.mask.all()
