import math
import struct

import numpy as np
import pytest

from droughtcast import cube as cube_mod
from droughtcast.cube import (
    PdsiCube,
    concat_time,
    crop_center,
    crop_center_box,
    load_cube,
    load_cube_csv,
    out_of_time_split,
    save_cube,
    summarize,
)
from droughtcast.errors import (
    CorruptionError,
    EmptyDataError,
    FormatError,
    UnsupportedVersionError,
)
from droughtcast.labels import ClassScheme


def make_cube(values, start_month=0):
    return PdsiCube(values=np.asarray(values, dtype=np.float32), start_month=start_month)


def random_cube(seed, t=8, rows=4, cols=5, missing_frac=0.1):
    rng = np.random.default_rng(seed)
    values = rng.uniform(-8, 8, (t, rows, cols)).astype(np.float32)
    hole = rng.random((t, rows, cols)) < missing_frac
    values[hole] = np.nan
    return make_cube(values)


def pack_file(path, t, h, w, payload, version=1, start=0, magic=b"PDSC"):
    blob = struct.pack("<4sIIIIq", magic, version, t, h, w, start) + payload
    path.write_bytes(blob)
    return path


def test_row_major_layout(tmp_path):
    payload = np.arange(8, dtype="<f4").tobytes()
    path = pack_file(tmp_path / "a.pdsc", 2, 2, 2, payload)
    got = load_cube(path)
    assert got.values[1, 1, 1] == 7.0
    assert got.values[0, 1, 0] == 2.0


def test_nan_payload_becomes_masked(tmp_path):
    values = np.arange(8, dtype=np.float32)
    values[3] = np.nan
    path = pack_file(tmp_path / "a.pdsc", 2, 2, 2, values.astype("<f4").tobytes())
    got = load_cube(path)
    assert got.mask.sum() == 7
    assert not got.mask[0, 1, 1]


def test_round_trip_bit_exact(tmp_path):
    c = random_cube(0)
    p1, p2 = tmp_path / "a.pdsc", tmp_path / "b.pdsc"
    save_cube(c, p1)
    back = load_cube(p1)
    assert back == c
    assert back.values.tobytes() == c.values.tobytes()
    save_cube(back, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_single_cell_file_length(tmp_path):
    # 4 magic + 4 version + 12 dims + 8 start month + 4 payload
    path = tmp_path / "one.pdsc"
    save_cube(make_cube([[[0.0]]]), path)
    assert path.stat().st_size == 32


def test_save_is_deterministic(tmp_path):
    c = random_cube(1)
    p1, p2 = tmp_path / "a.pdsc", tmp_path / "b.pdsc"
    save_cube(c, p1)
    save_cube(c, p2)
    assert p1.read_bytes() == p2.read_bytes()


def test_masked_entry_saved_as_nan(tmp_path):
    values = np.zeros((1, 2, 2), dtype=np.float32)
    values[0, 1, 0] = np.nan
    path = tmp_path / "m.pdsc"
    save_cube(make_cube(values), path)
    payload = np.frombuffer(path.read_bytes()[28:], dtype="<f4")
    assert np.isnan(payload[2])
    assert np.isfinite(payload[[0, 1, 3]]).all()


def test_load_error_taxonomy(tmp_path):
    bad_magic = pack_file(tmp_path / "x.pdsc", 1, 1, 1, b"\0" * 4, magic=b"XXXX")
    with pytest.raises(FormatError):
        load_cube(bad_magic)
    bad_version = pack_file(tmp_path / "v.pdsc", 1, 1, 1, b"\0" * 4, version=2)
    with pytest.raises(UnsupportedVersionError):
        load_cube(bad_version)
    truncated = pack_file(tmp_path / "t.pdsc", 2, 2, 2, b"\0" * 10)
    with pytest.raises(CorruptionError):
        load_cube(truncated)


def test_csv_ingestion(tmp_path):
    path = tmp_path / "c.csv"
    path.write_text("t,row,col,pdsi\n0,0,0,-2.5\n0,1,1,1.0\n1,0,1,3.25\n")
    got = load_cube_csv(path)
    assert got.shape == (2, 2, 2)
    assert got.values[0, 0, 0] == np.float32(-2.5)
    assert got.mask.sum() == 3
    assert not got.mask[0, 0, 1]


def test_csv_bad_header(tmp_path):
    path = tmp_path / "c.csv"
    path.write_text("time,row,col,value\n0,0,0,1\n")
    with pytest.raises(FormatError):
        load_cube_csv(path)


def test_split_table1_span():
    c = make_cube(np.zeros((754, 1, 1), dtype=np.float32))
    train, test = out_of_time_split(c, 0.7)
    assert train.t_len == 527
    assert test.t_len == 227


def test_split_small_case_and_partition():
    values = np.arange(10, dtype=np.float32).reshape(10, 1, 1) / 10.0
    c = make_cube(values)
    train, test = out_of_time_split(c, 0.7)
    assert train.t_len == 7 and test.t_len == 3
    assert train.values[6, 0, 0] == np.float32(0.6)
    assert test.values[0, 0, 0] == np.float32(0.7)
    assert test.start_month == 7
    assert concat_time(train, test) == c


def test_split_degenerate():
    c = make_cube(np.zeros((3, 1, 1), dtype=np.float32))
    with pytest.raises(ValueError):
        out_of_time_split(c, 0.05)
    with pytest.raises(ValueError):
        out_of_time_split(c, 1.5)


def test_crop_49_percent():
    c = random_cube(2, t=3, rows=10, cols=10, missing_frac=0)
    out = crop_center(c, 0.49)
    assert (out.rows, out.cols) == (7, 7)
    # centered: offset (10-7)//2 = 1
    assert np.array_equal(out.values, c.values[:, 1:8, 1:8])


def test_crop_identity():
    c = random_cube(3)
    assert crop_center(c, 1.0) == c


def test_crop_area_fraction_large_grid():
    # production-scale grid: the kept area fraction lands on the requested 27%
    r0, r1, c0, c1 = crop_center_box(104, 136, 0.27)
    rows2, cols2 = r1 - r0, c1 - c0
    assert (rows2, cols2) == (54, 71)
    assert abs(rows2 * cols2 / (104 * 136) - 0.27) < 0.005


def test_crop_idempotent_for_same_dims():
    c = random_cube(4, rows=12, cols=12)
    once = crop_center(c, 0.5)
    again = crop_center(once, 1.0)
    assert again == once


def test_summarize_counting_oracle():
    c = random_cube(5, t=12, rows=6, cols=7, missing_frac=0.2)
    scheme = ClassScheme.binary(-2.0)
    stats = summarize(c, scheme)
    # exhaustive loop over every entry
    n_valid = n_drought = 0
    for t in range(c.t_len):
        for r in range(c.rows):
            for col in range(c.cols):
                if c.mask[t, r, col]:
                    n_valid += 1
                    if c.values[t, r, col] <= -2.0:
                        n_drought += 1
    assert stats.span_months == 12
    assert math.isclose(stats.pct_drought, 100.0 * n_drought / n_valid, abs_tol=1e-9)
    assert math.isclose(stats.pct_normal + stats.pct_drought, 100.0, abs_tol=1e-9)


def test_summarize_all_normal():
    c = make_cube(np.zeros((4, 3, 3), dtype=np.float32))
    stats = summarize(c, ClassScheme.binary(-2.0))
    assert stats.pct_drought == 0.0
    assert stats.pct_normal == 100.0


def test_summarize_empty():
    c = make_cube(np.full((2, 2, 2), np.nan, dtype=np.float32))
    with pytest.raises(EmptyDataError):
        summarize(c, ClassScheme.binary())


def test_sanity_bound_rejected():
    with pytest.raises(ValueError):
        make_cube(np.full((1, 1, 1), 25.0, dtype=np.float32))


def test_cube_arrays_immutable():
    c = random_cube(6)
    with pytest.raises(ValueError):
        c.values[0, 0, 0] = 1.0


def test_forecast_round_trip_and_errors(tmp_path):
    from droughtcast.cube import ForecastCube, load_forecast, save_forecast

    rng = np.random.default_rng(7)
    scores = rng.random((5, 3, 4)).astype(np.float32)
    probs = np.stack([1.0 - scores, scores], axis=1).astype(np.float64)
    predicted = np.array([False, True, True, True, True])
    fc = ForecastCube(probs=probs, predicted=predicted, start_month=12)
    path = tmp_path / "f.fcst"
    save_forecast(fc, path)
    back = load_forecast(path)
    assert back.start_month == 12
    assert np.array_equal(back.predicted, predicted)
    assert np.allclose(back.probs, probs, atol=1e-7)  # float32 payload

    bad = tmp_path / "bad.fcst"
    bad.write_bytes(b"XXXX" + b"\0" * 40)
    with pytest.raises(FormatError):
        load_forecast(bad)
    truncated = tmp_path / "trunc.fcst"
    truncated.write_bytes(path.read_bytes()[:40])
    with pytest.raises(CorruptionError):
        load_forecast(truncated)
