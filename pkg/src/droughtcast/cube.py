"""Spatio-temporal PDSI grids: data model, persistence, splitting, cropping.

A cube is a monthly stack of (rows x cols) PDSI grids with a validity mask.
Cubes are immutable after construction (arrays are frozen), so they can be
shared freely across worker threads.
"""

import csv
import math
import struct
from dataclasses import dataclass

import numpy as np

from .errors import CorruptionError, EmptyDataError, FormatError, UnsupportedVersionError

PDSC_MAGIC = b"PDSC"
PDSC_VERSION = 1
_HEADER = struct.Struct("<4sIIIIq")

PDSI_SANITY_BOUND = 20.0


def _frozen(arr):
    arr = np.ascontiguousarray(arr)
    arr.flags.writeable = False
    return arr


@dataclass(frozen=True, eq=False)
class PdsiCube:
    """Monthly PDSI tensor (t_len, rows, cols) plus validity mask.

    Invalid entries hold a canonical NaN in ``values`` and False in ``mask``;
    they are excluded from every statistic and every training sample.
    ``start_month`` counts months since 1958-01.
    """

    values: np.ndarray
    mask: np.ndarray = None
    start_month: int = 0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float32)
        if values.ndim != 3:
            raise ValueError(f"cube values must be 3-D (t, rows, cols), got {values.shape}")
        if min(values.shape) < 1:
            raise ValueError(f"cube dimensions must all be >= 1, got {values.shape}")
        if self.mask is None:
            mask = np.isfinite(values)
        else:
            mask = np.asarray(self.mask, dtype=bool)
            if mask.shape != values.shape:
                raise ValueError("mask shape must match values shape")
            mask = mask & np.isfinite(values)
        finite = values[mask]
        if finite.size and float(np.abs(finite).max()) > PDSI_SANITY_BOUND:
            raise ValueError(f"valid PDSI values must lie in [-{PDSI_SANITY_BOUND}, {PDSI_SANITY_BOUND}]")
        values = np.where(mask, values, np.float32(np.nan))
        object.__setattr__(self, "values", _frozen(values))
        object.__setattr__(self, "mask", _frozen(mask))
        object.__setattr__(self, "start_month", int(self.start_month))

    @property
    def t_len(self):
        return self.values.shape[0]

    @property
    def rows(self):
        return self.values.shape[1]

    @property
    def cols(self):
        return self.values.shape[2]

    @property
    def shape(self):
        return self.values.shape

    def filled(self, fill=0.0, dtype=np.float64):
        """Values with invalid entries replaced by ``fill``."""
        return np.where(self.mask, self.values, dtype(fill)).astype(dtype)

    def __eq__(self, other):
        if not isinstance(other, PdsiCube):
            return NotImplemented
        return (
            self.start_month == other.start_month
            and self.values.shape == other.values.shape
            and bool(np.all(self.mask == other.mask))
            and self.values.tobytes() == other.values.tobytes()
        )


@dataclass(frozen=True)
class RegionStats:
    """Share of valid cell-months above / at-or-below the drought threshold."""

    span_months: int
    pct_normal: float
    pct_drought: float


@dataclass(frozen=True, eq=False)
class ForecastCube:
    """Per-cell class-probability grids, one per month.

    probs has shape (t_len, n_classes, rows, cols); ``predicted`` flags the
    months a model actually emitted (others are excluded from evaluation).
    """

    probs: np.ndarray
    predicted: np.ndarray
    start_month: int = 0

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        predicted = np.asarray(self.predicted, dtype=bool)
        if probs.ndim != 4:
            raise ValueError(f"forecast probs must be 4-D, got {probs.shape}")
        if predicted.shape != (probs.shape[0],):
            raise ValueError("predicted flags must have one entry per month")
        object.__setattr__(self, "probs", _frozen(probs))
        object.__setattr__(self, "predicted", _frozen(predicted))
        object.__setattr__(self, "start_month", int(self.start_month))

    @property
    def t_len(self):
        return self.probs.shape[0]

    @property
    def n_classes(self):
        return self.probs.shape[1]

    @property
    def rows(self):
        return self.probs.shape[2]

    @property
    def cols(self):
        return self.probs.shape[3]


def save_cube(cube, path):
    """Write a cube in PDSC v1: header then t-major row-major float32 LE payload."""
    header = _HEADER.pack(PDSC_MAGIC, PDSC_VERSION, cube.t_len, cube.rows, cube.cols, cube.start_month)
    payload = np.ascontiguousarray(cube.values, dtype="<f4").tobytes()
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(payload)


def load_cube(path):
    """Read a PDSC v1 file; NaN payload entries become invalid-mask cells."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != PDSC_MAGIC:
        raise FormatError(f"{path}: not a PDSC file (bad magic)")
    if len(blob) < _HEADER.size:
        raise CorruptionError(f"{path}: truncated PDSC header")
    _, version, t_len, rows, cols, start_month = _HEADER.unpack_from(blob)
    if version != PDSC_VERSION:
        raise UnsupportedVersionError(f"{path}: PDSC version {version} not supported")
    expected = _HEADER.size + 4 * t_len * rows * cols
    if len(blob) != expected:
        raise CorruptionError(f"{path}: payload is {len(blob) - _HEADER.size} bytes, expected {expected - _HEADER.size}")
    values = np.frombuffer(blob, dtype="<f4", offset=_HEADER.size).reshape(t_len, rows, cols)
    return PdsiCube(values=values, start_month=start_month)


def load_cube_csv(path, t_len=None, rows=None, cols=None, start_month=0):
    """Ingest `t,row,col,pdsi` records; absent (t,row,col) slots become missing.

    Dimensions default to one past the largest index seen.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise FormatError(f"{path}: empty CSV") from None
        if [h.strip() for h in header] != ["t", "row", "col", "pdsi"]:
            raise FormatError(f"{path}: expected header t,row,col,pdsi")
        records = []
        for lineno, line in enumerate(reader, start=2):
            if not line:
                continue
            try:
                t, r, c = int(line[0]), int(line[1]), int(line[2])
                v = float(line[3])
            except (ValueError, IndexError):
                raise FormatError(f"{path}:{lineno}: bad record {line!r}") from None
            if t < 0 or r < 0 or c < 0:
                raise FormatError(f"{path}:{lineno}: negative index")
            records.append((t, r, c, v))
    if not records:
        raise EmptyDataError(f"{path}: no records")
    t_len = t_len if t_len is not None else max(r[0] for r in records) + 1
    rows = rows if rows is not None else max(r[1] for r in records) + 1
    cols = cols if cols is not None else max(r[2] for r in records) + 1
    values = np.full((t_len, rows, cols), np.nan, dtype=np.float32)
    for t, r, c, v in records:
        if t >= t_len or r >= rows or c >= cols:
            raise FormatError(f"{path}: record ({t},{r},{c}) outside dimensions")
        values[t, r, c] = v
    return PdsiCube(values=values, start_month=start_month)


def out_of_time_split(cube, train_frac):
    """Chronological split: train takes floor(train_frac * t_len) months."""
    if not 0.0 < train_frac < 1.0:
        raise ValueError(f"train_frac must be in (0, 1), got {train_frac}")
    n_train = math.floor(train_frac * cube.t_len)
    if n_train < 1 or n_train >= cube.t_len:
        raise ValueError(f"degenerate split: {n_train} train months of {cube.t_len}")
    train = PdsiCube(values=cube.values[:n_train], mask=cube.mask[:n_train], start_month=cube.start_month)
    test = PdsiCube(
        values=cube.values[n_train:],
        mask=cube.mask[n_train:],
        start_month=cube.start_month + n_train,
    )
    return train, test


def crop_center_box(rows, cols, keep_area_frac):
    """Centered sub-grid bounds keeping ~keep_area_frac of the area.

    Each side scales by sqrt(keep_area_frac), rounded half away from zero,
    floored at one cell.  Returns (r0, r1, c0, c1) slice bounds.
    """
    if not 0.0 < keep_area_frac <= 1.0:
        raise ValueError(f"keep_area_frac must be in (0, 1], got {keep_area_frac}")
    scale = math.sqrt(keep_area_frac)
    rows2 = max(1, int(math.floor(rows * scale + 0.5)))
    cols2 = max(1, int(math.floor(cols * scale + 0.5)))
    r0 = (rows - rows2) // 2
    c0 = (cols - cols2) // 2
    return r0, r0 + rows2, c0, c0 + cols2


def crop_center(cube, keep_area_frac):
    """Centered spatial crop retaining ~keep_area_frac of the grid area."""
    r0, r1, c0, c1 = crop_center_box(cube.rows, cube.cols, keep_area_frac)
    if (r1 - r0, c1 - c0) == (cube.rows, cube.cols):
        return cube
    return PdsiCube(
        values=cube.values[:, r0:r1, c0:c1],
        mask=cube.mask[:, r0:r1, c0:c1],
        start_month=cube.start_month,
    )


def summarize(cube, scheme):
    """Drought/normal percentages over valid entries at a binary threshold."""
    if scheme.n_classes != 2:
        raise ValueError("summarize requires a binary scheme")
    valid = cube.values[cube.mask]
    if valid.size == 0:
        raise EmptyDataError("cube has no valid entries")
    threshold = scheme.thresholds[0]
    n_drought = int(np.count_nonzero(valid <= threshold))
    n = valid.size
    return RegionStats(
        span_months=cube.t_len,
        pct_normal=100.0 * (n - n_drought) / n,
        pct_drought=100.0 * n_drought / n,
    )


FCST_MAGIC = b"FCST"
FCST_VERSION = 1
_FCST_HEADER = struct.Struct("<4sIIIIIq")


def save_forecast(forecast, path):
    """Write a forecast in FCST v1: header, predicted flags, float32 probs."""
    header = _FCST_HEADER.pack(
        FCST_MAGIC,
        FCST_VERSION,
        forecast.t_len,
        forecast.n_classes,
        forecast.rows,
        forecast.cols,
        forecast.start_month,
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(forecast.predicted.astype(np.uint8).tobytes())
        fh.write(np.ascontiguousarray(forecast.probs, dtype="<f4").tobytes())


def load_forecast(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 4 or blob[:4] != FCST_MAGIC:
        raise FormatError(f"{path}: not an FCST file (bad magic)")
    if len(blob) < _FCST_HEADER.size:
        raise CorruptionError(f"{path}: truncated FCST header")
    _, version, t_len, n_classes, rows, cols, start_month = _FCST_HEADER.unpack_from(blob)
    if version != FCST_VERSION:
        raise UnsupportedVersionError(f"{path}: FCST version {version} not supported")
    expected = _FCST_HEADER.size + t_len + 4 * t_len * n_classes * rows * cols
    if len(blob) != expected:
        raise CorruptionError(f"{path}: FCST payload size mismatch")
    predicted = np.frombuffer(blob, dtype=np.uint8, count=t_len, offset=_FCST_HEADER.size).astype(bool)
    probs = np.frombuffer(blob, dtype="<f4", offset=_FCST_HEADER.size + t_len).reshape(
        t_len, n_classes, rows, cols
    )
    return ForecastCube(probs=probs.astype(np.float64), predicted=predicted, start_month=start_month)


def concat_time(first, second):
    """Concatenate two spatially identical cubes along the time axis."""
    if (first.rows, first.cols) != (second.rows, second.cols):
        raise ValueError("spatial dimensions differ")
    return PdsiCube(
        values=np.concatenate([first.values, second.values], axis=0),
        mask=np.concatenate([first.mask, second.mask], axis=0),
        start_month=first.start_month,
    )
