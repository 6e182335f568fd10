"""Mapping PDSI values to drought classes.

Binary rule: drought iff PDSI <= threshold (the conventional cut is -2, and
-2.00 itself counts as drought).  Multiclass rule: the class index is the
number of thresholds strictly below the value, so class 0 is the driest.
"""

import bisect
from dataclasses import dataclass

import numpy as np

from .cube import _frozen

DEFAULT_DROUGHT_THRESHOLD = -2.0

# Severity bins realized as half-open [low, high) intervals ascending.
_SEVERITY_CUTS = (-4.0, -3.0, -2.0, -1.0, 1.0, 2.0, 3.0, 4.0)
_SEVERITY_NAMES = (
    "Extreme dry spell",
    "Severe dry spell",
    "Moderate dry spell",
    "Mild dry spell",
    "Normal",
    "Mild wet spell",
    "Moderate wet spell",
    "Severe wet spell",
    "Extreme wet spell",
)


@dataclass(frozen=True)
class ClassScheme:
    """Ordered PDSI cut points; n_classes = len(thresholds) + 1."""

    thresholds: tuple

    def __post_init__(self):
        thresholds = tuple(float(t) for t in self.thresholds)
        if len(thresholds) < 1:
            raise ValueError("a scheme needs at least one threshold")
        if any(a >= b for a, b in zip(thresholds, thresholds[1:])):
            raise ValueError("thresholds must be strictly increasing")
        object.__setattr__(self, "thresholds", thresholds)

    @property
    def n_classes(self):
        return len(self.thresholds) + 1

    @classmethod
    def binary(cls, threshold=DEFAULT_DROUGHT_THRESHOLD):
        return cls(thresholds=(threshold,))

    @classmethod
    def three_class(cls):
        return cls(thresholds=(-1.0, 1.0))

    @classmethod
    def five_class(cls):
        return cls(thresholds=(-3.0, -1.0, 1.0, 3.0))


@dataclass(frozen=True, eq=False)
class LabelCube:
    """Class indices per cell-month, mask inherited from the source cube."""

    labels: np.ndarray
    mask: np.ndarray
    n_classes: int
    start_month: int = 0

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int16)
        mask = np.asarray(self.mask, dtype=bool)
        if labels.shape != mask.shape or labels.ndim != 3:
            raise ValueError("labels and mask must share a 3-D shape")
        valid = labels[mask]
        if valid.size and (valid.min() < 0 or valid.max() >= self.n_classes):
            raise ValueError("labels out of range for n_classes")
        object.__setattr__(self, "labels", _frozen(labels))
        object.__setattr__(self, "mask", _frozen(mask))

    @property
    def t_len(self):
        return self.labels.shape[0]

    @property
    def rows(self):
        return self.labels.shape[1]

    @property
    def cols(self):
        return self.labels.shape[2]


def binarize(cube, threshold=DEFAULT_DROUGHT_THRESHOLD):
    """Label 1 (drought) iff PDSI <= threshold, 0 otherwise."""
    if not np.isfinite(threshold):
        raise ValueError("threshold must be finite")
    with np.errstate(invalid="ignore"):
        labels = (cube.values <= threshold).astype(np.int16)
    labels[~cube.mask] = 0
    return LabelCube(labels=labels, mask=cube.mask, n_classes=2, start_month=cube.start_month)


def bin_multiclass(cube, scheme):
    """Class index = number of scheme thresholds strictly below the value."""
    cuts = np.asarray(scheme.thresholds, dtype=np.float32)
    flat = np.where(cube.mask, cube.values, np.float32(0.0))
    labels = np.searchsorted(cuts, flat, side="left").astype(np.int16)
    labels[~cube.mask] = 0
    return LabelCube(
        labels=labels, mask=cube.mask, n_classes=scheme.n_classes, start_month=cube.start_month
    )


def label_cube(cube, scheme):
    """Scheme-dispatching labeler: binary threshold rule or multiclass bins."""
    if scheme.n_classes == 2:
        return binarize(cube, scheme.thresholds[0])
    return bin_multiclass(cube, scheme)


def severity_class(value):
    """Name of the severity bin containing a PDSI value."""
    value = float(value)
    if not np.isfinite(value):
        raise ValueError("PDSI value must be finite")
    return _SEVERITY_NAMES[bisect.bisect_right(_SEVERITY_CUTS, value)]
