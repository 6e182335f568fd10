"""Per-cell supervised samples for the pooled linear and boosted models.

Each sample is the k x k spatial neighborhood of one cell over a history
window, flattened chronologically (month-major, then row, then column of
the neighborhood).  Out-of-grid and masked neighbors contribute 0.0; a
sample exists only when its target label is valid.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class WindowSpec:
    """History length, forecast horizon and neighborhood size (all months/cells)."""

    history_len: int = 1
    horizon: int = 1
    neighborhood: int = 3

    def __post_init__(self):
        if self.history_len < 1:
            raise ValueError("history_len must be >= 1")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.neighborhood < 1 or self.neighborhood % 2 == 0:
            raise ValueError("neighborhood must be odd and >= 1")

    @property
    def feature_width(self):
        return self.history_len * self.neighborhood * self.neighborhood


@dataclass(frozen=True, eq=False)
class DesignMatrix:
    """Flattened samples: features (n, width), targets, (t, row, col) provenance."""

    features: np.ndarray
    targets: np.ndarray
    provenance: np.ndarray
    n_classes: int
    spec: WindowSpec

    @property
    def n_samples(self):
        return self.features.shape[0]

    @property
    def feature_width(self):
        return self.features.shape[1]


def build_design(cube, labels, spec):
    """Assemble the design matrix for every predictable (t, row, col).

    A target month t is predictable when its full history window
    [t - horizon - history_len + 1, t - horizon] lies inside the cube.
    Samples are ordered by (t, row, col).
    """
    if (labels.t_len, labels.rows, labels.cols) != cube.shape:
        raise ValueError("labels dimensions must match the cube")
    lh, hz, k = spec.history_len, spec.horizon, spec.neighborhood
    if cube.t_len < lh + hz:
        raise ValueError(f"t_len {cube.t_len} too short for history {lh} + horizon {hz}")
    t_len, rows, cols = cube.shape
    pad = k // 2
    filled = np.zeros((t_len, rows + 2 * pad, cols + 2 * pad), dtype=np.float64)
    filled[:, pad : pad + rows, pad : pad + cols] = cube.filled(0.0)
    # (t, rows, cols, k, k) neighborhood view of every month
    hoods = np.lib.stride_tricks.sliding_window_view(filled, (k, k), axis=(1, 2))

    first_target = lh + hz - 1
    feats, targs, prov = [], [], []
    cell_rows, cell_cols = np.meshgrid(np.arange(rows), np.arange(cols), indexing="ij")
    for t in range(first_target, t_len):
        hist = hoods[t - hz - lh + 1 : t - hz + 1]  # (lh, rows, cols, k, k)
        x = hist.transpose(1, 2, 0, 3, 4).reshape(rows * cols, lh * k * k)
        keep = labels.mask[t].reshape(-1)
        if not keep.any():
            continue
        feats.append(x[keep])
        targs.append(labels.labels[t].reshape(-1)[keep])
        prov.append(
            np.column_stack(
                (
                    np.full(int(keep.sum()), t, dtype=np.int32),
                    cell_rows.reshape(-1)[keep].astype(np.int32),
                    cell_cols.reshape(-1)[keep].astype(np.int32),
                )
            )
        )
    if feats:
        features = np.concatenate(feats, axis=0)
        targets = np.concatenate(targs, axis=0)
        provenance = np.concatenate(prov, axis=0)
    else:
        features = np.empty((0, spec.feature_width), dtype=np.float64)
        targets = np.empty(0, dtype=np.int16)
        provenance = np.empty((0, 3), dtype=np.int32)
    return DesignMatrix(
        features=features,
        targets=targets.astype(np.int16),
        provenance=provenance,
        n_classes=labels.n_classes,
        spec=spec,
    )


def export_design_csv(design, path):
    """Write `t,row,col,y,f0..fN` rows in sample order."""
    width = design.feature_width
    header = "t,row,col,y," + ",".join(f"f{i}" for i in range(width))
    with open(path, "w") as fh:
        fh.write(header + "\n")
        for i in range(design.n_samples):
            t, r, c = design.provenance[i]
            feat = ",".join(format(v, ".17g") for v in design.features[i])
            fh.write(f"{t},{r},{c},{design.targets[i]},{feat}\n")
