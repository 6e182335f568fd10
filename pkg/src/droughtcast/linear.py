"""Most-frequent-class baselines and full-batch logistic regression.

Training is deterministic: gradient descent on the mean cross-entropy plus
an L2 penalty on the weights (bias unpenalized), with step halving whenever
a trial step would increase the loss.  The binary case trains and stores a
single logit row; multiclass keeps one row per class.
"""

from dataclasses import dataclass

import numpy as np

from .cube import ForecastCube
from .errors import DivergenceError, EmptyDataError, UnsupportedVersionError

LOGREG_DEFAULTS = dict(l2_strength=1e-4, max_epochs=500, step_size=1.0, tol=1e-8)


@dataclass(frozen=True)
class BaselineModel:
    """Majority class and empirical class prior fitted on training labels."""

    majority_class: int
    class_prior: np.ndarray


@dataclass
class LinearModel:
    """Logistic weights; one row for binary, one row per class otherwise."""

    weights: np.ndarray
    bias: np.ndarray
    n_classes: int
    scale_mean: np.ndarray = None
    scale_sd: np.ndarray = None
    train_objective: float = None
    loss_history: list = None

    @property
    def feature_width(self):
        return self.weights.shape[1]


def fit_majority(labels):
    """Most prevalent class on valid training labels; ties take the lower index."""
    valid = labels.labels[labels.mask]
    if valid.size == 0:
        raise EmptyDataError("no valid labels to fit the baseline")
    counts = np.bincount(valid, minlength=labels.n_classes).astype(np.float64)
    return BaselineModel(majority_class=int(np.argmax(counts)), class_prior=counts / counts.sum())


def predict_constant(model, t_len, rows, cols, start_month=0):
    """Forecast with the fitted prior at every cell and month."""
    probs = np.broadcast_to(
        model.class_prior[None, :, None, None], (t_len, model.class_prior.size, rows, cols)
    ).copy()
    return ForecastCube(probs=probs, predicted=np.ones(t_len, dtype=bool), start_month=start_month)


def predict_rolling(labels, window):
    """Per cell and month: full mass on the modal class of the last `window` months.

    History is strictly before the predicted month.  The first month (and
    cells whose recent history is entirely masked) fall back to the global
    prior over the whole label cube.
    """
    if not 1 <= window <= labels.t_len:
        raise ValueError(f"window must be in [1, {labels.t_len}]")
    t_len, rows, cols = labels.t_len, labels.rows, labels.cols
    k = labels.n_classes
    onehot = np.zeros((t_len, k, rows, cols), dtype=np.int32)
    t_idx, r_idx, c_idx = np.nonzero(labels.mask)
    onehot[t_idx, labels.labels[labels.mask], r_idx, c_idx] = 1
    # exclusive prefix sums over time: counts_before[t] = sum of onehot[:t]
    counts_before = np.zeros((t_len + 1, k, rows, cols), dtype=np.int32)
    np.cumsum(onehot, axis=0, out=counts_before[1:])

    prior = fit_majority(labels).class_prior
    probs = np.empty((t_len, k, rows, cols), dtype=np.float64)
    probs[0] = prior[:, None, None]
    for t in range(1, t_len):
        lo = max(0, t - window)
        win = counts_before[t] - counts_before[lo]
        total = win.sum(axis=0)
        mode = np.argmax(win, axis=0)  # ties resolve to the lower class index
        grid = np.zeros((k, rows, cols), dtype=np.float64)
        np.put_along_axis(grid, mode[None], 1.0, axis=0)
        empty = total == 0
        if empty.any():
            grid[:, empty] = prior[:, None]
        probs[t] = grid
    return ForecastCube(probs=probs, predicted=np.ones(t_len, dtype=bool), start_month=labels.start_month)


def _softplus(z):
    return np.logaddexp(0.0, z)


def _softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def logreg_loss_grad(w, b, x, y, n_classes, l2):
    """Mean cross-entropy + (l2/2)*||w||^2 and its gradient.

    Binary (n_classes == 2): w is (d,), b scalar, y in {0, 1}.
    Multiclass: w is (K, d), b is (K,), y holds class indices.
    """
    n = x.shape[0]
    if n_classes == 2:
        with np.errstate(over="ignore"):
            z = x @ w + b
            loss = float((_softplus(z) - y * z).mean()) + 0.5 * l2 * float(w @ w)
            p = 1.0 / (1.0 + np.exp(-z))
        delta = (p - y) / n
        return loss, x.T @ delta + l2 * w, float(delta.sum())
    logits = x @ w.T + b[None, :]
    logits -= logits.max(axis=1, keepdims=True)
    logz = np.log(np.exp(logits).sum(axis=1))
    picked = logits[np.arange(n), y]
    loss = float((logz - picked).mean()) + 0.5 * l2 * float((w * w).sum())
    p = _softmax(logits)
    p[np.arange(n), y] -= 1.0
    delta = p / n
    return loss, delta.T @ x + l2 * w, delta.sum(axis=0)


def fit_logreg(
    design,
    l2_strength=LOGREG_DEFAULTS["l2_strength"],
    max_epochs=LOGREG_DEFAULTS["max_epochs"],
    step_size=LOGREG_DEFAULTS["step_size"],
    tol=LOGREG_DEFAULTS["tol"],
    standardize=False,
    init_weights=None,
    init_bias=None,
):
    """Full-batch gradient descent on the (multinomial) cross-entropy.

    Stops when the gradient infinity-norm drops to `tol` or after
    `max_epochs` accepted steps.  A trial step that raises the loss is
    halved until it does not, which makes the loss sequence non-increasing.
    """
    x = np.asarray(design.features, dtype=np.float64)
    k = design.n_classes
    n, d = x.shape
    if n < k:
        raise ValueError(f"need at least {k} samples, got {n}")
    if not np.isfinite(x).all():
        raise ValueError("features must be finite")

    scale_mean = scale_sd = None
    if standardize:
        scale_mean = x.mean(axis=0)
        scale_sd = x.std(axis=0)
        scale_sd[scale_sd == 0.0] = 1.0
        x = (x - scale_mean) / scale_sd

    if k == 2:
        y = np.asarray(design.targets, dtype=np.float64)
        w = np.zeros(d) if init_weights is None else np.array(init_weights, dtype=np.float64).reshape(d)
        b = 0.0 if init_bias is None else float(np.asarray(init_bias).reshape(()))
    else:
        y = np.asarray(design.targets, dtype=np.int64)
        w = np.zeros((k, d)) if init_weights is None else np.array(init_weights, dtype=np.float64).reshape(k, d)
        b = np.zeros(k) if init_bias is None else np.array(init_bias, dtype=np.float64).reshape(k)

    loss, grad_w, grad_b = logreg_loss_grad(w, b, x, y, k, l2_strength)
    history = [loss]
    for _ in range(max_epochs):
        if not np.isfinite(loss):
            raise DivergenceError("logistic loss is non-finite; decrease step_size")
        gnorm = max(float(np.abs(grad_w).max()), float(np.max(np.abs(grad_b))))
        if gnorm <= tol:
            break
        step = step_size
        accepted = False
        while step >= 1e-20:
            w_try = w - step * grad_w
            b_try = b - step * grad_b
            loss_try, gw_try, gb_try = logreg_loss_grad(w_try, b_try, x, y, k, l2_strength)
            if np.isfinite(loss_try) and loss_try <= loss:
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
        w, b, loss, grad_w, grad_b = w_try, b_try, loss_try, gw_try, gb_try
        history.append(loss)

    if k == 2:
        weights, bias = w[None, :], np.array([b])
    else:
        weights, bias = w, b
    return LinearModel(
        weights=weights,
        bias=bias,
        n_classes=k,
        scale_mean=scale_mean,
        scale_sd=scale_sd,
        train_objective=loss,
        loss_history=history,
    )


def predict_logreg(model, design_or_features):
    """Per-sample class probabilities; every row sums to one."""
    x = design_or_features.features if hasattr(design_or_features, "features") else design_or_features
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1] != model.feature_width:
        raise ValueError(f"feature width {x.shape[1]} != model width {model.feature_width}")
    if model.scale_mean is not None:
        x = (x - model.scale_mean) / model.scale_sd
    if model.n_classes == 2:
        z = x @ model.weights[0] + model.bias[0]
        p1 = 1.0 / (1.0 + np.exp(-z))
        return np.column_stack((1.0 - p1, p1))
    return _softmax(x @ model.weights.T + model.bias[None, :])


_LINEAR_MAGIC = "droughtcast-linear"
_BASELINE_MAGIC = "droughtcast-baseline"


def _fmt_vec(arr):
    return " ".join(format(float(v), ".17g") for v in np.asarray(arr).reshape(-1))


def _parse_vec(text):
    return np.array([float(v) for v in text.split()], dtype=np.float64)


def format_linear(model):
    lines = [
        f"{_LINEAR_MAGIC} 1",
        f"n_classes {model.n_classes}",
        f"feature_width {model.feature_width}",
        f"standardized {int(model.scale_mean is not None)}",
        f"weights {_fmt_vec(model.weights)}",
        f"bias {_fmt_vec(model.bias)}",
    ]
    if model.scale_mean is not None:
        lines.append(f"scale_mean {_fmt_vec(model.scale_mean)}")
        lines.append(f"scale_sd {_fmt_vec(model.scale_sd)}")
    return "\n".join(lines) + "\n"


def save_linear(model, path):
    with open(path, "w") as fh:
        fh.write(format_linear(model))


def parse_linear(text):
    lines = [line for line in text.splitlines() if line.strip()]
    first = lines[0].split()
    if len(first) != 2 or first[0] != _LINEAR_MAGIC:
        raise UnsupportedVersionError("not a linear model file")
    if first[1] != "1":
        raise UnsupportedVersionError(f"unsupported linear model version {first[1]}")
    fields = {}
    for line in lines[1:]:
        key, _, rest = line.partition(" ")
        fields[key] = rest.strip()
    k = int(fields["n_classes"])
    d = int(fields["feature_width"])
    n_rows = 1 if k == 2 else k
    weights = _parse_vec(fields["weights"]).reshape(n_rows, d)
    bias = _parse_vec(fields["bias"])
    scale_mean = scale_sd = None
    if fields.get("standardized") == "1":
        scale_mean = _parse_vec(fields["scale_mean"])
        scale_sd = _parse_vec(fields["scale_sd"])
    return LinearModel(weights=weights, bias=bias, n_classes=k, scale_mean=scale_mean, scale_sd=scale_sd)


def load_linear(path):
    with open(path) as fh:
        return parse_linear(fh.read())


def save_baseline(model, path):
    with open(path, "w") as fh:
        fh.write(f"{_BASELINE_MAGIC} 1\n")
        fh.write(f"majority_class {model.majority_class}\n")
        fh.write(f"class_prior {_fmt_vec(model.class_prior)}\n")


def load_baseline(path):
    with open(path) as fh:
        first = fh.readline().split()
        if len(first) != 2 or first[0] != _BASELINE_MAGIC or first[1] != "1":
            raise UnsupportedVersionError(f"{path}: not a baseline model file")
        fields = {}
        for line in fh:
            if line.strip():
                key, _, rest = line.partition(" ")
                fields[key] = rest.strip()
    return BaselineModel(
        majority_class=int(fields["majority_class"]),
        class_prior=_parse_vec(fields["class_prior"]),
    )
