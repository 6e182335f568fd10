"""Grid-to-grid ConvLSTM forecaster with hand-derived reverse-mode gradients.

Pipeline: a convolutional encoder lifts each input month to an embedding,
a single ConvLSTM layer carries hidden (short-term) and cell (long-term)
state across the history window, and a 1x1 convolution head maps the final
hidden state to per-cell class probabilities.  All convolutions use
same padding, so any grid size at or above the kernel works and a model
trained on one region applies unchanged to a centered crop of it.

Gate equations (no peepholes), with * a same-padded 2-D convolution over
the channel concatenation [x, h]:

    i = sigmoid(W_i * [x, h] + b_i)      f = sigmoid(W_f * [x, h] + b_f)
    g = tanh   (W_g * [x, h] + b_g)      o = sigmoid(W_o * [x, h] + b_o)
    c' = f . c + i . g                   h' = o . tanh(c')

Training runs adaptive-moment updates on the masked mean cross-entropy,
with early stopping on the validation median per-cell score.  Everything
is deterministic given (seed, hyper, data): initialization comes from the
counter RNG and batches are visited in chronological order.
"""

import struct
from dataclasses import dataclass

import numpy as np

from . import _kernels, metrics, rng
from .cube import ForecastCube
from .errors import (
    CorruptionError,
    DivergenceError,
    EmptyDataError,
    FormatError,
    UnsupportedVersionError,
)

CLSP_MAGIC = b"CLSP"
CLSP_VERSION = 1


@dataclass(frozen=True)
class ConvLstmHyper:
    n_classes: int = 2
    in_channels: int = 1
    embed_channels: int = 16
    hidden_channels: int = 16
    kernel: int = 3
    history_len: int = 6
    horizon: int = 1
    step_size: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 4
    max_epochs: int = 100
    patience: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.kernel % 2 == 0 or self.kernel < 1:
            raise ValueError("kernel must be odd")
        if self.hidden_channels < 1 or self.embed_channels < 1:
            raise ValueError("channel counts must be >= 1")
        if self.history_len < 1 or self.horizon < 1:
            raise ValueError("history_len and horizon must be >= 1")

    @property
    def n_out(self):
        # binary task emits one drought-logit channel
        return 1 if self.n_classes == 2 else self.n_classes


@dataclass
class ConvLstmParams:
    """Parameter tensors in declared (checkpoint) order."""

    w_enc: np.ndarray    # (E, in, k, k)
    b_enc: np.ndarray    # (E,)
    w_gates: np.ndarray  # (4h, E + h, k, k); gate order i, f, g, o
    b_gates: np.ndarray  # (4h,)
    w_head: np.ndarray   # (n_out, h)
    b_head: np.ndarray   # (n_out,)

    def tensors(self):
        return [self.w_enc, self.b_enc, self.w_gates, self.b_gates, self.w_head, self.b_head]

    def astype(self, dtype):
        return ConvLstmParams(*[t.astype(dtype) for t in self.tensors()])

    def copy(self):
        return ConvLstmParams(*[t.copy() for t in self.tensors()])


@dataclass
class ConvLstmState:
    """Hidden (short-term) and cell (long-term) fields, (B, h, rows, cols)."""

    hidden: np.ndarray
    cell: np.ndarray


def init_params(hyper, dtype=np.float32):
    """Scaled-uniform weights from the seed's counter stream; zero biases
    except the forget gate, which starts at 1.0.

    Draw order: w_enc, w_gates, w_head.
    """
    stream = rng.CounterRng(hyper.seed, stream=1)
    e, h, k = hyper.embed_channels, hyper.hidden_channels, hyper.kernel
    cin = hyper.in_channels

    def draw(shape, fan_in):
        n = int(np.prod(shape))
        return stream.uniform_signed(n, scale=1.0 / np.sqrt(fan_in)).reshape(shape).astype(dtype)

    w_enc = draw((e, cin, k, k), cin * k * k)
    w_gates = draw((4 * h, e + h, k, k), (e + h) * k * k)
    w_head = draw((hyper.n_out, h), h)
    b_gates = np.zeros(4 * h, dtype=dtype)
    b_gates[h : 2 * h] = 1.0
    return ConvLstmParams(
        w_enc=w_enc,
        b_enc=np.zeros(e, dtype=dtype),
        w_gates=w_gates,
        b_gates=b_gates,
        w_head=w_head,
        b_head=np.zeros(hyper.n_out, dtype=dtype),
    )


def _sigmoid(z):
    return 1.0 / (1.0 + np.exp(-z))


def cell_forward(x_embed, state, params, hyper):
    """One recurrence step; returns the next state."""
    h = hyper.hidden_channels
    if x_embed.shape[-2:] != state.hidden.shape[-2:]:
        raise ValueError("embedding and state grids differ")
    z = np.concatenate([x_embed, state.hidden], axis=1)
    a = _kernels.conv2d_forward(np.ascontiguousarray(z), params.w_gates, params.b_gates)
    a_i, a_f, a_g, a_o = (a[:, i * h : (i + 1) * h] for i in range(4))
    i_t = _sigmoid(a_i)
    f_t = _sigmoid(a_f)
    g_t = np.tanh(a_g)
    o_t = _sigmoid(a_o)
    c_new = f_t * state.cell + i_t * g_t
    h_new = o_t * np.tanh(c_new)
    return ConvLstmState(hidden=h_new, cell=c_new)


def _forward_cached(windows, params, hyper, want_cache):
    """Run the full pipeline on (B, L, H, W) windows; optionally keep the tape."""
    b, length, rows, cols = windows.shape
    h = hyper.hidden_channels
    dtype = params.w_enc.dtype
    hidden = np.zeros((b, h, rows, cols), dtype=dtype)
    cell = np.zeros((b, h, rows, cols), dtype=dtype)
    tape = []
    for t in range(length):
        x_t = np.ascontiguousarray(windows[:, t][:, None], dtype=dtype)
        embed = _kernels.conv2d_forward(x_t, params.w_enc, params.b_enc)
        z = np.ascontiguousarray(np.concatenate([embed, hidden], axis=1))
        a = _kernels.conv2d_forward(z, params.w_gates, params.b_gates)
        i_t = _sigmoid(a[:, 0 * h : 1 * h])
        f_t = _sigmoid(a[:, 1 * h : 2 * h])
        g_t = np.tanh(a[:, 2 * h : 3 * h])
        o_t = _sigmoid(a[:, 3 * h : 4 * h])
        c_prev = cell
        cell = f_t * c_prev + i_t * g_t
        tanh_c = np.tanh(cell)
        hidden = o_t * tanh_c
        if want_cache:
            tape.append((x_t, z, i_t, f_t, g_t, o_t, c_prev, tanh_c))
    logits = np.einsum("bchw,kc->bkhw", hidden, params.w_head) + params.b_head[None, :, None, None]
    return logits, hidden, tape


def forward(window, params, hyper):
    """Probability field (n_classes, rows, cols) for one history window."""
    window = np.asarray(window)
    if window.ndim != 3 or window.shape[0] != hyper.history_len:
        raise ValueError(f"window must be ({hyper.history_len}, rows, cols)")
    probs = _predict_batch(window[None], params, hyper)
    return probs[0]


def _predict_batch(windows, params, hyper):
    logits, _, _ = _forward_cached(np.asarray(windows, dtype=params.w_enc.dtype), params, hyper, want_cache=False)
    logits = logits.astype(np.float64)
    if hyper.n_classes == 2:
        p1 = _sigmoid(logits[:, 0])
        return np.stack([1.0 - p1, p1], axis=1)
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _softplus(z):
    return np.logaddexp(0.0, z)


def loss_and_grad(params, windows, targets, target_mask, hyper):
    """Masked mean cross-entropy and gradients for every parameter tensor.

    windows: (B, L, H, W) float inputs with masked cells already imputed 0.
    targets: (B, H, W) class indices; target_mask: (B, H, W) validity.
    Masked cells contribute zero loss and zero gradient; with no valid cell
    the loss is 0 and all gradients vanish.
    """
    dtype = params.w_enc.dtype
    windows = np.asarray(windows, dtype=dtype)
    mask = np.asarray(target_mask, dtype=bool)
    h = hyper.hidden_channels
    e = hyper.embed_channels
    n_valid = int(mask.sum())
    zero_grads = lambda: ConvLstmParams(*[np.zeros_like(t) for t in params.tensors()])
    if n_valid == 0:
        return 0.0, zero_grads()

    logits, hidden_last, tape = _forward_cached(windows, params, hyper, want_cache=True)
    m = mask.astype(dtype)
    if hyper.n_classes == 2:
        y = np.asarray(targets, dtype=dtype)
        lg = logits[:, 0]
        ce = _softplus(lg) - y * lg
        loss = float((ce * m).sum() / n_valid)
        dlogits = ((_sigmoid(lg) - y) * m / n_valid)[:, None].astype(dtype)
    else:
        y = np.asarray(targets, dtype=np.int64)
        shifted = logits - logits.max(axis=1, keepdims=True)
        logz = np.log(np.exp(shifted).sum(axis=1))
        b_idx, r_idx, c_idx = np.indices(y.shape)
        picked = shifted[b_idx, y, r_idx, c_idx]
        loss = float(((logz - picked) * m).sum() / n_valid)
        p = np.exp(shifted) / np.exp(shifted).sum(axis=1, keepdims=True)
        p[b_idx, y, r_idx, c_idx] -= 1.0
        dlogits = (p * m[:, None] / n_valid).astype(dtype)
    if not np.isfinite(loss):
        raise DivergenceError("convlstm loss is non-finite")

    grads = zero_grads()
    grads.w_head += np.einsum("bkhw,bchw->kc", dlogits, hidden_last).astype(dtype)
    grads.b_head += dlogits.sum(axis=(0, 2, 3)).astype(dtype)
    dh = np.einsum("bkhw,kc->bchw", dlogits, params.w_head).astype(dtype)
    dc = np.zeros_like(dh)
    for x_t, z, i_t, f_t, g_t, o_t, c_prev, tanh_c in reversed(tape):
        da_o = dh * tanh_c * o_t * (1.0 - o_t)
        dc = dc + dh * o_t * (1.0 - tanh_c * tanh_c)
        da_f = dc * c_prev * f_t * (1.0 - f_t)
        da_i = dc * g_t * i_t * (1.0 - i_t)
        da_g = dc * i_t * (1.0 - g_t * g_t)
        da = np.ascontiguousarray(np.concatenate([da_i, da_f, da_g, da_o], axis=1))
        grads.w_gates += _kernels.conv2d_grad_weights(z, da, hyper.kernel)
        grads.b_gates += da.sum(axis=(0, 2, 3))
        dz = _kernels.conv2d_grad_input(da, params.w_gates)
        de = np.ascontiguousarray(dz[:, :e])
        dh = dz[:, e:]
        dc = dc * f_t
        grads.w_enc += _kernels.conv2d_grad_weights(x_t, de, hyper.kernel)
        grads.b_enc += de.sum(axis=(0, 2, 3))
    return loss, grads


def make_windows(cube, labels, hyper):
    """(windows, targets, target_mask, target_months) for every month with
    a full in-cube history ending `horizon` months before it."""
    length, hz = hyper.history_len, hyper.horizon
    t_len = cube.t_len
    first_target = length + hz - 1
    if t_len <= first_target:
        raise ValueError(f"t_len {t_len} yields no ({length} history, {hz} horizon) window")
    filled = cube.filled(0.0, dtype=np.float32)
    target_months = np.arange(first_target, t_len)
    windows = np.stack([filled[t - hz - length + 1 : t - hz + 1] for t in target_months])
    if labels is None:
        return windows, None, None, target_months
    targets = labels.labels[target_months].astype(np.int64)
    target_mask = labels.mask[target_months]
    return windows, targets, target_mask, target_months


def fit(train_cube, train_labels, val_cube, val_labels, hyper, log_sink=None):
    """Adaptive-moment training with early stopping on the validation score.

    The per-epoch validation score is the median per-cell ROC AUC for the
    binary task and the median per-cell accuracy otherwise.  Returns the
    best-epoch parameters and the training log, one record per epoch.
    """
    windows, targets, target_mask, _ = make_windows(train_cube, train_labels, hyper)
    try:
        make_windows(val_cube, None, hyper)
    except ValueError:
        raise ValueError("validation cube too short to form any window") from None

    params = init_params(hyper)
    m_state = [np.zeros_like(t) for t in params.tensors()]
    v_state = [np.zeros_like(t) for t in params.tensors()]
    step_count = 0
    n_windows = windows.shape[0]
    batch = max(1, hyper.batch_size)

    metric_name = "roc_auc" if hyper.n_classes == 2 else "accuracy"
    best_metric = -np.inf
    best_params = params.copy()
    since_best = 0
    log = []
    for epoch in range(1, hyper.max_epochs + 1):
        epoch_loss = 0.0
        n_batches = 0
        for lo in range(0, n_windows, batch):
            hi = min(lo + batch, n_windows)
            loss, grads = loss_and_grad(params, windows[lo:hi], targets[lo:hi], target_mask[lo:hi], hyper)
            epoch_loss += loss
            n_batches += 1
            step_count += 1
            bc1 = 1.0 - hyper.beta1**step_count
            bc2 = 1.0 - hyper.beta2**step_count
            for tensor, m_t, v_t, g in zip(params.tensors(), m_state, v_state, grads.tensors()):
                m_t *= hyper.beta1
                m_t += (1.0 - hyper.beta1) * g
                v_t *= hyper.beta2
                v_t += (1.0 - hyper.beta2) * g * g
                tensor -= hyper.step_size * (m_t / bc1) / (np.sqrt(v_t / bc2) + hyper.eps)
        val_metric = _validation_score(params, val_cube, val_labels, hyper, metric_name)
        record = {
            "epoch": epoch,
            "train_loss": epoch_loss / max(1, n_batches),
            f"val_{metric_name}": val_metric,
        }
        log.append(record)
        if log_sink is not None:
            log_sink(record)
        if val_metric > best_metric:
            best_metric = val_metric
            best_params = params.copy()
            since_best = 0
        else:
            since_best += 1
            if since_best > hyper.patience:
                break
    return best_params, log


def _validation_score(params, val_cube, val_labels, hyper, metric_name):
    forecast = predict(params, val_cube, hyper)
    try:
        return metrics.per_cell_map(forecast, val_labels, metric_name).median
    except EmptyDataError:
        return -np.inf


def predict(params, cube, hyper, chunk=32):
    """ForecastCube over every month of the cube with a full history window."""
    if cube.t_len < hyper.history_len:
        raise ValueError(f"cube t_len {cube.t_len} < history_len {hyper.history_len}")
    t_len, rows, cols = cube.shape
    probs = np.zeros((t_len, hyper.n_classes, rows, cols), dtype=np.float64)
    predicted = np.zeros(t_len, dtype=bool)
    first_target = hyper.history_len + hyper.horizon - 1
    if t_len <= first_target:
        return ForecastCube(probs=probs, predicted=predicted, start_month=cube.start_month)
    windows, _, _, target_months = make_windows(cube, None, hyper)
    for lo in range(0, len(target_months), chunk):
        hi = min(lo + chunk, len(target_months))
        probs[target_months[lo:hi]] = _predict_batch(windows[lo:hi], params, hyper)
    predicted[target_months] = True
    return ForecastCube(probs=probs, predicted=predicted, start_month=cube.start_month)


_HYPER_STRUCT = struct.Struct("<7i4d3iQ")


def save_checkpoint(params, hyper, path):
    """CLSP v1: magic, version, hyper block, then float32 LE tensors in order."""
    head = CLSP_MAGIC + struct.pack("<I", CLSP_VERSION)
    hblock = _HYPER_STRUCT.pack(
        hyper.n_classes,
        hyper.in_channels,
        hyper.embed_channels,
        hyper.hidden_channels,
        hyper.kernel,
        hyper.history_len,
        hyper.horizon,
        hyper.step_size,
        hyper.beta1,
        hyper.beta2,
        hyper.eps,
        hyper.batch_size,
        hyper.max_epochs,
        hyper.patience,
        hyper.seed,
    )
    with open(path, "wb") as fh:
        fh.write(head)
        fh.write(hblock)
        for tensor in params.tensors():
            fh.write(np.ascontiguousarray(tensor, dtype="<f4").tobytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < 8 or blob[:4] != CLSP_MAGIC:
        raise FormatError(f"{path}: not a CLSP checkpoint")
    (version,) = struct.unpack_from("<I", blob, 4)
    if version != CLSP_VERSION:
        raise UnsupportedVersionError(f"{path}: CLSP version {version} not supported")
    fields = _HYPER_STRUCT.unpack_from(blob, 8)
    hyper = ConvLstmHyper(
        n_classes=fields[0],
        in_channels=fields[1],
        embed_channels=fields[2],
        hidden_channels=fields[3],
        kernel=fields[4],
        history_len=fields[5],
        horizon=fields[6],
        step_size=fields[7],
        beta1=fields[8],
        beta2=fields[9],
        eps=fields[10],
        batch_size=fields[11],
        max_epochs=fields[12],
        patience=fields[13],
        seed=fields[14],
    )
    e, h, k = hyper.embed_channels, hyper.hidden_channels, hyper.kernel
    shapes = [
        (e, hyper.in_channels, k, k),
        (e,),
        (4 * h, e + h, k, k),
        (4 * h,),
        (hyper.n_out, h),
        (hyper.n_out,),
    ]
    offset = 8 + _HYPER_STRUCT.size
    tensors = []
    for shape in shapes:
        count = int(np.prod(shape))
        end = offset + 4 * count
        if end > len(blob):
            raise CorruptionError(f"{path}: truncated checkpoint payload")
        tensors.append(np.frombuffer(blob, dtype="<f4", count=count, offset=offset).reshape(shape).copy())
        offset = end
    if offset != len(blob):
        raise CorruptionError(f"{path}: trailing bytes in checkpoint")
    return ConvLstmParams(*tensors), hyper
