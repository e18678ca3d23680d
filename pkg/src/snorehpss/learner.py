"""Compact numpy CNN and logistic baseline, trained with Adam and early stopping.

Network: conv3x3(1->8) -> ReLU -> maxpool2 -> conv3x3(8->16) -> ReLU -> maxpool2
-> dense(16) -> ReLU -> dense(2) -> softmax, on fixed 84x64 inputs. The
forward and backward passes follow the dtype of the parameters: training runs
in float32 by default, gradient checks in float64.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .tfr import Spectrogram

N_ROWS = 84
N_CELLS = 64
PROB_CLAMP = 1e-12
PARAM_NAMES = ("w1", "b1", "w2", "b2", "w3", "b3", "w4", "b4")
CHECKPOINT_VERSION = 1


# --------------------------------------------------------------------------- features

def featurize(spec: Spectrogram) -> np.ndarray:
    """Average-pool frames into 64 contiguous cells and map the bins onto 84 rows.

    Spectrograms with a different bin count are linearly interpolated over bin
    index. Returns the unstandardized (84, 64) tensor.
    """
    values = spec.values
    n_frames = values.shape[1]
    if n_frames < N_CELLS:
        raise ValueError(f"need at least {N_CELLS} frames, got {n_frames}")
    bounds = np.linspace(0, n_frames, N_CELLS + 1).round().astype(int)
    pooled = np.add.reduceat(values, bounds[:-1], axis=1) / np.diff(bounds)
    if pooled.shape[0] != N_ROWS:
        src = np.linspace(0.0, 1.0, pooled.shape[0])
        dst = np.linspace(0.0, 1.0, N_ROWS)
        pooled = np.stack([np.interp(dst, src, col) for col in pooled.T], axis=1)
    return pooled


@dataclass
class Standardizer:
    """Per-row mean and standard deviation fitted on training tensors only."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, tensors: np.ndarray, floor: float = 1e-8) -> "Standardizer":
        tensors = np.asarray(tensors, dtype=np.float64)
        mean = tensors.mean(axis=(0, 2))
        std = np.maximum(tensors.std(axis=(0, 2)), floor)
        return cls(mean, std)

    def apply(self, tensors: np.ndarray) -> np.ndarray:
        return (np.asarray(tensors) - self.mean[:, None]) / self.std[:, None]


# --------------------------------------------------------------------------- model

@dataclass
class ModelParams:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray
    w4: np.ndarray
    b4: np.ndarray

    @classmethod
    def init(cls, seed: int, rows: int = N_ROWS, cols: int = N_CELLS) -> "ModelParams":
        """He-normal weights scaled by fan-in, zero biases."""
        rng = np.random.default_rng(seed)
        flat = 16 * (rows // 4) * (cols // 4)

        def he(shape, fan_in):
            return rng.normal(0.0, np.sqrt(2.0 / fan_in), shape)

        return cls(he((8, 1, 3, 3), 9), np.zeros(8),
                   he((16, 8, 3, 3), 72), np.zeros(16),
                   he((16, flat), flat), np.zeros(16),
                   he((2, 16), 16), np.zeros(2))

    @classmethod
    def zeros_like(cls, other: "ModelParams") -> "ModelParams":
        return cls(**{k: np.zeros_like(v) for k, v in other.arrays().items()})

    def arrays(self) -> dict:
        return {k: getattr(self, k) for k in PARAM_NAMES}

    def copy(self) -> "ModelParams":
        return ModelParams(**{k: v.copy() for k, v in self.arrays().items()})

    def save(self, path) -> None:
        payload = {"version": CHECKPOINT_VERSION,
                   "arrays": {k: {"shape": list(v.shape), "data": v.ravel().tolist()}
                              for k, v in self.arrays().items()}}
        Path(path).write_text(json.dumps(payload))

    @classmethod
    def load(cls, path) -> "ModelParams":
        payload = json.loads(Path(path).read_text())
        if payload.get("version") != CHECKPOINT_VERSION:
            raise ValueError("unsupported checkpoint version")
        return cls(**{k: np.array(v["data"], dtype=np.float64).reshape(v["shape"])
                      for k, v in payload["arrays"].items()})


_OFFSETS = [(i, j) for i in range(3) for j in range(3)]

# Activations are channels-first over the whole batch: (C, B, H, W). Stacking the
# nine shifted views of the padded input gives the im2col matrix (9*C, B*H*W)
# without a strided gather, which keeps the small convolutions cheap.


def _span(k, n):
    # output rows that read input row r + k - 1 inside [0, n), and the source rows
    lo, hi = max(0, 1 - k), min(n, n + 1 - k)
    return slice(lo, hi), slice(lo + k - 1, hi + k - 1)


def _im2col(x):
    C, B, H, W = x.shape
    cols = np.zeros((9, C, B, H, W), dtype=x.dtype)
    for n, (i, j) in enumerate(_OFFSETS):
        (ho, hi), (wo, wi) = _span(i, H), _span(j, W)
        cols[n, :, :, ho, wo] = x[:, :, hi, wi]
    return cols.reshape(9 * C, -1)


def _wmat(w):
    # (O, C, 3, 3) -> (O, 9*C), columns ordered (offset, channel) like _im2col rows
    return w.transpose(0, 2, 3, 1).reshape(w.shape[0], -1)


def _conv_forward(x, w, b):
    """3x3 convolution, stride 1, zero padding 1, on channels-first x (C, B, H, W)."""
    _, B, H, W = x.shape
    cols = _im2col(x)
    out = _wmat(w) @ cols
    out += b[:, None]
    return out.reshape(-1, B, H, W), cols


def _conv_backward(dout, cols, w, need_dx=True):
    O, B, H, W = dout.shape
    C = w.shape[1]
    d2 = dout.reshape(O, -1)
    dw = (d2 @ cols.T).reshape(O, 3, 3, C).transpose(0, 3, 1, 2)
    db = d2.sum(axis=1)
    if not need_dx:
        return None, dw, db
    dcols = (_wmat(w).T @ d2).reshape(9, C, B, H, W)
    dx = dcols[4].copy()                              # centre tap covers every pixel
    for n, (i, j) in enumerate(_OFFSETS):
        if n != 4:
            (ho, hi), (wo, wi) = _span(i, H), _span(j, W)
            dx[:, :, hi, wi] += dcols[n][:, :, ho, wo]
    return dx, dw, db


_QUADRANTS = ((0, 0), (0, 1), (1, 0), (1, 1))


def _quadrant(x, q):
    i, j = q
    return x[..., i::2, j::2]


def _pool_forward(x):
    a, b, c, d = (_quadrant(x, q) for q in _QUADRANTS)
    return np.maximum(np.maximum(a, b), np.maximum(c, d))


def _pool_backward(dout, x, top):
    # gradient goes to the first maximal quadrant in row-major order
    dx = np.zeros(x.shape, dtype=dout.dtype)
    taken = np.zeros(top.shape, dtype=bool)
    for q in _QUADRANTS:
        hit = _quadrant(x, q) == top
        hit &= ~taken
        np.multiply(dout, hit, out=_quadrant(dx, q))
        taken |= hit
    return dx


def softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _forward(model: ModelParams, x: np.ndarray):
    x = np.asarray(x, dtype=model.w1.dtype)
    if x.ndim == 2:
        x = x[None]
    x = x[None]                                      # (1, B, H, W)
    a1, cols1 = _conv_forward(x, model.w1, model.b1)
    np.maximum(a1, 0.0, out=a1)
    p1 = _pool_forward(a1)
    a2, cols2 = _conv_forward(p1, model.w2, model.b2)
    np.maximum(a2, 0.0, out=a2)
    p2 = _pool_forward(a2)
    flat = p2.transpose(1, 0, 2, 3).reshape(p2.shape[1], -1)  # (B, C*h*w)
    z3 = flat @ model.w3.T + model.b3
    a3 = np.maximum(z3, 0.0)
    logits = a3 @ model.w4.T + model.b4
    cache = dict(x=x, cols1=cols1, a1=a1, p1=p1, cols2=cols2, a2=a2,
                 p2=p2, flat=flat, z3=z3, a3=a3)
    return logits, cache


def forward(model: ModelParams, x: np.ndarray) -> np.ndarray:
    """Class probabilities (B, 2) for a tensor (84, 64) or a batch (B, 84, 64)."""
    return softmax(_forward(model, x)[0])


def bce_loss(probs: np.ndarray, labels) -> float:
    """Mean negative log-probability of the true class, probabilities clamped."""
    probs = np.atleast_2d(np.asarray(probs, dtype=np.float64))
    labels = np.asarray(labels, dtype=int).ravel()
    p_true = np.clip(probs[np.arange(labels.size), labels], PROB_CLAMP, 1.0 - PROB_CLAMP)
    return float(np.mean(-np.log(p_true)))


def backward(model: ModelParams, x: np.ndarray, labels, return_probs: bool = False):
    """Loss and exact gradients of the mean batch loss, as ``(loss, ModelParams)``.

    With ``return_probs`` the forward probabilities are appended to the tuple.
    """
    labels = np.asarray(labels, dtype=int).ravel()
    logits, c = _forward(model, x)
    probs = softmax(logits)
    B = labels.size
    p_true = probs[np.arange(B), labels]
    loss = float(np.mean(-np.log(np.clip(p_true, PROB_CLAMP, 1.0 - PROB_CLAMP))))

    dlogits = probs.copy()
    dlogits[np.arange(B), labels] -= 1.0
    # clamped items have a flat loss
    dlogits[(p_true < PROB_CLAMP) | (p_true > 1.0 - PROB_CLAMP)] = 0.0
    dlogits /= B

    dw4 = dlogits.T @ c["a3"]
    db4 = dlogits.sum(axis=0)
    dz3 = (dlogits @ model.w4) * (c["z3"] > 0)
    dw3 = dz3.T @ c["flat"]
    db3 = dz3.sum(axis=0)
    C, _, h, w = c["p2"].shape
    dp2 = (dz3 @ model.w3).reshape(B, C, h, w).transpose(1, 0, 2, 3)
    # a pooled output of 0 means every input in its window was clipped by the
    # ReLU, so masking before unpooling equals masking the full-size gradient
    dz2 = _pool_backward(dp2 * (c["p2"] > 0), c["a2"], c["p2"])
    dp1, dw2, db2 = _conv_backward(dz2, c["cols2"], model.w2)
    dz1 = _pool_backward(dp1 * (c["p1"] > 0), c["a1"], c["p1"])
    _, dw1, db1 = _conv_backward(dz1, c["cols1"], model.w1, need_dx=False)
    grads = ModelParams(dw1, db1, dw2, db2, dw3, db3, dw4, db4)
    return (loss, grads, probs) if return_probs else (loss, grads)


def loss_at(model: ModelParams, x, labels) -> float:
    return bce_loss(forward(model, x), labels)


# --------------------------------------------------------------------------- optimizer

@dataclass
class AdamState:
    m: dict
    v: dict
    t: int = 0

    @classmethod
    def for_params(cls, params: dict) -> "AdamState":
        return cls({k: np.zeros_like(v) for k, v in params.items()},
                   {k: np.zeros_like(v) for k, v in params.items()})


def adam_step(params: dict, grads: dict, state: AdamState, t: int, lr: float = 1e-3,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> dict:
    """One bias-corrected Adam update of a dict of arrays; ``state`` is updated in place."""
    if t < 1:
        raise ValueError("Adam step index starts at 1")
    out = {}
    for k, theta in params.items():
        g = grads[k]
        state.m[k] = beta1 * state.m[k] + (1.0 - beta1) * g
        state.v[k] = beta2 * state.v[k] + (1.0 - beta2) * g * g
        m_hat = state.m[k] / (1.0 - beta1 ** t)
        v_hat = state.v[k] / (1.0 - beta2 ** t)
        out[k] = theta - lr * m_hat / (np.sqrt(v_hat) + eps)
    state.t = t
    return out


# --------------------------------------------------------------------------- training

@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 100
    patience: int = 10
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    dtype: str = "float32"

    def __post_init__(self):
        if self.dtype not in ("float32", "float64"):
            raise ValueError("dtype must be float32 or float64")
        if min(self.learning_rate, self.batch_size, self.max_epochs, self.patience) <= 0:
            raise ValueError("training hyperparameters must be positive")
        if self.patience > self.max_epochs:
            raise ValueError("patience exceeds max_epochs")


@dataclass
class TrainReport:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)
    val_acc: list = field(default_factory=list)
    stopped_epoch: int = 0
    best_epoch: int = 0

    def to_csv(self) -> str:
        rows = ["epoch,train_loss,val_loss,train_acc,val_acc"]
        for i, vals in enumerate(zip(self.train_loss, self.val_loss, self.train_acc,
                                     self.val_acc), start=1):
            rows.append(f"{i}," + ",".join(repr(float(v)) for v in vals))
        return "\n".join(rows) + "\n"


class EarlyStopping:
    """Tracks the best (lowest) validation loss; epochs are numbered from 1."""

    def __init__(self, patience: int):
        self.patience = patience
        self.best = np.inf
        self.best_epoch = 0
        self.wait = 0

    def update(self, epoch: int, val_loss: float) -> bool:
        """Record an epoch; True when training should stop."""
        if val_loss < self.best:
            self.best, self.best_epoch, self.wait = val_loss, epoch, 0
            return False
        self.wait += 1
        return self.wait >= self.patience


def train(x_train, y_train, x_val, y_val, cfg: TrainConfig = TrainConfig(),
          model: ModelParams | None = None):
    """Mini-batch Adam with validation-loss early stopping.

    Inputs are already standardized tensors. Training loss and accuracy per
    epoch are averaged over that epoch's mini-batches. Returns the parameters
    of the best-validation epoch and the per-epoch report.
    """
    dtype = np.dtype(cfg.dtype)
    x_train, x_val = np.asarray(x_train, dtype=dtype), np.asarray(x_val, dtype=dtype)
    y_train, y_val = np.asarray(y_train, dtype=int), np.asarray(y_val, dtype=int)
    if len(x_train) == 0 or len(x_val) == 0:
        raise ValueError("train and validation sets must be nonempty")

    rng = np.random.default_rng(cfg.seed)
    if model is None:
        model = ModelParams.init(int(rng.integers(2 ** 63)), x_train.shape[1], x_train.shape[2])
    params = {k: v.astype(dtype) for k, v in model.arrays().items()}
    state = AdamState.for_params(params)
    stopper = EarlyStopping(cfg.patience)
    best = ModelParams(**params).copy()
    report = TrainReport()
    step = 0
    for epoch in range(1, cfg.max_epochs + 1):
        order = rng.permutation(len(x_train))
        loss_sum = hits = 0.0
        for start in range(0, len(order), cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads, probs = backward(ModelParams(**params), x_train[idx], y_train[idx],
                                          return_probs=True)
            loss_sum += loss * idx.size
            hits += float(np.sum(probs.argmax(1) == y_train[idx]))
            step += 1
            params = adam_step(params, grads.arrays(), state, step, cfg.learning_rate,
                               cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps)
        current = ModelParams(**params)
        val_probs = forward(current, x_val)
        report.train_loss.append(loss_sum / len(order))
        report.train_acc.append(hits / len(order))
        report.val_loss.append(bce_loss(val_probs, y_val))
        report.val_acc.append(float(np.mean(val_probs.argmax(1) == y_val)))
        report.stopped_epoch = epoch
        stop = stopper.update(epoch, report.val_loss[-1])
        if stopper.best_epoch == epoch:
            best = current.copy()
        if stop:
            break
    report.best_epoch = stopper.best_epoch
    return best, report


def _loss_and_pattern(model: ModelParams, x, labels):
    logits, c = _forward(model, x)
    pattern = [c["a1"] > 0, c["a2"] > 0, c["z3"] > 0]
    for act, top in ((c["a1"], c["p1"]), (c["a2"], c["p2"])):
        pattern += [_quadrant(act, q) == top for q in _QUADRANTS]
    return bce_loss(softmax(logits), labels), pattern


def _same_pattern(a, b) -> bool:
    return all(np.array_equal(u, v) for u, v in zip(a, b))


def grad_check(model: ModelParams, x, labels, eps: float = 1e-5, n_params: int = 200,
               seed: int = 0, grads: ModelParams | None = None, min_eps: float = 1e-9) -> float:
    """Max relative error between analytic and central-difference gradients.

    At least ``n_params`` coordinates are checked, split evenly across the
    parameter arrays so small layers are always covered. When a stencil
    point flips a ReLU or max-pool decision the loss is not differentiable
    inside the stencil, so that coordinate is retried with a 10x smaller step
    (down to ``min_eps``). Coordinates where both gradients are exactly zero
    are skipped.
    """
    if grads is None:
        _, grads = backward(model, x, labels)
    _, base = _loss_and_pattern(model, x, labels)
    rng = np.random.default_rng(seed)
    quota = -(-n_params // len(PARAM_NAMES))
    picks = []
    for name in PARAM_NAMES:
        size = getattr(model, name).size
        picks += [(name, int(i)) for i in rng.choice(size, size=min(quota, size), replace=False)]
    worst = 0.0
    for name, local in picks:
        theta = getattr(model, name).reshape(-1)
        saved = theta[local]
        step = eps
        while True:
            theta[local] = saved + step
            up, pat_up = _loss_and_pattern(model, x, labels)
            theta[local] = saved - step
            down, pat_down = _loss_and_pattern(model, x, labels)
            theta[local] = saved
            smooth = _same_pattern(base, pat_up) and _same_pattern(base, pat_down)
            if smooth or step / 10 < min_eps:
                break
            step /= 10
        numeric = (up - down) / (2.0 * step)
        analytic = float(getattr(grads, name).reshape(-1)[local])
        if numeric == 0.0 and analytic == 0.0:
            continue
        err = abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)
        worst = max(worst, err)
    return worst


# --------------------------------------------------------------------------- baseline

def pooled_stats(tensor: np.ndarray) -> np.ndarray:
    """Per-row mean then per-row standard deviation (168 values for 84 rows)."""
    tensor = np.asarray(tensor, dtype=np.float64)
    return np.concatenate([tensor.mean(axis=-1), tensor.std(axis=-1)], axis=-1)


@dataclass(frozen=True)
class LogisticConfig:
    learning_rate: float = 1e-2
    steps: int = 3000
    l2: float = 1e-2
    seed: int = 0


@dataclass
class LogisticModel:
    weights: np.ndarray
    bias: float
    mean: np.ndarray
    scale: np.ndarray

    def decision(self, features) -> np.ndarray:
        z = (np.atleast_2d(features) - self.mean) / self.scale
        return z @ self.weights + self.bias

    def predict_proba(self, features) -> np.ndarray:
        return 1.0 / (1.0 + np.exp(-self.decision(features)))


def fit_logistic_baseline(features, labels, cfg: LogisticConfig = LogisticConfig()) -> LogisticModel:
    """L2-regularized logistic regression (bias unpenalized) fitted by full-batch Adam."""
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    y = np.asarray(labels, dtype=np.float64).ravel()
    if len(np.unique(y)) < 2:
        raise ValueError("logistic baseline needs both classes")
    mean = X.mean(axis=0)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    Z = (X - mean) / scale
    rng = np.random.default_rng(cfg.seed)
    params = {"w": rng.normal(0.0, 0.01, Z.shape[1]), "b": np.zeros(1)}
    state = AdamState.for_params(params)
    for t in range(1, cfg.steps + 1):
        p = 1.0 / (1.0 + np.exp(-(Z @ params["w"] + params["b"][0])))
        err = (p - y) / y.size
        grads = {"w": Z.T @ err + cfg.l2 * params["w"], "b": np.array([err.sum()])}
        params = adam_step(params, grads, state, t, cfg.learning_rate)
    return LogisticModel(params["w"], float(params["b"][0]), mean, scale)
