"""Two-part network (MLP feature extractor + linear classifier) with
hand-derived gradients.

The minimax-entropy objective is realized as a single combined gradient:
cross-entropy gradients flow to every parameter, while the target-entropy
term enters with coefficient -lambda_h for classifier parameters and
+lambda_h for extractor parameters (gradient reversal at the extractor /
classifier boundary). Training losses always use softmax at temperature 1.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .numerics import as_matrix, as_vector

__all__ = [
    "ACTIVATIONS",
    "Gradients",
    "Layer",
    "LossWeights",
    "MmeLossReport",
    "NetworkParams",
    "OptimizerState",
    "batch_entropy",
    "evaluate_accuracy",
    "forward",
    "init_params",
    "load_checkpoint",
    "mme_loss_and_grads",
    "optimizer_step",
    "save_checkpoint",
    "supervised_loss_and_grads",
]

ACTIVATIONS = ("relu", "tanh", "identity")

_ADAM_BETA1 = 0.9
_ADAM_BETA2 = 0.999
_ADAM_EPS = 1e-8


def _act(name: str, a: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(a, 0.0)
    if name == "tanh":
        return np.tanh(a)
    return a


def _act_grad(name: str, a: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (a > 0).astype(np.float64)
    if name == "tanh":
        t = np.tanh(a)
        return 1.0 - t * t
    return np.ones_like(a)


@dataclass
class Layer:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    activation: str

    def __post_init__(self):
        self.weight = as_matrix(self.weight)
        self.bias = as_vector(self.bias, length=self.weight.shape[0])
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}")


@dataclass
class NetworkParams:
    extractor: list[Layer]
    classifier_weight: np.ndarray  # (C, M)
    classifier_bias: np.ndarray  # (C,)

    def __post_init__(self):
        self.classifier_weight = as_matrix(self.classifier_weight)
        self.classifier_bias = as_vector(self.classifier_bias, length=self.classifier_weight.shape[0])
        width = None
        for layer in self.extractor:
            if width is not None and layer.weight.shape[1] != width:
                raise ValueError("extractor layer dimensions do not chain")
            width = layer.weight.shape[0]
        if self.extractor and self.classifier_weight.shape[1] != width:
            raise ValueError("classifier input width does not match extractor output")

    @property
    def input_dim(self) -> int:
        return self.extractor[0].weight.shape[1] if self.extractor else self.classifier_weight.shape[1]

    @property
    def num_classes(self) -> int:
        return self.classifier_weight.shape[0]

    def arrays(self) -> list[np.ndarray]:
        """All parameter arrays in a fixed traversal order."""
        out = []
        for layer in self.extractor:
            out.extend((layer.weight, layer.bias))
        out.extend((self.classifier_weight, self.classifier_bias))
        return out

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            extractor=[Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.extractor],
            classifier_weight=self.classifier_weight.copy(),
            classifier_bias=self.classifier_bias.copy(),
        )


@dataclass
class Gradients:
    extractor: list[tuple[np.ndarray, np.ndarray]]
    classifier_weight: np.ndarray
    classifier_bias: np.ndarray

    @staticmethod
    def zeros_like(params: NetworkParams) -> "Gradients":
        return Gradients(
            extractor=[(np.zeros_like(l.weight), np.zeros_like(l.bias)) for l in params.extractor],
            classifier_weight=np.zeros_like(params.classifier_weight),
            classifier_bias=np.zeros_like(params.classifier_bias),
        )

    def arrays(self) -> list[np.ndarray]:
        out = []
        for dw, db in self.extractor:
            out.extend((dw, db))
        out.extend((self.classifier_weight, self.classifier_bias))
        return out

    def add_scaled(self, other: "Gradients", scale: float) -> None:
        for mine, theirs in zip(self.arrays(), other.arrays()):
            mine += scale * theirs


@dataclass(frozen=True)
class LossWeights:
    lambda_s: float = 0.1
    lambda_t: float = 1.0
    lambda_h: float = 0.1

    def __post_init__(self):
        if self.lambda_s < 0 or self.lambda_t < 0 or self.lambda_h < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass(frozen=True)
class MmeLossReport:
    tce: float
    mean_target_entropy: float


def init_params(
    input_dim: int,
    num_classes: int,
    hidden: tuple[int, ...] = (64, 64),
    activation: str = "tanh",
    seed: int = 0,
) -> NetworkParams:
    """Random network with 1/sqrt(fan_in)-scaled weights and zero biases."""
    rng = np.random.default_rng(seed)
    layers = []
    width = input_dim
    for h in hidden:
        w = rng.normal(0.0, 1.0 / np.sqrt(width), size=(h, width))
        layers.append(Layer(w, np.zeros(h), activation))
        width = h
    cw = rng.normal(0.0, 1.0 / np.sqrt(width), size=(num_classes, width))
    return NetworkParams(layers, cw, np.zeros(num_classes))


def _forward_full(params: NetworkParams, inputs: np.ndarray):
    """Forward pass keeping every intermediate needed for backprop."""
    x = as_matrix(inputs)
    if x.shape[1] != params.input_dim:
        raise ValueError(f"input width {x.shape[1]} does not match network input {params.input_dim}")
    hiddens = [x]
    preacts = []
    h = x
    for layer in params.extractor:
        a = h @ layer.weight.T + layer.bias
        preacts.append(a)
        h = _act(layer.activation, a)
        hiddens.append(h)
    logits = h @ params.classifier_weight.T + params.classifier_bias
    return hiddens, preacts, h, logits


def forward(params: NetworkParams, inputs) -> tuple[np.ndarray, np.ndarray]:
    """Returns (embeddings, logits); embeddings are the extractor output."""
    _, _, emb, logits = _forward_full(params, inputs)
    return emb, logits


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def batch_entropy(params: NetworkParams, inputs) -> np.ndarray:
    """Per-row predictive entropy at temperature 1."""
    _, logits = forward(params, inputs)
    logp = _log_softmax(logits)
    p = np.exp(logp)
    return -(p * logp).sum(axis=1)


def _backprop(params: NetworkParams, hiddens, preacts, dlogits) -> Gradients:
    """Push a dLoss/dlogits matrix back through classifier and extractor."""
    grads = Gradients.zeros_like(params)
    z = hiddens[-1]
    grads.classifier_weight[:] = dlogits.T @ z
    grads.classifier_bias[:] = dlogits.sum(axis=0)
    dh = dlogits @ params.classifier_weight
    for li in range(len(params.extractor) - 1, -1, -1):
        layer = params.extractor[li]
        da = dh * _act_grad(layer.activation, preacts[li])
        dw, db = grads.extractor[li]
        dw[:] = da.T @ hiddens[li]
        db[:] = da.sum(axis=0)
        dh = da @ layer.weight
    return grads


def _check_labels(y: np.ndarray, num_classes: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.int64)
    if y.ndim != 1:
        raise ValueError("labels must be 1-D")
    if y.size and (y.min() < 0 or y.max() >= num_classes):
        raise ValueError(f"label out of range [0, {num_classes})")
    return y


def _mean_ce_grads(params: NetworkParams, x, y) -> tuple[float, Gradients]:
    hiddens, preacts, _, logits = _forward_full(params, x)
    y = _check_labels(y, params.num_classes)
    n = logits.shape[0]
    logp = _log_softmax(logits)
    loss = float(-logp[np.arange(n), y].mean())
    dlogits = np.exp(logp)
    dlogits[np.arange(n), y] -= 1.0
    dlogits /= n
    return loss, _backprop(params, hiddens, preacts, dlogits)


def _entropy_sum_grads(params: NetworkParams, x) -> tuple[float, Gradients]:
    """Sum of per-row entropies over the batch and its exact gradient."""
    hiddens, preacts, _, logits = _forward_full(params, x)
    logp = _log_softmax(logits)
    p = np.exp(logp)
    h_rows = -(p * logp).sum(axis=1)
    # dH/dlogit_j = -p_j (log p_j + H); the p -> 0 limit is 0.
    dlogits = np.where(p > 0, -p * (logp + h_rows[:, None]), 0.0)
    return float(h_rows.sum()), _backprop(params, hiddens, preacts, dlogits)


def _nonempty(batch) -> bool:
    if batch is None:
        return False
    x = batch[0] if isinstance(batch, tuple) else batch
    return np.asarray(x).shape[0] > 0


def supervised_loss_and_grads(
    params: NetworkParams,
    source_batch: tuple[np.ndarray, np.ndarray] | None,
    target_labeled_batch: tuple[np.ndarray, np.ndarray] | None,
    lw: LossWeights,
) -> tuple[float, Gradients]:
    """Weighted total cross-entropy: lambda_s * CE(source) + lambda_t * CE(target).

    Either batch may be None or empty; an absent term contributes 0.
    """
    total = 0.0
    grads = Gradients.zeros_like(params)
    for batch, lam in ((source_batch, lw.lambda_s), (target_labeled_batch, lw.lambda_t)):
        if not _nonempty(batch):
            continue
        loss, g = _mean_ce_grads(params, batch[0], batch[1])
        total += lam * loss
        grads.add_scaled(g, lam)
    return total, grads


def mme_loss_and_grads(
    params: NetworkParams,
    source_batch,
    target_labeled_batch,
    target_unlabeled_batch,
    lw: LossWeights,
) -> tuple[MmeLossReport, Gradients]:
    """Minimax-entropy step: cross-entropy everywhere, reversed entropy term.

    The summed target entropy enters the classifier gradients with
    coefficient -lambda_h (classifier ascends entropy) and the extractor
    gradients with +lambda_h (extractor descends it).
    """
    if not _nonempty(target_unlabeled_batch):
        raise ValueError("target batch for the entropy term must be non-empty")
    x_t = as_matrix(target_unlabeled_batch)
    tce, grads = supervised_loss_and_grads(params, source_batch, target_labeled_batch, lw)
    h_sum, h_grads = _entropy_sum_grads(params, x_t)

    for (dw, db), (ew, eb) in zip(grads.extractor, h_grads.extractor):
        dw += lw.lambda_h * ew
        db += lw.lambda_h * eb
    grads.classifier_weight -= lw.lambda_h * h_grads.classifier_weight
    grads.classifier_bias -= lw.lambda_h * h_grads.classifier_bias

    return MmeLossReport(tce=tce, mean_target_entropy=h_sum / x_t.shape[0]), grads


@dataclass
class OptimizerState:
    method: str = "adam"
    learning_rate: float = 1e-3
    weight_decay: float = 0.0
    step: int = 0
    _m: list[np.ndarray] = field(default_factory=list, repr=False)
    _v: list[np.ndarray] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.method not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.method!r}")
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")


def optimizer_step(params: NetworkParams, grads: Gradients, opt: OptimizerState) -> NetworkParams:
    """In-place parameter update; weight decay is decoupled from the gradient."""
    p_arrays = params.arrays()
    g_arrays = grads.arrays()
    if len(p_arrays) != len(g_arrays) or any(p.shape != g.shape for p, g in zip(p_arrays, g_arrays)):
        raise ValueError("gradient shapes do not match parameters")

    if opt.method == "adam" and not opt._m:
        opt._m = [np.zeros_like(p) for p in p_arrays]
        opt._v = [np.zeros_like(p) for p in p_arrays]

    opt.step += 1
    lr = opt.learning_rate
    for i, (p, g) in enumerate(zip(p_arrays, g_arrays)):
        if opt.method == "sgd":
            p -= lr * g
        else:
            m = opt._m[i]
            v = opt._v[i]
            m *= _ADAM_BETA1
            m += (1 - _ADAM_BETA1) * g
            v *= _ADAM_BETA2
            v += (1 - _ADAM_BETA2) * g * g
            m_hat = m / (1 - _ADAM_BETA1**opt.step)
            v_hat = v / (1 - _ADAM_BETA2**opt.step)
            p -= lr * m_hat / (np.sqrt(v_hat) + _ADAM_EPS)
        if opt.weight_decay > 0:
            p -= lr * opt.weight_decay * p
    return params


def evaluate_accuracy(params: NetworkParams, inputs, labels) -> float:
    """Fraction of rows whose argmax logit matches the label (ties -> lowest class)."""
    _, logits = forward(params, inputs)
    y = _check_labels(labels, params.num_classes)
    if y.shape[0] != logits.shape[0]:
        raise ValueError("labels must align with inputs")
    return float((logits.argmax(axis=1) == y).mean())


_CHECKPOINT_MAGIC = b"CLUEMLP1"
_ACT_CODES = {name: i for i, name in enumerate(ACTIVATIONS)}


def save_checkpoint(params: NetworkParams, path) -> None:
    """Versioned binary layout: magic, layer dims, little-endian float64 payload."""
    with open(path, "wb") as f:
        f.write(_CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", len(params.extractor)))
        for layer in params.extractor:
            f.write(struct.pack("<IIB", layer.weight.shape[0], layer.weight.shape[1], _ACT_CODES[layer.activation]))
        f.write(struct.pack("<II", params.classifier_weight.shape[0], params.classifier_weight.shape[1]))
        for arr in params.arrays():
            f.write(arr.astype("<f8", copy=False).tobytes())


def load_checkpoint(path) -> NetworkParams:
    with open(path, "rb") as f:
        if f.read(8) != _CHECKPOINT_MAGIC:
            raise ValueError("bad checkpoint magic")
        (n_layers,) = struct.unpack("<I", f.read(4))
        shapes = []
        for _ in range(n_layers):
            out_w, in_w, code = struct.unpack("<IIB", f.read(9))
            shapes.append((out_w, in_w, ACTIVATIONS[code]))
        c, m = struct.unpack("<II", f.read(8))

        def read_array(shape):
            count = int(np.prod(shape))
            data = f.read(count * 8)
            if len(data) != count * 8:
                raise ValueError("truncated checkpoint payload")
            return np.frombuffer(data, dtype="<f8").reshape(shape).copy()

        layers = []
        for out_w, in_w, act in shapes:
            w = read_array((out_w, in_w))
            b = read_array((out_w,))
            layers.append(Layer(w, b, act))
        cw = read_array((c, m))
        cb = read_array((c,))
        if f.read(1):
            raise ValueError("trailing bytes in checkpoint")
    return NetworkParams(layers, cw, cb)
