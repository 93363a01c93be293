"""Feed-forward heads trained on pooled backbone features.

Two heads share one dense/PReLU stack implementation:

* :class:`AttributeHead` -- encoder ``2048 -> 512 -> 64 -> 16`` followed by a
  decoder ``16 -> 24 -> 30`` that regresses the linguistic descriptors.
* :class:`IdentityHead` -- ``2048 -> 512`` embedding with PReLU, then a linear
  classifier over the training identities.

Every hidden layer carries a PReLU; the last layer of each stack is linear.
Gradients are computed by hand (reverse mode) and optimized with Adam.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .binfmt import Reader, Writer
from .domain import ATTRIBUTE_DIM, EMBEDDING_DIM, FEATURE_DIM
from .errors import ConfigError, DatasetError, DimensionError, FormatError

log = logging.getLogger(__name__)

PRELU_INIT = 0.25

BIDH_MAGIC = b"BIDH"
BIDH_VERSION = 1
KIND_GENERIC, KIND_ATTRIBUTE, KIND_IDENTITY = 0, 1, 2


def prelu(x, a):
    """``x`` where ``x >= 0``, else ``a * x``. Works on scalars and arrays."""
    if np.ndim(x) == 0 and np.ndim(a) == 0:
        return float(x) if x >= 0 else float(a) * float(x)
    return np.where(x >= 0, x, a * x)


@dataclass
class Dense:
    weight: np.ndarray  # (out, in)
    bias: np.ndarray  # (out,)
    slope: np.ndarray | None = None  # (1,) shared or (out,) per channel; None = linear

    def __post_init__(self):
        self.weight = np.ascontiguousarray(self.weight, dtype=np.float64)
        self.bias = np.ascontiguousarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[0],):
            raise DimensionError(
                f"inconsistent layer shapes {self.weight.shape} / {self.bias.shape}")
        if self.slope is not None:
            self.slope = np.ascontiguousarray(self.slope, dtype=np.float64)
            if self.slope.shape not in ((1,), (self.out_dim,)):
                raise DimensionError(f"PReLU slope shape {self.slope.shape} "
                                     f"does not fit {self.out_dim} channels")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]

    def params(self) -> list[np.ndarray]:
        out = [self.weight, self.bias]
        if self.slope is not None:
            out.append(self.slope)
        return out

    def copy(self) -> "Dense":
        return Dense(self.weight.copy(), self.bias.copy(),
                     None if self.slope is None else self.slope.copy())

    @classmethod
    def init(cls, rng: np.random.Generator, in_dim: int, out_dim: int,
             activation: bool, per_channel: bool = False) -> "Dense":
        # Kaiming-uniform with the PReLU gain; linear outputs use gain 1.
        a = PRELU_INIT if activation else 1.0
        gain = math.sqrt(2.0 / (1.0 + a * a))
        bound = gain * math.sqrt(3.0 / in_dim)
        w = rng.uniform(-bound, bound, size=(out_dim, in_dim))
        slope = None
        if activation:
            slope = np.full(out_dim if per_channel else 1, PRELU_INIT)
        return cls(w, np.zeros(out_dim), slope)


class Network:
    """A stack of :class:`Dense` layers with optional PReLU after each."""

    def __init__(self, layers: Sequence[Dense]):
        if not layers:
            raise DimensionError("network needs at least one layer")
        for prev, nxt in zip(layers[:-1], layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise DimensionError(f"layer widths {prev.out_dim} -> {nxt.in_dim} do not chain")
        self.layers = list(layers)

    @classmethod
    def init(cls, rng: np.random.Generator, widths: Sequence[int],
             per_channel: bool = False) -> "Network":
        n = len(widths) - 1
        return cls([Dense.init(rng, widths[i], widths[i + 1], activation=i < n - 1,
                               per_channel=per_channel) for i in range(n)])

    @property
    def widths(self) -> list[int]:
        return [self.layers[0].in_dim] + [layer.out_dim for layer in self.layers]

    def params(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.params()]

    def _as_batch(self, x) -> tuple[np.ndarray, bool]:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        if x.ndim != 2 or x.shape[1] != self.layers[0].in_dim:
            raise DimensionError(
                f"expected input width {self.layers[0].in_dim}, got shape {x.shape}")
        return x, single

    def forward(self, x, upto: int | None = None):
        """Run the first ``upto`` layers. Returns ``(activations, cache)``.

        ``activations[k]`` is the output of layer ``k``; ``cache`` holds the
        (input, pre-activation) pair per layer for :func:`backward`.
        """
        h, _ = self._as_batch(x)
        acts, cache = [], []
        for layer in self.layers[:upto]:
            z = h @ layer.weight.T + layer.bias
            cache.append((h, z))
            h = z if layer.slope is None else np.where(z >= 0, z, layer.slope * z)
            acts.append(h)
        return acts, cache

    def copy(self) -> "Network":
        return Network([layer.copy() for layer in self.layers])


def backward(net: Network, cache, dout: np.ndarray) -> list[np.ndarray]:
    """Parameter gradients, ordered like ``net.params()``.

    ``dout`` is the gradient of the loss with respect to the last cached
    layer's output.
    """
    per_layer = []
    d = dout
    for k in range(len(cache) - 1, -1, -1):
        layer = net.layers[k]
        x, z = cache[k]
        dslope = None
        if layer.slope is not None:
            neg = z < 0
            dz_slope = np.where(neg, d * z, 0.0)
            if layer.slope.shape[0] == 1:
                dslope = np.array([dz_slope.sum()])
            else:
                dslope = dz_slope.sum(axis=0)
            d = np.where(neg, d * layer.slope, d)
        grads = [d.T @ x, d.sum(axis=0)]
        if dslope is not None:
            grads.append(dslope)
        per_layer.append(grads)
        if k > 0:
            d = d @ layer.weight
    per_layer.reverse()
    return [g for grads in per_layer for g in grads]


def cross_entropy(logits, label: int) -> float:
    """``-log softmax(logits)[label]`` with max subtraction."""
    z = np.asarray(logits, dtype=np.float64)
    if z.ndim != 1 or z.shape[0] < 2:
        raise DimensionError("cross entropy needs at least two logits")
    if not 0 <= label < z.shape[0]:
        raise IndexError(f"label {label} out of range for {z.shape[0]} classes")
    m = z.max()
    return float(m + math.log(np.exp(z - m).sum()) - z[label])


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Batch-mean cross entropy and its gradient with respect to the logits."""
    n = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e.sum(axis=1, keepdims=True)
    logp = shifted - np.log(s)
    rows = np.arange(n)
    loss = float(-logp[rows, labels].mean())
    grad = e / s
    grad[rows, labels] -= 1.0
    return loss, grad / n


def attribute_loss(pred, target) -> float:
    """Mean squared error over the attribute slots."""
    p = np.asarray(pred, dtype=np.float64)
    t = np.asarray(target, dtype=np.float64)
    if p.shape != t.shape:
        raise DimensionError(f"length mismatch: {p.shape} vs {t.shape}")
    return float(np.mean((p - t) ** 2))


def mse(pred: np.ndarray, target: np.ndarray):
    diff = pred - target
    return float(np.mean(diff ** 2)), 2.0 * diff / diff.size


class AttributeHead:
    """Encoder/decoder stack whose narrowest layer is the attribute code."""

    kind = KIND_ATTRIBUTE

    def __init__(self, net: Network, encoder_depth: int = 3):
        if not 1 <= encoder_depth < len(net.layers):
            raise DimensionError("encoder depth must leave at least one decoder layer")
        self.net = net
        self.encoder_depth = encoder_depth

    @classmethod
    def init(cls, seed, in_dim: int = FEATURE_DIM, encoder: Sequence[int] = (512, 64, 16),
             decoder: Sequence[int] = (24, ATTRIBUTE_DIM), per_channel: bool = False):
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        widths = [in_dim, *encoder, *decoder]
        return cls(Network.init(rng, widths, per_channel), encoder_depth=len(encoder))

    @property
    def n_attributes(self) -> int:
        return self.net.layers[-1].out_dim

    def forward(self, f):
        """Return ``(code, attributes)``; 1-D input gives 1-D outputs."""
        single = np.ndim(f) == 1
        acts, _ = self.net.forward(f)
        code, attrs = acts[self.encoder_depth - 1], acts[-1]
        return (code[0], attrs[0]) if single else (code, attrs)

    def loss_and_grads(self, x: np.ndarray, target: np.ndarray):
        acts, cache = self.net.forward(x)
        loss, dout = mse(acts[-1], np.asarray(target, dtype=np.float64).reshape(acts[-1].shape))
        return loss, backward(self.net, cache, dout)

    def evaluate(self, x, target) -> float:
        acts, _ = self.net.forward(x)
        return float(np.mean((acts[-1] - target) ** 2))

    def params(self):
        return self.net.params()


class IdentityHead:
    """PReLU embedding layer followed by a linear identity classifier."""

    kind = KIND_IDENTITY

    def __init__(self, net: Network):
        if len(net.layers) != 2:
            raise DimensionError("identity head has exactly two layers")
        if net.layers[1].out_dim < 2:
            raise DatasetError("identity head needs at least two classes")
        self.net = net

    @classmethod
    def init(cls, seed, n_classes: int, in_dim: int = FEATURE_DIM,
             embed_dim: int = EMBEDDING_DIM, per_channel: bool = False):
        if n_classes < 2:
            raise DatasetError("identity head needs at least two classes")
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        return cls(Network.init(rng, [in_dim, embed_dim, n_classes], per_channel))

    @property
    def n_classes(self) -> int:
        return self.net.layers[1].out_dim

    @property
    def embed_dim(self) -> int:
        return self.net.layers[0].out_dim

    def forward(self, f):
        """Return ``(embedding, logits)``; 1-D input gives 1-D outputs."""
        single = np.ndim(f) == 1
        acts, _ = self.net.forward(f)
        emb, logits = acts
        return (emb[0], logits[0]) if single else (emb, logits)

    def embed(self, f) -> np.ndarray:
        single = np.ndim(f) == 1
        acts, _ = self.net.forward(f, upto=1)
        return acts[0][0] if single else acts[0]

    def loss_and_grads(self, x: np.ndarray, labels: np.ndarray):
        acts, cache = self.net.forward(x)
        loss, dout = softmax_cross_entropy(acts[-1], labels)
        return loss, backward(self.net, cache, dout)

    def evaluate(self, x, labels) -> tuple[float, float]:
        acts, _ = self.net.forward(x)
        loss, _ = softmax_cross_entropy(acts[-1], labels)
        acc = float(np.mean(acts[-1].argmax(axis=1) == labels))
        return loss, acc

    def params(self):
        return self.net.params()


# -- optimizer ---------------------------------------------------------------

@dataclass
class AdamState:
    lr: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, lr=5e-5, beta1=0.9, beta2=0.999, eps=1e-8) -> "AdamState":
        if lr <= 0:
            raise ConfigError("learning_rate", "must be positive")
        return cls(lr, beta1, beta2, eps, 0,
                   [np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


def adam_step(state: AdamState, params: list[np.ndarray], grads: list[np.ndarray]):
    """One bias-corrected Adam update, applied to ``params`` in place."""
    state.t += 1
    c1 = 1.0 - state.beta1 ** state.t
    c2 = 1.0 - state.beta2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise DimensionError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


# -- training ----------------------------------------------------------------

@dataclass
class TrainConfig:
    learning_rate: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    batch_size: int = 32
    epochs: int = 30
    seed: int = 0
    split: float = 0.8
    per_channel_prelu: bool = False

    def validate(self) -> "TrainConfig":
        if not self.learning_rate > 0:
            raise ConfigError("learning_rate", "must be positive")
        if not 0.0 < self.split < 1.0:
            raise ConfigError("split", "must lie strictly between 0 and 1")
        if self.epochs < 0:
            raise ConfigError("epochs", "must be >= 0")
        if self.batch_size < 1:
            raise ConfigError("batch_size", "must be >= 1")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ConfigError("beta1", "Adam betas must lie in [0, 1)")
        return self


@dataclass
class TrainHistory:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    val_accuracy: list[float] = field(default_factory=list)

    def epochs_to_accuracy(self, target: float) -> int | None:
        """1-based epoch at which validation accuracy first reaches ``target``."""
        for i, acc in enumerate(self.val_accuracy):
            if acc >= target:
                return i + 1
        return None

    def rows(self) -> list[dict]:
        out = []
        for i, tl in enumerate(self.train_loss):
            row = {"epoch": i + 1, "train_loss": tl, "val_loss": self.val_loss[i]}
            if self.val_accuracy:
                row["val_accuracy"] = self.val_accuracy[i]
            out.append(row)
        return out


# Independent PRNG streams derived from the run seed.
_STREAM_INIT, _STREAM_SPLIT, _STREAM_SHUFFLE = 0, 1, 2


def _stream(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), stream])


def split_indices(n: int, split: float, seed: int, groups=None) -> tuple[np.ndarray, np.ndarray]:
    """Seeded train/validation split of ``n`` rows.

    With ``groups`` (one key per row), whole groups are assigned to one side,
    so e.g. frames of the same video never straddle the split.
    """
    if n < 2:
        raise DatasetError("need at least two samples to form train and validation sets")
    rng = _stream(seed, _STREAM_SPLIT)
    if groups is None:
        perm = rng.permutation(n)
        n_train = min(max(int(round(n * split)), 1), n - 1)
        return np.sort(perm[:n_train]), np.sort(perm[n_train:])
    keys = np.asarray(groups)
    if keys.shape[0] != n:
        raise DatasetError("one group key per row required")
    uniq, inverse = np.unique(keys, return_inverse=True)
    if uniq.size < 2:
        raise DatasetError("need at least two groups to form train and validation sets")
    perm = rng.permutation(uniq.size)
    n_train = min(max(int(round(uniq.size * split)), 1), uniq.size - 1)
    in_train = np.zeros(uniq.size, dtype=bool)
    in_train[perm[:n_train]] = True
    mask = in_train[inverse]
    return np.nonzero(mask)[0], np.nonzero(~mask)[0]


def _fit(head, x, y, cfg: TrainConfig, train_idx, val_idx, history: TrainHistory, with_accuracy):
    params = head.params()
    state = AdamState.for_params(params, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.eps)
    shuffle_rng = _stream(cfg.seed, _STREAM_SHUFFLE)
    n = len(train_idx)
    for epoch in range(cfg.epochs):
        order = train_idx[shuffle_rng.permutation(n)]
        total = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            loss, grads = head.loss_and_grads(x[idx], y[idx])
            adam_step(state, params, grads)
            total += loss * len(idx)
        history.train_loss.append(total / n)
        if with_accuracy:
            vl, va = head.evaluate(x[val_idx], y[val_idx])
            history.val_accuracy.append(va)
        else:
            vl = head.evaluate(x[val_idx], y[val_idx])
        history.val_loss.append(vl)
        log.debug("epoch %d train %.6f val %.6f", epoch + 1, history.train_loss[-1], vl)
    return head


def train_attribute_head(features, targets, cfg: TrainConfig, labels=None,
                         head: AttributeHead | None = None, groups=None):
    """Fit an :class:`AttributeHead` by MSE on annotator-averaged targets.

    ``labels`` (identity per row), when given, must span at least two
    identities. ``groups`` switches to a grouped validation split (see
    :func:`split_indices`). Returns ``(head, history)``.
    """
    cfg.validate()
    x = np.asarray(features, dtype=np.float64)
    y = np.asarray(targets, dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
        raise DatasetError("features and targets must be 2-D with matching rows")
    if x.shape[0] == 0:
        raise DatasetError("empty training set")
    if labels is not None and len(set(np.asarray(labels).tolist())) < 2:
        raise DatasetError("attribute training needs at least two identities")
    if head is None:
        head = AttributeHead.init(_stream(cfg.seed, _STREAM_INIT), in_dim=x.shape[1],
                                  decoder=(24, y.shape[1]), per_channel=cfg.per_channel_prelu)
    if head.net.layers[0].in_dim != x.shape[1] or head.n_attributes != y.shape[1]:
        raise DimensionError("head shape does not match the training data")
    history = TrainHistory()
    if cfg.epochs == 0:
        return head, history
    train_idx, val_idx = split_indices(x.shape[0], cfg.split, cfg.seed, groups)
    _fit(head, x, y, cfg, train_idx, val_idx, history, with_accuracy=False)
    return head, history


def encode_labels(labels) -> tuple[np.ndarray, list]:
    """Map arbitrary labels to class indices ``0..C-1`` in sorted label order."""
    classes = sorted(set(np.asarray(labels).tolist()))
    index = {c: i for i, c in enumerate(classes)}
    return np.array([index[v] for v in np.asarray(labels).tolist()], dtype=np.int64), classes


def train_identity_head(features, labels, cfg: TrainConfig,
                        init: AttributeHead | None = None, embed_dim: int = EMBEDDING_DIM,
                        groups=None):
    """Fit an :class:`IdentityHead` by cross entropy.

    With ``init``, the attribute encoder's first layer (``in -> 512``) seeds the
    embedding layer; the classifier is always freshly initialized.
    Returns ``(head, history)`` with per-epoch validation accuracy.
    """
    cfg.validate()
    x = np.asarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise DatasetError("features must be a nonempty 2-D array")
    if len(labels) != x.shape[0]:
        raise DatasetError("one label per feature row required")
    y, classes = encode_labels(labels)
    if len(classes) < 2:
        raise DatasetError("identity training needs at least two identities")
    head = IdentityHead.init(_stream(cfg.seed, _STREAM_INIT), len(classes), in_dim=x.shape[1],
                             embed_dim=embed_dim, per_channel=cfg.per_channel_prelu)
    if init is not None:
        first = init.net.layers[0]
        if first.weight.shape != head.net.layers[0].weight.shape:
            raise DimensionError(
                f"attribute encoder layer {first.weight.shape} cannot seed embedding "
                f"layer {head.net.layers[0].weight.shape}")
        slope = first.slope
        if slope is not None and head.net.layers[0].slope is not None \
                and slope.shape != head.net.layers[0].slope.shape:
            slope = np.full_like(head.net.layers[0].slope, float(np.mean(slope)))
        head.net.layers[0] = Dense(first.weight.copy(), first.bias.copy(),
                                   None if slope is None else slope.copy())
    history = TrainHistory()
    if cfg.epochs == 0:
        return head, history
    train_idx, val_idx = split_indices(x.shape[0], cfg.split, cfg.seed, groups)
    _fit(head, x, y, cfg, train_idx, val_idx, history, with_accuracy=True)
    return head, history


# -- serialization -------------------------------------------------------------

def head_to_bytes(head) -> bytes:
    """Encode a head as a ``BIDH`` container.

    Layout (little endian): magic, u32 version, u32 layer count, u32 kind,
    u32 encoder depth, then per layer u32 in, u32 out, f64 weights (row
    major), f64 biases, u32 slope count, f64 slopes.
    """
    net = head.net if hasattr(head, "net") else head
    kind = getattr(head, "kind", KIND_GENERIC)
    depth = getattr(head, "encoder_depth", 0)
    w = Writer(BIDH_MAGIC, BIDH_VERSION)
    w.u32(len(net.layers))
    w.u32(kind)
    w.u32(depth)
    for layer in net.layers:
        w.u32(layer.in_dim)
        w.u32(layer.out_dim)
        w.f64(layer.weight)
        w.f64(layer.bias)
        slopes = np.zeros(0) if layer.slope is None else layer.slope
        w.u32(slopes.shape[0])
        w.f64(slopes)
    return w.getvalue()


def head_from_bytes(data: bytes):
    r = Reader(data, BIDH_MAGIC, (BIDH_VERSION,))
    n_layers = r.u32()
    kind = r.u32()
    depth = r.u32()
    layers = []
    for _ in range(n_layers):
        d_in, d_out = r.u32(), r.u32()
        weight = r.f64(d_in * d_out).reshape(d_out, d_in)
        bias = r.f64(d_out)
        n_slope = r.u32()
        slope = r.f64(n_slope) if n_slope else None
        layers.append(Dense(weight, bias, slope))
    r.finish()
    try:
        net = Network(layers)
        if kind == KIND_ATTRIBUTE:
            return AttributeHead(net, depth)
        if kind == KIND_IDENTITY:
            return IdentityHead(net)
    except DimensionError as exc:
        raise FormatError(f"inconsistent head container: {exc}") from exc
    if kind == KIND_GENERIC:
        return net
    raise FormatError(f"unknown head kind {kind}")


def save_head(path, head) -> None:
    Path(path).write_bytes(head_to_bytes(head))


def load_head(path):
    return head_from_bytes(Path(path).read_bytes())
