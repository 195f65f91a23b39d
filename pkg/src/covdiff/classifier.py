"""Two-stream MLP that maps spectral features to the new-stream count.

Layout for the full model with ``N`` receive antennas::

    [s_t; s_t1] -> FC(32) -> BN -> ReLU --\
                                           concat -> FC(16) -> BN -> ReLU -> FC(K_GF + 1)
    s_d         -> FC(32) -> BN -> ReLU --/

The ``raw_only`` and ``diff_only`` ablations keep a single branch (stream 1
or stream 2) feeding the same fusion head. Forward, backward and Adam are
written directly in numpy.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .matkit import NumericalError

SCHEMA_VERSION = 1
BN_EPS = 1e-5
BN_MOMENTUM = 0.9
VARIANTS = ("full", "raw_only", "diff_only")


@dataclass
class TrainConfig:
    learning_rate: float = 1e-3
    adam_betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    epochs: int = 100
    batch_size: int = 128
    seed: int = 0
    input_standardization: str = "zscore"

    def __post_init__(self):
        self.adam_betas = tuple(self.adam_betas)
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be nonnegative")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")
        if self.input_standardization not in ("none", "zscore"):
            raise ValueError(f"unknown input_standardization {self.input_standardization!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["adam_betas"] = list(self.adam_betas)
        return d


def _branches(variant: str, n_rx: int) -> list[tuple[str, slice]]:
    if variant == "full":
        return [("s1", slice(0, 2 * n_rx)), ("s2", slice(2 * n_rx, 3 * n_rx))]
    if variant == "raw_only":
        return [("s1", slice(0, 2 * n_rx))]
    if variant == "diff_only":
        return [("s2", slice(0, n_rx))]
    raise ValueError(f"unknown variant {variant!r}; expected one of {VARIANTS}")


@dataclass
class ClassifierModel:
    n_rx: int
    k_gf_max: int
    variant: str = "full"
    stream_width: int = 32
    fusion_width: int = 16
    params: dict[str, np.ndarray] = field(default_factory=dict)
    running: dict[str, np.ndarray] = field(default_factory=dict)
    feat_mean: np.ndarray | None = None
    feat_std: np.ndarray | None = None
    mode: str = "eval"
    dataset_hash: str | None = None
    train_config: dict | None = None

    @property
    def input_dim(self) -> int:
        return {"full": 3, "raw_only": 2, "diff_only": 1}[self.variant] * self.n_rx

    @property
    def n_classes(self) -> int:
        return self.k_gf_max + 1

    def layer_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {}
        for name, sl in _branches(self.variant, self.n_rx):
            fan_in = sl.stop - sl.start
            shapes[f"{name}.W"] = (fan_in, self.stream_width)
            shapes[f"{name}.b"] = (self.stream_width,)
            shapes[f"{name}.gamma"] = (self.stream_width,)
            shapes[f"{name}.beta"] = (self.stream_width,)
        n_branch = len(_branches(self.variant, self.n_rx))
        shapes["fuse.W"] = (n_branch * self.stream_width, self.fusion_width)
        shapes["fuse.b"] = (self.fusion_width,)
        shapes["fuse.gamma"] = (self.fusion_width,)
        shapes["fuse.beta"] = (self.fusion_width,)
        shapes["out.W"] = (self.fusion_width, self.n_classes)
        shapes["out.b"] = (self.n_classes,)
        return shapes

    def bn_layers(self) -> list[str]:
        return [name for name, _ in _branches(self.variant, self.n_rx)] + ["fuse"]


def init_model(
    n_rx: int,
    k_gf_max: int,
    seed: int = 0,
    variant: str = "full",
    stream_width: int = 32,
    fusion_width: int = 16,
) -> ClassifierModel:
    """Fresh model: uniform(+-1/sqrt(fan_in)) affine weights, BN at identity."""
    model = ClassifierModel(n_rx, k_gf_max, variant, stream_width, fusion_width)
    rng = np.random.default_rng(seed)
    shapes = model.layer_shapes()
    for key, shape in shapes.items():
        layer, kind = key.split(".")
        if kind == "W":
            bound = 1.0 / math.sqrt(shape[0])
            model.params[key] = rng.uniform(-bound, bound, size=shape)
        elif kind == "b":
            bound = 1.0 / math.sqrt(shapes[f"{layer}.W"][0])
            model.params[key] = rng.uniform(-bound, bound, size=shape)
        elif kind == "gamma":
            model.params[key] = np.ones(shape)
        else:
            model.params[key] = np.zeros(shape)
    for layer in model.bn_layers():
        width = shapes[f"{layer}.gamma"][0]
        model.running[f"{layer}.mean"] = np.zeros(width)
        model.running[f"{layer}.var"] = np.ones(width)
    return model


def _standardize(model: ClassifierModel, x: np.ndarray) -> np.ndarray:
    if model.feat_mean is None:
        return x
    return (x - model.feat_mean) / model.feat_std


def _as_batch(model: ClassifierModel, v) -> tuple[np.ndarray, bool]:
    x = np.asarray(v, dtype=float)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[1] != model.input_dim:
        raise ValueError(f"expected {model.input_dim} features, got {x.shape[1]}")
    return x, single


def _bn_forward(model, layer, z, train: bool, stats_out: dict | None):
    gamma = model.params[f"{layer}.gamma"]
    beta = model.params[f"{layer}.beta"]
    if train:
        mu = z.mean(axis=0)
        var = z.var(axis=0)
        if stats_out is not None:
            stats_out[layer] = (mu, var)
    else:
        mu = model.running[f"{layer}.mean"]
        var = model.running[f"{layer}.var"]
    inv_std = 1.0 / np.sqrt(var + BN_EPS)
    xhat = (z - mu) * inv_std
    return gamma * xhat + beta, (xhat, inv_std)


def _forward(model: ClassifierModel, x: np.ndarray, train: bool, stats_out: dict | None = None):
    """Logits plus the cache needed for backprop. ``x`` is already standardized."""
    cache = {}
    latents = []
    branches = _branches(model.variant, model.n_rx)
    offset = 0
    for name, sl in branches:
        width = sl.stop - sl.start
        xin = x[:, offset : offset + width]
        offset += width
        z = xin @ model.params[f"{name}.W"] + model.params[f"{name}.b"]
        a, bn_cache = _bn_forward(model, name, z, train, stats_out)
        h = np.maximum(a, 0.0)
        cache[name] = (xin, bn_cache, a)
        latents.append(h)
    fused_in = np.concatenate(latents, axis=1)
    z = fused_in @ model.params["fuse.W"] + model.params["fuse.b"]
    a, bn_cache = _bn_forward(model, "fuse", z, train, stats_out)
    h = np.maximum(a, 0.0)
    cache["fuse"] = (fused_in, bn_cache, a)
    logits = h @ model.params["out.W"] + model.params["out.b"]
    cache["out"] = h
    return logits, cache


def _bn_backward(model, layer, dy, bn_cache, grads):
    xhat, inv_std = bn_cache
    grads[f"{layer}.gamma"] = np.sum(dy * xhat, axis=0)
    grads[f"{layer}.beta"] = np.sum(dy, axis=0)
    dxhat = dy * model.params[f"{layer}.gamma"]
    n = dy.shape[0]
    return (inv_std / n) * (n * dxhat - dxhat.sum(axis=0) - xhat * np.sum(dxhat * xhat, axis=0))


def _backward(model: ClassifierModel, cache: dict, dlogits: np.ndarray) -> dict[str, np.ndarray]:
    grads = {}
    h = cache["out"]
    grads["out.W"] = h.T @ dlogits
    grads["out.b"] = dlogits.sum(axis=0)
    dh = dlogits @ model.params["out.W"].T
    fused_in, bn_cache, a = cache["fuse"]
    dz = _bn_backward(model, "fuse", dh * (a > 0), bn_cache, grads)
    grads["fuse.W"] = fused_in.T @ dz
    grads["fuse.b"] = dz.sum(axis=0)
    dfused = dz @ model.params["fuse.W"].T
    offset = 0
    for name, _ in _branches(model.variant, model.n_rx):
        xin, bn_cache, a = cache[name]
        dlat = dfused[:, offset : offset + model.stream_width]
        offset += model.stream_width
        dz = _bn_backward(model, name, dlat * (a > 0), bn_cache, grads)
        grads[f"{name}.W"] = xin.T @ dz
        grads[f"{name}.b"] = dz.sum(axis=0)
    return grads


def softmax_cross_entropy(logits: np.ndarray, labels: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient with respect to the logits."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_p = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -float(np.mean(log_p[np.arange(n), labels]))
    d = np.exp(log_p)
    d[np.arange(n), labels] -= 1.0
    return loss, d / n


def loss_and_grads(model: ClassifierModel, x: np.ndarray, labels: np.ndarray, stats_out: dict | None = None):
    """Train-mode loss and parameter gradients on a standardized batch."""
    logits, cache = _forward(model, x, train=True, stats_out=stats_out)
    loss, dlogits = softmax_cross_entropy(logits, labels)
    return loss, _backward(model, cache, dlogits)


def forward(model: ClassifierModel, v, mode: str | None = None) -> np.ndarray:
    """Logits for one feature vector or a batch.

    ``mode="train"`` normalizes with batch statistics, ``"eval"`` with running
    statistics. Running statistics are never updated here.
    """
    mode = mode or model.mode
    if mode not in ("train", "eval"):
        raise ValueError(f"mode must be 'train' or 'eval', got {mode!r}")
    x, single = _as_batch(model, v)
    logits, _ = _forward(model, _standardize(model, x), train=(mode == "train"))
    return logits[0] if single else logits


def argmax_lowest(logits) -> np.ndarray | int:
    """Row-wise argmax; exact ties go to the lowest class index."""
    out = np.argmax(np.asarray(logits), axis=-1)
    return int(out) if np.ndim(out) == 0 else out


def predict(model: ClassifierModel, v):
    """Estimated new-stream count(s) in eval mode."""
    return argmax_lowest(forward(model, v, mode="eval"))


class _Adam:
    def __init__(self, params: dict[str, np.ndarray], cfg: TrainConfig):
        self.lr = cfg.learning_rate
        self.b1, self.b2 = cfg.adam_betas
        self.eps = cfg.adam_eps
        self.m = {k: np.zeros_like(p) for k, p in params.items()}
        self.v = {k: np.zeros_like(p) for k, p in params.items()}
        self.t = 0

    def step(self, params: dict[str, np.ndarray], grads: dict[str, np.ndarray]):
        self.t += 1
        c1 = 1.0 - self.b1**self.t
        c2 = 1.0 - self.b2**self.t
        for k, g in grads.items():
            self.m[k] = self.b1 * self.m[k] + (1.0 - self.b1) * g
            self.v[k] = self.b2 * self.v[k] + (1.0 - self.b2) * g * g
            params[k] -= self.lr * (self.m[k] / c1) / (np.sqrt(self.v[k] / c2) + self.eps)


def _update_running(model: ClassifierModel, stats: dict):
    for layer, (mu, var) in stats.items():
        rm, rv = f"{layer}.mean", f"{layer}.var"
        model.running[rm] = BN_MOMENTUM * model.running[rm] + (1.0 - BN_MOMENTUM) * mu
        model.running[rv] = BN_MOMENTUM * model.running[rv] + (1.0 - BN_MOMENTUM) * var


def accuracy(model: ClassifierModel, x, labels) -> float:
    return float(np.mean(predict(model, x) == np.asarray(labels)))


def train(
    model: ClassifierModel,
    train_set: tuple[np.ndarray, np.ndarray],
    val_set: tuple[np.ndarray, np.ndarray] | None,
    cfg: TrainConfig,
) -> tuple[ClassifierModel, list[dict]]:
    """Mini-batch Adam on softmax cross-entropy.

    Returns a copy of the model at the epoch with the best validation accuracy
    (earliest on ties; the final epoch when no validation set is given) and the
    per-epoch history. ``model`` itself is not modified.
    """
    x, y = (np.asarray(a) for a in train_set)
    x = np.atleast_2d(x).astype(float)
    y = y.astype(int)
    if len(x) == 0:
        raise ValueError("training set is empty")
    if y.min() < 0 or y.max() > model.k_gf_max:
        raise ValueError(f"labels must lie in [0, {model.k_gf_max}]")
    if x.shape[1] != model.input_dim:
        raise ValueError(f"expected {model.input_dim} features, got {x.shape[1]}")

    model = copy.deepcopy(model)
    model.mode = "train"
    model.train_config = cfg.to_dict()
    if cfg.input_standardization == "zscore":
        model.feat_mean = x.mean(axis=0)
        std = x.std(axis=0)
        model.feat_std = np.where(std > 0, std, 1.0)
    else:
        model.feat_mean = model.feat_std = None
    xs = _standardize(model, x)

    rng = np.random.default_rng(cfg.seed)
    opt = _Adam(model.params, cfg)
    history = []
    best, best_acc = None, -1.0
    n = len(xs)
    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        losses, weights = [], []
        for bi, start in enumerate(range(0, n, cfg.batch_size)):
            idx = order[start : start + cfg.batch_size]
            stats = {}
            loss, grads = loss_and_grads(model, xs[idx], y[idx], stats)
            if not math.isfinite(loss):
                raise NumericalError(f"non-finite training loss at epoch {epoch}, batch {bi}")
            opt.step(model.params, grads)
            _update_running(model, stats)
            losses.append(loss)
            weights.append(len(idx))
        entry = {"epoch": epoch, "train_loss": float(np.average(losses, weights=weights))}
        if val_set is not None and len(val_set[0]):
            model.mode = "eval"
            entry["val_accuracy"] = accuracy(model, val_set[0], val_set[1])
            model.mode = "train"
            if entry["val_accuracy"] > best_acc:
                best_acc = entry["val_accuracy"]
                best = copy.deepcopy(model)
        history.append(entry)
    if best is None:
        best = model
    best.mode = "eval"
    return best, history


def gradient_errors(
    model: ClassifierModel,
    batch: tuple[np.ndarray, np.ndarray],
    samples_per_param: int = 6,
    step: float = 1e-5,
    seed: int = 0,
) -> dict[str, float]:
    """Max relative error between analytic and central-difference gradients per parameter.

    Relative error is ``|g_a - g_n| / max(|g_a| + |g_n|, 1e-6)``; the floor
    keeps exactly-zero gradients (pre-BN biases) from dividing round-off by zero.
    """
    x, y = batch
    xs = _standardize(model, np.atleast_2d(np.asarray(x, float)))
    y = np.asarray(y, int)
    _, grads = loss_and_grads(model, xs, y)
    rng = np.random.default_rng(seed)
    errors = {}
    for key, p in model.params.items():
        flat = p.reshape(-1)
        picks = rng.choice(flat.size, size=min(samples_per_param, flat.size), replace=False)
        worst = 0.0
        for i in picks:
            orig = flat[i]
            flat[i] = orig + step
            lp, _ = softmax_cross_entropy(_forward(model, xs, train=True)[0], y)
            flat[i] = orig - step
            lm, _ = softmax_cross_entropy(_forward(model, xs, train=True)[0], y)
            flat[i] = orig
            num = (lp - lm) / (2 * step)
            ana = grads[key].reshape(-1)[i]
            worst = max(worst, abs(ana - num) / max(abs(ana) + abs(num), 1e-6))
        errors[key] = worst
    return errors


def grad_check(model: ClassifierModel, batch, **kwargs) -> float:
    return max(gradient_errors(model, batch, **kwargs).values())


def _arr(a):
    return None if a is None else np.asarray(a).tolist()


def model_to_dict(model: ClassifierModel) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "artifact": f"covdiff-{__version__}",
        "dims": {
            "n_rx": model.n_rx,
            "k_gf_max": model.k_gf_max,
            "variant": model.variant,
            "stream_width": model.stream_width,
            "fusion_width": model.fusion_width,
        },
        "standardization": {"mean": _arr(model.feat_mean), "std": _arr(model.feat_std)},
        "params": {k: v.tolist() for k, v in model.params.items()},
        "bn_running": {k: v.tolist() for k, v in model.running.items()},
        "train_config": model.train_config,
        "dataset_hash": model.dataset_hash,
    }


def model_from_dict(doc: dict, expect: dict | None = None) -> ClassifierModel:
    """Rebuild a model; ``expect`` lists dims (e.g. ``n_rx``) that must match."""
    if doc.get("schema_version") != SCHEMA_VERSION:
        raise ValueError(f"unsupported model schema version {doc.get('schema_version')}")
    dims = doc["dims"]
    for k, v in (expect or {}).items():
        if dims.get(k) != v:
            raise ValueError(f"model {k}={dims.get(k)} does not match expected {v}")
    model = ClassifierModel(**dims)
    shapes = model.layer_shapes()
    if set(doc["params"]) != set(shapes):
        raise ValueError("model parameters do not match the declared dimensions")
    for k, shape in shapes.items():
        arr = np.asarray(doc["params"][k], dtype=float)
        if arr.shape != shape:
            raise ValueError(f"parameter {k} has shape {arr.shape}, expected {shape}")
        model.params[k] = arr
    model.running = {k: np.asarray(v, dtype=float) for k, v in doc["bn_running"].items()}
    std = doc["standardization"]
    if std["mean"] is not None:
        model.feat_mean = np.asarray(std["mean"], dtype=float)
        model.feat_std = np.asarray(std["std"], dtype=float)
    model.train_config = doc.get("train_config")
    model.dataset_hash = doc.get("dataset_hash")
    return model


def save_model(model: ClassifierModel, path):
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(model_to_dict(model)))
    tmp.replace(path)


def load_model(path, expect: dict | None = None) -> ClassifierModel:
    return model_from_dict(json.loads(Path(path).read_text()), expect)
