"""Model assembly, inference and reverse-mode gradients for the encoder-decoder."""
from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .. import normact, pooling
from ..errors import ConfigError, NumericError, ShapeError
from .layers import LayerSpec, make_layer, softmax


@dataclass
class TrainConfig:
    epochs: int = 200
    learning_rate: float = 1e-3
    clip_norm: float = 5.0
    seed: int = 0
    pooling: str = "max"
    window: int = 5
    stride: int = 2
    pool_learnable: bool = True
    pool_power: bool = False
    activation: str = "nrelu"
    normalization: str = "none"
    filters: tuple[int, ...] = (64, 96)
    kernel_size: int = 25
    epsilon: float = 1e-5
    leaky_alpha: float = 0.01
    theta_init: float = 1.0
    dropout: float = 0.0
    weight_decay: float = 0.0
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        self.filters = tuple(int(f) for f in self.filters)
        if self.epochs < 1:
            raise ConfigError(f"epochs must be >= 1, got {self.epochs}")
        if not self.learning_rate > 0:
            raise ConfigError(f"learning_rate must be > 0, got {self.learning_rate}")
        if not self.clip_norm > 0:
            raise ConfigError(f"clip_norm must be > 0, got {self.clip_norm}")
        if not self.filters or min(self.filters) < 1:
            raise ConfigError(f"filters must be a non-empty list of positive counts, got {self.filters}")
        if self.kernel_size < 1 or self.kernel_size % 2 == 0:
            raise ConfigError(f"kernel_size must be odd, got {self.kernel_size}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        # validate the enumerated options early
        pooling.PoolingConfig(self.pooling, self.window, self.stride, self.pool_learnable)
        normact.ActivationSpec(self.activation, self.theta_init, self.epsilon, self.leaky_alpha)
        normact.NormSpec(self.normalization)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["filters"] = list(self.filters)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class ModelParams:
    layers: list[LayerSpec]
    params: dict[str, np.ndarray]
    n_classes: int
    input_dim: int
    seed: int = 0
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, v in self.params.items():
            if not np.all(np.isfinite(v)):
                raise NumericError(f"parameter {name} is not finite")

    def copy(self) -> "ModelParams":
        return ModelParams([LayerSpec.from_dict(s.to_dict()) for s in self.layers],
                           {k: v.copy() for k, v in self.params.items()},
                           self.n_classes, self.input_dim, self.seed, copy.deepcopy(self.config))

    def n_parameters(self) -> int:
        return int(sum(v.size for v in self.params.values()))


def _glorot(rng, shape, fan_in, fan_out):
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def build_model(cfg: TrainConfig, input_dim: int, n_classes: int) -> ModelParams:
    """Create the encoder-decoder for ``cfg`` with deterministic initial weights.

    Encoder ``i``: conv -> activation -> pooling (stride 2) -> [power norm] ->
    [vector norm].  Decoder ``i`` mirrors encoder ``L-1-i``: upsample -> conv
    -> activation.  A time-distributed dense layer and softmax close the net.
    """
    if input_dim < 1 or n_classes < 1:
        raise ConfigError("input_dim and n_classes must be >= 1")
    rng = np.random.default_rng(cfg.seed)
    act = {"activation": cfg.activation, "theta": cfg.theta_init, "epsilon": cfg.epsilon,
           "alpha": cfg.leaky_alpha}
    k = cfg.kernel_size
    layers: list[LayerSpec] = []
    params: dict[str, np.ndarray] = {}

    def conv(name, c_in, c_out):
        layers.append(LayerSpec("conv1d", name, {"filters": c_out, "kernel_size": k, "in_channels": c_in}))
        params[f"{name}.kernel"] = _glorot(rng, (c_out, c_in, k), c_in * k, c_out * k)
        params[f"{name}.bias"] = np.zeros(c_out)

    def activation(name, attrs):
        layers.append(LayerSpec("activation", name, dict(attrs)))
        if attrs["activation"] == "rpn":
            params[f"{name}.theta"] = np.array([float(attrs["theta"])])

    def dropout(name):
        if cfg.dropout > 0:
            layers.append(LayerSpec("dropout", name, {"rate": cfg.dropout}))

    width = input_dim
    for i, f in enumerate(cfg.filters):
        conv(f"enc{i}.conv", width, f)
        activation(f"enc{i}.act", act)
        dropout(f"enc{i}.drop")
        pname = f"enc{i}.pool"
        layers.append(LayerSpec("pooling", pname, {
            "pool_kind": cfg.pooling, "window": cfg.window, "stride": cfg.stride,
            "learnable": cfg.pool_learnable}))
        if cfg.pool_learnable and cfg.pooling in ("coupled", "coupled_compact"):
            params[f"{pname}.omega"] = np.full(cfg.window, 1.0 / cfg.window)
        elif cfg.pool_learnable and cfg.pooling != "max":
            params[f"{pname}.p"] = np.full(cfg.window, 1.0 / cfg.window)
            params[f"{pname}.q"] = np.full(cfg.window, 1.0 / cfg.window)
        if cfg.pool_power:
            activation(f"enc{i}.power", {**act, "activation": "rpn"})
        if cfg.normalization != "none":
            layers.append(LayerSpec("normalize", f"enc{i}.norm", {"norm": cfg.normalization}))
        width = pooling.output_dim(cfg.pooling, f)

    for j, f in enumerate(reversed(cfg.filters)):
        layers.append(LayerSpec("upsample", f"dec{j}.up"))
        conv(f"dec{j}.conv", width, f)
        activation(f"dec{j}.act", act)
        dropout(f"dec{j}.drop")
        width = f

    layers.append(LayerSpec("timedense", "dense"))
    params["dense.weight"] = _glorot(rng, (n_classes, width), width, n_classes)
    params["dense.bias"] = np.zeros(n_classes)
    layers.append(LayerSpec("softmax", "softmax"))
    return ModelParams(layers, params, n_classes, input_dim, cfg.seed, cfg.to_dict())


def _run(model: ModelParams, x, train=False, rng=None, check_finite=False):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.input_dim:
        raise ShapeError(f"model expects (T, {model.input_dim}) input, got shape {x.shape}")
    ctx = {"lengths": [], "train": train, "rng": rng}
    trace = []
    h = x
    for spec in model.layers:
        layer = make_layer(spec)
        h, cache = layer.forward(model.params, h, ctx)
        if check_finite and not np.all(np.isfinite(h)):
            raise NumericError(f"non-finite output first produced by layer {spec.name!r}")
        trace.append((layer, cache))
    if h.shape[0] != x.shape[0]:
        raise ShapeError(f"output has {h.shape[0]} frames for {x.shape[0]} inputs")
    return h, trace


def logits(model: ModelParams, x) -> np.ndarray:
    return _run(model, x)[0]


def forward(model: ModelParams, x) -> np.ndarray:
    """Per-frame class probabilities, shape ``(T, C)``."""
    return softmax(logits(model, x))


def predict(model: ModelParams, x) -> np.ndarray:
    """Most probable class per frame (lowest index on ties)."""
    return np.argmax(logits(model, x), axis=1)


def cross_entropy(z: np.ndarray, y: np.ndarray) -> float:
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    return float(-np.mean(logp[np.arange(y.size), y]))


def loss_and_grads(model: ModelParams, x, y, train=False, rng=None, return_logits=False):
    """Mean frame-wise cross-entropy and its gradient for every parameter."""
    y = np.asarray(y, dtype=np.int64)
    z, trace = _run(model, x, train, rng, check_finite=True)
    if y.shape != (z.shape[0],):
        raise ShapeError(f"{z.shape[0]} frames but {y.size} labels")
    if y.min() < 0 or y.max() >= model.n_classes:
        raise ShapeError(f"labels must lie in [0, {model.n_classes})")
    loss = cross_entropy(z, y)
    if not math.isfinite(loss):
        raise NumericError("non-finite loss")
    g = softmax(z)
    g[np.arange(y.size), y] -= 1.0
    g /= y.size
    grads = {}
    for layer, cache in reversed(trace):
        g, pg = layer.backward(model.params, cache, g)
        grads.update(pg)
    if return_logits:
        return loss, grads, z
    return loss, grads


def activation_pattern(model: ModelParams, x, train=False, rng=None) -> list:
    """Discrete forward decisions (ReLU masks, argmaxes) for kink detection."""
    _, trace = _run(model, x, train, rng)
    return [layer.pattern(cache) for layer, cache in trace]
