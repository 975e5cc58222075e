"""Layers of the temporal convolutional encoder-decoder.

Each layer is built from a serialisable :class:`LayerSpec` and follows one
contract::

    y, cache = layer.forward(params, x, ctx)
    grad_x, param_grads = layer.backward(params, cache, grad_y)

``params`` is the model-wide name -> array mapping; a layer reads (and
returns gradients for) only the names in ``layer.param_names``.  ``ctx``
carries per-pass state: the stack of pre-pooling lengths the decoder crops
back to, the training flag and the dropout RNG.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import normact, pooling
from ..errors import ConfigError, ShapeError

LAYER_KINDS = ("conv1d", "activation", "pooling", "normalize", "upsample",
               "timedense", "softmax", "dropout")


@dataclass
class LayerSpec:
    kind: str
    name: str
    attrs: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if self.kind == "conv1d":
            k = self.attrs.get("kernel_size", 1)
            if k < 1 or k % 2 == 0:
                raise ConfigError(f"{self.name}: kernel_size must be odd, got {k}")
            if self.attrs.get("filters", 1) < 1:
                raise ConfigError(f"{self.name}: filters must be >= 1")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "name": self.name, "attrs": dict(self.attrs)}

    @classmethod
    def from_dict(cls, d: dict) -> "LayerSpec":
        return cls(d["kind"], d["name"], dict(d.get("attrs", {})))


def _frames(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"expected a (T, channels) sequence, got shape {x.shape}")
    return x


def conv1d(x, kernel, bias) -> np.ndarray:
    """'Same' cross-correlation with zero padding.

    ``y[t, o] = bias[o] + sum_c sum_j kernel[o, c, j + r] * x[t + j, c]``.

    >>> conv1d([[1.], [2.], [3.], [4.]], [[[1., 0., -1.]]], [0.]).ravel().tolist()
    [-2.0, -2.0, -2.0, 3.0]
    """
    return _conv_forward(_frames(x), np.asarray(kernel, dtype=np.float64),
                         np.asarray(bias, dtype=np.float64))[0]


def _conv_forward(x, kernel, bias):
    if kernel.ndim != 3:
        raise ShapeError(f"conv kernel must be out x in x k, got shape {kernel.shape}")
    out_ch, in_ch, k = kernel.shape
    if k % 2 == 0:
        raise ShapeError(f"conv kernel width must be odd, got {k}")
    if x.shape[1] != in_ch:
        raise ShapeError(f"conv expects {in_ch} input channels, got {x.shape[1]}")
    if bias.shape != (out_ch,):
        raise ShapeError(f"conv bias must have shape ({out_ch},), got {bias.shape}")
    T = x.shape[0]
    r = k // 2
    xp = np.zeros((T + 2 * r, in_ch))
    xp[r:r + T] = x
    cols = np.lib.stride_tricks.sliding_window_view(xp, k, axis=0)  # (T, in, k)
    cols = cols.reshape(T, in_ch * k)
    W = kernel.transpose(1, 2, 0).reshape(in_ch * k, out_ch)
    return cols @ W + bias, (cols, W, T, r, in_ch, k)


def _conv_backward(kernel, cache, g):
    cols, W, T, r, in_ch, k = cache
    out_ch = kernel.shape[0]
    gW = (cols.T @ g).reshape(in_ch, k, out_ch).transpose(2, 0, 1)
    gb = g.sum(axis=0)
    gcols = (g @ W.T).reshape(T, in_ch, k)
    gxp = np.zeros((T + 2 * r, in_ch))
    for j in range(k):
        gxp[j:j + T] += gcols[:, :, j]
    return gxp[r:r + T], gW, gb


def upsample_nn(x, target_T: int) -> np.ndarray:
    """Repeat every frame twice and crop to ``target_T`` (``2T - 1`` or ``2T``)."""
    x = _frames(x)
    T = x.shape[0]
    if target_T not in (2 * T - 1, 2 * T):
        raise ShapeError(f"cannot upsample {T} frames to {target_T}")
    return np.repeat(x, 2, axis=0)[:target_T]


def softmax(z) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def timedense_softmax(x, W, b) -> np.ndarray:
    """Per-frame ``softmax(W x + b)``."""
    x = _frames(x)
    W = np.asarray(W, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if W.ndim != 2 or W.shape[1] != x.shape[1] or b.shape != (W.shape[0],):
        raise ShapeError(f"dense weights {W.shape}/{b.shape} do not fit {x.shape[1]} channels")
    return softmax(x @ W.T + b)


# -- layer objects ----------------------------------------------------------

class Layer:
    param_names: tuple[str, ...] = ()

    def __init__(self, spec: LayerSpec):
        self.spec = spec
        self.name = spec.name

    def pattern(self, cache):
        """Discrete choices (masks, argmaxes) made by the forward pass, or ``None``."""
        return None


class Conv1D(Layer):
    def __init__(self, spec):
        super().__init__(spec)
        self.param_names = (f"{self.name}.kernel", f"{self.name}.bias")

    def forward(self, params, x, ctx):
        kname, bname = self.param_names
        return _conv_forward(x, params[kname], params[bname])

    def backward(self, params, cache, g):
        kname, bname = self.param_names
        gx, gW, gb = _conv_backward(params[kname], cache, g)
        return gx, {kname: gW, bname: gb}


class Activation(Layer):
    def __init__(self, spec):
        super().__init__(spec)
        a = spec.attrs
        self.act = normact.ActivationSpec(a["activation"], a.get("theta", 1.0),
                                          a.get("epsilon", 1e-5), a.get("alpha", 0.01))
        if self.act.kind == "rpn":
            self.param_names = (f"{self.name}.theta",)

    def _theta(self, params):
        return float(params[self.param_names[0]][0]) if self.param_names else None

    def forward(self, params, x, ctx):
        return normact.activate(x, self.act, self._theta(params)), x

    def backward(self, params, x, g):
        gx, gtheta = normact.activate_backward(x, self.act, g, self._theta(params))
        if self.param_names:
            return gx, {self.param_names[0]: np.array([gtheta])}
        return gx, {}

    def pattern(self, x):
        if self.act.kind in ("relu", "leaky_relu"):
            return x > 0
        if self.act.kind == "nrelu":
            return np.concatenate([(x > 0).ravel(), np.argmax(np.maximum(x, 0), axis=-1)])
        return None


class Pooling(Layer):
    def __init__(self, spec):
        super().__init__(spec)
        a = spec.attrs
        self.cfg = pooling.PoolingConfig(a["pool_kind"], a["window"], a.get("stride", 2),
                                         a.get("learnable", True))
        self.weight_keys = ()
        if self.cfg.learnable and self.cfg.kind in ("coupled", "coupled_compact"):
            self.weight_keys = ("omega",)
        elif self.cfg.learnable and self.cfg.kind != "max":
            self.weight_keys = ("p", "q")
        self.param_names = tuple(f"{self.name}.{k}" for k in self.weight_keys)

    def forward(self, params, x, ctx):
        ctx["lengths"].append(x.shape[0])
        w = None
        if self.weight_keys:
            w = pooling.PoolingWeights(**{k: params[f"{self.name}.{k}"] for k in self.weight_keys})
        return pooling.pool_forward(x, self.cfg, w)

    def backward(self, params, cache, g):
        gx, gw = pooling.pool_backward(cache, g)
        return gx, {f"{self.name}.{k}": v for k, v in gw.items()}

    def pattern(self, cache):
        return cache.get("arg")


class Normalize(Layer):
    def __init__(self, spec):
        super().__init__(spec)
        self.kind = normact.NormSpec(spec.attrs["norm"]).kind

    def forward(self, params, x, ctx):
        return normact.vec_normalize(x, self.kind), x

    def backward(self, params, x, g):
        return normact.backward_vec_normalize(x, g, self.kind), {}

    def pattern(self, x):
        return np.sign(x) if self.kind == "l1" else None


class Upsample(Layer):
    def forward(self, params, x, ctx):
        target = ctx["lengths"].pop()
        return upsample_nn(x, target), x.shape[0]

    def backward(self, params, T, g):
        pad = np.zeros((2 * T, g.shape[1]))
        pad[:g.shape[0]] = g
        return pad[0::2] + pad[1::2], {}


class TimeDense(Layer):
    def __init__(self, spec):
        super().__init__(spec)
        self.param_names = (f"{self.name}.weight", f"{self.name}.bias")

    def forward(self, params, x, ctx):
        W, b = (params[n] for n in self.param_names)
        if W.shape[1] != x.shape[1]:
            raise ShapeError(f"{self.name}: expects {W.shape[1]} channels, got {x.shape[1]}")
        return x @ W.T + b, x

    def backward(self, params, x, g):
        W = params[self.param_names[0]]
        return g @ W, {self.param_names[0]: g.T @ x, self.param_names[1]: g.sum(axis=0)}


class Softmax(Layer):
    """Identity on logits; the loss applies softmax and cross-entropy jointly."""

    def forward(self, params, x, ctx):
        return x, None

    def backward(self, params, cache, g):
        return g, {}


class Dropout(Layer):
    def forward(self, params, x, ctx):
        rate = self.spec.attrs["rate"]
        if not ctx.get("train") or rate <= 0:
            return x, None
        keep = ctx["rng"].random(x.shape) >= rate
        mask = keep / (1.0 - rate)
        return x * mask, mask

    def backward(self, params, mask, g):
        return (g if mask is None else g * mask), {}

    def pattern(self, mask):
        return mask


_LAYERS = {
    "conv1d": Conv1D, "activation": Activation, "pooling": Pooling, "normalize": Normalize,
    "upsample": Upsample, "timedense": TimeDense, "softmax": Softmax, "dropout": Dropout,
}


def make_layer(spec: LayerSpec) -> Layer:
    return _LAYERS[spec.kind](spec)
