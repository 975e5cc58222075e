"""Local temporal pooling operators and their gradients.

Every pooler gathers, for each output frame ``s``, the window of ``|N|``
frames centred at ``t = stride * s``.  Out-of-range taps are padding: they
hold zero vectors and are excluded from every weighted sum.  Sequences are
plain ``(T, d)`` arrays (a :class:`~tpool.seqdata.FeatureSequence` works
too); outputs have ``ceil(T / stride)`` frames.

Weights are indexed by tap offset: ``omega[k]`` multiplies frame ``t - r + k``
with ``r = (|N| - 1) // 2``.

Output layouts
--------------
max                ``d``            channel-wise maximum
coupled            ``d**2``         ``vec(sum_k omega_k x x^T)``
decoupled          ``d*(d+1)``      ``(mu, vec(Sigma))``
coupled_compact    ``d*(d+1)/2``    ``hvec`` of the coupled matrix
decoupled_compact  ``d*(d+3)/2``    ``(mu, hvec(Sigma))``
first_order        ``d``            ``mu`` only
second_order       ``d**2``         ``vec(Sigma)`` only

``hvec`` lists the diagonal first, then the upper-triangular entries in row
order scaled by ``sqrt(2)``, so inner products are preserved exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError, NumericError, ShapeError

KINDS = ("max", "coupled", "decoupled", "coupled_compact", "decoupled_compact",
         "first_order", "second_order")
BILINEAR_KINDS = KINDS[1:]
_COUPLED = ("coupled", "coupled_compact")
_DECOUPLED = ("decoupled", "decoupled_compact", "first_order", "second_order")
SQRT2 = math.sqrt(2.0)


@dataclass(frozen=True)
class PoolingConfig:
    kind: str = "max"
    window: int = 5
    stride: int = 2
    learnable: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown pooling kind {self.kind!r}; choose from {', '.join(KINDS)}")
        if self.window < 1 or self.window % 2 == 0:
            raise ConfigError(f"window must be odd and >= 1, got {self.window}")
        if self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")


@dataclass
class PoolingWeights:
    omega: np.ndarray | None = None
    p: np.ndarray | None = None
    q: np.ndarray | None = None

    @classmethod
    def uniform(cls, window: int) -> "PoolingWeights":
        """Box-filter weights ``1/|N|``, i.e. plain local averaging."""
        w = np.full(window, 1.0 / window)
        return cls(omega=w.copy(), p=w.copy(), q=w.copy())


def output_dim(kind: str, d: int) -> int:
    """Channel count produced by pooler ``kind`` on ``d`` input channels."""
    if d < 1:
        raise ConfigError(f"d must be >= 1, got {d}")
    dims = {
        "max": d,
        "first_order": d,
        "coupled": d * d,
        "second_order": d * d,
        "decoupled": d * (d + 1),
        "coupled_compact": d * (d + 1) // 2,
        "decoupled_compact": d * (d + 3) // 2,
    }
    if kind not in dims:
        raise ConfigError(f"unknown pooling kind {kind!r}")
    return dims[kind]


def neighborhood(t: int, window: int, T: int) -> tuple[np.ndarray, np.ndarray]:
    """Frame indices of the window centred at ``t`` and their validity mask."""
    r = (window - 1) // 2
    idx = np.arange(t - r, t + r + 1)
    return idx, (idx >= 0) & (idx < T)


def _as_frames(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise ShapeError(f"expected a (T, d) sequence, got shape {x.shape}")
    return x


def _gather(x: np.ndarray, window: int, stride: int):
    """Return taps ``(S, K, d)`` and validity mask ``(S, K)``."""
    T, d = x.shape
    r = (window - 1) // 2
    S = -(-T // stride)
    xp = np.zeros((T + 2 * r, d))
    xp[r:r + T] = x
    idx = stride * np.arange(S)[:, None] + np.arange(window)[None, :]
    mask = (idx >= r) & (idx < r + T)
    return xp[idx], mask


def _scatter(dA: np.ndarray, T: int, window: int, stride: int) -> np.ndarray:
    S, K, d = dA.shape
    r = (window - 1) // 2
    gp = np.zeros((T + 2 * r + stride, d))
    for k in range(K):
        gp[k:k + stride * S:stride] += dA[:, k]
    return gp[r:r + T]


def _check_weights(name: str, w, window: int) -> np.ndarray:
    if w is None:
        raise ConfigError(f"pooling weight {name!r} missing")
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (window,):
        raise ConfigError(f"weight {name!r} has length {w.size}, window is {window}")
    if not np.all(np.isfinite(w)):
        raise ConfigError(f"weight {name!r} is not finite")
    return w


def resolve_weights(cfg: PoolingConfig, w: PoolingWeights | None) -> PoolingWeights:
    """Weights actually used by the pooler: uniform unless ``cfg.learnable``."""
    if not cfg.learnable or w is None:
        return PoolingWeights.uniform(cfg.window)
    if cfg.kind in _COUPLED:
        return PoolingWeights(omega=_check_weights("omega", w.omega, cfg.window))
    if cfg.kind in _DECOUPLED:
        return PoolingWeights(p=_check_weights("p", w.p, cfg.window),
                              q=_check_weights("q", w.q, cfg.window))
    return w


# -- half-vectorisation -----------------------------------------------------

def _hvec_index(d: int):
    iu, ju = np.triu_indices(d, 1)
    return np.arange(d), iu, ju


def hvec_batch(M: np.ndarray) -> np.ndarray:
    """``hvec`` of a stack ``(..., d, d)`` of symmetric matrices, unchecked."""
    d = M.shape[-1]
    diag, iu, ju = _hvec_index(d)
    return np.concatenate([M[..., diag, diag], SQRT2 * M[..., iu, ju]], axis=-1)


def hvec_batch_adjoint(g: np.ndarray, d: int) -> np.ndarray:
    """Map a gradient w.r.t. ``hvec(M)`` to an (upper-triangular) gradient w.r.t. ``M``."""
    diag, iu, ju = _hvec_index(d)
    G = np.zeros(g.shape[:-1] + (d, d))
    G[..., diag, diag] = g[..., :d]
    G[..., iu, ju] = SQRT2 * g[..., d:]
    return G


def hvec(M, tol: float = 1e-9) -> np.ndarray:
    """Half-vectorise a symmetric matrix so that ``<hvec A, hvec B> = <A, B>_F``.

    >>> hvec([[1.0, 2.0], [2.0, 3.0]]).round(6).tolist()
    [1.0, 3.0, 2.828427]
    """
    M = np.asarray(M, dtype=np.float64)
    if M.ndim != 2 or M.shape[0] != M.shape[1]:
        raise ShapeError(f"hvec needs a square matrix, got shape {M.shape}")
    if M.size and np.max(np.abs(M - M.T)) > tol:
        raise NumericError(f"matrix is not symmetric (max |M - M^T| = {np.max(np.abs(M - M.T)):.3g})")
    return hvec_batch(M)


def global_bilinear(X) -> np.ndarray:
    """Conventional bilinear pooling: ``vec`` of the mean outer product over a set."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise DataError("global_bilinear needs a non-empty set of vectors")
    return (X.T @ X / X.shape[0]).reshape(-1)


# -- forward / backward core ------------------------------------------------

def pool_forward(x, cfg: PoolingConfig, w: PoolingWeights | None = None):
    """Run the pooler described by ``cfg``; returns ``(out, cache)``."""
    x = _as_frames(x)
    T, d = x.shape
    A, mask = _gather(x, cfg.window, cfg.stride)
    S, K, _ = A.shape
    cache = {"T": T, "d": d, "cfg": cfg, "A": A, "mask": mask}

    if cfg.kind == "max":
        # padded taps are zeros and take part in the max
        arg = np.argmax(A, axis=1)  # first maximiser = earliest tap
        cache["arg"] = arg
        out = np.take_along_axis(A, arg[:, None, :], axis=1)[:, 0]
        return out, cache

    w = resolve_weights(cfg, w)
    cache["w"] = w
    if cfg.kind in _COUPLED:
        M = np.zeros((S, d, d))
        for k in range(K):
            a = A[:, k]
            M += w.omega[k] * (a[:, :, None] * a[:, None, :])
        out = M.reshape(S, d * d) if cfg.kind == "coupled" else hvec_batch(M)
        return out, cache

    mu = np.zeros((S, d))
    for k in range(K):
        mu += w.p[k] * A[:, k]
    D = (A - mu[:, None, :]) * mask[:, :, None]
    sigma = np.zeros((S, d, d))
    for k in range(K):
        e = D[:, k]
        sigma += w.q[k] * (e[:, :, None] * e[:, None, :])
    cache["D"] = D
    if cfg.kind == "first_order":
        out = mu
    elif cfg.kind == "second_order":
        out = sigma.reshape(S, d * d)
    elif cfg.kind == "decoupled":
        out = np.concatenate([mu, sigma.reshape(S, d * d)], axis=1)
    else:
        out = np.concatenate([mu, hvec_batch(sigma)], axis=1)
    return out, cache


def pool_backward(cache, grad_out):
    """Gradients of a pooler given its forward cache.

    Returns ``(grad_x, grad_w)`` where ``grad_w`` maps weight names
    (``omega`` or ``p``/``q``) to arrays; it is empty for max pooling and for
    non-learnable configurations.
    """
    cfg: PoolingConfig = cache["cfg"]
    A, mask, T, d = cache["A"], cache["mask"], cache["T"], cache["d"]
    S, K, _ = A.shape
    grad_out = np.asarray(grad_out, dtype=np.float64)
    expected = (S, output_dim(cfg.kind, d))
    if grad_out.shape != expected:
        raise ShapeError(f"grad_out has shape {grad_out.shape}, expected {expected}")

    dA = np.zeros_like(A)
    grads = {}
    if cfg.kind == "max":
        np.put_along_axis(dA, cache["arg"][:, None, :], grad_out[:, None, :], axis=1)
        dA *= mask[:, :, None]
        return _scatter(dA, T, cfg.window, cfg.stride), grads

    w = cache["w"]
    if cfg.kind in _COUPLED:
        if cfg.kind == "coupled":
            G = grad_out.reshape(S, d, d)
        else:
            G = hvec_batch_adjoint(grad_out, d)
        Gs = G + np.swapaxes(G, 1, 2)
        g_omega = np.zeros(K)
        for k in range(K):
            a = A[:, k]
            Ga = np.einsum("sij,sj->si", Gs, a)
            dA[:, k] = w.omega[k] * Ga
            g_omega[k] = 0.5 * np.sum(Ga * a)
        if cfg.learnable:
            grads["omega"] = g_omega
        dA *= mask[:, :, None]
        return _scatter(dA, T, cfg.window, cfg.stride), grads

    D = cache["D"]
    if cfg.kind == "first_order":
        g_mu, G = grad_out, None
    elif cfg.kind == "second_order":
        g_mu, G = np.zeros((S, d)), grad_out.reshape(S, d, d)
    elif cfg.kind == "decoupled":
        g_mu, G = grad_out[:, :d], grad_out[:, d:].reshape(S, d, d)
    else:
        g_mu, G = grad_out[:, :d], hvec_batch_adjoint(grad_out[:, d:], d)

    g_q = np.zeros(K)
    g_mu_total = g_mu.copy()
    if G is not None:
        Gs = G + np.swapaxes(G, 1, 2)
        for k in range(K):
            e = D[:, k]
            Ge = np.einsum("sij,sj->si", Gs, e)
            g_q[k] = 0.5 * np.sum(Ge * e)
            h = w.q[k] * Ge * mask[:, k, None]
            dA[:, k] = h
            g_mu_total -= h
    g_p = np.zeros(K)
    for k in range(K):
        dA[:, k] += w.p[k] * g_mu_total
        g_p[k] = np.sum(A[:, k] * g_mu_total)
    if cfg.learnable:
        grads["p"] = g_p
        grads["q"] = g_q
    dA *= mask[:, :, None]
    return _scatter(dA, T, cfg.window, cfg.stride), grads


# -- named operators --------------------------------------------------------

def _run(kind, x, cfg, w):
    if cfg.kind != kind:
        cfg = PoolingConfig(kind, cfg.window, cfg.stride, cfg.learnable)
    return pool_forward(x, cfg, w)[0]


def max_pool(x, cfg: PoolingConfig) -> np.ndarray:
    return _run("max", x, cfg, None)


def bilinear_coupled(x, cfg: PoolingConfig, w: PoolingWeights | None = None) -> np.ndarray:
    return _run("coupled", x, cfg, w)


def bilinear_decoupled(x, cfg: PoolingConfig, w: PoolingWeights | None = None) -> np.ndarray:
    return _run("decoupled", x, cfg, w)


def bilinear_coupled_compact(x, cfg: PoolingConfig, w: PoolingWeights | None = None) -> np.ndarray:
    return _run("coupled_compact", x, cfg, w)


def bilinear_decoupled_compact(x, cfg: PoolingConfig, w: PoolingWeights | None = None) -> np.ndarray:
    return _run("decoupled_compact", x, cfg, w)


def first_order_only(x, cfg: PoolingConfig, w: PoolingWeights | None = None) -> np.ndarray:
    return _run("first_order", x, cfg, w)


def second_order_only(x, cfg: PoolingConfig, w: PoolingWeights | None = None) -> np.ndarray:
    return _run("second_order", x, cfg, w)


def backward(x, cfg: PoolingConfig, w: PoolingWeights | None, grad_out):
    """Recompute the forward pass of ``cfg.kind`` and return ``(grad_x, grad_w)``."""
    _, cache = pool_forward(x, cfg, w)
    return pool_backward(cache, grad_out)


def _backward_for(kind):
    def fn(x, cfg, w, grad_out):
        if cfg.kind != kind:
            cfg = PoolingConfig(kind, cfg.window, cfg.stride, cfg.learnable)
        return backward(x, cfg, w, grad_out)
    fn.__name__ = f"backward_{kind}"
    fn.__doc__ = f"Gradients of the {kind} pooler w.r.t. frames and weights."
    return fn


backward_max_pool = _backward_for("max")
backward_bilinear_coupled = _backward_for("coupled")
backward_bilinear_decoupled = _backward_for("decoupled")
backward_bilinear_coupled_compact = _backward_for("coupled_compact")
backward_bilinear_decoupled_compact = _backward_for("decoupled_compact")
backward_first_order_only = _backward_for("first_order")
backward_second_order_only = _backward_for("second_order")


# -- direct kernel evaluation -----------------------------------------------

def _window_frames(x: np.ndarray, t: int, window: int):
    T = x.shape[0]
    if not 0 <= t < T:
        raise ShapeError(f"centre {t} outside [0, {T})")
    idx, valid = neighborhood(t, window, T)
    return [(k, x[i]) for k, (i, ok) in enumerate(zip(idx, valid)) if ok]


def kernel_coupled(x, w: PoolingWeights, i: int, j: int) -> float:
    """``sum_{tau, tau'} omega_tau omega_tau' <x_tau, x_tau'>^2`` evaluated directly.

    Equals the inner product of the coupled pooled vectors at centres ``i``
    and ``j`` without forming any outer product.
    """
    x = _as_frames(x)
    omega = np.asarray(w.omega, dtype=np.float64)
    total = 0.0
    for k, a in _window_frames(x, i, omega.size):
        for m, b in _window_frames(x, j, omega.size):
            total += omega[k] * omega[m] * float(np.dot(a, b)) ** 2
    return total


def kernel_decoupled(x, w: PoolingWeights, i: int, j: int) -> float:
    """``<mu_i, mu_j> + sum q_tau q_tau' <x_tau - mu_i, x_tau' - mu_j>^2``, directly."""
    x = _as_frames(x)
    p = np.asarray(w.p, dtype=np.float64)
    q = np.asarray(w.q, dtype=np.float64)
    win_i = _window_frames(x, i, p.size)
    win_j = _window_frames(x, j, p.size)
    mu_i = sum((p[k] * a for k, a in win_i), np.zeros(x.shape[1]))
    mu_j = sum((p[k] * b for k, b in win_j), np.zeros(x.shape[1]))
    total = float(np.dot(mu_i, mu_j))
    for k, a in win_i:
        for m, b in win_j:
            total += q[k] * q[m] * float(np.dot(a - mu_i, b - mu_j)) ** 2
    return total


def _tap_stack(x: np.ndarray, window: int):
    # frame x[t - r + k] for every centre t and tap k (zeros when out of range)
    T, d = x.shape
    r = (window - 1) // 2
    xp = np.zeros((T + 2 * r, d))
    xp[r:r + T] = x
    taps = np.stack([xp[k:k + T] for k in range(window)])
    mask = np.stack([(np.arange(T) + k - r >= 0) & (np.arange(T) + k - r < T) for k in range(window)])
    return taps, mask


def kernel_matrix_coupled(x, w: PoolingWeights) -> np.ndarray:
    """:func:`kernel_coupled` for every pair of centres, from frame inner products only."""
    x = _as_frames(x)
    omega = np.asarray(w.omega, dtype=np.float64)
    taps, _ = _tap_stack(x, omega.size)
    K = np.zeros((x.shape[0], x.shape[0]))
    for k in range(omega.size):
        for m in range(omega.size):
            K += omega[k] * omega[m] * (taps[k] @ taps[m].T) ** 2
    return K


def kernel_matrix_decoupled(x, w: PoolingWeights) -> np.ndarray:
    """:func:`kernel_decoupled` for every pair of centres."""
    x = _as_frames(x)
    p = np.asarray(w.p, dtype=np.float64)
    q = np.asarray(w.q, dtype=np.float64)
    taps, mask = _tap_stack(x, p.size)
    mu = np.einsum("k,ktd->td", p, taps)
    dev = (taps - mu[None]) * mask[:, :, None]
    K = mu @ mu.T
    for k in range(p.size):
        for m in range(p.size):
            K += q[k] * q[m] * (dev[k] @ dev[m].T) ** 2
    return K
