"""Opérations différentiables sur ``Tensor``.

Jeu d'opérations strictement nécessaire au réseau SOH/RUL : algèbre
élémentaire avec broadcasting numpy, matmul, conv1d (im2col + un seul
matmul), max-pooling, softmax, layer-norm, activations, réductions et
manipulations de forme. Chaque opération enregistre sa règle de gradient
via ``Tensor.from_op``.

Convention de forme : les opérations séquentielles acceptent (L, C) ou
(B, L, C) ; l'axe du temps est l'avant-dernier, les canaux le dernier.
"""

from typing import Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from autodiff.tensor import SliceGrad, Tensor
from utils.errors import ConfigError, ShapeError

_GELU_C = float(np.sqrt(2.0 / np.pi))
_GELU_K = 0.044715


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Somme ``grad`` sur les axes ajoutés/étendus par le broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _binary_shape_check(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError as exc:
        raise ShapeError(f"{op} : shapes incompatibles {a.shape} et {b.shape}") from exc


# ── Élémentaire ───────────────────────────────────────────────────────────────


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shape_check("add", a, b)

    def _bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return Tensor.from_op("add", a.data + b.data, (a, b), _bw)


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shape_check("sub", a, b)

    def _bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return Tensor.from_op("sub", a.data - b.data, (a, b), _bw)


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _binary_shape_check("mul", a, b)

    def _bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return Tensor.from_op("mul", a.data * b.data, (a, b), _bw)


def div(a, b) -> Tensor:
    """Division simple ; les appelants ajoutent leur epsilon (1e-8) au dénominateur."""
    a, b = as_tensor(a), as_tensor(b)
    _binary_shape_check("div", a, b)
    out = a.data / b.data

    def _bw(g):
        return (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * out / b.data, b.shape),
        )

    return Tensor.from_op("div", out, (a, b), _bw)


def neg(a) -> Tensor:
    a = as_tensor(a)
    return Tensor.from_op("neg", -a.data, (a,), lambda g: (-g,))


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):
        out = np.exp(a.data)
    return Tensor.from_op("exp", out, (a,), lambda g: (g * out,))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out = np.tanh(a.data)
    return Tensor.from_op("tanh", out, (a,), lambda g: (g * (1.0 - out * out),))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))  # forme stable de 1/(1+e^-x)
    return Tensor.from_op("sigmoid", out, (a,), lambda g: (g * out * (1.0 - out),))


def gelu(a) -> Tensor:
    """GeLU, approximation tanh."""
    a = as_tensor(a)
    x = a.data
    t = np.tanh(_GELU_C * (x + _GELU_K * x ** 3))
    out = 0.5 * x * (1.0 + t)

    def _bw(g):
        dt = (1.0 - t * t) * _GELU_C * (1.0 + 3.0 * _GELU_K * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * dt),)

    return Tensor.from_op("gelu", out, (a,), _bw)


def maximum(a, b) -> Tensor:
    """Maximum élément par élément ; à égalité le gradient va à ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    _binary_shape_check("maximum", a, b)
    take_a = a.data >= b.data

    def _bw(g):
        return (
            _unbroadcast(np.where(take_a, g, 0.0), a.shape),
            _unbroadcast(np.where(take_a, 0.0, g), b.shape),
        )

    return Tensor.from_op("maximum", np.maximum(a.data, b.data), (a, b), _bw)


# ── Réductions ────────────────────────────────────────────────────────────────


def sum(a, axis: int | None = None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def _bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return Tensor.from_op("sum", np.asarray(out), (a,), _bw)


def mean(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    n = a.data.size if axis is None else a.shape[axis]
    out = a.data.mean(axis=axis, keepdims=keepdims)

    def _bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g / n, a.shape).copy(),)

    return Tensor.from_op("mean", np.asarray(out), (a,), _bw)


def amax(a, axis: int, keepdims: bool = False) -> Tensor:
    """Maximum le long d'un axe ; gradient vers le premier argmax."""
    a = as_tensor(a)
    arg = np.expand_dims(a.data.argmax(axis=axis), axis)
    out = np.take_along_axis(a.data, arg, axis=axis)
    if not keepdims:
        out = out.squeeze(axis)

    def _bw(g):
        if not keepdims:
            g = np.expand_dims(g, axis)
        ga = np.zeros_like(a.data)
        np.put_along_axis(ga, arg, g, axis=axis)
        return (ga,)

    return Tensor.from_op("amax", out, (a,), _bw)


# ── Formes ────────────────────────────────────────────────────────────────────


def reshape(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    return Tensor.from_op(
        "reshape", a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),)
    )


def transpose_last_two(a) -> Tensor:
    a = as_tensor(a)
    if a.ndim < 2:
        raise ShapeError(f"transpose_last_two : rang ≥ 2 requis, reçu {a.shape}")
    return Tensor.from_op(
        "transpose", np.swapaxes(a.data, -1, -2), (a,), lambda g: (np.swapaxes(g, -1, -2),)
    )


def broadcast_to(a, shape: Sequence[int]) -> Tensor:
    a = as_tensor(a)
    out = np.broadcast_to(a.data, tuple(shape)).copy()
    return Tensor.from_op("broadcast_to", out, (a,), lambda g: (_unbroadcast(g, a.shape),))


def getitem(a, idx) -> Tensor:
    a = as_tensor(a)
    out = a.data[idx]
    parts = idx if isinstance(idx, tuple) else (idx,)
    advanced = any(isinstance(p, (np.ndarray, list)) for p in parts)

    def _bw(g):
        if not advanced:
            return (SliceGrad(idx, g, a.shape),)
        ga = np.zeros_like(a.data)
        np.add.at(ga, idx, g)
        return (ga,)

    return Tensor.from_op("getitem", np.array(out), (a,), _bw)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    """Concaténation le long d'un axe existant."""
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        raise ShapeError(
            f"concat : shapes incompatibles {[t.shape for t in tensors]}"
        ) from exc
    bounds = np.cumsum(sizes)[:-1]

    def _bw(g):
        return tuple(np.split(g, bounds, axis=axis))

    return Tensor.from_op("concat", out, tensors, _bw)


def split(a, sizes: Sequence[int], axis: int = -1) -> list[Tensor]:
    """Inverse de ``concat`` : découpe aux mêmes frontières."""
    a = as_tensor(a)
    if int(np.sum(sizes)) != a.shape[axis]:
        raise ShapeError(f"split : tailles {list(sizes)} ≠ dimension {a.shape[axis]}")
    axis = axis % a.ndim
    parts, start = [], 0
    for size in sizes:
        idx = tuple(slice(None) for _ in range(axis)) + (slice(start, start + size),)
        parts.append(getitem(a, idx))
        start += size
    return parts


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    """Empile sur un nouvel axe (sorties h_t de la récurrence)."""
    tensors = [as_tensor(t) for t in tensors]
    out = np.stack([t.data for t in tensors], axis=axis)

    def _bw(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return Tensor.from_op("stack", out, tensors, _bw)


def place_rows(base, rows, idx: np.ndarray) -> Tensor:
    """Remplace, par échantillon, les lignes ``idx`` de ``base`` par ``rows``.

    base : (B, L, d), rows : (B, U, d), idx : (B, U) indices distincts.
    """
    base, rows = as_tensor(base), as_tensor(rows)
    idx = np.asarray(idx, dtype=np.int64)
    bi = np.arange(base.shape[0])[:, None]
    out = base.data.copy()
    out[bi, idx] = rows.data

    def _bw(g):
        gb = g.copy()
        gb[bi, idx] = 0.0
        return gb, g[bi, idx]

    return Tensor.from_op("place_rows", out, (base, rows), _bw)


# ── Algèbre linéaire, convolution, pooling ───────────────────────────────────


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul : dimensions internes incompatibles {a.shape} · {b.shape}")

    def _bw(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return Tensor.from_op("matmul", a.data @ b.data, (a, b), _bw)


def linear(x, w, b=None) -> Tensor:
    """x·W (+ b) sur le dernier axe ; x peut être un simple vecteur."""
    x = as_tensor(x)
    if x.ndim == 1:
        out = reshape(matmul(reshape(x, (1, x.shape[0])), w), (as_tensor(w).shape[-1],))
    else:
        out = matmul(x, w)
    return out if b is None else add(out, b)


def _as_batch(x: np.ndarray) -> tuple[np.ndarray, bool]:
    if x.ndim == 2:
        return x[None], False
    if x.ndim == 3:
        return x, True
    raise ShapeError(f"séquence attendue (L, C) ou (B, L, C), reçu {x.shape}")


def conv1d(x, w, b) -> Tensor:
    """Corrélation 1-D stride 1, padding « same » par zéros.

    x : (L, Cin) ou (B, L, Cin) ; w : (k, Cin, Cout), k impair ; b : (Cout,).
    Abaissée en tampon im2col (B·L, k·Cin) et un seul matmul.
    """
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    k, cin, cout = w.shape
    if k % 2 == 0:
        raise ConfigError(f"conv1d : taille de noyau paire ({k}), padding same impossible")
    xd, batched = _as_batch(x.data)
    n_batch, length, channels = xd.shape
    if channels != cin:
        raise ShapeError(f"conv1d : entrée {x.shape} vs poids {w.shape} (Cin)")
    if b.shape != (cout,):
        raise ShapeError(f"conv1d : biais {b.shape} vs Cout={cout}")

    pad = (k - 1) // 2
    xp = np.pad(xd, ((0, 0), (pad, pad), (0, 0)))
    cols = sliding_window_view(xp, k, axis=1)  # (B, L, Cin, k)
    cols = cols.transpose(0, 1, 3, 2).reshape(n_batch * length, k * cin)
    wm = w.data.reshape(k * cin, cout)
    out = (cols @ wm + b.data).reshape(n_batch, length, cout)

    def _bw(g):
        gm = g.reshape(n_batch * length, cout)
        gw = (cols.T @ gm).reshape(k, cin, cout)
        gb = gm.sum(axis=0)
        dcols = (gm @ wm.T).reshape(n_batch, length, k, cin)
        gxp = np.zeros((n_batch, length + 2 * pad, cin))
        for j in range(k):
            gxp[:, j:j + length, :] += dcols[:, :, j, :]
        gx = gxp[:, pad:pad + length, :]
        return (gx if batched else gx[0]), gw, gb

    return Tensor.from_op("conv1d", out if batched else out[0], (x, w, b), _bw)


def maxpool1d(x, k: int = 3) -> Tensor:
    """Max glissant par canal, stride 1, padding same à -inf.

    Gradient routé vers le premier indice maximal de chaque fenêtre.
    """
    x = as_tensor(x)
    if k % 2 == 0:
        raise ConfigError(f"maxpool1d : taille de fenêtre paire ({k})")
    xd, batched = _as_batch(x.data)
    _, length, _ = xd.shape
    pad = (k - 1) // 2
    xp = np.pad(xd, ((0, 0), (pad, pad), (0, 0)), constant_values=-np.inf)
    win = sliding_window_view(xp, k, axis=1)  # (B, L, C, k)
    arg = win.argmax(axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]

    def _bw(g):
        g3 = g if batched else g[None]
        gxp = np.zeros_like(xp)
        for j in range(k):
            gxp[:, j:j + length, :] += np.where(arg == j, g3, 0.0)
        gx = gxp[:, pad:pad + length, :]
        return (gx if batched else gx[0],)

    return Tensor.from_op("maxpool1d", out if batched else out[0], (x,), _bw)


# ── Normalisation ─────────────────────────────────────────────────────────────


def softmax(x, axis: int = -1) -> Tensor:
    """Softmax stabilisée par soustraction du maximum."""
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def _bw(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return Tensor.from_op("softmax", out, (x,), _bw)


def layer_norm(x, gain, offset, eps: float = 1e-5) -> Tensor:
    """Normalisation sur le dernier axe (canaux), puis gain/offset appris."""
    x, gain, offset = as_tensor(x), as_tensor(gain), as_tensor(offset)
    n = x.shape[-1]
    if gain.shape != (n,) or offset.shape != (n,):
        raise ShapeError(f"layer_norm : gain {gain.shape}/offset {offset.shape} vs C={n}")
    xc = x.data - x.data.mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv
    out = xhat * gain.data + offset.data

    def _bw(g):
        dxhat = g * gain.data
        gx = (inv / n) * (
            n * dxhat
            - dxhat.sum(axis=-1, keepdims=True)
            - xhat * (dxhat * xhat).sum(axis=-1, keepdims=True)
        )
        return gx, _unbroadcast(g * xhat, gain.shape), _unbroadcast(g, offset.shape)

    return Tensor.from_op("layer_norm", out, (x, gain, offset), _bw)
