"""Numpy building blocks with hand-written backward passes.

Every ``*_forward`` returns ``(output, backward)``.  ``backward(d_output)``
adds parameter gradients into the ``grads`` dict it was given and returns
the gradient with respect to the layer input(s).
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

Grads = dict[str, np.ndarray]
Backward = Callable[[np.ndarray], np.ndarray]

_GELU_C = math.sqrt(2.0 / math.pi)


class ShapeError(ValueError):
    pass


def _acc(grads: Grads | None, name: str, g: np.ndarray) -> None:
    if grads is None:
        return
    if name in grads:
        grads[name] += g
    else:
        grads[name] = g.copy()


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    m = np.max(x, axis=axis, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    e = np.exp(x - m)
    return e / np.sum(e, axis=axis, keepdims=True)


def gelu(x: np.ndarray) -> np.ndarray:
    """tanh approximation."""
    return 0.5 * x * (1.0 + np.tanh(_GELU_C * (x + 0.044715 * x ** 3)))


def gelu_grad(x: np.ndarray) -> np.ndarray:
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    return 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * x * x)


def dropout_forward(x: np.ndarray, p: float, rng: np.random.Generator | None,
                    training: bool) -> tuple[np.ndarray, Backward]:
    if not training or p == 0.0:
        return x, lambda d: d
    if rng is None:
        raise ValueError("training-mode dropout needs an rng")
    keep = 1.0 - p
    mask = (rng.random(x.shape) < keep) / keep
    return x * mask, lambda d: d * mask


def apply_dropout(x: np.ndarray, p: float, rng: np.random.Generator | None,
                  training: bool) -> np.ndarray:
    """Inverted dropout: zero with probability ``p``, scale survivors by 1/(1-p)."""
    if not 0.0 <= p < 1.0:
        raise ValueError(f"dropout rate {p} outside [0, 1)")
    return dropout_forward(x, p, rng, training)[0]


def linear_forward(x: np.ndarray, w: dict, name: str, grads: Grads | None) -> tuple[np.ndarray, Backward]:
    W, b = w[f"{name}.weight"], w[f"{name}.bias"]
    if x.shape[-1] != W.shape[0]:
        raise ShapeError(f"{name}: input width {x.shape[-1]} != weight rows {W.shape[0]}")
    y = x @ W + b

    def backward(dy):
        flat_x = x.reshape(-1, x.shape[-1])
        flat_dy = dy.reshape(-1, dy.shape[-1])
        _acc(grads, f"{name}.weight", flat_x.T @ flat_dy)
        _acc(grads, f"{name}.bias", flat_dy.sum(axis=0))
        return dy @ W.T

    return y, backward


def layer_norm_forward(x: np.ndarray, w: dict, name: str, grads: Grads | None,
                       eps: float) -> tuple[np.ndarray, Backward]:
    g, b = w[f"{name}.scale"], w[f"{name}.bias"]
    mu = x.mean(axis=-1, keepdims=True)
    xc = x - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat * g + b

    def backward(dy):
        D = x.shape[-1]
        _acc(grads, f"{name}.scale", (dy * xhat).reshape(-1, D).sum(axis=0))
        _acc(grads, f"{name}.bias", dy.reshape(-1, D).sum(axis=0))
        dxhat = dy * g
        return inv * (dxhat - dxhat.mean(axis=-1, keepdims=True)
                      - xhat * (dxhat * xhat).mean(axis=-1, keepdims=True))

    return y, backward


def layer_norm(x: np.ndarray, eps: float = 1e-12) -> np.ndarray:
    """Normalization only (unit scale, zero bias)."""
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps)


def attention(q: np.ndarray, k: np.ndarray, v: np.ndarray, mask: np.ndarray | None = None,
              p_drop: float = 0.0, rng: np.random.Generator | None = None,
              training: bool = False) -> tuple[np.ndarray, np.ndarray]:
    """Scaled dot-product attention over the last two axes.

    ``mask`` is boolean, True where a query may attend to a key, and must
    broadcast to ``(..., Tq, Tk)``.  Returns ``(context, weights)`` where
    ``weights`` are the pre-dropout softmax probabilities.
    """
    out, weights, _ = attention_forward(q, k, v, mask, p_drop, rng, training)
    return out, weights


def attention_forward(q, k, v, mask, p_drop, rng, training):
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"key: head width {k.shape[-1]} != query head width {q.shape[-1]}")
    if k.shape[-2] != v.shape[-2]:
        raise ShapeError(f"value: length {v.shape[-2]} != key length {k.shape[-2]}")
    if q.shape[:-2] != k.shape[:-2] or k.shape[:-2] != v.shape[:-2]:
        raise ShapeError(f"query/key/value batch shapes differ: {q.shape}, {k.shape}, {v.shape}")
    scale = 1.0 / math.sqrt(q.shape[-1])
    scores = (q @ np.swapaxes(k, -1, -2)) * scale
    if mask is not None:
        mask = np.asarray(mask, dtype=bool)
        try:
            allowed = np.broadcast_to(mask, scores.shape)
        except ValueError:
            raise ShapeError(f"mask: shape {mask.shape} does not broadcast to {scores.shape}") from None
        if not allowed.any(axis=-1).all():
            raise ValueError("mask leaves a query row with no key to attend to")
        scores = np.where(allowed, scores, -np.inf)
    weights = softmax(scores)
    dropped, drop_bwd = dropout_forward(weights, p_drop, rng, training)
    out = dropped @ v

    def backward(dout):
        dv = np.swapaxes(dropped, -1, -2) @ dout
        dw = drop_bwd(dout @ np.swapaxes(v, -1, -2))
        dscores = weights * (dw - (dw * weights).sum(axis=-1, keepdims=True)) * scale
        dq = dscores @ k
        dk = np.swapaxes(dscores, -1, -2) @ q
        return dq, dk, dv

    return out, weights, backward


def _split_heads(x: np.ndarray, n_heads: int) -> np.ndarray:
    B, T, D = x.shape
    return x.reshape(B, T, n_heads, D // n_heads).transpose(0, 2, 1, 3)


def _merge_heads(x: np.ndarray) -> np.ndarray:
    B, H, T, d = x.shape
    return x.transpose(0, 2, 1, 3).reshape(B, T, H * d)


def multi_head_attention_forward(x_q: np.ndarray, x_kv: np.ndarray, mask: np.ndarray | None,
                                 w: dict, name: str, n_heads: int, p_drop: float,
                                 rng, training: bool, grads: Grads | None):
    """Project, attend per head, concatenate, project out.

    ``mask`` has shape ``(B, Tq, Tk)`` (broadcast over heads).  Returns
    ``(output, weights, backward)``; ``backward`` returns ``(d_x_q, d_x_kv)``.
    """
    q, bq = linear_forward(x_q, w, f"{name}.q", grads)
    k, bk = linear_forward(x_kv, w, f"{name}.k", grads)
    v, bv = linear_forward(x_kv, w, f"{name}.v", grads)
    qh, kh, vh = (_split_heads(t, n_heads) for t in (q, k, v))
    m = None if mask is None else mask[:, None, :, :]
    ctx, weights, attn_bwd = attention_forward(qh, kh, vh, m, p_drop, rng, training)
    out, bo = linear_forward(_merge_heads(ctx), w, f"{name}.o", grads)

    def backward(dout):
        dctx = _split_heads(bo(dout), n_heads)
        dqh, dkh, dvh = attn_bwd(dctx)
        dxq = bq(_merge_heads(dqh))
        dxkv = bk(_merge_heads(dkh)) + bv(_merge_heads(dvh))
        return dxq, dxkv

    return out, weights, backward


def feed_forward_forward(x: np.ndarray, w: dict, name: str, grads: Grads | None):
    h, b1 = linear_forward(x, w, f"{name}.in", grads)
    a = gelu(h)
    y, b2 = linear_forward(a, w, f"{name}.out", grads)

    def backward(dy):
        return b1(b2(dy) * gelu_grad(h))

    return y, backward
