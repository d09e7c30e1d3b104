"""Neural building blocks used by the GNN and neural-BP decoders.

Every block is a plain function of input tensors and a dict of parameter
tensors, so the same code runs on a tape (training) or without one
(inference).
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .tensor import ShapeError, Tensor

BCE_EPS = 1e-7


def glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=(fan_in, fan_out))


def linear_params(rng, fan_in: int, fan_out: int, prefix: str, bias: bool = True) -> dict[str, np.ndarray]:
    p = {f"{prefix}.W": glorot(rng, fan_in, fan_out)}
    if bias:
        p[f"{prefix}.b"] = np.zeros(fan_out)
    return p


def linear(x, params, prefix: str) -> Tensor:
    W = params[f"{prefix}.W"]
    if x.shape[-1] != W.shape[0]:
        raise ShapeError(f"linear {prefix}: input dim {x.shape[-1]} != weight rows {W.shape[0]}")
    y = T.matmul(x, W)
    b = params.get(f"{prefix}.b")
    return y if b is None else T.add(y, b)


def mlp2_params(rng, d_in: int, d_hidden: int, d_out: int, prefix: str) -> dict[str, np.ndarray]:
    return {**linear_params(rng, d_in, d_hidden, f"{prefix}.0"), **linear_params(rng, d_hidden, d_out, f"{prefix}.1")}


def mlp2(x, params, prefix: str) -> Tensor:
    """Linear -> ReLU -> Linear; any output activation is the caller's business."""
    return linear(T.relu(linear(x, params, f"{prefix}.0")), params, f"{prefix}.1")


def gru_params(rng, d_in: int, d_hidden: int, prefix: str) -> dict[str, np.ndarray]:
    p = {}
    for gate in ("r", "z", "h"):
        p.update(linear_params(rng, d_in + d_hidden, d_hidden, f"{prefix}.{gate}"))
    return p


def gru_cell(x, h, params, prefix: str) -> Tensor:
    """Single GRU step: h' = (1 - z) * h + z * tanh(W_h [x; r * h] + b_h)."""
    x, h = T.as_tensor(x), T.as_tensor(h)
    if x.shape[:-1] != h.shape[:-1]:
        raise ShapeError(f"gru {prefix}: input {x.shape} and hidden {h.shape} disagree on leading dims")
    xh = T.concat([x, h], axis=-1)
    r = T.sigmoid(linear(xh, params, f"{prefix}.r"))
    z = T.sigmoid(linear(xh, params, f"{prefix}.z"))
    cand = T.tanh(linear(T.concat([x, T.mul(r, h)], axis=-1), params, f"{prefix}.h"))
    return T.add(h, T.mul(z, T.sub(cand, h)))


def attention_params(rng, d_query: int, d_msg: int, prefix: str) -> dict[str, np.ndarray]:
    return {
        **linear_params(rng, d_query, d_msg, f"{prefix}.q", bias=False),
        **linear_params(rng, d_msg, d_msg, f"{prefix}.k", bias=False),
        **linear_params(rng, d_msg, d_msg, f"{prefix}.v", bias=False),
    }


def attention_aggregate(dest, messages, params, prefix: str) -> Tensor:
    """Scaled dot-product attention of one node over its incoming messages.

    ``dest`` is (s,), ``messages`` a list of (u,) tensors.  No messages gives
    the zero vector.
    """
    u = params[f"{prefix}.v.W"].shape[1]
    if not messages:
        return Tensor(np.zeros(u))
    M = T.concat([T.reshape(m, (1, -1)) for m in messages], axis=0)  # (k, u)
    q = linear(T.reshape(dest, (1, -1)), params, f"{prefix}.q")  # (1, u)
    keys = linear(M, params, f"{prefix}.k")  # (k, u)
    scores = T.mul(T.sum(T.mul(keys, q), axis=-1), 1.0 / math.sqrt(u))
    alpha = T.softmax(scores, axis=0)
    values = linear(M, params, f"{prefix}.v")
    return T.sum(T.mul(T.reshape(alpha, (-1, 1)), values), axis=0)


def attention_weights(dest, messages, params, prefix: str) -> np.ndarray:
    u = params[f"{prefix}.v.W"].shape[1]
    M = np.stack([T.as_tensor(m).value for m in messages])
    q = T.as_tensor(dest).value @ T.as_tensor(params[f"{prefix}.q.W"]).value
    s = (M @ T.as_tensor(params[f"{prefix}.k.W"]).value) @ q / math.sqrt(u)
    s = np.exp(s - s.max())
    return s / s.sum()


def bce_loss(pred, labels, eps: float = BCE_EPS) -> Tensor:
    """Mean binary cross-entropy over every entry; predictions clamped to [eps, 1-eps]."""
    pred = T.as_tensor(pred)
    y = np.asarray(labels, dtype=pred.value.dtype)
    if pred.shape != y.shape:
        raise ShapeError(f"bce_loss: predictions {pred.shape} vs labels {y.shape}")
    p = T.clip(pred, eps, 1.0 - eps)
    ll = T.add(T.mul(T.log(p), y), T.mul(T.log(T.sub(1.0, p)), 1.0 - y))
    return T.mul(T.sum(ll), -1.0 / y.size)
