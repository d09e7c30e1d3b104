"""Parameter storage, Adam, gradient clipping and checkpoint files."""

from __future__ import annotations

import base64
import json
from pathlib import Path
from typing import Any, Iterator

import numpy as np

from .tensor import Tensor

CHECKPOINT_VERSION = 1


class ParameterStore:
    """Named trainable tensors plus Adam moment estimates."""

    def __init__(self, arrays: dict[str, np.ndarray] | None = None, dtype=np.float64):
        self.params: dict[str, Tensor] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.step = 0
        for name, arr in (arrays or {}).items():
            self.add(name, np.asarray(arr, dtype=dtype))

    def add(self, name: str, value: np.ndarray) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = Tensor(np.array(value, copy=True), requires_grad=True, name=name)
        self.params[name] = t
        self.m[name] = np.zeros_like(t.value)
        self.v[name] = np.zeros_like(t.value)
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def get(self, name: str, default=None):
        return self.params.get(name, default)

    def __iter__(self) -> Iterator[str]:
        return iter(self.params)

    def items(self):
        return self.params.items()

    def size(self) -> int:
        return int(sum(t.value.size for t in self.params.values()))

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    def flat(self) -> np.ndarray:
        return np.concatenate([t.value.ravel() for t in self.params.values()])

    def flat_grad(self) -> np.ndarray:
        return np.concatenate([t.grad.ravel() for t in self.params.values()])

    def set_flat(self, vec: np.ndarray) -> None:
        i = 0
        for t in self.params.values():
            n = t.value.size
            t.value[...] = vec[i : i + n].reshape(t.value.shape)
            i += n

    def values(self) -> dict[str, np.ndarray]:
        return {k: t.value for k, t in self.params.items()}

    def astype(self, dtype) -> "ParameterStore":
        out = ParameterStore({k: t.value for k, t in self.params.items()}, dtype=dtype)
        out.step = self.step
        for k in self.params:
            out.m[k] = self.m[k].astype(dtype)
            out.v[k] = self.v[k].astype(dtype)
        return out


def _require_grads(store: ParameterStore) -> None:
    missing = [k for k, t in store.items() if t.grad is None]
    if missing:
        raise RuntimeError(f"no gradient for parameters {missing[:5]}{'...' if len(missing) > 5 else ''}")


def global_grad_norm(store: ParameterStore) -> float:
    _require_grads(store)
    return float(np.sqrt(sum(float(np.vdot(t.grad, t.grad)) for _, t in store.items())))


def clip_global_norm(store: ParameterStore, max_norm: float = 0.5) -> float:
    """Rescale all gradients so their joint L2 norm is at most ``max_norm``; returns the pre-clip norm."""
    norm = global_grad_norm(store)
    if norm > max_norm:
        scale = max_norm / norm
        for _, t in store.items():
            t.grad = t.grad * scale  # gradients may share buffers, so never scale in place
    return norm


def clip_values(store: ParameterStore, limit: float = 0.5) -> None:
    _require_grads(store)
    for _, t in store.items():
        t.grad = np.clip(t.grad, -limit, limit)


def adam_step(store: ParameterStore, lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8) -> None:
    _require_grads(store)
    store.step += 1
    c1 = 1.0 - beta1**store.step
    c2 = 1.0 - beta2**store.step
    for name, t in store.items():
        g = t.grad
        m = store.m[name]
        v = store.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        t.value -= lr * (m / c1) / (np.sqrt(v / c2) + eps)


# ---------------------------------------------------------------------------
# checkpoint files: JSON with base64 little-endian float64 payloads


def _encode(arr: np.ndarray) -> dict[str, Any]:
    data = np.ascontiguousarray(arr, dtype="<f8").tobytes()
    return {"shape": list(arr.shape), "data": base64.b64encode(data).decode("ascii")}


def _decode(doc: dict[str, Any]) -> np.ndarray:
    raw = base64.b64decode(doc["data"])
    return np.frombuffer(raw, dtype="<f8").reshape(doc["shape"]).astype(np.float64)


def save_checkpoint(path: str | Path, store: ParameterStore, hyperparams: dict, metadata: dict, kind: str) -> None:
    doc = {
        "format_version": CHECKPOINT_VERSION,
        "kind": kind,
        "hyperparams": hyperparams,
        "parameters": {k: _encode(t.value) for k, t in store.items()},
        "optimizer": {
            "step": store.step,
            "m": {k: _encode(a) for k, a in store.m.items()},
            "v": {k: _encode(a) for k, a in store.v.items()},
        },
        "metadata": metadata,
    }
    Path(path).write_text(json.dumps(doc) + "\n")


def load_checkpoint(path: str | Path) -> tuple[ParameterStore, dict, dict, str]:
    doc = json.loads(Path(path).read_text())
    if doc.get("format_version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {doc.get('format_version')}")
    store = ParameterStore({k: _decode(v) for k, v in doc["parameters"].items()})
    opt = doc.get("optimizer")
    if opt:
        store.step = int(opt["step"])
        for k in store:
            store.m[k] = _decode(opt["m"][k])
            store.v[k] = _decode(opt["v"][k])
    return store, doc["hyperparams"], doc.get("metadata", {}), doc["kind"]
