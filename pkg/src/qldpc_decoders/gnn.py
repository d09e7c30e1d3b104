"""Graph-neural-network syndrome decoder on the Tanner graph.

Variable nodes start from an affine embedding of their binary index, check
nodes from an affine embedding of their syndrome bit.  Each round first
updates the check nodes from variable->check messages, then the variable
nodes from check->variable messages computed with the *updated* check
embeddings.  Messages come from a two-layer MLP, are pooled with scaled
dot-product attention and fed to a GRU.  A two-layer MLP plus sigmoid on
the final variable embeddings gives p(e_i = 1 | s).

Batches share one graph; activations are node-major ``(nodes, batch, dim)``.
"""

from __future__ import annotations

import csv
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .codes import CssCode, TannerGraph, tanner_graph
from .channel import Dataset, SyndromeMap
from .nn import layers as L
from .nn import tensor as T
from .nn.optim import ParameterStore, adam_step, clip_global_norm, clip_values, load_checkpoint, save_checkpoint
from .nn.tensor import Tape, Tensor, incidence

log = logging.getLogger(__name__)


@dataclass
class GnnHyperparams:
    layers: int = 6
    embed: int = 128
    message: int | None = None  # defaults to embed
    hidden: int | None = None  # message-MLP hidden width, defaults to embed
    lr: float = 4e-4
    batch_size: int = 32
    clip: float = 0.5
    clip_mode: str = "global_norm"
    epochs: int = 200
    plateau_patience: int = 10
    plateau_tol: float = 1e-4
    seed: int = 0
    tied: bool = True
    schedule: str = "sequential"
    dtype: str = "float64"

    def __post_init__(self):
        if self.layers < 1 or self.embed < 1:
            raise ValueError("layers and embed must be >= 1")
        self.message = self.message or self.embed
        self.hidden = self.hidden or self.embed
        if self.message < 1 or self.hidden < 1:
            raise ValueError("message and hidden sizes must be >= 1")
        if self.schedule not in ("sequential", "simultaneous"):
            raise ValueError(f"unknown schedule {self.schedule!r}")
        if self.dtype not in ("float64", "float32"):
            raise ValueError(f"unsupported dtype {self.dtype!r}")
        if self.clip_mode not in ("global_norm", "value"):
            raise ValueError(f"unknown clip mode {self.clip_mode!r}")


def index_width(var_count: int) -> int:
    return max(1, math.ceil(math.log2(var_count)))


def index_features(var_count: int) -> np.ndarray:
    """LSB-first binary encoding of 0..var_count-1, shape (var_count, width)."""
    w = index_width(var_count)
    return ((np.arange(var_count)[:, None] >> np.arange(w)) & 1).astype(float)


def _layer_names(hp: GnnHyperparams, kind: str) -> list[str]:
    return [kind] if hp.tied else [f"{kind}{k}" for k in range(hp.layers)]


def init_params(graph: TannerGraph, hp: GnnHyperparams, rng: np.random.Generator) -> dict[str, np.ndarray]:
    s, u, hid = hp.embed, hp.message, hp.hidden
    p = {}
    p.update(L.linear_params(rng, index_width(graph.var_count), s, "enc_v"))
    p.update(L.linear_params(rng, 1, s, "enc_c"))
    for kind in ("layer_c", "layer_v"):
        for name in _layer_names(hp, kind):
            p.update(L.mlp2_params(rng, 2 * s, hid, u, f"{name}.msg"))
            p.update(L.attention_params(rng, s, u, f"{name}.att"))
            p.update(L.gru_params(rng, u, s, f"{name}.gru"))
    p.update(L.mlp2_params(rng, s, s, 1, "pred"))
    return p


class _Topology:
    def __init__(self, graph: TannerGraph, dtype=np.float64):
        self.graph = graph
        self.ev = graph.edge_var
        self.ec = graph.edge_check
        self.Sv = incidence(self.ev, graph.var_count, dtype)
        self.Sc = incidence(self.ec, graph.check_count, dtype)
        self.var_features = index_features(graph.var_count)


def _half_step(h_dst, h_src, dst_idx, src_idx, S_dst, S_src, params, name: str, u: int):
    """Messages src -> dst along every edge, attention pooling at dst, GRU update of dst."""
    W1 = params[f"{name}.msg.0.W"]
    s = h_dst.shape[-1]
    # first message layer on [h_src; h_dst], applied per node before gathering to edges
    a = T.matmul(h_src, T.getitem(W1, slice(0, s)))
    b = T.matmul(h_dst, T.getitem(W1, slice(s, 2 * s)))
    msg = T.edge_mlp(a, b, src_idx, dst_idx, S_src, S_dst,
                     params[f"{name}.msg.0.b"], params[f"{name}.msg.1.W"], params[f"{name}.msg.1.b"])
    # <W_q h, W_k m> = <W_q h W_k^T, m>: project the query once per node
    q = T.matmul(T.matmul(h_dst, params[f"{name}.att.q.W"]), T.transpose(params[f"{name}.att.k.W"]))
    pooled = T.edge_attention(msg, q, dst_idx, S_dst, 1.0 / math.sqrt(u))
    agg = T.matmul(pooled, params[f"{name}.att.v.W"])  # sum_i a_i W_v m_i
    return L.gru_cell(agg, h_dst, params, f"{name}.gru")


class GnnModel:
    def __init__(self, graph: TannerGraph, hp: GnnHyperparams, params: ParameterStore | None = None):
        self.graph = graph
        self.hp = hp
        self.dtype = np.dtype(hp.dtype)
        if params is None:
            params = ParameterStore(init_params(graph, hp, np.random.default_rng(hp.seed)), dtype=self.dtype)
        elif next(iter(params.values().values())).dtype != self.dtype:
            params = params.astype(self.dtype)
        self.params = params
        self.topo = _Topology(graph, self.dtype)
        expected = init_params(graph, hp, np.random.default_rng(0))
        if set(expected) != set(params) or any(expected[k].shape != params[k].shape for k in expected):
            raise ValueError("parameter set does not match this graph and hyperparameters")

    @classmethod
    def for_code(cls, code: CssCode, hp: GnnHyperparams) -> "GnnModel":
        return cls(tanner_graph(code), hp)

    # -- forward pieces ---------------------------------------------------

    def encode_features(self, syndromes: np.ndarray) -> tuple[Tensor, Tensor]:
        """Initial embeddings: (V, B, s) for variables and (C, B, s) for checks."""
        S = np.atleast_2d(np.asarray(syndromes, dtype=self.dtype))
        if S.shape[1] != self.graph.check_count:
            raise ValueError(f"syndrome width {S.shape[1]} != {self.graph.check_count} checks")
        B = S.shape[0]
        p = self.params
        hv = L.linear(Tensor(self.topo.var_features.astype(self.dtype)), p, "enc_v")  # (V, s)
        hv = T.add(T.reshape(hv, (hv.shape[0], 1, hv.shape[1])), np.zeros((1, B, 1), dtype=self.dtype))
        hc = L.linear(Tensor(S.T[:, :, None].copy()), p, "enc_c")  # (C, B, s)
        return hv, hc

    def message_pass_round(self, hv: Tensor, hc: Tensor, k: int) -> tuple[Tensor, Tensor]:
        t, p, u = self.topo, self.params, self.hp.message
        lc = "layer_c" if self.hp.tied else f"layer_c{k - 1}"
        lv = "layer_v" if self.hp.tied else f"layer_v{k - 1}"
        hc_new = _half_step(hc, hv, t.ec, t.ev, t.Sc, t.Sv, p, lc, u)
        src = hc_new if self.hp.schedule == "sequential" else hc
        hv_new = _half_step(hv, src, t.ev, t.ec, t.Sv, t.Sc, p, lv, u)
        return hv_new, hc_new

    def logits(self, hv: Tensor) -> Tensor:
        z = L.mlp2(hv, self.params, "pred")
        return T.reshape(z, z.shape[:-1])  # (V, B)

    def forward(self, syndromes: np.ndarray) -> Tensor:
        """Probabilities p(e_i = 1 | s) with shape (V, B)."""
        hv, hc = self.encode_features(syndromes)
        for k in range(1, self.hp.layers + 1):
            hv, hc = self.message_pass_round(hv, hc, k)
        return T.sigmoid(self.logits(hv))

    def predict_proba(self, syndromes: np.ndarray, batch: int = 256) -> np.ndarray:
        S = np.atleast_2d(np.asarray(syndromes))
        out = [self.forward(S[i : i + batch]).value.T for i in range(0, S.shape[0], batch)]
        return np.vstack(out) if out else np.zeros((0, self.graph.var_count))

    def decode_batch(self, syndromes: np.ndarray, prior=None) -> np.ndarray:
        return (self.predict_proba(syndromes) > 0.5).astype(np.uint8)

    # -- persistence --------------------------------------------------------

    def save(self, path: str | Path, metadata: dict | None = None) -> None:
        hp = asdict(self.hp)
        meta = {"graph": {"var_count": self.graph.var_count, "check_count": self.graph.check_count,
                          "edges": self.graph.edge_count}}
        meta.update(metadata or {})
        save_checkpoint(path, self.params, hp, meta, kind="gnn")

    @classmethod
    def load(cls, path: str | Path, graph: TannerGraph) -> tuple["GnnModel", dict]:
        store, hp, meta, kind = load_checkpoint(path)
        if kind != "gnn":
            raise ValueError(f"checkpoint holds a {kind!r} model, not a GNN")
        g = meta.get("graph", {})
        if g and (g["var_count"], g["check_count"], g["edges"]) != (graph.var_count, graph.check_count, graph.edge_count):
            raise ValueError(f"checkpoint was trained on a different graph {g}")
        return cls(graph, GnnHyperparams(**hp), store), meta


@dataclass
class DecodeOutput:
    probabilities: np.ndarray
    e_hat: np.ndarray
    syndrome_matched: bool


def gnn_decode(code: CssCode, s, model: GnnModel) -> DecodeOutput:
    bits = s.to_bits() if hasattr(s, "to_bits") else np.asarray(s, dtype=np.uint8)
    if model.graph.var_count != 2 * code.n or model.graph.check_count != code.m:
        raise ValueError("model graph does not match the code")
    probs = model.predict_proba(bits[None, :])[0]
    e_hat = (probs > 0.5).astype(np.uint8)
    matched = bool(np.array_equal(SyndromeMap(code)(e_hat)[0], bits))
    return DecodeOutput(probs, e_hat, matched)


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainingLog:
    epochs: list[int] = field(default_factory=list)
    mean_loss: list[float] = field(default_factory=list)
    wall_time: list[float] = field(default_factory=list)

    def write_csv(self, path: str | Path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "mean_loss", "wall_time_s"])
            for row in zip(self.epochs, self.mean_loss, self.wall_time):
                w.writerow([row[0], f"{row[1]:.8f}", f"{row[2]:.3f}"])


def batch_loss(model: GnnModel, syndromes: np.ndarray, errors: np.ndarray) -> Tensor:
    probs = model.forward(syndromes)
    return L.bce_loss(probs, np.asarray(errors, dtype=float).T)


def train_step(model: GnnModel, syndromes: np.ndarray, errors: np.ndarray) -> float:
    store = model.params
    store.zero_grad()
    with Tape() as tape:
        loss = batch_loss(model, syndromes, errors)
        tape.backward(loss)
    if model.hp.clip_mode == "global_norm":
        clip_global_norm(store, model.hp.clip)
    else:
        clip_values(store, model.hp.clip)
    adam_step(store, model.hp.lr)
    return float(loss.value)


def train_gnn(
    code: CssCode,
    dataset: Dataset,
    hp: GnnHyperparams,
    model: GnnModel | None = None,
    log_every: int = 0,
    checkpoint_path: str | Path | None = None,
    time_budget: float | None = None,
) -> tuple[GnnModel, TrainingLog]:
    """Minibatch Adam on mean BCE over all variable nodes of each minibatch.

    Stops after ``hp.epochs`` epochs, on a loss plateau (improvement below
    ``plateau_tol`` for ``plateau_patience`` epochs), or when ``time_budget``
    seconds have elapsed.  Passing ``model`` resumes training.
    """
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    dataset.verify(code)
    model = model or GnnModel.for_code(code, hp)
    rng = np.random.default_rng([hp.seed, model.params.step])
    history = TrainingLog()
    best, stale = np.inf, 0
    start = time.perf_counter()
    N = len(dataset)
    for epoch in range(1, hp.epochs + 1):
        order = rng.permutation(N)
        losses = []
        for bi in range(0, N, hp.batch_size):
            idx = order[bi : bi + hp.batch_size]
            losses.append(train_step(model, dataset.syndromes[idx], dataset.errors[idx]))
            if log_every and len(losses) % log_every == 0:
                log.info("epoch %d batch %d loss %.5f", epoch, len(losses), losses[-1])
        mean_loss = float(np.mean(losses))
        history.epochs.append(epoch)
        history.mean_loss.append(mean_loss)
        history.wall_time.append(time.perf_counter() - start)
        log.info("epoch %d mean loss %.6f (%.1fs)", epoch, mean_loss, history.wall_time[-1])
        if checkpoint_path is not None:
            model.save(checkpoint_path, _train_meta(code, dataset, history))
        if best - mean_loss > hp.plateau_tol:
            best, stale = mean_loss, 0
        else:
            stale += 1
            if stale >= hp.plateau_patience:
                break
        if time_budget is not None and history.wall_time[-1] > time_budget:
            break
    return model, history


def _train_meta(code: CssCode, dataset: Dataset, history: TrainingLog) -> dict:
    return {
        "code": code.name,
        "code_hash": code.digest(),
        "dataset": dataset.metadata,
        "epochs_run": len(history.epochs),
        "final_loss": history.mean_loss[-1] if history.mean_loss else None,
        "loss_history": history.mean_loss,
        "train_seconds": history.wall_time[-1] if history.wall_time else 0.0,
    }
