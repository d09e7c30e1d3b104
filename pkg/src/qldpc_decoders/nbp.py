"""Neural belief propagation: BP with learnable edge weights and prior scales.

Iteration t sends variable-to-check messages

    v2c = b_v[t] * llr_v + sum_{c' != c} w[t, c'v] * c2v[c'v]

and the usual tanh-product check update.  The posterior read out after any
iteration uses the final weight set (index T).  With every weight and scale
equal to one this is exactly plain BP.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass

import numpy as np

from .bp import BatchBpResult, BpConfig, BpResult, GraphOps, _prior_vector, flooding_iterations, saturation_bound
from .channel import Dataset, prior_llr
from .codes import CssCode, TannerGraph, tanner_graph
from .gf2 import BinVector
from .gnn import TrainingLog
from .nn import layers as L
from .nn import tensor as T
from .nn.optim import ParameterStore, adam_step, clip_global_norm, clip_values, load_checkpoint, save_checkpoint
from .nn.tensor import Tape, Tensor

log = logging.getLogger(__name__)


@dataclass
class NbpHyperparams:
    iterations: int = 12
    llr_clamp: float = 20.0
    lr: float = 4e-4
    batch_size: int = 32
    clip: float = 0.5
    clip_mode: str = "global_norm"
    epochs: int = 200
    plateau_patience: int = 10
    plateau_tol: float = 1e-4
    seed: int = 0
    tied: bool = False

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.clip_mode not in ("global_norm", "value"):
            raise ValueError(f"unknown clip mode {self.clip_mode!r}")


class NbpModel:
    """Per-iteration edge weights (T+1, E) and prior scales (T+1, V).

    Row T is the readout set.  With ``tied`` a single row is shared by every
    iteration and the readout.
    """

    def __init__(self, graph: TannerGraph, hp: NbpHyperparams = NbpHyperparams(), params: ParameterStore | None = None):
        self.graph = graph
        self.hp = hp
        rows = 1 if hp.tied else hp.iterations + 1
        if params is None:
            params = ParameterStore({
                "edge_weights": np.ones((rows, graph.edge_count)),
                "prior_scales": np.ones((rows, graph.var_count)),
            })
        if params["edge_weights"].shape != (rows, graph.edge_count) or params["prior_scales"].shape != (rows, graph.var_count):
            raise ValueError("NBP parameters do not match this graph and iteration count")
        self.params = params
        self.ops = GraphOps(graph)

    @classmethod
    def for_code(cls, code: CssCode, hp: NbpHyperparams = NbpHyperparams()) -> "NbpModel":
        return cls(tanner_graph(code), hp)

    def _expanded(self, name: str) -> np.ndarray:
        v = self.params[name].value
        return np.repeat(v, self.hp.iterations + 1, axis=0) if self.hp.tied else v

    @property
    def edge_weights(self) -> np.ndarray:
        return self._expanded("edge_weights")

    @property
    def prior_scales(self) -> np.ndarray:
        return self._expanded("prior_scales")

    def bp_config(self, early_stop: bool = True) -> BpConfig:
        return BpConfig(self.hp.iterations, self.hp.llr_clamp, early_stop)

    def decode_batch(self, syndromes: np.ndarray, prior) -> BatchBpResult:
        S = np.atleast_2d(np.asarray(syndromes, dtype=np.uint8))
        if S.shape[1] != self.graph.check_count:
            raise ValueError(f"syndrome width {S.shape[1]} != {self.graph.check_count} checks")
        hard, post, conv, iters = flooding_iterations(
            self.ops, S.T.copy(), _prior_vector(prior, self.graph.var_count), self.hp.iterations,
            self.hp.llr_clamp, True, edge_weights=self.edge_weights, prior_scales=self.prior_scales,
        )
        return BatchBpResult(hard.T.copy(), post.T.copy(), conv, iters)

    # -- differentiable unrolled forward ------------------------------------

    def forward(self, syndromes: np.ndarray, prior) -> Tensor:
        """Posterior LLRs (V, B) after all iterations, recorded on the active tape."""
        ops, g = self.ops, self.graph
        S = np.atleast_2d(np.asarray(syndromes, dtype=np.uint8)).T  # (C, B)
        B = S.shape[1]
        clamp = self.hp.llr_clamp
        bound = saturation_bound(clamp)
        prior = _prior_vector(prior, g.var_count)[:, None] * np.ones((1, B))
        sign = 1.0 - 2.0 * S[g.edge_check].astype(float)
        Sv = ops.var_sum
        W, P = self.params["edge_weights"], self.params["prior_scales"]
        shape = ops.pad_mask.shape

        def row(param, t):
            r = T.getitem(param, 0 if self.hp.tied else t)
            return T.reshape(r, (r.shape[0], 1))

        c2v = Tensor(np.zeros((g.edge_count, B)))
        for it in range(self.hp.iterations):
            wc2v = T.mul(c2v, row(W, it))
            total = T.segment_sum(wc2v, Sv)
            base = T.mul(prior, row(P, it))
            v2c = T.clip(T.sub(T.gather(T.add(base, total), g.edge_var), wc2v), -clamp, clamp)
            prod = T.padded_loo_product(T.tanh(T.mul(v2c, 0.5)), ops.pad_check, ops.pad_slot, shape)
            msg = T.mul(T.atanh(T.clip(prod, -bound, bound)), 2.0)
            c2v = T.mul(T.clip(msg, -clamp, clamp), sign)
        readout = T.mul(c2v, row(W, self.hp.iterations))
        return T.add(T.mul(prior, row(P, self.hp.iterations)), T.segment_sum(readout, Sv))

    # -- persistence ----------------------------------------------------------

    def save(self, path, metadata: dict | None = None) -> None:
        meta = {"graph": {"var_count": self.graph.var_count, "check_count": self.graph.check_count,
                          "edges": self.graph.edge_count}}
        meta.update(metadata or {})
        save_checkpoint(path, self.params, asdict(self.hp), meta, kind="nbp")

    @classmethod
    def load(cls, path, graph: TannerGraph) -> tuple["NbpModel", dict]:
        store, hp, meta, kind = load_checkpoint(path)
        if kind != "nbp":
            raise ValueError(f"checkpoint holds a {kind!r} model, not NBP")
        return cls(graph, NbpHyperparams(**hp), store), meta


def nbp_decode(graph: TannerGraph, s, prior, model: NbpModel, trace: bool = False) -> BpResult:
    if model.graph.edge_count != graph.edge_count or model.graph.var_count != graph.var_count \
            or model.graph.check_count != graph.check_count:
        raise ValueError("NBP model was built for a different graph")
    bits = s.to_bits() if isinstance(s, BinVector) else np.asarray(s, dtype=np.uint8)
    if bits.size != graph.check_count:
        raise ValueError(f"syndrome length {bits.size} != {graph.check_count} checks")
    history: list | None = [] if trace else None
    hard, post, conv, iters = flooding_iterations(
        model.ops, bits[:, None].copy(), _prior_vector(prior, graph.var_count), model.hp.iterations,
        model.hp.llr_clamp, True, edge_weights=model.edge_weights, prior_scales=model.prior_scales, trace=history,
    )
    return BpResult(hard[:, 0].copy(), post[:, 0].copy(), bool(conv[0]), int(iters[0]), history or [])


def nbp_loss(model: NbpModel, syndromes: np.ndarray, errors: np.ndarray, prior) -> Tensor:
    """Mean BCE between P(bit = 1) = sigmoid(-posterior) and the true error bits."""
    post = model.forward(syndromes, prior)
    return L.bce_loss(T.sigmoid(T.mul(post, -1.0)), np.asarray(errors, dtype=float).T)


def train_nbp(code: CssCode, dataset: Dataset, hp: NbpHyperparams, model: NbpModel | None = None,
              p_f: float | None = None, time_budget: float | None = None) -> tuple[NbpModel, TrainingLog]:
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    dataset.verify(code)
    p_f = p_f if p_f is not None else dataset.metadata.get("p_f")
    if p_f is None:
        raise ValueError("channel p_f is needed for the prior; it is missing from the dataset metadata")
    prior = prior_llr(p_f)
    model = model or NbpModel.for_code(code, hp)
    store = model.params
    rng = np.random.default_rng([hp.seed, store.step])
    history = TrainingLog()
    best, stale = np.inf, 0
    start = time.perf_counter()
    N = len(dataset)
    for epoch in range(1, hp.epochs + 1):
        order = rng.permutation(N)
        losses = []
        for bi in range(0, N, hp.batch_size):
            idx = order[bi : bi + hp.batch_size]
            store.zero_grad()
            with Tape() as tape:
                loss = nbp_loss(model, dataset.syndromes[idx], dataset.errors[idx], prior)
                tape.backward(loss)
            if hp.clip_mode == "global_norm":
                clip_global_norm(store, hp.clip)
            else:
                clip_values(store, hp.clip)
            adam_step(store, hp.lr)
            losses.append(float(loss.value))
        history.epochs.append(epoch)
        history.mean_loss.append(float(np.mean(losses)))
        history.wall_time.append(time.perf_counter() - start)
        log.info("epoch %d mean loss %.6f", epoch, history.mean_loss[-1])
        if best - history.mean_loss[-1] > hp.plateau_tol:
            best, stale = history.mean_loss[-1], 0
        else:
            stale += 1
            if stale >= hp.plateau_patience:
                break
        if time_budget is not None and history.wall_time[-1] > time_budget:
            break
    return model, history
