"""Syndrome belief propagation with a flooding schedule.

Messages are LLRs log(P(e=0)/P(e=1)).  All arrays are edge-major: an
``(E, B)`` array holds one column per syndrome in the batch, so a whole batch
of syndromes is decoded with the same vectorised updates.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .codes import CssCode, TannerGraph, tanner_graph
from .gf2 import BinVector


@dataclass(frozen=True)
class BpConfig:
    max_iter: int = 12
    llr_clamp: float = 20.0
    early_stop: bool = True

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not self.llr_clamp > 0:
            raise ValueError("llr_clamp must be positive")


@dataclass
class BpResult:
    e_hat: np.ndarray
    posterior_llr: np.ndarray
    converged: bool
    iterations_used: int
    history: list = field(default_factory=list, repr=False)


@dataclass
class BatchBpResult:
    e_hat: np.ndarray  # (B, V)
    posterior_llr: np.ndarray  # (B, V)
    converged: np.ndarray  # (B,)
    iterations_used: np.ndarray  # (B,)

    def __getitem__(self, i: int) -> BpResult:
        return BpResult(self.e_hat[i], self.posterior_llr[i], bool(self.converged[i]), int(self.iterations_used[i]))


class GraphOps:
    """Index structures for vectorised message passing on one Tanner graph."""

    def __init__(self, graph: TannerGraph):
        self.graph = graph
        E, V, C = graph.edge_count, graph.var_count, graph.check_count
        ones = np.ones(E)
        # (V, E) and (C, E) incidence matrices: row sums over a node's edges
        self.var_sum = sp.csr_matrix((ones, (graph.edge_var, np.arange(E))), shape=(V, E))
        self.check_sum = sp.csr_matrix((ones, (graph.edge_check, np.arange(E))), shape=(C, E))
        self.H = sp.csr_matrix((ones.astype(np.int64), (graph.edge_check, graph.edge_var)), shape=(C, V))
        deg = graph.check_degrees()
        self.max_check_degree = int(deg.max(initial=0))
        D = max(self.max_check_degree, 1)
        # padded (C, D) layout; edges are sorted by check so row-major order is edge order
        slot = np.arange(E) - np.repeat(np.cumsum(deg) - deg, deg)
        self.pad_mask = np.zeros((C, D), dtype=bool)
        self.pad_mask[graph.edge_check, slot] = True
        self.pad_check = graph.edge_check
        self.pad_slot = slot

    def to_padded(self, edge_values: np.ndarray, fill: float) -> np.ndarray:
        C, D = self.pad_mask.shape
        out = np.full((C, D) + edge_values.shape[1:], fill, dtype=edge_values.dtype)
        out[self.pad_check, self.pad_slot] = edge_values
        return out

    def from_padded(self, padded: np.ndarray) -> np.ndarray:
        return padded[self.pad_check, self.pad_slot]

    def syndrome_of(self, hard: np.ndarray) -> np.ndarray:
        """Syndromes of hard decisions given as (V, B); returns (C, B)."""
        return (self.H @ hard.astype(np.int64)) & 1


def loo_product(padded: np.ndarray) -> np.ndarray:
    """Leave-one-out products along axis 1 via exclusive prefix/suffix products.

    No division, so exact zeros are handled correctly.
    """
    D = padded.shape[1]
    prefix = np.ones_like(padded)
    suffix = np.ones_like(padded)
    if D > 1:
        prefix[:, 1:] = np.cumprod(padded[:, :-1], axis=1)
        suffix[:, :-1] = np.cumprod(padded[:, :0:-1], axis=1)[:, ::-1]
    return prefix * suffix


def check_node_update(incoming, s_c: int, llr_clamp: float = 20.0) -> np.ndarray:
    """Outgoing check-to-variable LLRs for one check node.

    Output j is (-1)^s_c * 2 atanh(prod_{i != j} tanh(in_i / 2)).  A degree-1
    check has an empty product (+1) and emits (-1)^s_c * llr_clamp.
    """
    x = np.clip(np.asarray(incoming, dtype=float), -llr_clamp, llr_clamp)
    t = np.tanh(x / 2.0)[None, :]
    out = _tanh_product_to_llr(loo_product(t)[0], llr_clamp)
    return -out if s_c else out


def saturation_bound(llr_clamp: float) -> float:
    """Largest |tanh product| worth resolving.

    Slightly above tanh(clamp/2), so a saturated product maps past the clamp
    and is then clipped to exactly +-clamp despite atanh rounding near 1.
    """
    return float(np.tanh(llr_clamp / 2.0 + 1e-6))


def _tanh_product_to_llr(prod: np.ndarray, llr_clamp: float) -> np.ndarray:
    bound = saturation_bound(llr_clamp)
    return np.clip(2.0 * np.arctanh(np.clip(prod, -bound, bound)), -llr_clamp, llr_clamp)


def flooding_iterations(
    ops: GraphOps,
    syndromes: np.ndarray,
    prior: np.ndarray,
    max_iter: int,
    llr_clamp: float,
    early_stop: bool,
    edge_weights=None,
    prior_scales=None,
    trace: list | None = None,
):
    """Core flooding loop shared by BP and neural BP.

    ``syndromes`` is (C, B); ``prior`` is (V,) or (V, B).  ``edge_weights`` and
    ``prior_scales`` are optional per-iteration arrays of shape (T+1, E) and
    (T+1, V); index T holds the readout set used for every posterior.
    Returns (hard (V,B), posterior (V,B), converged (B,), iterations (B,)).
    """
    E, B = ops.graph.edge_count, syndromes.shape[1]
    V = ops.graph.var_count
    prior = np.asarray(prior, dtype=float)
    prior = np.broadcast_to(prior[:, None] if prior.ndim == 1 else prior, (V, B))
    sign = 1.0 - 2.0 * syndromes[ops.graph.edge_check].astype(float)  # (E, B)

    out_hard = np.zeros((V, B), dtype=np.uint8)
    out_post = np.zeros((V, B))
    converged = np.zeros(B, dtype=bool)
    iters = np.full(B, max_iter, dtype=np.int64)
    active = np.arange(B)

    c2v = np.zeros((E, B))
    readout_prior = prior if prior_scales is None else prior * prior_scales[-1][:, None]
    for it in range(max_iter):
        if edge_weights is None:
            wc2v = c2v
        else:
            wc2v = c2v * edge_weights[it][:, None]
        total = ops.var_sum @ wc2v
        base = prior if prior_scales is None else prior * prior_scales[it][:, None]
        v2c = np.clip(base[ops.graph.edge_var] + total[ops.graph.edge_var] - wc2v, -llr_clamp, llr_clamp)
        t = np.tanh(v2c / 2.0)
        prod = ops.from_padded(loo_product(ops.to_padded(t, 1.0)))
        c2v = sign * _tanh_product_to_llr(prod, llr_clamp)

        readout = c2v if edge_weights is None else c2v * edge_weights[-1][:, None]
        posterior = readout_prior + ops.var_sum @ readout
        hard = (posterior < 0).astype(np.uint8)
        if trace is not None:
            trace.append((active.copy(), v2c.copy(), c2v.copy(), posterior.copy()))

        matched = np.all(ops.syndrome_of(hard) == syndromes, axis=0)
        if it == max_iter - 1:
            done = np.ones_like(matched)
        elif early_stop:
            done = matched
        else:
            done = np.zeros_like(matched)
        if done.any():
            idx = active[done]
            out_hard[:, idx] = hard[:, done]
            out_post[:, idx] = posterior[:, done]
            converged[idx] = matched[done]
            iters[idx] = it + 1
            keep = ~done
            active = active[keep]
            if active.size == 0:
                break
            c2v, sign, syndromes = c2v[:, keep], sign[:, keep], syndromes[:, keep]
            prior, readout_prior = prior[:, keep], readout_prior[:, keep]
    return out_hard, out_post, converged, iters


class BpDecoder:
    """Reusable BP decoder bound to one Tanner graph."""

    def __init__(self, graph: TannerGraph, config: BpConfig = BpConfig()):
        self.graph = graph
        self.config = config
        self.ops = GraphOps(graph)

    @classmethod
    def for_code(cls, code: CssCode, config: BpConfig = BpConfig()) -> "BpDecoder":
        return cls(tanner_graph(code), config)

    def decode_batch(self, syndromes: np.ndarray, prior) -> BatchBpResult:
        S = np.atleast_2d(np.asarray(syndromes, dtype=np.uint8))
        if S.shape[1] != self.graph.check_count:
            raise ValueError(f"syndrome width {S.shape[1]} != {self.graph.check_count} checks")
        prior = _prior_vector(prior, self.graph.var_count)
        hard, post, conv, iters = flooding_iterations(
            self.ops, S.T.copy(), prior, self.config.max_iter, self.config.llr_clamp, self.config.early_stop
        )
        return BatchBpResult(hard.T.copy(), post.T.copy(), conv, iters)

    def decode(self, s, prior, trace: bool = False) -> BpResult:
        bits = s.to_bits() if isinstance(s, BinVector) else np.asarray(s, dtype=np.uint8)
        if bits.size != self.graph.check_count:
            raise ValueError(f"syndrome length {bits.size} != {self.graph.check_count} checks")
        history: list | None = [] if trace else None
        hard, post, conv, iters = flooding_iterations(
            self.ops,
            bits[:, None].copy(),
            _prior_vector(prior, self.graph.var_count),
            self.config.max_iter,
            self.config.llr_clamp,
            self.config.early_stop,
            trace=history,
        )
        return BpResult(hard[:, 0].copy(), post[:, 0].copy(), bool(conv[0]), int(iters[0]), history or [])


def _prior_vector(prior, V: int) -> np.ndarray:
    p = np.asarray(prior, dtype=float)
    if p.ndim == 0:
        return np.full(V, float(p))
    if p.shape != (V,):
        raise ValueError(f"prior has shape {p.shape}, expected ({V},)")
    return p


def bp_decode(graph: TannerGraph, s, prior, config: BpConfig = BpConfig(), trace: bool = False) -> BpResult:
    return BpDecoder(graph, config).decode(s, prior, trace=trace)
