"""Mean-aggregation graph layers and the stacked per-node classifiers.

Each layer computes ``W1 @ h_i + W2 @ mean_{j in N(i)} h_j (+ b)``. A model
stacks ``n_layers`` of them with batch normalization and ReLU after every
layer but the last, and a row softmax on top.

Several graphs are processed together as one disjoint union
(:class:`GraphBatch`); batch-norm statistics are taken over all nodes of
the batch.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from . import kernels
from . import numcore as nc
from .errors import InputError, ShapeError
from .netbuild import CoevNetwork

N_METAL_TYPES = 11


@dataclass(frozen=True)
class ModelConfig:
    n_layers: int = 5
    d_in: int = 1280
    d_hidden: int = 64
    n_classes: int = 2
    bias: bool = True
    seed: int = 0
    # False drops the neighbor term entirely (feature-only ablation)
    aggregate: bool = True

    def __post_init__(self):
        if self.n_layers < 2:
            raise InputError(f"n_layers must be >= 2, got {self.n_layers}")
        if min(self.d_in, self.d_hidden, self.n_classes) < 1:
            raise InputError("model dimensions must be positive")

    def has_bias(self, layer: int) -> bool:
        # a bias in front of batch norm is cancelled by the mean subtraction
        # (its gradient is identically zero), so only the output layer gets one
        return self.bias and layer == self.n_layers - 1

    def dims(self) -> list[tuple[int, int]]:
        sizes = [self.d_in] + [self.d_hidden] * (self.n_layers - 1) + [self.n_classes]
        return list(zip(sizes[:-1], sizes[1:]))


def binding_config(d_in: int = 1280, seed: int = 0, **kw) -> ModelConfig:
    return ModelConfig(n_layers=5, d_in=d_in, d_hidden=64, n_classes=2, seed=seed, **kw)


def type_config(d_in: int = 1280, seed: int = 0, **kw) -> ModelConfig:
    return ModelConfig(n_layers=5, d_in=d_in, d_hidden=512, n_classes=N_METAL_TYPES, seed=seed, **kw)


@dataclass
class SageLayer:
    w1: nc.Parameter
    w2: nc.Parameter
    bias: nc.Parameter | None = None

    @property
    def d_out(self) -> int:
        return self.w1.value.shape[0]

    @property
    def d_in(self) -> int:
        return self.w1.value.shape[1]

    def params(self) -> list[nc.Parameter]:
        ps = [self.w1, self.w2]
        if self.bias is not None:
            ps.append(self.bias)
        return ps

    def copy(self) -> "SageLayer":
        return SageLayer(self.w1.copy(), self.w2.copy(), None if self.bias is None else self.bias.copy())


@dataclass
class SageModel:
    layers: list[SageLayer]
    bns: list[nc.BatchNormState]
    config: ModelConfig

    def params(self) -> list[nc.Parameter]:
        """Trainable parameters in a fixed order: per layer W1, W2, bias,
        then that layer's batch-norm gamma and beta."""
        out = []
        for i, layer in enumerate(self.layers):
            out.extend(layer.params())
            if i < len(self.bns):
                out.extend([self.bns[i].gamma, self.bns[i].beta])
        return out

    def copy(self) -> "SageModel":
        return SageModel([l.copy() for l in self.layers], [b.copy() for b in self.bns], self.config)

    def astype(self, dtype) -> "SageModel":
        layers = [
            SageLayer(l.w1.astype(dtype), l.w2.astype(dtype), None if l.bias is None else l.bias.astype(dtype))
            for l in self.layers
        ]
        bns = [
            nc.BatchNormState(
                b.gamma.astype(dtype),
                b.beta.astype(dtype),
                b.running_mean.astype(dtype),
                b.running_var.astype(dtype),
                b.momentum,
                b.epsilon,
            )
            for b in self.bns
        ]
        return SageModel(layers, bns, self.config)

    def zero_grad(self):
        for p in self.params():
            p.zero_grad()


def _philox(seed: int, *stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, *stream])))


def init_model(config: ModelConfig, stream: int = 0) -> SageModel:
    """Glorot-uniform weights from a Philox generator keyed by
    ``(config.seed, stream)``; zero output bias; identity batch norm."""
    rng = _philox(config.seed, 0xA11CE, stream)
    layers = []
    for i, (d_in, d_out) in enumerate(config.dims()):
        bound = np.sqrt(6.0 / (d_in + d_out))
        w1 = rng.uniform(-bound, bound, size=(d_out, d_in))
        w2 = rng.uniform(-bound, bound, size=(d_out, d_in))
        bias = nc.Parameter(np.zeros(d_out)) if config.has_bias(i) else None
        layers.append(SageLayer(nc.Parameter(w1), nc.Parameter(w2), bias))
    bns = [nc.BatchNormState.fresh(config.d_hidden) for _ in range(config.n_layers - 1)]
    return SageModel(layers, bns, config)


@dataclass
class GraphBatch:
    """Disjoint union of networks in CSR form."""

    x: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray
    offsets: np.ndarray  # node offset of each graph, length n_graphs + 1
    labels: np.ndarray | None = None

    @property
    def n_nodes(self) -> int:
        return self.x.shape[0]


@dataclass
class PreparedGraph:
    x: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray
    labels: np.ndarray | None


def prepare(net: CoevNetwork, label: str | None = None, dtype=np.float64) -> PreparedGraph:
    if net.features is None:
        raise InputError(f"network on chain {net.chain_id!r} has no features attached")
    labels = None
    if label is not None:
        labels = getattr(net, label)
        if labels is None:
            raise InputError(f"network on chain {net.chain_id!r} carries no {label!r} labels")
    indptr, indices = net.csr()
    return PreparedGraph(np.ascontiguousarray(net.features, dtype=dtype), indptr, indices, labels)


def collate(graphs: Sequence[PreparedGraph]) -> GraphBatch:
    sizes = np.array([g.x.shape[0] for g in graphs], dtype=np.int64)
    offsets = np.zeros(len(graphs) + 1, dtype=np.int64)
    np.cumsum(sizes, out=offsets[1:])
    x = np.concatenate([g.x for g in graphs], axis=0)
    ptr_parts = [np.zeros(1, dtype=np.int64)]
    idx_parts = []
    edge_base = 0
    for g, off in zip(graphs, offsets[:-1]):
        ptr_parts.append(g.indptr[1:] + edge_base)
        idx_parts.append(g.indices + off)
        edge_base += int(g.indptr[-1])
    indptr = np.concatenate(ptr_parts)
    indices = np.concatenate(idx_parts) if idx_parts else np.zeros(0, dtype=np.int64)
    labels = None
    if all(g.labels is not None for g in graphs):
        labels = np.concatenate([g.labels for g in graphs]).astype(np.int64)
    return GraphBatch(x, indptr, indices, offsets, labels)


def as_batch(net: CoevNetwork | GraphBatch | Sequence[CoevNetwork], dtype=np.float64) -> GraphBatch:
    if isinstance(net, GraphBatch):
        return net
    if isinstance(net, CoevNetwork):
        net = [net]
    return collate([prepare(n, dtype=dtype) for n in net])


def _to_csr(adjacency, n):
    if isinstance(adjacency, tuple):
        return adjacency
    indptr = np.zeros(n + 1, dtype=np.int64)
    if len(adjacency) != n:
        raise ShapeError(f"adjacency lists {len(adjacency)} nodes, features have {n}")
    indptr[1:] = np.cumsum([len(a) for a in adjacency])
    indices = np.fromiter((j for a in adjacency for j in a), dtype=np.int64, count=int(indptr[-1]))
    return indptr, indices


def sage_forward(layer: SageLayer, x: np.ndarray, adjacency, aggregate: bool = True):
    """One mean-aggregation layer.

    ``adjacency`` is either ``(indptr, indices)`` or a list of neighbor
    lists. Returns ``(h, neighbor_mean)``; the second item is ``None`` when
    ``aggregate`` is false.
    """
    if x.ndim != 2 or x.shape[1] != layer.d_in:
        raise ShapeError(f"layer expects {layer.d_in} input features, got array of shape {x.shape}")
    indptr, indices = _to_csr(adjacency, x.shape[0])
    h = x @ layer.w1.value.T
    agg = None
    if aggregate:
        agg = kernels.neighbor_mean(x, indptr, indices)
        h += agg @ layer.w2.value.T
    if layer.bias is not None:
        h += layer.bias.value
    return h, agg


def _sage_backward(layer: SageLayer, x, agg, batch: GraphBatch, dh, need_dx: bool):
    layer.w1.grad += dh.T @ x
    if layer.bias is not None:
        layer.bias.grad += dh.sum(axis=0)
    if agg is not None:
        layer.w2.grad += dh.T @ agg
    if not need_dx:
        return None
    dx = dh @ layer.w1.value
    if agg is not None:
        dx += kernels.neighbor_mean_transpose(dh @ layer.w2.value, batch.indptr, batch.indices)
    return dx


@dataclass
class ForwardCache:
    batch: GraphBatch
    inputs: list  # layer inputs
    aggs: list
    bn_caches: list
    pre_relu: list
    logits: np.ndarray


def model_logits(model: SageModel, batch: GraphBatch, mode: str = "infer", update_stats: bool = True):
    if batch.x.shape[1] != model.config.d_in:
        raise ShapeError(f"features have {batch.x.shape[1]} columns, model expects {model.config.d_in}")
    if mode == "train" and batch.n_nodes < 2:
        raise InputError("train-mode forward needs at least 2 nodes for batch normalization")
    adj = (batch.indptr, batch.indices)
    h = batch.x
    inputs, aggs, bn_caches, pre_relu = [], [], [], []
    last = len(model.layers) - 1
    for i, layer in enumerate(model.layers):
        inputs.append(h)
        z, agg = sage_forward(layer, h, adj, model.config.aggregate)
        aggs.append(agg)
        if i == last:
            h = z
            break
        z, bcache = nc.batchnorm_fwd(z, model.bns[i], mode, update_stats=update_stats)
        bn_caches.append(bcache)
        pre_relu.append(z)
        h = nc.relu_fwd(z)
    cache = ForwardCache(batch, inputs, aggs, bn_caches, pre_relu, h) if mode == "train" else None
    return h, cache


def model_forward(model: SageModel, net, mode: str = "infer", update_stats: bool = True):
    """Per-node class probabilities.

    ``net`` may be a network, a list of networks or a prepared batch.
    Train mode returns ``(probs, cache)``; infer mode returns ``probs``.
    """
    batch = as_batch(net, dtype=model.layers[0].w1.value.dtype)
    logits, cache = model_logits(model, batch, mode, update_stats)
    probs = nc.softmax_rows(logits)
    if mode == "train":
        return probs, cache
    return probs


def model_backward(model: SageModel, cache: ForwardCache, labels=None) -> float:
    """Mean cross-entropy of a train-mode forward; gradients are
    accumulated into every parameter's ``grad``."""
    if labels is None:
        labels = cache.batch.labels
    if labels is None:
        raise InputError("no labels for backward pass")
    loss, dh = nc.cross_entropy(cache.logits, np.asarray(labels))
    dh = dh.astype(cache.logits.dtype, copy=False)
    for i in range(len(model.layers) - 1, -1, -1):
        if i < len(model.layers) - 1:
            dz = nc.relu_bwd(cache.pre_relu[i], dh)
            dz, dgamma, dbeta = nc.batchnorm_bwd(cache.bn_caches[i], dz)
            model.bns[i].gamma.grad += dgamma
            model.bns[i].beta.grad += dbeta
            dh = dz
        dh = _sage_backward(model.layers[i], cache.inputs[i], cache.aggs[i], cache.batch, dh, need_dx=i > 0)
    return loss


def loss_and_grad(model: SageModel, batch: GraphBatch, labels=None) -> float:
    """Train-mode forward plus backward without touching running statistics."""
    model.zero_grad()
    _, cache = model_logits(model, batch, "train", update_stats=False)
    return model_backward(model, cache, labels)


def predict_proba(model: SageModel, graphs: Sequence[PreparedGraph], chunk: int = 256) -> list[np.ndarray]:
    """Infer-mode probabilities for many prepared graphs, one array per graph."""
    out = []
    for start in range(0, len(graphs), chunk):
        part = graphs[start : start + chunk]
        batch = collate(part)
        logits, _ = model_logits(model, batch, "infer")
        probs = nc.softmax_rows(logits)
        out.extend(np.split(probs, batch.offsets[1:-1]))
    return out


def with_config(model: SageModel, **changes) -> SageModel:
    return SageModel(model.layers, model.bns, replace(model.config, **changes))
