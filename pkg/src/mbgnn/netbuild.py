"""Co-evolved residue network construction.

Contact records are filtered down to CHED pairs above a score threshold,
grouped into connected components, and given per-residue embedding rows.
The same machinery rebuilds networks from predicted binders for the
metal-type stage, where isolated residues are kept as singleton networks.

Residue indices are 0-based throughout.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np

from .errors import InputError

STANDARD_AA = frozenset("ACDEFGHIKLMNPQRSTVWY")
CHED = frozenset("CHED")
DEFAULT_THRESHOLD = 0.1


@dataclass(frozen=True, order=True)
class ResidueRef:
    chain_id: str
    index: int
    amino_acid: str

    def __post_init__(self):
        if self.index < 0:
            raise InputError(f"negative residue index {self.index}")
        if self.amino_acid not in STANDARD_AA:
            raise InputError(f"invalid amino-acid code {self.amino_acid!r} at index {self.index}")


@dataclass(frozen=True, order=True)
class ContactRecord:
    a: int
    b: int
    score: float

    def __post_init__(self):
        if self.a == self.b:
            raise InputError(f"self-contact at residue {self.a}")
        if self.a > self.b:
            a, b = self.b, self.a
            object.__setattr__(self, "a", a)
            object.__setattr__(self, "b", b)
        if self.a < 0:
            raise InputError(f"negative residue index in contact {self}")
        if not (math.isfinite(self.score) and 0.0 <= self.score <= 1.0):
            raise InputError(f"contact score outside [0, 1]: {self}")

    @property
    def pair(self):
        return (self.a, self.b)


@dataclass(frozen=True)
class EmbeddingTable:
    """Per-chain residue embeddings, one row per sequence position."""

    chain_id: str
    data: np.ndarray

    @property
    def length(self) -> int:
        return self.data.shape[0]

    @property
    def dim(self) -> int:
        return self.data.shape[1]


@dataclass
class CoevNetwork:
    """One connected residue network.

    ``edges`` hold positions into ``nodes``. ``binding`` and ``metal`` are
    optional per-node labels (metal is -1 for non-binders).
    """

    chain_id: str
    nodes: list[ResidueRef]
    edges: list[tuple[int, int]]
    features: np.ndarray | None = None
    binding: np.ndarray | None = None
    metal: np.ndarray | None = None

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    @property
    def indices(self) -> list[int]:
        return [r.index for r in self.nodes]

    def neighbor_lists(self) -> list[list[int]]:
        nbrs: list[list[int]] = [[] for _ in self.nodes]
        for u, v in self.edges:
            nbrs[u].append(v)
            nbrs[v].append(u)
        for lst in nbrs:
            lst.sort()
        return nbrs

    def csr(self):
        """Symmetric adjacency as ``(indptr, indices)`` int64 arrays."""
        nbrs = self.neighbor_lists()
        indptr = np.zeros(len(nbrs) + 1, dtype=np.int64)
        indptr[1:] = np.cumsum([len(x) for x in nbrs])
        indices = np.fromiter((j for lst in nbrs for j in lst), dtype=np.int64, count=int(indptr[-1]))
        return indptr, indices

    def validate(self, allow_singleton: bool = False):
        n = self.n_nodes
        if n == 0:
            raise InputError("network without nodes")
        seen = set()
        for u, v in self.edges:
            if u == v or not (0 <= u < n and 0 <= v < n):
                raise InputError(f"bad edge ({u}, {v}) in network of {n} nodes")
            key = (min(u, v), max(u, v))
            if key in seen:
                raise InputError(f"duplicate edge {key}")
            seen.add(key)
        if n == 1:
            if not allow_singleton:
                raise InputError("singleton network where at least one edge is required")
        elif len(_components(n, self.edges)) != 1:
            raise InputError("network is not connected")
        if self.features is not None and self.features.shape[0] != n:
            raise InputError(f"feature rows {self.features.shape[0]} != node count {n}")


@dataclass
class NetworkSet:
    chain_id: str
    networks: list[CoevNetwork] = field(default_factory=list)

    def __len__(self):
        return len(self.networks)

    def __iter__(self):
        return iter(self.networks)

    def residues(self) -> list[ResidueRef]:
        return [r for net in self.networks for r in net.nodes]


def validate_sequence(sequence: str) -> str:
    bad = [(i, c) for i, c in enumerate(sequence) if c not in STANDARD_AA]
    if bad:
        i, c = bad[0]
        raise InputError(f"invalid amino-acid code {c!r} at position {i}")
    return sequence


def extract_ched_pairs(
    contacts: Iterable[ContactRecord], sequence: str, threshold: float = DEFAULT_THRESHOLD
) -> list[ContactRecord]:
    """Keep contacts scoring strictly above ``threshold`` whose two residues
    are both C, H, E or D. Output is sorted by ``(a, b)``."""
    if not 0.0 < threshold <= 1.0:
        raise InputError(f"threshold must lie in (0, 1], got {threshold}")
    validate_sequence(sequence)
    n = len(sequence)
    out = []
    seen = set()
    for rec in contacts:
        if rec.b >= n:
            raise InputError(f"contact {rec} indexes past sequence length {n}")
        if rec.pair in seen:
            raise InputError(f"duplicate contact pair {rec.pair}")
        seen.add(rec.pair)
        if rec.score > threshold and sequence[rec.a] in CHED and sequence[rec.b] in CHED:
            out.append(rec)
    out.sort()
    return out


class _UnionFind:
    def __init__(self, n):
        self.parent = list(range(n))
        self.rank = [0] * n

    def find(self, x):
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.rank[ra] < self.rank[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        if self.rank[ra] == self.rank[rb]:
            self.rank[ra] += 1


def _components(n, edges):
    uf = _UnionFind(n)
    for u, v in edges:
        uf.union(u, v)
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(uf.find(i), []).append(i)
    return sorted(groups.values(), key=lambda g: g[0])


def _networks_from(
    node_ids: Sequence[int], pairs: Sequence[tuple[int, int]], sequence_lookup, chain_id: str
) -> NetworkSet:
    node_ids = sorted(set(node_ids))
    local = {r: i for i, r in enumerate(node_ids)}
    local_edges = [(local[a], local[b]) for a, b in pairs]
    comps = _components(len(node_ids), local_edges)
    comp_of = {}
    pos = {}
    for k, comp in enumerate(comps):
        for i, c in enumerate(comp):
            comp_of[node_ids[c]] = k
            pos[node_ids[c]] = i
    comp_edges: list[list[tuple[int, int]]] = [[] for _ in comps]
    for a, b in pairs:
        comp_edges[comp_of[a]].append((pos[a], pos[b]))
    nets = []
    for comp, edges in zip(comps, comp_edges):
        nodes = [ResidueRef(chain_id, node_ids[c], sequence_lookup(node_ids[c])) for c in comp]
        nets.append(CoevNetwork(chain_id, nodes, sorted(edges)))
    return NetworkSet(chain_id, nets)


def assemble_networks(pairs: Sequence[ContactRecord], sequence: str, chain_id: str = "A") -> NetworkSet:
    """Connected components of the graph spanned by ``pairs``.

    Networks are ordered by their smallest residue index; nodes within a
    network by residue index; edges by their local ``(u, v)`` positions.
    """
    validate_sequence(sequence)
    edge_pairs = []
    seen = set()
    for rec in pairs:
        if rec.b >= len(sequence):
            raise InputError(f"contact {rec} indexes past sequence length {len(sequence)}")
        if rec.pair in seen:
            raise InputError(f"duplicate contact pair {rec.pair}")
        seen.add(rec.pair)
        edge_pairs.append(rec.pair)
    node_ids = [r for p in edge_pairs for r in p]
    return _networks_from(node_ids, sorted(edge_pairs), sequence.__getitem__, chain_id)


def attach_embeddings(nets: NetworkSet, table: EmbeddingTable, dim: int | None = None) -> NetworkSet:
    """Copy of ``nets`` whose node features are the table rows of each residue,
    widened to float64."""
    if table.chain_id != nets.chain_id:
        raise InputError(f"embedding chain {table.chain_id!r} does not match networks chain {nets.chain_id!r}")
    if dim is not None and table.dim != dim:
        raise InputError(f"embedding dimension {table.dim} != expected {dim}")
    out = []
    for net in nets.networks:
        idx = np.asarray(net.indices, dtype=np.int64)
        if idx.size and idx.max() >= table.length:
            raise InputError(
                f"residue index {int(idx.max())} needs {int(idx.max()) + 1} embedding rows, table has {table.length}"
            )
        out.append(replace(net, features=table.data[idx].astype(np.float64)))
    return NetworkSet(nets.chain_id, out)


def build_stage2_networks(
    positives: Sequence[ResidueRef],
    contacts: Iterable[ContactRecord],
    threshold: float = DEFAULT_THRESHOLD,
) -> NetworkSet:
    """Networks over predicted binders only.

    Edges are the contacts above ``threshold`` joining two positives.
    Positives without such an edge become singleton networks.
    """
    if not positives:
        return NetworkSet("")
    chains = {r.chain_id for r in positives}
    if len(chains) != 1:
        raise InputError(f"positives span several chains: {sorted(chains)}")
    chain_id = chains.pop()
    by_index = {}
    for r in positives:
        if r.index in by_index:
            raise InputError(f"residue {r.index} listed twice among positives")
        by_index[r.index] = r.amino_acid
    pairs = set()
    for rec in contacts:
        if rec.score > threshold and rec.a in by_index and rec.b in by_index:
            if rec.pair in pairs:
                raise InputError(f"duplicate contact pair {rec.pair}")
            pairs.add(rec.pair)
    return _networks_from(list(by_index), sorted(pairs), by_index.__getitem__, chain_id)


def label_networks(nets: NetworkSet, labels: dict[int, int]) -> NetworkSet:
    """Attach labels from a ``{residue index: metal id or -1}`` mapping.

    Residues missing from the mapping are non-binders.
    """
    out = []
    for net in nets.networks:
        metal = np.array([labels.get(i, -1) for i in net.indices], dtype=np.int64)
        if np.any(metal > 10) or np.any(metal < -1):
            raise InputError("metal type id outside 0-10")
        out.append(replace(net, binding=(metal >= 0).astype(np.int64), metal=metal))
    return NetworkSet(nets.chain_id, out)


def binder_subnetworks(net: CoevNetwork) -> list[CoevNetwork]:
    """Induced subgraphs over the labeled binders of ``net``, split into
    connected components (singletons kept)."""
    if net.binding is None:
        raise InputError("network carries no binding labels")
    keep = [i for i in range(net.n_nodes) if net.binding[i]]
    if not keep:
        return []
    pos = {old: new for new, old in enumerate(keep)}
    edges = sorted((pos[u], pos[v]) for u, v in net.edges if u in pos and v in pos)
    out = []
    for comp in _components(len(keep), edges):
        cpos = {c: i for i, c in enumerate(comp)}
        cedges = sorted((cpos[u], cpos[v]) for u, v in edges if u in cpos)
        rows = [keep[c] for c in comp]
        out.append(
            CoevNetwork(
                net.chain_id,
                [net.nodes[r] for r in rows],
                cedges,
                None if net.features is None else net.features[rows],
                None if net.binding is None else net.binding[rows],
                None if net.metal is None else net.metal[rows],
            )
        )
    return out
