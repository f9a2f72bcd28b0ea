"""Planted synthetic corpora for desk-scale end-to-end runs.

Each chain carries a fixed number of planted co-evolved CHED networks plus
decoy CHED residues, non-CHED residues and distractor contacts (CHED pairs
scoring at most the threshold, and pairs touching non-CHED residues at any
score).

Feature layout (``dim >= 12``):

* column 0 is the activity signal: positive for active residues, negative
  otherwise, never zero;
* column ``1 + t`` carries a boost for every node of a network whose
  latent metal type is ``t``;
* every other column is unit Gaussian noise.

A residue binds iff it is active and at least one co-evolved neighbor is
active, so a classifier that ignores neighbors cannot recover the labels.
Binders take their network's latent type, drawn from a skewed distribution.
"""

from __future__ import annotations

import numpy as np

from .corpus import ChainData
from .errors import InputError
from .gnn import _philox
from .netbuild import CHED, ContactRecord, EmbeddingTable

NON_CHED = sorted(set("ACDEFGHIKLMNPQRSTVWY") - CHED)
CHED_LETTERS = sorted(CHED)
# metal frequency, Zn most common
TYPE_WEIGHTS = np.array([0.24, 0.16, 0.12, 0.10, 0.08, 0.07, 0.06, 0.05, 0.045, 0.04, 0.035])
SIZE_CHOICES = np.arange(2, 9)
SIZE_WEIGHTS = np.array([0.2, 0.2, 0.18, 0.15, 0.12, 0.08, 0.07])


def _planted_edges(rng, size):
    edges = {(int(rng.integers(0, k)), k) for k in range(1, size)}
    for a in range(size):
        for b in range(a + 1, size):
            if (a, b) not in edges and rng.random() < 0.15:
                edges.add((a, b))
    return sorted(edges)


def make_chain(
    chain_id: str,
    rng: np.random.Generator,
    dim: int = 32,
    n_networks: int = 4,
    p_active: float = 0.45,
    type_strength: float = 3.5,
) -> ChainData:
    sizes = rng.choice(SIZE_CHOICES, size=n_networks, p=SIZE_WEIGHTS)
    n_decoy = int(rng.integers(2, 8))
    n_other = int(rng.integers(20, 60))
    n_net = int(sizes.sum())
    length = n_net + n_decoy + n_other
    positions = rng.permutation(length)
    net_pos = positions[:n_net]
    decoy_pos = positions[n_net : n_net + n_decoy]
    other_pos = positions[n_net + n_decoy :]

    seq = np.empty(length, dtype="<U1")
    seq[np.concatenate([net_pos, decoy_pos])] = rng.choice(CHED_LETTERS, size=n_net + n_decoy)
    seq[other_pos] = rng.choice(NON_CHED, size=n_other)

    feats = rng.standard_normal((length, dim))
    active = rng.random(length) < p_active
    magnitude = 1.0 + 0.5 * np.abs(rng.standard_normal(length))
    feats[:, 0] = np.where(active, magnitude, -magnitude)

    contacts: dict[tuple[int, int], float] = {}
    labels: dict[int, int] = {int(p): -1 for p in decoy_pos}
    start = 0
    for size in sizes:
        members = net_pos[start : start + size]
        start += size
        latent = int(rng.choice(len(TYPE_WEIGHTS), p=TYPE_WEIGHTS))
        feats[members, 1 + latent] += type_strength
        nbr_active = np.zeros(size, dtype=bool)
        for a, b in _planted_edges(rng, size):
            u, v = int(members[a]), int(members[b])
            contacts[(min(u, v), max(u, v))] = float(rng.uniform(0.12, 1.0))
            nbr_active[a] |= active[v]
            nbr_active[b] |= active[u]
        for k, res in enumerate(members):
            labels[int(res)] = latent if active[res] and nbr_active[k] else -1

    ched_pos = np.concatenate([net_pos, decoy_pos])
    # weak CHED-CHED contacts; 0.1 itself must be rejected by the strict threshold
    for _ in range(2 * len(ched_pos)):
        u, v = (int(x) for x in rng.choice(ched_pos, size=2, replace=False))
        key = (min(u, v), max(u, v))
        if key not in contacts:
            contacts[key] = 0.1 if rng.random() < 0.1 else float(rng.uniform(0.0, 0.1))
    # contacts touching non-CHED residues, any score
    for _ in range(n_other):
        u = int(rng.choice(other_pos))
        v = int(rng.integers(0, length))
        if u != v:
            key = (min(u, v), max(u, v))
            if key not in contacts:
                contacts[key] = float(rng.uniform(0.0, 1.0))

    records = [ContactRecord(a, b, s) for (a, b), s in sorted(contacts.items())]
    table = EmbeddingTable(chain_id, feats.astype(np.float32))
    return ChainData(chain_id, "".join(seq), records, table, labels)


def generate(
    n_chains: int,
    seed: int = 0,
    dim: int = 32,
    networks_per_chain: int = 4,
    **kw,
) -> list[ChainData]:
    """``n_chains`` chains with ``networks_per_chain`` planted networks each."""
    if n_chains < 1:
        raise InputError("need at least one chain")
    if dim < 12:
        raise InputError("synthetic features need dim >= 12 (signal + 11 type columns)")
    width = max(4, len(str(n_chains - 1)))
    return [
        make_chain(f"S{i:0{width}d}", _philox(seed, 0x5C, i), dim, networks_per_chain, **kw)
        for i in range(n_chains)
    ]


def recompute_binding(chain: ChainData, threshold: float = 0.1) -> dict[int, int]:
    """Re-derive the 0/1 binding flag of every CHED residue from the stored
    features and contacts alone."""
    active = chain.table.data[:, 0] > 0
    ched = [i for i, a in enumerate(chain.sequence) if a in CHED]
    nbrs: dict[int, list[int]] = {i: [] for i in ched}
    for rec in chain.contacts:
        if rec.score > threshold and rec.a in nbrs and rec.b in nbrs:
            nbrs[rec.a].append(rec.b)
            nbrs[rec.b].append(rec.a)
    return {i: int(bool(active[i]) and any(active[j] for j in nbrs[i])) for i in ched}
