"""Per-chain inputs bundled together, and the on-disk corpus layout.

A corpus directory holds::

    sequences.fasta
    contacts/<chain>.contacts
    embeddings/<chain>.emb
    labels.tsv            (optional)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from . import formats, netbuild
from .errors import InputError
from .netbuild import CoevNetwork, ContactRecord, EmbeddingTable


@dataclass
class ChainData:
    chain_id: str
    sequence: str
    contacts: list[ContactRecord]
    table: EmbeddingTable
    labels: dict[int, int] | None = field(default=None)

    def stage1(self, threshold: float = netbuild.DEFAULT_THRESHOLD) -> list[CoevNetwork]:
        pairs = netbuild.extract_ched_pairs(self.contacts, self.sequence, threshold)
        nets = netbuild.assemble_networks(pairs, self.sequence, self.chain_id)
        nets = netbuild.attach_embeddings(nets, self.table)
        if self.labels is not None:
            nets = netbuild.label_networks(nets, self.labels)
        return nets.networks


def stage1_graphs(chains: Sequence[ChainData], threshold: float = netbuild.DEFAULT_THRESHOLD) -> list[CoevNetwork]:
    return [net for ch in chains for net in ch.stage1(threshold)]


def type_graphs(stage1: Sequence[CoevNetwork]) -> list[CoevNetwork]:
    """Metal-type training networks: labeled binders of each stage-1 network,
    split into connected components.

    Stage-1 edges are all CHED contacts above the threshold, so the induced
    subgraph over true binders equals the stage-2 construction applied to
    those binders.
    """
    return [sub for net in stage1 for sub in netbuild.binder_subnetworks(net)]


def _resolve(path, chain_id: str, suffix: str) -> Path:
    path = Path(path)
    return path / f"{chain_id}{suffix}" if path.is_dir() else path


def load_chains(contacts, fasta, embeddings, labels=None) -> list[ChainData]:
    """Load every chain named in ``fasta``.

    ``contacts`` and ``embeddings`` may be single files (single-chain FASTA)
    or directories of ``<chain>.contacts`` / ``<chain>.emb`` files.
    """
    seqs = formats.read_fasta(fasta)
    if not seqs:
        raise InputError(f"{fasta}: no sequences")
    if len(seqs) > 1 and not (Path(contacts).is_dir() and Path(embeddings).is_dir()):
        raise InputError("multi-chain FASTA needs contact and embedding directories")
    all_labels = formats.read_labels(labels) if labels is not None else None
    if all_labels is not None:
        unknown = sorted(set(all_labels) - set(seqs))
        if unknown:
            raise InputError(f"labels reference chains missing from FASTA: {unknown[:5]}")
    out = []
    for chain_id, seq in seqs.items():
        cpath = _resolve(contacts, chain_id, ".contacts")
        c_chain, length, recs = formats.read_contacts(cpath)
        if c_chain != chain_id:
            raise InputError(f"{cpath}: contact file is for chain {c_chain!r}, expected {chain_id!r}")
        if length != len(seq):
            raise InputError(f"{cpath}: length={length} but sequence {chain_id!r} has {len(seq)} residues")
        epath = _resolve(embeddings, chain_id, ".emb")
        table = formats.read_embedding(epath, chain_id=chain_id if not Path(embeddings).is_dir() else None)
        if table.chain_id != chain_id:
            raise InputError(f"{epath}: embedding file name does not match chain {chain_id!r}")
        if table.length != len(seq):
            raise InputError(f"{epath}: {table.length} rows for sequence of length {len(seq)}")
        chain_labels = None
        if all_labels is not None:
            chain_labels = all_labels.get(chain_id, {})
            bad = [i for i in chain_labels if i >= len(seq)]
            if bad:
                raise InputError(f"labels for {chain_id!r} index past chain end: {bad[0]}")
        out.append(ChainData(chain_id, seq, recs, table, chain_labels))
    return out


def load_corpus(directory) -> list[ChainData]:
    d = Path(directory)
    labels = d / "labels.tsv"
    return load_chains(d / "contacts", d / "sequences.fasta", d / "embeddings", labels if labels.exists() else None)


def write_corpus(directory, chains: Sequence[ChainData]):
    d = Path(directory)
    (d / "contacts").mkdir(parents=True, exist_ok=True)
    (d / "embeddings").mkdir(parents=True, exist_ok=True)
    formats.write_fasta(d / "sequences.fasta", [(c.chain_id, c.sequence) for c in chains])
    for c in chains:
        formats.write_contacts(d / "contacts" / f"{c.chain_id}.contacts", c.chain_id, len(c.sequence), c.contacts)
        formats.write_embedding(d / "embeddings" / f"{c.chain_id}.emb", c.table.data)
    if all(c.labels is not None for c in chains):
        formats.write_labels(d / "labels.tsv", {c.chain_id: c.labels for c in chains})
