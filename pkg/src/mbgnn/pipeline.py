"""Two-stage prediction: binding calls over co-evolved networks, then metal
types over networks rebuilt from the predicted binders."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import netbuild, trainer
from .errors import InputError
from .metrics import METAL_TYPES
from .netbuild import ContactRecord, EmbeddingTable, NetworkSet, ResidueRef
from .trainer import EnsembleCheckpoint

BINDING_THRESHOLD = 0.5


@dataclass(frozen=True)
class BindingCall:
    residue: ResidueRef
    prob_binding: float
    call: bool


@dataclass(frozen=True)
class TypeCall:
    residue: ResidueRef
    probs: tuple[float, ...]
    metal: int

    @property
    def metal_name(self) -> str:
        return METAL_TYPES[self.metal]

    @property
    def prob(self) -> float:
        return self.probs[self.metal]


def _expect_classes(ck: EnsembleCheckpoint, n: int, stage: str):
    if ck.n_classes != n:
        raise InputError(f"{stage} stage needs a {n}-class checkpoint, got {ck.n_classes} classes")


def run_binding_stage(
    nets: NetworkSet, ck: EnsembleCheckpoint, threshold: float = BINDING_THRESHOLD
) -> list[BindingCall]:
    _expect_classes(ck, 2, "binding")
    calls = []
    for net, probs in zip(nets.networks, trainer.ensemble_predict_many(ck, nets.networks)):
        for res, p in zip(net.nodes, probs[:, 1]):
            calls.append(BindingCall(res, float(p), bool(p >= threshold)))
    return calls


def run_type_stage(
    calls: Sequence[BindingCall],
    contacts: Sequence[ContactRecord],
    table: EmbeddingTable,
    ck: EnsembleCheckpoint,
    threshold: float = netbuild.DEFAULT_THRESHOLD,
) -> tuple[list[TypeCall], NetworkSet]:
    """Metal type for every positive call, with the stage-2 networks used."""
    _expect_classes(ck, len(METAL_TYPES), "type")
    positives = sorted(c.residue for c in calls if c.call)
    if not positives:
        return [], NetworkSet(table.chain_id)
    stage2 = netbuild.attach_embeddings(
        netbuild.build_stage2_networks(positives, contacts, threshold), table, ck.model_config.d_in
    )
    out = []
    for net, probs in zip(stage2.networks, trainer.ensemble_predict_many(ck, stage2.networks)):
        for res, row in zip(net.nodes, probs):
            # argmax takes the lowest index among ties
            out.append(TypeCall(res, tuple(float(v) for v in row), int(np.argmax(row))))
    out.sort(key=lambda t: t.residue.index)
    return out, stage2


@dataclass
class PredictionReport:
    chain_id: str
    length: int
    networks: NetworkSet
    binding_calls: list[BindingCall]
    type_calls: list[TypeCall]
    stage2: NetworkSet = field(default_factory=lambda: NetworkSet(""))
    reason: str | None = None

    def type_for(self) -> dict[int, TypeCall]:
        return {t.residue.index: t for t in self.type_calls}


def full_predict(
    chain_id: str,
    sequence: str,
    contacts: Sequence[ContactRecord],
    table: EmbeddingTable,
    binding_ck: EnsembleCheckpoint,
    type_ck: EnsembleCheckpoint,
    threshold: float = netbuild.DEFAULT_THRESHOLD,
    binding_threshold: float = BINDING_THRESHOLD,
) -> PredictionReport:
    if table.chain_id != chain_id:
        raise InputError(f"embedding table is for chain {table.chain_id!r}, expected {chain_id!r}")
    if table.length != len(sequence):
        raise InputError(f"chain {chain_id}: {table.length} embedding rows for a sequence of length {len(sequence)}")
    if binding_ck.model_config.d_in != type_ck.model_config.d_in:
        raise InputError("binding and type checkpoints disagree on input dimension")
    pairs = netbuild.extract_ched_pairs(contacts, sequence, threshold)
    nets = netbuild.assemble_networks(pairs, sequence, chain_id)
    if not nets.networks:
        return PredictionReport(
            chain_id, len(sequence), nets, [], [], NetworkSet(chain_id),
            reason=f"no co-evolved CHED pairs with score > {threshold:g}",
        )
    nets = netbuild.attach_embeddings(nets, table, binding_ck.model_config.d_in)
    calls = run_binding_stage(nets, binding_ck, binding_threshold)
    calls.sort(key=lambda c: c.residue.index)
    types, stage2 = run_type_stage(calls, contacts, table, type_ck, threshold)
    reason = None if any(c.call for c in calls) else "no residue predicted as metal-binding"
    return PredictionReport(chain_id, len(sequence), nets, calls, types, stage2, reason)
