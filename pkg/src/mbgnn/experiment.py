"""End-to-end train / predict / evaluate runs over in-memory corpora."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Mapping, Sequence, TextIO

import numpy as np

from . import formats, trainer
from .corpus import ChainData, stage1_graphs, type_graphs
from .errors import InputError
from .gnn import ModelConfig, binding_config, type_config
from .metrics import MetricsReport, binary_metrics, staged_type_metrics
from .pipeline import PredictionReport, full_predict
from .trainer import EnsembleCheckpoint, TrainConfig, default_train_config


@dataclass(frozen=True)
class PipelineConfig:
    binding_model: ModelConfig
    type_model: ModelConfig
    binding_train: TrainConfig
    type_train: TrainConfig

    @classmethod
    def default(cls, d_in: int = 1280, seed: int = 0, **train_kw) -> "PipelineConfig":
        return cls(
            binding_config(d_in, seed),
            type_config(d_in, seed),
            default_train_config("binding", seed=seed, **train_kw),
            default_train_config("type", seed=seed, **train_kw),
        )

    def reseeded(self, seed: int) -> "PipelineConfig":
        return PipelineConfig(
            replace(self.binding_model, seed=seed),
            replace(self.type_model, seed=seed),
            replace(self.binding_train, seed=seed),
            replace(self.type_train, seed=seed),
        )


def train_pipeline(
    chains: Sequence[ChainData], cfg: PipelineConfig, workers: int | None = None, log: TextIO | None = None
) -> tuple[EnsembleCheckpoint, EnsembleCheckpoint]:
    stage1 = stage1_graphs(chains)
    if any(g.binding is None for g in stage1):
        raise InputError("training chains must be labeled")
    bck, _ = trainer.train_ensemble(stage1, cfg.binding_model, cfg.binding_train, workers, log)
    tck, _ = trainer.train_ensemble(type_graphs(stage1), cfg.type_model, cfg.type_train, workers, log)
    return bck, tck


def predict_chains(chains: Sequence[ChainData], bck: EnsembleCheckpoint, tck: EnsembleCheckpoint) -> list[PredictionReport]:
    return [full_predict(c.chain_id, c.sequence, c.contacts, c.table, bck, tck) for c in chains]


def evaluate_rows(
    rows: Sequence[formats.ReportRow], labels: Mapping[str, Mapping[int, int]], chains: set[str] | None = None
) -> tuple[MetricsReport, MetricsReport]:
    """Binding and staged metal-type metrics of report rows against labels.

    The residue universe is the union of labeled and reported residues;
    unreported residues count as predicted non-binders, unlabeled ones as
    true non-binders.
    """
    report_chains = chains if chains is not None else {r.chain for r in rows}
    if set(labels) - report_chains or report_chains - set(labels):
        missing = sorted(set(labels) ^ report_chains)
        raise InputError(f"report and labels cover different chains: {missing[:5]}")
    pred = {(r.chain, r.index): r for r in rows}
    keys = sorted(set(pred) | {(c, i) for c, d in labels.items() for i in d})
    truth_metal = np.array([labels.get(c, {}).get(i, -1) for c, i in keys], dtype=np.int64)
    pred_call = np.array([pred[k].call if k in pred else 0 for k in keys], dtype=np.int64)
    pred_metal = np.array([pred[k].metal if k in pred else -1 for k in keys], dtype=np.int64)
    binding = binary_metrics((truth_metal >= 0).astype(np.int64), pred_call)
    # a positive call always carries a metal; guard against hand-edited reports
    if np.any((pred_call == 1) & (pred_metal < 0)):
        raise InputError("report has a positive call without a metal type")
    types = staged_type_metrics(truth_metal, pred_call, np.where(pred_metal < 0, 0, pred_metal))
    return binding, types


def evaluate_reports(reports: Sequence[PredictionReport], chains: Sequence[ChainData]):
    rows = []
    for rep in reports:
        types = rep.type_for()
        for c in rep.binding_calls:
            t = types.get(c.residue.index)
            rows.append(
                formats.ReportRow(
                    rep.chain_id, c.residue.index, c.residue.amino_acid, c.prob_binding, int(c.call),
                    t.metal if t else -1, t.prob if t else None,
                )
            )
    labels = {c.chain_id: c.labels or {} for c in chains}
    return evaluate_rows(rows, labels, {r.chain_id for r in reports})


def run_once(dataset, configs: PipelineConfig, seed: int, workers: int | None = None) -> dict[str, float]:
    """Train on ``dataset[0]``, test on ``dataset[1]``, return headline metrics."""
    train_chains, test_chains = dataset
    cfg = configs.reseeded(seed)
    bck, tck = train_pipeline(train_chains, cfg, workers)
    binding, types = evaluate_reports(predict_chains(test_chains, bck, tck), test_chains)
    return {
        "binding.precision": binding.precision,
        "binding.recall": binding.recall,
        "binding.f1": binding.f1,
        "type.precision": types.precision,
        "type.recall": types.recall,
        "type.f1": types.f1,
    }


def split_chains(chains: Sequence[ChainData], test_fraction: float = 0.2):
    n_test = max(1, int(round(len(chains) * test_fraction)))
    return list(chains[:-n_test]), list(chains[-n_test:])


TYPE_METRICS_NOTE = (
    "metal-type rows are true binders; binders missed by the binding stage count as false negatives "
    "of their true metal; predicted binders without a true metal are excluded"
)


def format_metrics(binding: MetricsReport, types: MetricsReport) -> str:
    lines = [
        "#mbgnn-metrics v1",
        f"#note: {TYPE_METRICS_NOTE}",
        "Metric\tValue",
        "== Metal-binding Prediction ==",
        f"Precision\t{binding.precision:.6f}",
        f"Recall\t{binding.recall:.6f}",
        f"F1 Score\t{binding.f1:.6f}",
        "== Metal-type Prediction (macro over 11 types) ==",
        f"Precision\t{types.precision:.6f}",
        f"Recall\t{types.recall:.6f}",
        f"F1 Score\t{types.f1:.6f}",
        "== Per metal ==",
        "metal\tsupport\tprecision\trecall\tf1",
    ]
    for name, c in types.classes.items():
        lines.append(f"{name}\t{c.support}\t{c.precision:.6f}\t{c.recall:.6f}\t{c.f1:.6f}")
    lines.append("[metrics]")
    b = binding.classes["binding"]
    kv = {
        "binding.tp": b.tp, "binding.fp": b.fp, "binding.fn": b.fn,
        "binding.precision": binding.precision, "binding.recall": binding.recall, "binding.f1": binding.f1,
        "type.precision": types.precision, "type.recall": types.recall, "type.f1": types.f1,
    }
    for name, c in types.classes.items():
        kv[f"type.{name}.support"] = c.support
        kv[f"type.{name}.f1"] = c.f1
    for k, v in kv.items():
        lines.append(f"{k}={v:.6f}" if isinstance(v, float) else f"{k}={v}")
    return "\n".join(lines) + "\n"
