"""M-fold ensemble training.

Graphs are split into ``m_folds`` folds; model ``j`` trains on every fold
but ``j`` and keeps the epoch snapshot with the best validation F1 on fold
``j``. Inference averages the softmax outputs of the ``M`` snapshots.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence, TextIO

import numpy as np

from . import gnn
from . import numcore as nc
from .errors import InputError, TrainingDivergence
from .gnn import ModelConfig, PreparedGraph, SageModel
from .metrics import binary_metrics, multiclass_macro_metrics
from .netbuild import CoevNetwork

TASK_LABEL = {"binding": "binding", "type": "metal"}


@dataclass(frozen=True)
class TrainConfig:
    task: str = "binding"
    m_folds: int = 6
    lr: float = 0.001
    weight_decay: float = 0.0001
    max_epochs: int = 200
    patience: int = 20
    batch_graphs: int = 64
    seed: int = 0
    dtype: str = "float64"

    def __post_init__(self):
        if self.task not in TASK_LABEL:
            raise InputError(f"unknown task {self.task!r}")
        if self.m_folds < 2:
            raise InputError(f"m_folds must be >= 2, got {self.m_folds}")
        if self.lr < 0:
            raise InputError("learning rate must be non-negative")
        if not 0 < self.patience < self.max_epochs:
            raise InputError("need 0 < patience < max_epochs")
        if self.batch_graphs < 1:
            raise InputError("batch_graphs must be >= 1")
        if self.dtype not in ("float32", "float64"):
            raise InputError(f"unsupported dtype {self.dtype!r}")


def default_train_config(task: str, **kw) -> TrainConfig:
    kw.setdefault("weight_decay", 0.0001 if task == "binding" else 0.0005)
    return TrainConfig(task=task, **kw)


@dataclass
class FoldSplit:
    assignments: np.ndarray
    m: int

    def fold(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.assignments == j)

    def rest(self, j: int) -> np.ndarray:
        return np.flatnonzero(self.assignments != j)

    def sizes(self) -> list[int]:
        return np.bincount(self.assignments, minlength=self.m).tolist()


def split_folds(n_graphs: int, m: int, seed: int) -> FoldSplit:
    if m < 2:
        raise InputError(f"need at least 2 folds, got {m}")
    if n_graphs < m:
        raise InputError(f"{n_graphs} graphs cannot fill {m} folds")
    perm = gnn._philox(seed, 0xF01D).permutation(n_graphs)
    assignments = np.empty(n_graphs, dtype=np.int64)
    assignments[perm] = np.arange(n_graphs) % m
    return FoldSplit(assignments, m)


@dataclass
class FoldResult:
    fold: int
    best_f1: float
    best_epoch: int
    epochs_run: int
    history: list[tuple[int, float, float]] = field(default_factory=list)


@dataclass
class EnsembleCheckpoint:
    models: list[SageModel]
    model_config: ModelConfig
    task: str
    val_f1: list[float]
    best_epoch: list[int]

    @property
    def m(self) -> int:
        return len(self.models)

    @property
    def n_classes(self) -> int:
        return self.model_config.n_classes


def validation_f1(task: str, probs: Sequence[np.ndarray], labels: Sequence[np.ndarray]) -> float:
    p = np.concatenate(probs)
    y = np.concatenate(labels)
    if task == "binding":
        return binary_metrics(y, (p[:, 1] >= 0.5).astype(np.int64)).f1
    return multiclass_macro_metrics(y, np.argmax(p, axis=1), n_classes=p.shape[1]).f1


def _batches(order: np.ndarray, graphs: Sequence[PreparedGraph], size: int) -> list[list[int]]:
    chunks = [list(order[i : i + size]) for i in range(0, len(order), size)]
    # batch norm needs >= 2 nodes per step: fold tiny chunks into a neighbor
    merged: list[list[int]] = []
    for c in chunks:
        if merged and sum(graphs[i].x.shape[0] for i in c) < 2:
            merged[-1].extend(c)
        else:
            merged.append(c)
    if len(merged) > 1 and sum(graphs[i].x.shape[0] for i in merged[0]) < 2:
        merged[1] = merged[0] + merged[1]
        merged.pop(0)
    return merged


def _prepare_all(graphs: Sequence[CoevNetwork], task: str, dtype) -> list[PreparedGraph]:
    label = TASK_LABEL[task]
    return [gnn.prepare(g, label, dtype) for g in graphs]


def train_fold(
    train_graphs: Sequence[CoevNetwork],
    val_graphs: Sequence[CoevNetwork],
    model_config: ModelConfig,
    train_config: TrainConfig,
    fold: int = 0,
    log: Callable[[str], None] | None = None,
) -> tuple[SageModel, FoldResult]:
    """Train one model; return the best-validation snapshot (float64) and
    its training record."""
    if not train_graphs:
        raise InputError("empty training set")
    if not val_graphs:
        raise InputError("empty validation set")
    dtype = np.dtype(train_config.dtype)
    train = _prepare_all(train_graphs, train_config.task, dtype)
    val = _prepare_all(val_graphs, train_config.task, dtype)
    if sum(g.x.shape[0] for g in train) < 2:
        raise InputError("training set has fewer than 2 nodes")
    val_labels = [g.labels for g in val]

    model = gnn.init_model(model_config, stream=fold)
    if dtype != np.float64:
        model = model.astype(dtype)
    params = model.params()

    best: SageModel | None = None
    result = FoldResult(fold, -1.0, -1, 0)
    stale = 0
    for epoch in range(1, train_config.max_epochs + 1):
        rng = gnn._philox(train_config.seed, 0x5EED, fold, epoch)
        order = rng.permutation(len(train))
        losses = []
        for idx in _batches(order, train, train_config.batch_graphs):
            batch = gnn.collate([train[i] for i in idx])
            _, cache = gnn.model_logits(model, batch, "train")
            loss = gnn.model_backward(model, cache)
            if not math.isfinite(loss):
                raise TrainingDivergence(f"fold {fold} epoch {epoch}: non-finite loss {loss}")
            losses.append(loss)
            for p in params:
                nc.adam_step(p, train_config.lr, train_config.weight_decay)
        epoch_loss = float(np.mean(losses))
        f1 = validation_f1(train_config.task, gnn.predict_proba(model, val), val_labels)
        result.history.append((epoch, epoch_loss, f1))
        result.epochs_run = epoch
        if log is not None:
            log(f"fold={fold} epoch={epoch} loss={epoch_loss:.6f} val_f1={f1:.6f}")
        if f1 > result.best_f1:
            result.best_f1, result.best_epoch = f1, epoch
            best = model.copy()
            stale = 0
        else:
            stale += 1
            if stale >= train_config.patience:
                break
    assert best is not None
    return best.astype(np.float64), result


def _fold_job(args, log=None):
    graphs, split, j, model_config, train_config, verbose = args
    lines: list[str] = []
    if log is None and verbose:
        log = lines.append
    train = [graphs[i] for i in split.rest(j)]
    val = [graphs[i] for i in split.fold(j)]
    model, res = train_fold(train, val, model_config, train_config, fold=j, log=log)
    return model, res, lines


def worker_count(requested: int | None, m: int) -> int:
    if requested is None:
        try:
            requested = int(os.environ.get("MBGNN_THREADS", "0"))
        except ValueError:
            raise InputError("MBGNN_THREADS must be an integer") from None
    if requested <= 0:
        requested = os.cpu_count() or 1
    return max(1, min(requested, m))


def train_ensemble(
    graphs: Sequence[CoevNetwork],
    model_config: ModelConfig,
    train_config: TrainConfig,
    workers: int | None = None,
    log: TextIO | None = None,
) -> tuple[EnsembleCheckpoint, list[FoldResult]]:
    """Train one model per fold.

    With more than one worker, folds run in separate processes. Per-fold
    logs and results are emitted in fold order either way, so the
    checkpoint does not depend on scheduling.
    """
    graphs = list(graphs)
    m = train_config.m_folds
    if len(graphs) < m:
        raise InputError(f"{len(graphs)} graphs cannot fill {m} folds")
    split = split_folds(len(graphs), m, train_config.seed)
    jobs = [(graphs, split, j, model_config, train_config, log is not None) for j in range(m)]
    n_workers = worker_count(workers, m)
    if n_workers == 1:
        emit = None if log is None else (lambda line: print(line, file=log, flush=True))
        outputs = [_fold_job(job, emit) for job in jobs]
    else:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            outputs = list(pool.map(_fold_job, jobs))
        if log is not None:
            for out in outputs:
                for line in out[2]:
                    print(line, file=log)
    models = [o[0] for o in outputs]
    results = [o[1] for o in outputs]
    ck = EnsembleCheckpoint(
        models, model_config, train_config.task, [r.best_f1 for r in results], [r.best_epoch for r in results]
    )
    return ck, results


def ensemble_predict(ck: EnsembleCheckpoint, net) -> np.ndarray:
    """Average of the member models' infer-mode probabilities."""
    total = None
    for model in ck.models:
        p = gnn.model_forward(model, net, "infer")
        total = p if total is None else total + p
    return total / ck.m


def ensemble_predict_many(ck: EnsembleCheckpoint, nets: Sequence[CoevNetwork]) -> list[np.ndarray]:
    if not nets:
        return []
    prepared = [gnn.prepare(n) for n in nets]
    total = None
    for model in ck.models:
        probs = gnn.predict_proba(model, prepared)
        total = probs if total is None else [a + b for a, b in zip(total, probs)]
    return [t / ck.m for t in total]

