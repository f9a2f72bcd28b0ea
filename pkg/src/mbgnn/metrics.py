"""Precision / recall / F1 for the binding and metal-type tasks, plus the
multi-seed sensitivity summary."""

from __future__ import annotations

import statistics
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .errors import InputError

METAL_TYPES = ("Zn", "Ca", "Mg", "Mn", "Fe", "SF4", "Ni", "Cu", "Co", "FeS", "Fe3S")


@dataclass
class ClassScores:
    tp: int
    fp: int
    fn: int

    @property
    def support(self) -> int:
        return self.tp + self.fn

    @property
    def precision(self) -> float:
        d = self.tp + self.fp
        return self.tp / d if d else 0.0

    @property
    def recall(self) -> float:
        d = self.tp + self.fn
        return self.tp / d if d else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    @property
    def undefined(self) -> list[str]:
        """Metrics whose denominator was zero (reported as 0)."""
        flags = []
        if self.tp + self.fp == 0:
            flags.append("precision")
        if self.tp + self.fn == 0:
            flags.append("recall")
        return flags


@dataclass
class MetricsReport:
    classes: dict[str, ClassScores] = field(default_factory=dict)
    # set for binary reports: the name of the positive class
    positive: str | None = None

    @property
    def precision(self) -> float:
        if self.positive is not None:
            return self.classes[self.positive].precision
        return self.macro("precision")

    @property
    def recall(self) -> float:
        if self.positive is not None:
            return self.classes[self.positive].recall
        return self.macro("recall")

    @property
    def f1(self) -> float:
        if self.positive is not None:
            return self.classes[self.positive].f1
        return self.macro("f1")

    def macro(self, metric: str) -> float:
        vals = [getattr(c, metric) for c in self.classes.values()]
        return float(sum(vals) / len(vals)) if vals else 0.0

    def as_dict(self, prefix: str = "") -> dict[str, float]:
        out = {f"{prefix}precision": self.precision, f"{prefix}recall": self.recall, f"{prefix}f1": self.f1}
        for name, c in self.classes.items():
            out[f"{prefix}{name}.precision"] = c.precision
            out[f"{prefix}{name}.recall"] = c.recall
            out[f"{prefix}{name}.f1"] = c.f1
            out[f"{prefix}{name}.support"] = c.support
        return out


def _as_int_array(x, name):
    arr = np.asarray(x)
    if arr.ndim != 1:
        raise InputError(f"{name} must be one-dimensional")
    return arr.astype(np.int64)


def binary_metrics(truth: Sequence[int], pred: Sequence[int]) -> MetricsReport:
    t = _as_int_array(truth, "truth")
    p = _as_int_array(pred, "pred")
    if t.shape != p.shape:
        raise InputError(f"length mismatch: {t.size} truth vs {p.size} predictions")
    t = t != 0
    p = p != 0
    scores = ClassScores(int(np.sum(t & p)), int(np.sum(~t & p)), int(np.sum(t & ~p)))
    return MetricsReport({"binding": scores}, positive="binding")


def confusion_counts(truth, pred, n_classes: int) -> list[ClassScores]:
    t = _as_int_array(truth, "truth")
    p = _as_int_array(pred, "pred")
    if t.shape != p.shape:
        raise InputError(f"length mismatch: {t.size} truth vs {p.size} predictions")
    for arr in (t, p):
        if arr.size and (arr.min() < 0 or arr.max() >= n_classes):
            raise InputError(f"class id out of range [0, {n_classes})")
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (t, p), 1)
    diag = np.diag(cm)
    return [
        ClassScores(int(diag[k]), int(cm[:, k].sum() - diag[k]), int(cm[k, :].sum() - diag[k]))
        for k in range(n_classes)
    ]


def class_names(n_classes: int) -> list[str]:
    return list(METAL_TYPES) if n_classes == len(METAL_TYPES) else [str(k) for k in range(n_classes)]


def multiclass_macro_metrics(truth, pred, n_classes: int = 11) -> MetricsReport:
    """One-vs-rest scores per class; macro values average over all
    ``n_classes`` classes, zero-support ones included as 0."""
    counts = confusion_counts(truth, pred, n_classes)
    return MetricsReport(dict(zip(class_names(n_classes), counts)))


def staged_type_metrics(
    truth_metal: Sequence[int], pred_binding: Sequence[int], pred_metal: Sequence[int], n_classes: int = 11
) -> MetricsReport:
    """Metal-type scores for a two-stage pipeline.

    Rows are true binders (``truth_metal`` >= 0 means binder). A binder
    predicted as binder contributes a normal one-vs-rest outcome; a binder
    missed by the binding stage adds a false negative to its true class.
    Predicted binders that are not true binders are ignored.
    """
    tm = _as_int_array(truth_metal, "truth_metal")
    pb = _as_int_array(pred_binding, "pred_binding")
    pm = _as_int_array(pred_metal, "pred_metal")
    if not (tm.shape == pb.shape == pm.shape):
        raise InputError("staged metrics inputs differ in length")
    true_binder = tm >= 0
    both = true_binder & (pb != 0)
    counts = confusion_counts(tm[both], pm[both], n_classes)
    missed = tm[true_binder & (pb == 0)]
    for k in missed:
        counts[int(k)].fn += 1
    return MetricsReport(dict(zip(class_names(n_classes), counts)))


@dataclass
class SeedSummary:
    per_seed: list[dict[str, float]]

    def stats(self) -> dict[str, tuple[float, float]]:
        keys = self.per_seed[0].keys()
        out = {}
        for k in keys:
            vals = [run[k] for run in self.per_seed]
            out[k] = (statistics.fmean(vals), statistics.stdev(vals) if len(vals) > 1 else 0.0)
        return out

    def table(self, keys: Iterable[str] | None = None) -> str:
        stats = self.stats()
        keys = list(keys) if keys is not None else list(stats)
        head = "metric\t" + "\t".join(str(i + 1) for i in range(len(self.per_seed))) + "\tmean\tstd"
        lines = [head]
        for k in keys:
            runs = "\t".join(f"{run[k]:.4f}" for run in self.per_seed)
            m, s = stats[k]
            lines.append(f"{k}\t{runs}\t{m:.4f}\t{s:.4f}")
        return "\n".join(lines) + "\n"


def sensitivity_run(
    dataset,
    configs: Mapping,
    seeds: Sequence[int],
    run: Callable[..., Mapping[str, float]] | None = None,
) -> SeedSummary:
    """Repeat a full train + test run once per seed and collect metrics.

    ``run(dataset, configs, seed)`` must return a flat metric mapping; the
    default runs the two-stage pipeline (see :func:`mbgnn.experiment.run_once`).
    Aggregation uses the sample standard deviation.
    """
    if len(seeds) < 2:
        raise InputError("sensitivity analysis needs at least two seeds")
    if run is None:
        from .experiment import run_once as run
    return SeedSummary([dict(run(dataset, configs, seed)) for seed in seeds])
