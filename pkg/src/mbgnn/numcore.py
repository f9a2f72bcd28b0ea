"""Dense numeric kernel: matrix product, activations, batch normalization,
softmax cross-entropy, Adam and a finite-difference gradient checker.

Matrices are plain numpy arrays. Gradients are chained by hand in the
callers (see :mod:`mbgnn.gnn`); nothing here records a computation graph.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import InputError, ShapeError, TrainingDivergence


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    return a @ b


def _check_same(x, y, what):
    if x.shape != y.shape:
        raise ShapeError(f"{what}: shape mismatch {x.shape} vs {y.shape}")


def relu_fwd(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0)


def relu_bwd(x: np.ndarray, dy: np.ndarray) -> np.ndarray:
    # subgradient at exactly 0 is 0
    _check_same(x, dy, "relu_bwd")
    return np.where(x > 0, dy, 0.0).astype(dy.dtype, copy=False)


@dataclass
class Parameter:
    """A trainable array with its gradient accumulator and Adam moments."""

    value: np.ndarray
    grad: np.ndarray = field(default=None)  # type: ignore[assignment]
    adam_m: np.ndarray = field(default=None)  # type: ignore[assignment]
    adam_v: np.ndarray = field(default=None)  # type: ignore[assignment]
    step_count: int = 0

    def __post_init__(self):
        self.value = np.asarray(self.value)
        for name in ("grad", "adam_m", "adam_v"):
            arr = getattr(self, name)
            if arr is None:
                setattr(self, name, np.zeros_like(self.value))
            elif arr.shape != self.value.shape:
                raise ShapeError(f"Parameter.{name} shape {arr.shape} != {self.value.shape}")

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad[...] = 0.0

    def copy(self) -> "Parameter":
        return Parameter(
            self.value.copy(), self.grad.copy(), self.adam_m.copy(), self.adam_v.copy(), self.step_count
        )

    def astype(self, dtype) -> "Parameter":
        return Parameter(
            self.value.astype(dtype),
            self.grad.astype(dtype),
            self.adam_m.astype(dtype),
            self.adam_v.astype(dtype),
            self.step_count,
        )


@dataclass
class BatchNormState:
    gamma: Parameter
    beta: Parameter
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    epsilon: float = 1e-5

    @classmethod
    def fresh(cls, n_features: int, dtype=np.float64, momentum=0.1, epsilon=1e-5) -> "BatchNormState":
        return cls(
            gamma=Parameter(np.ones(n_features, dtype=dtype)),
            beta=Parameter(np.zeros(n_features, dtype=dtype)),
            running_mean=np.zeros(n_features, dtype=dtype),
            running_var=np.ones(n_features, dtype=dtype),
            momentum=momentum,
            epsilon=epsilon,
        )

    @property
    def n_features(self) -> int:
        return self.gamma.value.shape[0]

    def copy(self) -> "BatchNormState":
        return BatchNormState(
            self.gamma.copy(),
            self.beta.copy(),
            self.running_mean.copy(),
            self.running_var.copy(),
            self.momentum,
            self.epsilon,
        )


@dataclass
class BatchNormCache:
    xhat: np.ndarray
    inv_std: np.ndarray
    gamma: np.ndarray


def batchnorm_fwd(x: np.ndarray, state: BatchNormState, mode: str = "train", update_stats: bool = True):
    """Per-column normalization.

    Train mode uses the batch mean and biased variance and, unless
    ``update_stats`` is false, folds them into the running statistics
    (the running variance uses the unbiased estimate). Infer mode uses
    the running statistics and returns ``None`` as cache.
    """
    if x.ndim != 2 or x.shape[1] != state.n_features:
        raise ShapeError(f"batchnorm expects (N, {state.n_features}), got {x.shape}")
    gamma = state.gamma.value
    beta = state.beta.value
    if mode == "infer":
        inv_std = 1.0 / np.sqrt(state.running_var + state.epsilon)
        return (x - state.running_mean) * inv_std * gamma + beta, None
    if mode != "train":
        raise ValueError(f"unknown mode {mode!r}")
    n = x.shape[0]
    if n < 2:
        raise InputError("batchnorm in train mode needs at least 2 rows")
    mean = x.mean(axis=0)
    centered = x - mean
    var = (centered * centered).mean(axis=0)
    inv_std = 1.0 / np.sqrt(var + state.epsilon)
    xhat = centered * inv_std
    if update_stats:
        m = state.momentum
        state.running_mean = (1.0 - m) * state.running_mean + m * mean
        state.running_var = (1.0 - m) * state.running_var + m * var * (n / (n - 1))
    return xhat * gamma + beta, BatchNormCache(xhat, inv_std, gamma)


def batchnorm_bwd(cache: BatchNormCache, dy: np.ndarray):
    """Exact gradients of the train-mode forward: ``(dx, dgamma, dbeta)``."""
    _check_same(cache.xhat, dy, "batchnorm_bwd")
    n = dy.shape[0]
    dbeta = dy.sum(axis=0)
    dgamma = (dy * cache.xhat).sum(axis=0)
    dxhat = dy * cache.gamma
    dx = (cache.inv_std / n) * (n * dxhat - dxhat.sum(axis=0) - cache.xhat * (dxhat * cache.xhat).sum(axis=0))
    return dx, dgamma, dbeta


def softmax_rows(x: np.ndarray) -> np.ndarray:
    """Row softmax, always computed and returned in float64 so rows sum to
    one within 1e-9 even for float32 logits."""
    x = np.asarray(x, dtype=np.float64)
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def cross_entropy(logits: np.ndarray, labels: np.ndarray):
    """Mean negative log-likelihood of ``labels`` under row-wise softmax.

    Returns ``(loss, dlogits)``.
    """
    labels = np.asarray(labels)
    n, k = logits.shape
    if labels.shape != (n,):
        raise ShapeError(f"expected {n} labels, got shape {labels.shape}")
    if n == 0:
        raise InputError("cross_entropy on an empty batch")
    if labels.min() < 0 or labels.max() >= k:
        raise InputError(f"label out of range [0, {k})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    logsumexp = np.log(np.exp(shifted).sum(axis=1))
    rows = np.arange(n)
    loss = float(np.mean(logsumexp - shifted[rows, labels]))
    grad = np.exp(shifted - logsumexp[:, None])
    grad[rows, labels] -= 1.0
    grad /= n
    return loss, grad


def adam_step(
    param: Parameter,
    lr: float,
    weight_decay: float = 0.0,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> Parameter:
    """One Adam update with L2 weight decay folded into the gradient.

    Mutates and returns ``param``; the gradient is zeroed afterwards.
    """
    g = param.grad
    if not np.all(np.isfinite(g)):
        raise TrainingDivergence("non-finite gradient in adam_step")
    if weight_decay:
        g = g + weight_decay * param.value
    param.step_count += 1
    t = param.step_count
    param.adam_m *= beta1
    param.adam_m += (1.0 - beta1) * g
    param.adam_v *= beta2
    param.adam_v += (1.0 - beta2) * (g * g)
    m_hat = param.adam_m / (1.0 - beta1**t)
    v_hat = param.adam_v / (1.0 - beta2**t)
    if lr != 0.0:
        param.value -= lr * m_hat / (np.sqrt(v_hat) + eps)
    param.zero_grad()
    return param


def gradcheck(
    model_loss_fn: Callable[[], float],
    params: Sequence[Parameter],
    h: float = 1e-5,
    max_coords: int = 200,
    seed: int = 0,
) -> float:
    """Largest relative disagreement between analytic and central-difference
    gradients.

    ``model_loss_fn`` must return the loss and write the analytic gradient
    into each parameter's ``grad``. Up to ``max_coords`` coordinates are
    sampled per parameter (all of them when the parameter is smaller).
    """
    for p in params:
        p.zero_grad()
    model_loss_fn()
    analytic = [p.grad.copy() for p in params]
    rng = np.random.default_rng(seed)
    worst = 0.0
    for p, ag in zip(params, analytic):
        flat = p.value.reshape(-1)
        size = flat.size
        coords = np.arange(size) if size <= max_coords else rng.choice(size, max_coords, replace=False)
        for c in coords:
            orig = flat[c]
            flat[c] = orig + h
            up = model_loss_fn()
            flat[c] = orig - h
            down = model_loss_fn()
            flat[c] = orig
            num = (up - down) / (2.0 * h)
            a = ag.reshape(-1)[c]
            err = abs(a - num) / max(abs(a), abs(num), 1e-8)
            worst = max(worst, err)
    for p in params:
        p.zero_grad()
    return worst
