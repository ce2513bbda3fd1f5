"""Adam, the alternating head/hidden training loop, and accuracy evaluation."""
from __future__ import annotations

import csv
import logging
from dataclasses import asdict, dataclass, field

import numpy as np

from . import backprop
from .backprop import ParamGrads, head_backward, head_penalty, cross_entropy
from .layers import NetworkParams, OutputHead, forward_network, output_head

log = logging.getLogger(__name__)


class TrainingDivergence(FloatingPointError):
    def __init__(self, iteration, value):
        super().__init__(f"non-finite loss {value} at iteration {iteration}")
        self.iteration = iteration


@dataclass
class TrainConfig:
    lr: float = 0.05
    lr_decay_gamma: float = 1.0
    epochs: int = 50
    batch_size: int = 125
    alpha: float = 5e-3
    alpha_c: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    adam_eps: float = 1e-8
    inner_head_iters: int = 10
    seed: int = 0

    def __post_init__(self):
        if not self.lr > 0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError(f"Adam moments must lie in [0, 1): {self.beta1}, {self.beta2}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.alpha < 0 or self.alpha_c < 0:
            raise ValueError("regularization weights must be non-negative")
        if self.epochs < 0 or self.inner_head_iters < 0:
            raise ValueError("epochs and inner_head_iters must be non-negative")


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def like(cls, arrays):
        return cls([np.zeros_like(a) for a in arrays], [np.zeros_like(a) for a in arrays])


def adam_step(arrays, grads, state: AdamState, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """One bias-corrected Adam update, applied in place to ``arrays``."""
    if len(arrays) != len(grads) or len(arrays) != len(state.m):
        raise ValueError(f"Adam: {len(arrays)} arrays, {len(grads)} grads, {len(state.m)} moments")
    state.t += 1
    bc1 = 1.0 - beta1 ** state.t
    bc2 = 1.0 - beta2 ** state.t
    for a, g, m, v in zip(arrays, grads, state.m, state.v):
        if a.shape != g.shape or a.shape != m.shape:
            raise ValueError(f"Adam shape mismatch: param {a.shape}, grad {g.shape}")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        a -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
    return arrays


# ---------------------------------------------------------------------------
# model dispatch: dense networks use the module-level functions, other
# models (the convolutional MNIST net) carry the same operations as methods


def model_forward(params, X):
    if isinstance(params, NetworkParams):
        return forward_network(X, params)
    return params.forward(X)


def model_backward(params, cache, head, labels):
    if isinstance(params, NetworkParams):
        return backprop.backward(cache, params, head, labels)
    return params.backward(cache, head, labels)


def hidden_objective_grads(params, cache, head, labels, alpha):
    """Gradients of (mean loss + alpha * smoothness) w.r.t. the hidden arrays."""
    grads, loss = model_backward(params, cache, head, labels)
    tied = getattr(params, "tied", False)
    penalty = 0.0
    if alpha and params.N > 1 and not tied:
        rK, rb = backprop.regularizer_grads(params, alpha)
        grads.dK = [g + r for g, r in zip(grads.dK, rK)]
        grads.db = [g + r for g, r in zip(grads.db, rb)]
        penalty = alpha * backprop.smoothness_penalty(params)
    return grads, loss + penalty


def _hidden_grad_arrays(params, grads):
    if isinstance(params, NetworkParams):
        return grads.hidden_arrays(params.tied)
    return params.grad_arrays(grads)


def head_grads(yN, head: OutputHead, labels, alpha_c):
    losses, dz = head_backward(np.atleast_2d(yN), head, labels)
    B = len(labels)
    dW = dz.T @ np.atleast_2d(yN) / B + 2.0 * alpha_c * head.W
    dmu = dz.sum(axis=0) / B + 2.0 * alpha_c * head.mu
    return [dW, dmu], float(losses.mean())


@dataclass
class History:
    epoch: list = field(default_factory=list)
    iteration: list = field(default_factory=list)
    loss: list = field(default_factory=list)
    train_acc: list = field(default_factory=list)
    epoch_loss: list = field(default_factory=list)

    def record(self, epoch, it, loss, acc):
        self.epoch.append(epoch)
        self.iteration.append(it)
        self.loss.append(loss)
        self.train_acc.append(acc)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "iter", "loss", "train_acc"])
            for row in zip(self.epoch, self.iteration, self.loss, self.train_acc):
                w.writerow([row[0], row[1], repr(float(row[2])), repr(float(row[3]))])

    def __eq__(self, other):
        return isinstance(other, History) and asdict(self) == asdict(other)


def train_coordinate_descent(params, head: OutputHead, X, labels, config: TrainConfig,
                             callback=None):
    """Alternating Adam training.

    Each mini-batch iteration runs up to ``config.inner_head_iters`` Adam
    steps on the output head with the hidden layers frozen, then a single Adam
    step on the hidden parameters with the head frozen. With
    ``inner_head_iters == 0`` both blocks take one joint step instead.

    ``params`` and ``head`` are updated in place and also returned together
    with a :class:`History`. ``callback(iteration, params, head, Xb, yb)`` is
    called at the start of every iteration, before any update.
    """
    X = np.asarray(X, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    history = History()
    rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(2)[1])
    head_arrays = [head.W, head.mu]
    head_state = AdamState.like(head_arrays)
    hidden = params.hidden_arrays()
    hidden_state = AdamState.like(hidden)
    lr = config.lr
    s = len(labels)
    it = 0
    adam_kw = dict(beta1=config.beta1, beta2=config.beta2, eps=config.adam_eps)
    for epoch in range(config.epochs):
        perm = rng.permutation(s)
        epoch_losses = []
        for start in range(0, s, config.batch_size):
            idx = perm[start:start + config.batch_size]
            Xb, yb = X[idx], labels[idx]
            if callback is not None:
                callback(it, params, head, Xb, yb)
            yN, cache = model_forward(params, Xb)
            for _ in range(config.inner_head_iters):
                g, _ = head_grads(yN, head, yb, config.alpha_c)
                adam_step(head_arrays, g, head_state, lr, **adam_kw)
            grads, value = hidden_objective_grads(params, cache, head, yb, config.alpha)
            value += config.alpha_c * head_penalty(head)
            if not np.isfinite(value):
                raise TrainingDivergence(it, value)
            probs = output_head(yN, head)
            acc = float(np.mean(np.argmax(probs, axis=1) == yb))
            if config.inner_head_iters == 0:
                g = [grads.dW + 2.0 * config.alpha_c * head.W, grads.dmu + 2.0 * config.alpha_c * head.mu]
                adam_step(head_arrays, g, head_state, lr, **adam_kw)
            adam_step(hidden, _hidden_grad_arrays(params, grads), hidden_state, lr, **adam_kw)
            history.record(epoch, it, value, acc)
            epoch_losses.append(value)
            it += 1
        history.epoch_loss.append(float(np.mean(epoch_losses)) if epoch_losses else float("nan"))
        log.debug("epoch %d: loss %.5f lr %.4g", epoch, history.epoch_loss[-1], lr)
        if config.lr_decay_gamma < 1.0:
            lr *= config.lr_decay_gamma
    return params, head, history


def predict_proba(params, head, X, chunk=2000):
    X = np.asarray(X, dtype=np.float64)
    out = []
    for start in range(0, len(X), chunk):
        yN, _ = model_forward(params, X[start:start + chunk])
        out.append(np.atleast_2d(output_head(yN, head)))
    return np.concatenate(out) if out else np.zeros((0, head.M))


def evaluate(params, head, X, labels) -> float:
    """Fraction of argmax-correct predictions; ties go to the lower class index."""
    labels = np.asarray(labels)
    if len(labels) == 0:
        return float("nan")
    pred = np.argmax(predict_proba(params, head, X), axis=1)
    return float(np.mean(pred == labels))


def dataset_loss(params, head, X, labels, config: TrainConfig) -> float:
    """Full regularized objective over a whole dataset."""
    probs = predict_proba(params, head, X)
    value = float(np.mean(cross_entropy(probs, np.asarray(labels))))
    value += config.alpha_c * head_penalty(head)
    if not getattr(params, "tied", False):
        value += config.alpha * backprop.smoothness_penalty(params)
    return value


__all__ = [
    "TrainConfig", "AdamState", "adam_step", "History", "train_coordinate_descent",
    "evaluate", "predict_proba", "dataset_loss", "TrainingDivergence", "ParamGrads",
]
