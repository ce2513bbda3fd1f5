"""Reverse-mode gradients, layer Jacobians and a finite-difference checker.

Jacobians here are conventional (``M[i, k] = d out_i / d in_k``). The adjoint
of a state is propagated as ``g <- M^T g``; with row-major batches that is
``G <- G @ M``. Writing the layer map as ``y' = y + h J K^T tanh(K y + b)``
the conventional Jacobian is ``I + h J K^T D K``, whose transpose
``I + h K^T D K J^T`` is the column-gradient form often quoted for these
networks.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import (HAMILTONIAN, ForwardCache, NetworkParams, OutputHead,
                     forward_network, layer_step, output_head, skew_from_triangle)
from .linalg import DimensionError

PROB_FLOOR = 1e-12


@dataclass
class ParamGrads:
    """Gradients shaped like ``(NetworkParams.K, NetworkParams.b, W, mu)``."""

    dK: list
    db: list
    dW: np.ndarray
    dmu: np.ndarray

    @classmethod
    def zeros_like(cls, params: NetworkParams, head: OutputHead):
        return cls([np.zeros_like(k) for k in params.K], [np.zeros_like(v) for v in params.b],
                   np.zeros_like(head.W), np.zeros_like(head.mu))

    def __add__(self, other):
        return ParamGrads([a + b for a, b in zip(self.dK, other.dK)],
                          [a + b for a, b in zip(self.db, other.db)],
                          self.dW + other.dW, self.dmu + other.dmu)

    def scaled(self, c):
        return ParamGrads([c * a for a in self.dK], [c * a for a in self.db], c * self.dW, c * self.dmu)

    def hidden_arrays(self, tied=False) -> list:
        """Gradients matching ``NetworkParams.hidden_arrays`` (summed over layers when tied)."""
        if tied:
            return [sum(self.dK), sum(self.db)] if self.dK else []
        return list(self.dK) + list(self.db)

    def head_arrays(self) -> list:
        return [self.dW, self.dmu]

    def flat(self) -> np.ndarray:
        parts = [a.ravel() for a in self.dK + self.db] + [self.dW.ravel(), self.dmu.ravel()]
        return np.concatenate(parts)


def cross_entropy(probs, labels):
    """``-log p[label]`` with probabilities floored at 1e-12 (vectorized over a batch)."""
    probs = np.asarray(probs, float)
    labels = np.asarray(labels)
    M = probs.shape[-1]
    if np.any(labels < 0) or np.any(labels >= M):
        raise ValueError(f"label out of range for {M} classes: {labels}")
    p = np.take_along_axis(np.atleast_2d(probs), np.atleast_1d(labels).reshape(-1, 1), axis=1)[:, 0]
    out = -np.log(np.maximum(p, PROB_FLOOR))
    return float(out[0]) if np.ndim(labels) == 0 else out


def head_backward(yN, head: OutputHead, labels):
    """Per-sample losses and the adjoints ``dL/dz`` (logits) for a batch."""
    probs = output_head(yN, head)
    losses = cross_entropy(probs, labels)
    if head.M == 2:
        dz = (probs[:, 0] - (labels == 0))[:, None]
    else:
        dz = probs.copy()
        dz[np.arange(len(labels)), labels] -= 1.0
    return np.atleast_1d(losses), dz


def backward(cache: ForwardCache, params: NetworkParams, head: OutputHead, labels, reduction="mean"):
    """Gradients of the cross-entropy loss w.r.t. every trainable scalar.

    ``cache`` must come from :func:`forward_network` on ``params``. Returns
    ``(ParamGrads, loss)``; with ``reduction="mean"`` both are averaged over
    the batch, with ``"sum"`` they are summed.
    """
    if cache.N != params.N or cache.ys[0].shape[-1] != params.n:
        raise DimensionError("stale cache: shape does not match the network parameters")
    labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
    ys = [np.atleast_2d(y) for y in cache.ys]
    B = ys[0].shape[0]
    if len(labels) != B:
        raise DimensionError(f"{len(labels)} labels for a batch of {B}")
    losses, dz = head_backward(ys[-1], head, labels)
    c = 1.0 / B if reduction == "mean" else 1.0
    dz = dz * c
    grads = ParamGrads.zeros_like(params, head)
    grads.dW = dz.T @ ys[-1]
    grads.dmu = dz.sum(axis=0)
    G = dz @ head.W
    for j in range(params.N - 1, -1, -1):
        acts = [np.atleast_2d(t) for t in cache.acts[j]]
        G, grads.dK[j], grads.db[j] = _layer_backward(params, j, ys[j], ys[j + 1], acts, G)
    loss = float(losses.sum() * c)
    return grads, loss


def _layer_backward(params, j, y, y1, acts, G):
    v, h, Kj, m = params.variant, params.h, params.K[j], params.n // 2
    if v in HAMILTONIAN:
        (t,) = acts
        dV = h * G @ params.J
        dA = (dV @ Kj.T) * (1.0 - t * t)
        dK = t.T @ dV + dA.T @ y
        return G + dA @ Kj, dK, dA.sum(axis=0)
    if v == "FCNN":
        (t,) = acts
        dA = G * (1.0 - t * t)
        return dA @ Kj, dA.T @ y, dA.sum(axis=0)
    if v == "MS2":
        (t,) = acts
        Kf = skew_from_triangle(Kj, params.n)
        dA = h * G * (1.0 - t * t)
        dKf = dA.T @ y
        iu = np.triu_indices(params.n, 1)
        return G + dA @ Kf, dKf[iu] - dKf.T[iu], dA.sum(axis=0)
    t1, t2 = acts
    yy, zz = y[:, :m], y[:, m:]
    Gy, Gz = G[:, :m], G[:, m:]
    if v == "MS1":
        z1 = y1[:, m:]
        dA2 = h * Gy * (1.0 - t2 * t2)
        dK0 = dA2.T @ z1
        Gz = Gz + dA2 @ Kj
        dA1 = -h * Gz * (1.0 - t1 * t1)
        dK0 = dK0 + yy.T @ dA1
        Gy = Gy + dA1 @ Kj.T
        return np.concatenate([Gy, Gz], axis=1), dK0, np.concatenate([dA1.sum(0), dA2.sum(0)])
    K1, K2 = Kj
    ynew = y1[:, :m]
    dV2 = -h * Gz
    dA2 = (dV2 @ K2.T) * (1.0 - t2 * t2)
    dK2 = t2.T @ dV2 + dA2.T @ ynew
    Gy = Gy + dA2 @ K2
    dV1 = h * Gy
    dA1 = (dV1 @ K1.T) * (1.0 - t1 * t1)
    dK1 = t1.T @ dV1 + dA1.T @ zz
    Gz = Gz + dA1 @ K1
    return np.concatenate([Gy, Gz], axis=1), np.stack([dK1, dK2]), np.concatenate([dA1.sum(0), dA2.sum(0)])


def smoothness_penalty(params: NetworkParams) -> float:
    """``R_K + R_b = (h/2) sum_j (|K_j - K_{j-1}|_F^2 + |b_j - b_{j-1}|^2)``."""
    total = 0.0
    for j in range(1, params.N):
        dk = params.K[j] - params.K[j - 1]
        db = params.b[j] - params.b[j - 1]
        total += float(np.sum(dk * dk) + np.sum(db * db))
    return 0.5 * params.h * total


def regularizer_grads(params: NetworkParams, alpha: float) -> tuple[list, list]:
    """Gradient of ``alpha * (R_K + R_b)`` as ``(dK list, db list)``."""
    c = alpha * params.h
    out = []
    for arrs in (params.K, params.b):
        g = [np.zeros_like(a) for a in arrs]
        for j in range(1, params.N):
            d = c * (arrs[j] - arrs[j - 1])
            g[j] += d
            g[j - 1] -= d
        out.append(g)
    return out[0], out[1]


def head_penalty(head: OutputHead) -> float:
    return float(np.sum(head.W ** 2) + np.sum(head.mu ** 2))


def objective(params, head, X, labels, alpha=0.0, alpha_c=0.0) -> float:
    """Mean cross-entropy plus output weight decay plus layer-smoothness penalty."""
    yN, _ = forward_network(X, params)
    data = float(np.mean(cross_entropy(np.atleast_2d(output_head(yN, head)), np.atleast_1d(labels))))
    return data + alpha_c * head_penalty(head) + alpha * smoothness_penalty(params)


def objective_grads(params, head, X, labels, alpha=0.0, alpha_c=0.0):
    """``(ParamGrads, value)`` of :func:`objective` in one forward/backward pass."""
    _, cache = forward_network(X, params)
    grads, loss = backward(cache, params, head, labels)
    if alpha and params.N > 1 and not params.tied:
        rK, rb = regularizer_grads(params, alpha)
        grads.dK = [g + r for g, r in zip(grads.dK, rK)]
        grads.db = [g + r for g, r in zip(grads.db, rb)]
    grads.dW = grads.dW + 2.0 * alpha_c * head.W
    grads.dmu = grads.dmu + 2.0 * alpha_c * head.mu
    value = loss + alpha_c * head_penalty(head) + alpha * smoothness_penalty(params)
    return grads, value


# ---------------------------------------------------------------------------
# Jacobians


def layer_jacobian(y, K, b, J, h) -> np.ndarray:
    """Conventional Jacobian ``I + h J K^T D K`` of one H1/H2 layer at ``y``."""
    y = np.asarray(y, float)
    D = 1.0 - np.tanh(y @ K.T + b) ** 2
    n = K.shape[1]
    return np.eye(n) + h * J @ (K.T * D) @ K


def layer_jacobian_verlet(y, K, b, h, variant) -> np.ndarray:
    """Jacobian of one MS1/MS3 layer: product of the two substep Jacobians."""
    y = np.asarray(y, float)
    n = y.shape[0]
    m = n // 2
    S1, S2 = np.eye(n), np.eye(n)
    if variant == "MS1":
        D1 = 1.0 - np.tanh(y[:m] @ K + b[:m]) ** 2
        z1 = y[m:] - h * np.tanh(y[:m] @ K + b[:m])
        D2 = 1.0 - np.tanh(z1 @ K.T + b[m:]) ** 2
        S1[m:, :m] = -h * D1[:, None] * K.T
        S2[:m, m:] = h * D2[:, None] * K
    elif variant == "MS3":
        K1, K2 = K
        D1 = 1.0 - np.tanh(y[m:] @ K1.T + b[:m]) ** 2
        y1 = y[:m] + h * np.tanh(y[m:] @ K1.T + b[:m]) @ K1
        D2 = 1.0 - np.tanh(y1 @ K2.T + b[m:]) ** 2
        S1[:m, m:] = h * (K1.T * D1) @ K1
        S2[m:, :m] = -h * (K2.T * D2) @ K2
    else:
        raise ValueError(f"layer_jacobian_verlet handles MS1/MS3, got {variant}")
    return S2 @ S1


def network_layer_jacobians(params: NetworkParams, y0) -> list:
    """Jacobian of every layer along the trajectory from ``y0``.

    Works for a single state (``(n, n)`` matrices) or a batch (``(B, n, n)``).
    """
    y0 = np.asarray(y0, float)
    single = y0.ndim == 1
    Y = np.atleast_2d(y0)
    B, n = Y.shape
    eye = np.broadcast_to(np.eye(n), (B, n, n))
    out = []
    m = n // 2
    for j in range(params.N):
        Y1, _, acts = layer_step(params, j, Y)
        Kj, h, v = params.K[j], params.h, params.variant
        if v in HAMILTONIAN:
            D = 1.0 - acts[0] ** 2
            KtDK = np.einsum("ki,bk,kj->bij", Kj, D, Kj)
            M = eye + h * np.einsum("il,blj->bij", params.J, KtDK)
        elif v == "FCNN":
            M = (1.0 - acts[0] ** 2)[:, :, None] * Kj
        elif v == "MS2":
            M = eye + h * (1.0 - acts[0] ** 2)[:, :, None] * skew_from_triangle(Kj, n)
        else:
            D1, D2 = 1.0 - acts[0] ** 2, 1.0 - acts[1] ** 2
            S1 = np.tile(np.eye(n), (B, 1, 1))
            S2 = np.tile(np.eye(n), (B, 1, 1))
            if v == "MS1":
                S1[:, m:, :m] = -h * D1[:, :, None] * Kj.T
                S2[:, :m, m:] = h * D2[:, :, None] * Kj
            else:
                K1, K2 = Kj
                S1[:, :m, m:] = h * np.einsum("ki,bk,kj->bij", K1, D1, K1)
                S2[:, m:, :m] = -h * np.einsum("ki,bk,kj->bij", K2, D2, K2)
            M = S2 @ S1
        out.append(M[0] if single else M)
        Y = Y1
    return out


def ode_jacobian(y, K, b, variant, J=None) -> np.ndarray:
    """Jacobian of the continuous vector field a layer discretizes."""
    y = np.asarray(y, float)
    n = y.shape[0]
    m = n // 2
    if variant in HAMILTONIAN:
        D = 1.0 - np.tanh(y @ K.T + b) ** 2
        return J @ (K.T * D) @ K
    if variant == "MS2":
        Kf = skew_from_triangle(K, n)
        return (1.0 - np.tanh(y @ Kf.T + b) ** 2)[:, None] * Kf
    A = np.zeros((n, n))
    if variant == "MS1":
        D1 = 1.0 - np.tanh(y[:m] @ K + b[:m]) ** 2
        D2 = 1.0 - np.tanh(y[m:] @ K.T + b[m:]) ** 2
        A[:m, m:] = D2[:, None] * K
        A[m:, :m] = -D1[:, None] * K.T
        return A
    if variant == "MS3":
        K1, K2 = K
        D1 = 1.0 - np.tanh(y[m:] @ K1.T + b[:m]) ** 2
        D2 = 1.0 - np.tanh(y[:m] @ K2.T + b[m:]) ** 2
        A[:m, m:] = (K1.T * D1) @ K1
        A[m:, :m] = -(K2.T * D2) @ K2
        return A
    raise ValueError(f"no continuous-time model for {variant}")


# ---------------------------------------------------------------------------
# finite differences


@dataclass
class FDReport:
    max_rel_err: float
    worst: tuple
    checked: int
    failed: int

    @property
    def passed(self) -> bool:
        return self.failed == 0


def _named_arrays(params, head):
    if params.tied:
        yield "K[*]", params.K[0]
        yield "b[*]", params.b[0]
    else:
        for j, a in enumerate(params.K):
            yield f"K[{j}]", a
        for j, a in enumerate(params.b):
            yield f"b[{j}]", a
    yield "W", head.W
    yield "mu", head.mu


def finite_difference_check(params, head, X, labels, eps=1e-5, alpha=0.0, alpha_c=0.0,
                            rtol=1e-5, atol=1e-8) -> FDReport:
    """Compare :func:`objective_grads` against central differences.

    Every trainable scalar is perturbed by ``+-eps``. A coordinate fails when
    both its relative error exceeds ``rtol`` and its absolute error exceeds
    ``atol``. The worst coordinate by relative error is reported.
    """
    if not 1e-8 <= eps <= 1e-3:
        raise ValueError(f"eps must lie in [1e-8, 1e-3], got {eps}")
    params, head = params.copy(), head.copy()
    grads, _ = objective_grads(params, head, X, labels, alpha, alpha_c)
    analytic = grads.hidden_arrays(params.tied) + grads.head_arrays()
    worst, worst_err, checked, failed = None, 0.0, 0, 0
    for (name, arr), g in zip(_named_arrays(params, head), analytic):
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + eps
            fp = objective(params, head, X, labels, alpha, alpha_c)
            arr[idx] = old - eps
            fm = objective(params, head, X, labels, alpha, alpha_c)
            arr[idx] = old
            fd = (fp - fm) / (2 * eps)
            diff = abs(fd - g[idx])
            rel = diff / max(abs(fd), abs(g[idx]), np.finfo(float).tiny)
            checked += 1
            if rel > rtol and diff > atol:
                failed += 1
            if max(abs(fd), abs(g[idx])) > atol and rel > worst_err:
                worst, worst_err = (name, idx), rel
    return FDReport(float(worst_err), worst, checked, failed)
