"""Backward-sensitivity diagnostics for Hamiltonian networks.

* layer-to-output Jacobian norms ``|dy_N / dy_{j+1}|_2`` along a trajectory,
  and a training callback that records them,
* RK4 integration of the continuous backward sensitivity ``Phi(T, T - t)``
  for a time-invariant network, with a convergence study against the
  discrete Jacobian product,
* spectral checks showing ``K^T D K J^T`` is similar to a skew-symmetric
  matrix, and the norm envelope of ``exp(A t)``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .backprop import network_layer_jacobians
from .data import augment_features, gen_double_moons
from .layers import NetworkParams, OutputHead
from .linalg import NonFiniteError, eigenvalues_qr, frobenius_norm, spectral_norm
from .training import TrainConfig, evaluate, train_coordinate_descent


@dataclass
class SensitivityMatrix:
    value: np.ndarray
    T: float
    t: float


@dataclass
class GradNormTrace:
    iteration: list = field(default_factory=list)
    layer: list = field(default_factory=list)
    norm: list = field(default_factory=list)

    def add(self, it, j, value):
        self.iteration.append(it)
        self.layer.append(j)
        self.norm.append(float(value))

    def series(self, j) -> np.ndarray:
        lay = np.asarray(self.layer)
        return np.asarray(self.norm)[lay == j]

    def layers(self) -> list:
        return sorted(set(self.layer))

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "layer", "norm"])
            for row in zip(self.iteration, self.layer, self.norm):
                w.writerow([row[0], row[1], repr(row[2])])


def default_layers(N, stride=10) -> list:
    return list(range(0, max(N - 1, 0), stride))


def sensitivity_products(params: NetworkParams, y0, layers) -> dict:
    """``{j: dy_N/dy_{j+1}}`` for each requested ``j`` (batched if ``y0`` is)."""
    layers = sorted(set(layers))
    N = params.N
    for j in layers:
        if not 0 <= j <= N - 1:
            raise ValueError(f"layer index {j} outside [0, {N - 1}]")
    Ms = network_layer_jacobians(params, y0)
    y0 = np.asarray(y0, float)
    eye = np.eye(params.n) if y0.ndim == 1 else np.broadcast_to(np.eye(params.n), (len(y0), params.n, params.n))
    out = {}
    P = eye
    if N - 1 in layers:
        out[N - 1] = eye.copy()
    for l in range(N - 1, 0, -1):
        P = P @ Ms[l]
        if l - 1 in layers:
            out[l - 1] = P
    return out


def backward_sensitivity_norms(params: NetworkParams, y0, layer_subset=None) -> list:
    """``[(j, |dy_N/dy_{j+1}|_2)]`` along the trajectory from ``y0``.

    ``j = N - 1`` is the empty product and gives exactly 1. For a batch of
    inputs the reported norm is the mean over samples.
    """
    if layer_subset is None:
        layer_subset = range(params.N)
    prods = sensitivity_products(params, y0, layer_subset)
    out = []
    for j in sorted(prods):
        P = prods[j]
        if j == params.N - 1:
            out.append((j, 1.0))
        elif P.ndim == 2:
            out.append((j, spectral_norm(P)))
        else:
            out.append((j, float(np.mean(np.linalg.norm(P, 2, axis=(1, 2))))))
    return out


class GradNormTracker:
    """Training callback recording mean sensitivity norms on each mini-batch."""

    def __init__(self, layers=None, every=1):
        self.layers = layers
        self.every = every
        self.trace = GradNormTrace()

    def __call__(self, it, params, head, Xb, yb):
        if it % self.every:
            return
        layers = self.layers if self.layers is not None else default_layers(params.N)
        for j, v in backward_sensitivity_norms(params, Xb, layers):
            self.trace.add(it, j, v)


# ---------------------------------------------------------------------------
# continuous-time backward dynamics


def _field(K, b, J):
    return lambda y: (np.tanh(y @ K.T + b) @ K) @ J.T


def _ode_jac(K, b, J, y):
    D = 1.0 - np.tanh(K @ y + b) ** 2
    return J @ (K.T * D) @ K


def integrate_backward_gradient_ode(K, b, J, y0, T, steps, checkpoints=None) -> list:
    """Integrate ``dPhi/dt = Phi A(y(T - t))``, ``Phi(0) = I``, with RK4.

    ``A = J K^T D(y) K`` is the conventional Jacobian of the time-invariant
    Hamiltonian field, so ``Phi(t) = dy(T)/dy(T - t)``. The forward state is
    integrated first with RK4 on a half-step grid, which supplies the
    midpoint states the backward stages need. ``checkpoints`` are step
    indices to return (default: every step).
    """
    if steps < 10:
        raise ValueError(f"need at least 10 steps, got {steps}")
    K, b, J = np.asarray(K, float), np.asarray(b, float), np.asarray(J, float)
    f = _field(K, b, J)
    dt = T / steps
    half = dt / 2
    ys = [np.asarray(y0, float)]
    y = ys[0]
    for _ in range(2 * steps):
        k1 = f(y)
        k2 = f(y + half / 2 * k1)
        k3 = f(y + half / 2 * k2)
        k4 = f(y + half * k3)
        y = y + half / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        ys.append(y)
    if not np.all(np.isfinite(ys[-1])):
        raise NonFiniteError("forward trajectory is not finite")
    # ys[i] is y(i * dt / 2); backward time t maps to index 2*steps - 2*t/dt
    A = [_ode_jac(K, b, J, yy) for yy in ys]
    n = K.shape[1]
    Phi = np.eye(n)
    wanted = set(range(steps + 1)) if checkpoints is None else set(checkpoints)
    out = [SensitivityMatrix(Phi.copy(), T, 0.0)] if 0 in wanted else []
    top = 2 * steps
    for k in range(steps):
        i0 = top - 2 * k
        a0, am, a1 = A[i0], A[i0 - 1], A[i0 - 2]
        k1 = Phi @ a0
        k2 = (Phi + dt / 2 * k1) @ am
        k3 = (Phi + dt / 2 * k2) @ am
        k4 = (Phi + dt * k3) @ a1
        Phi = Phi + dt / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(Phi)):
            raise NonFiniteError(f"sensitivity not finite at step {k + 1}")
        if k + 1 in wanted:
            out.append(SensitivityMatrix(Phi.copy(), T, (k + 1) * dt))
    return out


def euler_jacobian_product(K, b, J, y0, T, N) -> np.ndarray:
    """``dy_N/dy_0`` of an N-layer tied Euler network with ``h = T / N``."""
    K, b, J = np.asarray(K, float), np.asarray(b, float), np.asarray(J, float)
    f = _field(K, b, J)
    h = T / N
    y = np.asarray(y0, float)
    P = np.eye(K.shape[1])
    for _ in range(N):
        P = (np.eye(len(y)) + h * _ode_jac(K, b, J, y)) @ P
        y = y + h * f(y)
    return P


def richardson_study(K, b, J, y0, T, Ns=(64, 128, 256), ref_steps=4096) -> list:
    """Error of the discrete Jacobian product against the RK4 ``Phi(T, 0)``.

    Returns rows ``(N, h, error, ratio)`` where ``ratio`` is the previous
    error divided by this one (about 2 for first-order convergence).
    """
    ref = integrate_backward_gradient_ode(K, b, J, y0, T, ref_steps, checkpoints=[ref_steps])[-1].value
    rows, prev = [], None
    for N in Ns:
        err = frobenius_norm(euler_jacobian_product(K, b, J, y0, T, N) - ref)
        rows.append((N, T / N, err, prev / err if prev else float("nan")))
        prev = err
    return rows


# ---------------------------------------------------------------------------
# spectra


@dataclass
class SpectrumReport:
    skew_residual: float
    rel_skew_residual: float
    normality_residual: float
    max_re_lambda: float
    tol: float = 1e-10

    @property
    def passed(self) -> bool:
        return self.skew_residual < self.tol


def check_marginal_stability_spectrum(K, b, y, J, tol=1e-10) -> SpectrumReport:
    """Check that ``K^T D K J^T`` has a purely imaginary, semisimple spectrum.

    With ``D = diag(tanh'(K y + b)) > 0`` the matrix is similar (through
    ``D^{1/2}``, using eig(AB) = eig(BA)) to ``S = D^{1/2} K J^T K^T D^{1/2}``,
    which is skew-symmetric exactly when J is. The report carries
    ``|S + S^T|_F``, its ratio to ``|S|_F``, the normality residual
    ``|S S^T - S^T S|_F``, and the largest real part among the eigenvalues of
    ``K^T D K J^T`` computed by QR iteration. ``passed`` tests the skew
    residual against ``tol``.
    """
    K, b, y, J = (np.asarray(a, float) for a in (K, b, y, J))
    D = 1.0 - np.tanh(K @ y + b) ** 2
    X = np.sqrt(D)[:, None] * K
    S = X @ J.T @ X.T
    skew = frobenius_norm(S + S.T)
    size = frobenius_norm(S)
    normal = frobenius_norm(S @ S.T - S.T @ S)
    A = (K.T * D) @ K @ J.T
    eigs = eigenvalues_qr(A)
    max_re = max(abs(e.real) for e in eigs) if eigs else 0.0
    return SpectrumReport(skew, skew / size if size else 0.0, normal, max_re, tol)


def exp_norm_envelope(A, t_grid, dt=0.01) -> list:
    """``(sigma_max, sigma_min)`` of ``Phi(t)``, ``dPhi/dt = A Phi``, ``Phi(0) = I``.

    RK4 with step at most ``dt`` between consecutive grid points.
    """
    A = np.asarray(A, float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ValueError(f"A must be square, got {A.shape}")
    Phi = np.eye(A.shape[0])
    t_prev = 0.0
    out = []
    for t in t_grid:
        span = t - t_prev
        if span < 0:
            raise ValueError("t_grid must be non-decreasing and start at or after 0")
        k = int(np.ceil(span / dt)) if span > 0 else 0
        step = span / k if k else 0.0
        for _ in range(k):
            k1 = A @ Phi
            k2 = A @ (Phi + step / 2 * k1)
            k3 = A @ (Phi + step / 2 * k2)
            k4 = A @ (Phi + step * k3)
            Phi = Phi + step / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
        if not np.all(np.isfinite(Phi)):
            raise NonFiniteError(f"Phi not finite at t={t}")
        s = np.linalg.svd(Phi, compute_uv=False)
        out.append((float(s[0]), float(s[-1])))
        t_prev = t
    return out


def similarity_bound(K, b, y) -> float:
    """Upper bound on ``|exp(K^T D K J^T t)|_2`` valid for all t and any skew J.

    ``A = P J^T`` with ``P = K^T D K`` positive definite equals
    ``P^{1/2} (P^{1/2} J^T P^{1/2}) P^{-1/2}``; the middle factor generates an
    orthogonal flow, so the norm is at most ``sqrt(cond(P))``.
    """
    K, b, y = (np.asarray(a, float) for a in (K, b, y))
    D = 1.0 - np.tanh(K @ y + b) ** 2
    w = np.linalg.eigvalsh((K.T * D) @ K)
    return float(np.sqrt(w[-1] / w[0]))


# ---------------------------------------------------------------------------
# training-time studies


def gradient_norm_study(variant="H1", N=64, T=0.2, tied=False, epochs=24, s=5000,
                        alpha_c=1e-4, seed=0, layers=None, config=None):
    """Train on double moons while tracking ``|dy_N/dy_{j+1}|_2`` every iteration.

    Returns ``(trace, test_accuracy, params, head)``.
    """
    train = augment_features(gen_double_moons(s, seed=seed), 4)
    test = augment_features(gen_double_moons(s, seed=seed + 1000), 4)
    h = T / N if variant != "FCNN" else 1.0
    params = NetworkParams.initialize(variant, 4, N, h, seed, tied=tied)
    head = OutputHead.zeros(4, 2)
    cfg = config or TrainConfig(epochs=epochs, alpha_c=alpha_c, seed=seed)
    tracker = GradNormTracker(layers if layers is not None else default_layers(N))
    train_coordinate_descent(params, head, train.X, train.y, cfg, callback=tracker)
    return tracker.trace, evaluate(params, head, test.X, test.y), params, head


def fcnn_vanishing_demo(N=32, epochs=24, seed=0, config=None):
    """32-layer tanh FCNN on double moons with output weight decay 2e-4.

    Returns ``(trace, test_accuracy)``; the trace follows layer ``j = 0``.
    """
    cfg = config or TrainConfig(epochs=epochs, alpha_c=2e-4, seed=seed)
    trace, acc, _, _ = gradient_norm_study("FCNN", N=N, epochs=epochs, seed=seed,
                                           layers=[0], config=cfg)
    return trace, acc
