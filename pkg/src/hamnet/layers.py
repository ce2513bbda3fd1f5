"""Energy function, interconnection matrices and layer maps.

All layer functions use the row convention: a state is a 1-d array of length
``n`` or a batch of shape ``(B, n)``, and ``K @ y`` is written ``y @ K.T`` so
the same code serves both.

Per-layer parameter storage depends on the variant:

======  =======================  ==========================================
variant K_j stored as            b_j
======  =======================  ==========================================
H1, H2  ``(n, n)``               ``(n,)``
FCNN    ``(n, n)``               ``(n,)``
MS1     ``(n/2, n/2)`` (K_0)     ``(n,)`` = (b_1 for the z step, b_2 for y)
MS2     ``(n(n-1)/2,)`` upper    ``(n,)``
        triangle of a skew K
MS3     ``(2, n/2, n/2)`` (K_1,  ``(n,)`` = (b_1, b_2)
        K_2)
======  =======================  ==========================================
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .linalg import DimensionError, NonFiniteError

VARIANTS = ("H1", "H2", "MS1", "MS2", "MS3", "FCNN")
HAMILTONIAN = ("H1", "H2")
VERLET = ("MS1", "MS3")
_EVEN = ("H1", "MS1", "MS3")


def check_variant(variant: str, n: int) -> str:
    variant = str(variant).upper()
    if variant not in VARIANTS:
        raise ValueError(f"unknown architecture {variant!r}; expected one of {VARIANTS}")
    if n < 1:
        raise ValueError(f"state dimension must be positive, got {n}")
    if variant in _EVEN and n % 2:
        raise ValueError(f"{variant} needs an even state dimension, got n={n}")
    return variant


def log_cosh(x):
    x = np.abs(x)
    return x + np.log1p(np.exp(-2.0 * x)) - np.log(2.0)


def hamiltonian_energy(y, K, b) -> float:
    """Sum of log cosh over the entries of ``K y + b``."""
    y, K, b = np.asarray(y, float), np.asarray(K, float), np.asarray(b, float)
    if K.ndim != 2 or y.shape[-1] != K.shape[1] or b.shape != (K.shape[0],):
        raise DimensionError(f"energy: K {K.shape}, y {y.shape}, b {b.shape}")
    return float(np.sum(log_cosh(y @ K.T + b)))


def hamiltonian_gradient(y, K, b) -> np.ndarray:
    """``K^T tanh(K y + b)``, the gradient of :func:`hamiltonian_energy`."""
    y, K, b = np.asarray(y, float), np.asarray(K, float), np.asarray(b, float)
    if K.ndim != 2 or y.shape[-1] != K.shape[1] or b.shape != (K.shape[0],):
        raise DimensionError(f"gradient: K {K.shape}, y {y.shape}, b {b.shape}")
    return np.tanh(y @ K.T + b) @ K


def make_interconnection(variant: str, n: int) -> np.ndarray:
    """Constant skew-symmetric J for H1 (also used by MS3) and H2."""
    variant = str(variant).upper()
    if variant in ("H1", "MS3"):
        if n % 2:
            raise ValueError(f"{variant} interconnection needs even n, got {n}")
        m = n // 2
        J = np.zeros((n, n))
        J[:m, m:] = np.eye(m)
        J[m:, :m] = -np.eye(m)
        return J
    if variant == "H2":
        return np.triu(np.ones((n, n)), 1) - np.tril(np.ones((n, n)), -1)
    raise ValueError(f"no constant interconnection matrix for {variant}")


def skew_from_triangle(upper: np.ndarray, n: int) -> np.ndarray:
    K = np.zeros((n, n))
    iu = np.triu_indices(n, 1)
    K[iu] = upper
    return K - K.T


def forward_layer_h(y, K, b, J, h):
    """One Euler step of the Hamiltonian ODE: ``y + h J K^T tanh(K y + b)``."""
    K = np.asarray(K, float)
    y = np.asarray(y, float)
    if K.shape != (y.shape[-1],) * 2 or J.shape != K.shape:
        raise DimensionError(f"forward_layer_h: y {y.shape}, K {K.shape}, J {J.shape}")
    return y + h * (np.tanh(y @ K.T + b) @ K) @ J.T


def forward_layer_ms1(y, z, K0, b1, b2, h):
    z1 = z - h * np.tanh(y @ K0 + b1)
    y1 = y + h * np.tanh(z1 @ K0.T + b2)
    return y1, z1


def forward_layer_ms2(y, K, b, h):
    return y + h * np.tanh(y @ K.T + b)


def forward_layer_ms3(y, z, K1, K2, b1, b2, h):
    y1 = y + h * np.tanh(z @ K1.T + b1) @ K1
    z1 = z - h * np.tanh(y1 @ K2.T + b2) @ K2
    return y1, z1


def forward_layer_fcnn(y, K, b):
    return np.tanh(y @ K.T + b)


@dataclass
class NetworkParams:
    """Hidden-layer parameters of an N-layer network.

    With ``tied=True`` every entry of ``K`` (and of ``b``) is the same array
    object, giving a time-invariant network; optimizers update layer 0 only.
    """

    variant: str
    n: int
    h: float
    K: list = field(default_factory=list)
    b: list = field(default_factory=list)
    tied: bool = False

    def __post_init__(self):
        self.variant = check_variant(self.variant, self.n)
        if len(self.K) != len(self.b):
            raise DimensionError(f"{len(self.K)} K blocks but {len(self.b)} b blocks")
        shape = self.k_shape
        for j, (Kj, bj) in enumerate(zip(self.K, self.b)):
            if Kj.shape != shape or bj.shape != (self.n,):
                raise DimensionError(
                    f"layer {j}: K {Kj.shape} (want {shape}), b {bj.shape} (want ({self.n},))")
        self.J = make_interconnection(self.variant, self.n) if self.variant in HAMILTONIAN else None

    @property
    def N(self) -> int:
        return len(self.K)

    @property
    def k_shape(self) -> tuple:
        n, m = self.n, self.n // 2
        return {
            "MS1": (m, m),
            "MS2": (n * (n - 1) // 2,),
            "MS3": (2, m, m),
        }.get(self.variant, (n, n))

    @classmethod
    def initialize(cls, variant, n, N, h, rng=None, tied=False):
        """Gaussian K entries with std ``1/sqrt(n)``, zero biases."""
        rng = np.random.default_rng(rng)
        variant = check_variant(variant, n)
        proto = cls(variant, n, h)
        std = 1.0 / np.sqrt(n)
        if tied and N:
            K0 = rng.normal(0.0, std, proto.k_shape)
            b0 = np.zeros(n)
            return cls(variant, n, h, [K0] * N, [b0] * N, tied=True)
        K = [rng.normal(0.0, std, proto.k_shape) for _ in range(N)]
        b = [np.zeros(n) for _ in range(N)]
        return cls(variant, n, h, K, b)

    def full_K(self, j: int) -> np.ndarray:
        """The n-by-n weight of layer ``j`` in its underlying-ODE block form."""
        Kj, m = self.K[j], self.n // 2
        if self.variant == "MS1":
            out = np.zeros((self.n, self.n))
            out[:m, m:] = Kj
            out[m:, :m] = -Kj.T
            return out
        if self.variant == "MS2":
            return skew_from_triangle(Kj, self.n)
        if self.variant == "MS3":
            out = np.zeros((self.n, self.n))
            out[:m, m:] = Kj[0]
            out[m:, :m] = Kj[1]
            return out
        return Kj

    def params_per_layer(self) -> int:
        return int(np.prod(self.k_shape)) + self.n

    def hidden_arrays(self) -> list:
        """Distinct trainable arrays, in (K..., b...) order."""
        if self.tied:
            return [self.K[0], self.b[0]] if self.N else []
        return list(self.K) + list(self.b)

    def copy(self) -> "NetworkParams":
        if self.tied and self.N:
            K0, b0 = self.K[0].copy(), self.b[0].copy()
            return NetworkParams(self.variant, self.n, self.h, [K0] * self.N, [b0] * self.N, True)
        return NetworkParams(self.variant, self.n, self.h,
                             [k.copy() for k in self.K], [v.copy() for v in self.b], self.tied)


@dataclass
class OutputHead:
    """Linear read-out plus logistic (two classes) or softmax (more).

    For ``M == 2`` the weights are ``W`` of shape ``(1, n)`` and ``mu`` of
    shape ``(1,)``; otherwise ``(M, n)`` and ``(M,)``.
    """

    W: np.ndarray
    mu: np.ndarray
    M: int

    def __post_init__(self):
        if self.M < 2:
            raise ValueError(f"need at least two classes, got M={self.M}")
        rows = 1 if self.M == 2 else self.M
        if self.W.ndim != 2 or self.W.shape[0] != rows or self.mu.shape != (rows,):
            raise DimensionError(f"head for M={self.M}: W {self.W.shape}, mu {self.mu.shape}")

    @classmethod
    def zeros(cls, n, M):
        rows = 1 if M == 2 else M
        return cls(np.zeros((rows, n)), np.zeros(rows), M)

    @property
    def n(self) -> int:
        return self.W.shape[1]

    def copy(self) -> "OutputHead":
        return OutputHead(self.W.copy(), self.mu.copy(), self.M)


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def softmax(z):
    z = z - np.max(z, axis=-1, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=-1, keepdims=True)


def output_head(yN, head: OutputHead) -> np.ndarray:
    """Class probabilities; for two classes ``(p, 1 - p)`` with ``p = sigmoid(W y + mu)``."""
    yN = np.asarray(yN, float)
    if yN.shape[-1] != head.n:
        raise DimensionError(f"output_head: state dim {yN.shape[-1]} vs W {head.W.shape}")
    z = yN @ head.W.T + head.mu
    if head.M == 2:
        p = _sigmoid(np.atleast_1d(z[..., 0]))
        if yN.ndim == 1:
            p = p[0]
        return np.stack([p, 1.0 - p], axis=-1)
    return softmax(z)


@dataclass
class ForwardCache:
    """States ``y_0..y_N`` and per-layer tanh outputs.

    ``acts[j]`` is a tuple with one tanh output per substep (two for the
    Verlet variants), ``pre[j]`` the matching pre-activations. ``D(j)``
    returns ``1 - tanh^2`` for the first (or only) substep.
    """

    ys: list
    pre: list
    acts: list

    @property
    def N(self) -> int:
        return len(self.acts)

    def D(self, j: int, sub: int = 0) -> np.ndarray:
        t = self.acts[j][sub]
        return 1.0 - t * t


def layer_step(params: NetworkParams, j: int, y):
    """Apply layer ``j``; returns the new state and (pre-activations, tanh outputs)."""
    v, Kj, bj, h, m = params.variant, params.K[j], params.b[j], params.h, params.n // 2
    if v in HAMILTONIAN:
        a = y @ Kj.T + bj
        t = np.tanh(a)
        return y + h * (t @ Kj) @ params.J.T, (a,), (t,)
    if v == "FCNN":
        a = y @ Kj.T + bj
        t = np.tanh(a)
        return t, (a,), (t,)
    if v == "MS2":
        a = y @ skew_from_triangle(Kj, params.n).T + bj
        t = np.tanh(a)
        return y + h * t, (a,), (t,)
    yy, zz = y[..., :m], y[..., m:]
    if v == "MS1":
        a1 = yy @ Kj + bj[:m]
        t1 = np.tanh(a1)
        z1 = zz - h * t1
        a2 = z1 @ Kj.T + bj[m:]
        t2 = np.tanh(a2)
        y1 = yy + h * t2
    else:  # MS3
        K1, K2 = Kj
        a1 = zz @ K1.T + bj[:m]
        t1 = np.tanh(a1)
        y1 = yy + h * t1 @ K1
        a2 = y1 @ K2.T + bj[m:]
        t2 = np.tanh(a2)
        z1 = zz - h * t2 @ K2
    return np.concatenate([y1, z1], axis=-1), (a1, a2), (t1, t2)


def forward_network(y0, params: NetworkParams):
    """Propagate ``y0`` (vector or batch) through all N layers.

    Returns ``(y_N, cache)``. Raises :class:`NonFiniteError` naming the first
    layer whose output is not finite.
    """
    y = np.asarray(y0, dtype=np.float64)
    if y.shape[-1] != params.n:
        raise DimensionError(f"input dim {y.shape[-1]} != network dim {params.n}")
    ys, pre, acts = [y], [], []
    for j in range(params.N):
        with np.errstate(over="ignore", invalid="ignore"):
            y, a, t = layer_step(params, j, y)
        if not np.all(np.isfinite(y)):
            raise NonFiniteError(f"non-finite state after layer {j}")
        ys.append(y)
        pre.append(a)
        acts.append(t)
    return y, ForwardCache(ys, pre, acts)
