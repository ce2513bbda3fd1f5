"""Convolutional Hamiltonian networks for 28x28 images.

A bias-free 3x3 convolution lifts the image from 1 to 8 channels. For the
H2 variant each layer then applies

    y <- y + h * J * conv_T(tanh(conv(y, K_j) + b_j), K_j)

where ``conv_T`` is the adjoint of the same-padded convolution and ``J`` (the
8x8 H2 sign matrix) mixes channels identically at every pixel. The MS1
variant splits the channels into halves ``(y, z)`` of 4 each and takes the
two Verlet substeps with a 4-to-4 kernel ``K0``:

    z <- z - h tanh(conv_T(y, K0) + b1),   y <- y + h tanh(conv(z, K0) + b2)

States are kept channels-last, ``(B, 28, 28, 8)``, and flattened row-major to
6272 features for the output head. Kernels are ``(3, 3, C_in, C_out)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backprop import ParamGrads
from .layers import make_interconnection
from .linalg import DimensionError, NonFiniteError

SIDE = 28
CHANNELS = 8
KSIZE = 3
CONV_VARIANTS = ("H2", "MS1")


def im2col(x: np.ndarray) -> np.ndarray:
    """``(B, H, W, C)`` -> ``(B, H, W, 9 C)`` patches of a zero-padded 3x3 window."""
    B, H, W, C = x.shape
    xp = np.zeros((B, H + 2, W + 2, C))
    xp[:, 1:-1, 1:-1] = x
    cols = np.empty((B, H, W, KSIZE, KSIZE, C))
    for di in range(KSIZE):
        for dj in range(KSIZE):
            cols[:, :, :, di, dj] = xp[:, di:di + H, dj:dj + W]
    return cols.reshape(B, H, W, KSIZE * KSIZE * C)


def col2im(cols: np.ndarray, C: int) -> np.ndarray:
    """Adjoint of :func:`im2col`: scatter-add patches back onto the image."""
    B, H, W, _ = cols.shape
    cols = cols.reshape(B, H, W, KSIZE, KSIZE, C)
    xp = np.zeros((B, H + 2, W + 2, C))
    for di in range(KSIZE):
        for dj in range(KSIZE):
            xp[:, di:di + H, dj:dj + W] += cols[:, :, :, di, dj]
    return xp[:, 1:-1, 1:-1]


def conv(x, kernel):
    """Same-padded 3x3 cross-correlation, channels-last."""
    kh, kw, cin, cout = kernel.shape
    if x.shape[-1] != cin:
        raise DimensionError(f"conv: input has {x.shape[-1]} channels, kernel expects {cin}")
    return im2col(x) @ kernel.reshape(kh * kw * cin, cout)


def conv_transpose(t, kernel):
    kh, kw, cin, cout = kernel.shape
    return col2im(t @ kernel.reshape(kh * kw * cin, cout).T, cin)


@dataclass
class ConvCache:
    x: np.ndarray
    ys: list = field(default_factory=list)
    acts: list = field(default_factory=list)


@dataclass
class ConvHamiltonianNet:
    """Lifting convolution plus ``N`` convolutional H2 or MS1 layers."""

    lift: np.ndarray
    K: list
    b: list
    h: float
    variant: str = "H2"
    tied: bool = False

    def __post_init__(self):
        if self.variant not in CONV_VARIANTS:
            raise ValueError(f"convolutional variant must be one of {CONV_VARIANTS}, got {self.variant}")
        if self.lift.shape != (KSIZE, KSIZE, 1, CHANNELS):
            raise DimensionError(f"lift kernel must be (3, 3, 1, 8), got {self.lift.shape}")
        c = self._kchannels()
        for j, (k, v) in enumerate(zip(self.K, self.b)):
            if k.shape != (KSIZE, KSIZE, c, c) or v.shape != (CHANNELS,):
                raise DimensionError(f"layer {j}: K {k.shape}, b {v.shape}")
        self.J = make_interconnection("H2", CHANNELS)

    def _kchannels(self):
        return CHANNELS if self.variant == "H2" else CHANNELS // 2

    @property
    def N(self):
        return len(self.K)

    @property
    def n(self):
        return SIDE * SIDE * CHANNELS

    @classmethod
    def initialize(cls, N, h, rng=None, variant="H2"):
        """Kernel entries Gaussian with std ``1/sqrt(fan_in)``; zero biases."""
        rng = np.random.default_rng(rng)
        c = CHANNELS if variant == "H2" else CHANNELS // 2
        lift = rng.normal(0.0, 1.0 / KSIZE, (KSIZE, KSIZE, 1, CHANNELS))
        std = 1.0 / np.sqrt(KSIZE * KSIZE * c)
        K = [rng.normal(0.0, std, (KSIZE, KSIZE, c, c)) for _ in range(N)]
        b = [np.zeros(CHANNELS) for _ in range(N)]
        return cls(lift, K, b, h, variant)

    def hidden_arrays(self):
        return list(self.K) + list(self.b) + [self.lift]

    def grad_arrays(self, grads):
        return list(grads.dK) + list(grads.db) + [grads.dlift]

    def copy(self):
        return ConvHamiltonianNet(self.lift.copy(), [k.copy() for k in self.K],
                                  [v.copy() for v in self.b], self.h, self.variant)

    def params_per_layer(self):
        c = self._kchannels()
        return KSIZE * KSIZE * c * c + CHANNELS

    def _images(self, X):
        X = np.asarray(X, dtype=np.float64)
        if X.ndim == 1:
            X = X[None]
        if X.shape[1:] not in ((SIDE * SIDE,), (SIDE, SIDE)):
            raise DimensionError(f"expected 28x28 images, got shape {X.shape}")
        return X.reshape(-1, SIDE, SIDE, 1)

    def forward(self, X):
        """Returns flattened final states ``(B, 6272)`` and a cache for backprop."""
        x = self._images(X)
        y = conv(x, self.lift)
        cache = ConvCache(x, [y])
        for j in range(self.N):
            y, t = self._step(j, y)
            if not np.all(np.isfinite(y)):
                raise NonFiniteError(f"non-finite state after layer {j}")
            cache.ys.append(y)
            cache.acts.append(t)
        return y.reshape(len(y), -1), cache

    def _step(self, j, y):
        Kj, bj, h = self.K[j], self.b[j], self.h
        if self.variant == "H2":
            t = np.tanh(conv(y, Kj) + bj)
            return y + h * conv_transpose(t, Kj) @ self.J.T, (t,)
        m = CHANNELS // 2
        t1 = np.tanh(conv_transpose(y[..., :m], Kj) + bj[:m])
        z1 = y[..., m:] - h * t1
        t2 = np.tanh(conv(z1, Kj) + bj[m:])
        return np.concatenate([y[..., :m] + h * t2, z1], axis=-1), (t1, t2)

    def _layer_backward(self, j, y, y1, acts, G):
        Kj, h = self.K[j], self.h
        if self.variant == "H2":
            Km = Kj.reshape(-1, CHANNELS)
            (t,) = acts
            dV = h * G @ self.J
            dP = im2col(dV)
            dKm = dP.reshape(-1, dP.shape[-1]).T @ t.reshape(-1, CHANNELS)
            dA = (dP @ Km) * (1.0 - t * t)
            dKm += im2col(y).reshape(-1, Km.shape[0]).T @ dA.reshape(-1, CHANNELS)
            return G + col2im(dA @ Km.T, CHANNELS), dKm.reshape(Kj.shape), dA.sum(axis=(0, 1, 2))
        m = CHANNELS // 2
        Km = Kj.reshape(-1, m)
        t1, t2 = acts
        z1 = y1[..., m:]
        Gy, Gz = G[..., :m], G[..., m:]
        dA2 = h * Gy * (1.0 - t2 * t2)
        dKm = im2col(z1).reshape(-1, Km.shape[0]).T @ dA2.reshape(-1, m)
        Gz = Gz + col2im(dA2 @ Km.T, m)
        dA1 = -h * Gz * (1.0 - t1 * t1)
        dP = im2col(dA1)
        dKm += dP.reshape(-1, Km.shape[0]).T @ y[..., :m].reshape(-1, m)
        Gy = Gy + dP @ Km
        db = np.concatenate([dA1.sum(axis=(0, 1, 2)), dA2.sum(axis=(0, 1, 2))])
        return np.concatenate([Gy, Gz], axis=-1), dKm.reshape(Kj.shape), db

    def backward(self, cache: ConvCache, head, labels, reduction="mean"):
        from .backprop import head_backward

        labels = np.atleast_1d(np.asarray(labels, dtype=np.int64))
        yN = cache.ys[-1].reshape(len(labels), -1)
        losses, dz = head_backward(yN, head, labels)
        c = 1.0 / len(labels) if reduction == "mean" else 1.0
        dz = dz * c
        dK = [None] * self.N
        db = [None] * self.N
        G = (dz @ head.W).reshape(cache.ys[-1].shape)
        for j in range(self.N - 1, -1, -1):
            G, dK[j], db[j] = self._layer_backward(j, cache.ys[j], cache.ys[j + 1], cache.acts[j], G)
        dlift = (im2col(cache.x).reshape(-1, KSIZE * KSIZE).T @ G.reshape(-1, CHANNELS)).reshape(self.lift.shape)
        grads = ConvGrads(dK, db, dz.T @ yN, dz.sum(axis=0), dlift)
        return grads, float(losses.sum() * c)


@dataclass
class ConvGrads(ParamGrads):
    dlift: np.ndarray = None
