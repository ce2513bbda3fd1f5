"""Small dense linear-algebra kernel on float64 numpy arrays.

Matrices and vectors are plain ``np.ndarray`` objects. The helpers here add
shape and finiteness checks on top of numpy, plus the two iterative routines
the diagnostics depend on: a power-iteration spectral norm and a Hessenberg /
double-shift QR eigenvalue solver.
"""
from __future__ import annotations

import math
from typing import Callable

import numpy as np


class DimensionError(ValueError):
    """Operands have incompatible shapes."""


class NonFiniteError(FloatingPointError):
    """An operation produced NaN or Inf."""


class ConvergenceError(RuntimeError):
    """An iterative routine ran out of iterations.

    ``last`` holds the final iterate and ``residual`` the last convergence
    measure, so callers can decide whether the result is still usable.
    """

    def __init__(self, message, last=None, residual=None):
        super().__init__(message)
        self.last = last
        self.residual = residual


def as_matrix(a) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionError(f"expected a 2-d matrix, got shape {a.shape}")
    return a


def as_vector(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionError(f"expected a 1-d vector, got shape {v.shape}")
    return v


def check_finite(a: np.ndarray, what: str = "result") -> np.ndarray:
    if not np.all(np.isfinite(a)):
        raise NonFiniteError(f"{what} contains non-finite entries")
    return a


def matmul(a, b) -> np.ndarray:
    a, b = as_matrix(a), as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: {a.shape} @ {b.shape}")
    return check_finite(a @ b, "matmul")


def transpose(a) -> np.ndarray:
    return as_matrix(a).T.copy()


def _same_shape(a, b, op):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DimensionError(f"{op}: {a.shape} vs {b.shape}")
    return a, b


def add(a, b) -> np.ndarray:
    a, b = _same_shape(a, b, "add")
    return check_finite(a + b, "add")


def sub(a, b) -> np.ndarray:
    a, b = _same_shape(a, b, "sub")
    return check_finite(a - b, "sub")


def scale(a, c: float) -> np.ndarray:
    return check_finite(np.asarray(a, dtype=np.float64) * float(c), "scale")


def elementwise_map(a, f: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    return check_finite(np.asarray(f(np.asarray(a, dtype=np.float64)), dtype=np.float64), "elementwise_map")


def frobenius_norm(a) -> float:
    a = np.asarray(a, dtype=np.float64)
    return float(math.sqrt(np.sum(a * a)))


def spectral_norm(a, rtol: float = 1e-10, max_iter: int = 10_000) -> float:
    """Largest singular value of ``a`` by power iteration on ``a.T @ a``.

    The eigenvalue estimate is the Rayleigh quotient of the current iterate;
    iteration stops once it changes by less than ``rtol`` relative.
    """
    a = check_finite(as_matrix(a), "spectral_norm input")
    if not a.size or not np.any(a):
        return 0.0
    gram = a.T @ a
    # fixed start so the result is reproducible; a random direction is
    # almost surely not orthogonal to the dominant singular vector
    v = np.random.default_rng(0).standard_normal(gram.shape[0])
    v /= np.linalg.norm(v)
    lam = float(v @ gram @ v)
    resid = math.inf
    for _ in range(max_iter):
        w = gram @ v
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        new = float(v @ gram @ v)
        resid = abs(new - lam) / max(abs(new), np.finfo(float).tiny)
        lam = new
        if resid <= rtol:
            return math.sqrt(max(lam, 0.0))
    raise ConvergenceError(
        f"spectral_norm did not converge in {max_iter} iterations (residual {resid:.3e})",
        last=v,
        residual=resid,
    )


def hessenberg(a) -> np.ndarray:
    """Upper Hessenberg form of ``a`` by Householder similarity transforms."""
    h = as_matrix(a).copy()
    n = h.shape[0]
    for k in range(n - 2):
        x = h[k + 1:, k]
        alpha = np.linalg.norm(x)
        if alpha == 0.0:
            continue
        v = x.copy()
        v[0] += math.copysign(alpha, x[0])
        v /= np.linalg.norm(v)
        h[k + 1:, :] -= 2.0 * np.outer(v, v @ h[k + 1:, :])
        h[:, k + 1:] -= 2.0 * np.outer(h[:, k + 1:] @ v, v)
        h[k + 2:, k] = 0.0
    return h


def eigenvalues_qr(a, max_sweeps_per_dim: int = 100) -> list[complex]:
    """All eigenvalues of a real square matrix.

    Reduces to Hessenberg form, then runs Francis double-shift QR sweeps with
    small-subdiagonal deflation. Complex eigenvalues come out as conjugate
    pairs read off the trailing 2x2 blocks.
    """
    a = check_finite(as_matrix(a), "eigenvalues_qr input")
    n = a.shape[0]
    if a.shape[1] != n:
        raise DimensionError(f"eigenvalues_qr needs a square matrix, got {a.shape}")
    if n == 0:
        return []
    h = hessenberg(a)
    wr = np.zeros(n)
    wi = np.zeros(n)
    anorm = float(np.sum(np.abs(np.triu(h, -1))))
    eps = np.finfo(float).eps
    budget = max_sweeps_per_dim * n
    sweeps = 0
    nn = n - 1
    t = 0.0
    while nn >= 0:
        its = 0
        while True:
            # look for a negligible subdiagonal element
            l = 0
            for ll in range(nn, 0, -1):
                s = abs(h[ll - 1, ll - 1]) + abs(h[ll, ll])
                if s == 0.0:
                    s = anorm
                if abs(h[ll, ll - 1]) <= eps * s:
                    h[ll, ll - 1] = 0.0
                    l = ll
                    break
            x = h[nn, nn]
            if l == nn:
                wr[nn] = x + t
                wi[nn] = 0.0
                nn -= 1
                break
            y = h[nn - 1, nn - 1]
            w = h[nn, nn - 1] * h[nn - 1, nn]
            if l == nn - 1:
                p = 0.5 * (y - x)
                q = p * p + w
                z = math.sqrt(abs(q))
                x += t
                if q >= 0.0:
                    z = p + math.copysign(z, p)
                    wr[nn - 1] = wr[nn] = x + z
                    if z != 0.0:
                        wr[nn] = x - w / z
                    wi[nn - 1] = wi[nn] = 0.0
                else:
                    wr[nn - 1] = wr[nn] = x + p
                    wi[nn - 1] = -z
                    wi[nn] = z
                nn -= 2
                break
            if sweeps >= budget:
                raise ConvergenceError(
                    f"eigenvalues_qr did not converge after {budget} sweeps",
                    last=h.copy(),
                    residual=abs(h[nn, nn - 1]),
                )
            if its in (10, 20):
                # exceptional shift
                t += x
                for i in range(nn + 1):
                    h[i, i] -= x
                s = abs(h[nn, nn - 1]) + abs(h[nn - 1, nn - 2])
                y = x = 0.75 * s
                w = -0.4375 * s * s
            its += 1
            sweeps += 1
            m = nn - 2
            while True:
                z = h[m, m]
                r = x - z
                s = y - z
                p = (r * s - w) / h[m + 1, m] + h[m, m + 1]
                q = h[m + 1, m + 1] - z - r - s
                r = h[m + 2, m + 1]
                s = abs(p) + abs(q) + abs(r)
                p /= s
                q /= s
                r /= s
                if m == l:
                    break
                u = abs(h[m, m - 1]) * (abs(q) + abs(r))
                v = abs(p) * (abs(h[m - 1, m - 1]) + abs(z) + abs(h[m + 1, m + 1]))
                if u <= eps * v:
                    break
                m -= 1
            for i in range(m + 2, nn + 1):
                h[i, i - 2] = 0.0
                if i != m + 2:
                    h[i, i - 3] = 0.0
            for k in range(m, nn):
                if k != m:
                    p = h[k, k - 1]
                    q = h[k + 1, k - 1]
                    r = h[k + 2, k - 1] if k != nn - 1 else 0.0
                    x = abs(p) + abs(q) + abs(r)
                    if x != 0.0:
                        p /= x
                        q /= x
                        r /= x
                s = math.copysign(math.sqrt(p * p + q * q + r * r), p)
                if s == 0.0:
                    continue
                if k == m:
                    if l != m:
                        h[k, k - 1] = -h[k, k - 1]
                else:
                    h[k, k - 1] = -s * x
                p += s
                x = p / s
                y = q / s
                z = r / s
                q /= p
                r /= p
                for j in range(k, nn + 1):
                    p = h[k, j] + q * h[k + 1, j]
                    if k != nn - 1:
                        p += r * h[k + 2, j]
                        h[k + 2, j] -= p * z
                    h[k + 1, j] -= p * y
                    h[k, j] -= p * x
                for i in range(l, min(nn, k + 3) + 1):
                    p = x * h[i, k] + y * h[i, k + 1]
                    if k != nn - 1:
                        p += z * h[i, k + 2]
                        h[i, k + 2] -= p * r
                    h[i, k + 1] -= p * q
                    h[i, k] -= p
            if l >= nn - 1:
                break
    return [complex(wr[i], wi[i]) for i in range(n)]
