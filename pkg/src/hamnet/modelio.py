"""Binary model files.

Layout, all little-endian::

    b"HDNN1"                     magic, last byte is the format version
    8 bytes                      architecture tag, ASCII, NUL padded
    u32 flags                    bit 0: time-invariant, bit 1: convolutional
    u64 N, f64 h, u64 n, u64 M
    u32 block count
    blocks                       u32 ndim, ndim x u64 shape, f64 data (row-major)

Blocks appear in the order K_0..K_{N-1}, b_0..b_{N-1}, W, mu and, for the
convolutional model, the lifting kernel last. Writing is deterministic, so
``dump(load(dump(m))) == dump(m)``.
"""
from __future__ import annotations

import struct

import numpy as np

from .convnet import ConvHamiltonianNet
from .layers import NetworkParams, OutputHead

MAGIC = b"HDNN"
VERSION = b"1"
TAG_LEN = 8
FLAG_TIED = 1
FLAG_CONV = 2
_HEADER = struct.Struct("<8sIQdQQI")


class ModelFormatError(ValueError):
    pass


class ModelVersionError(ModelFormatError):
    pass


class ModelDimensionError(ModelFormatError):
    pass


def _block(a) -> bytes:
    a = np.ascontiguousarray(a, dtype="<f8")
    return struct.pack(f"<I{a.ndim}Q", a.ndim, *a.shape) + a.tobytes()


def dump_model(params, head: OutputHead) -> bytes:
    conv = isinstance(params, ConvHamiltonianNet)
    tag = ("C" + params.variant) if conv else params.variant
    flags = (FLAG_TIED if params.tied else 0) | (FLAG_CONV if conv else 0)
    if head.n != params.n:
        raise ModelDimensionError(f"head expects {head.n} features but network state has {params.n}")
    blocks = list(params.K) + list(params.b) + [head.W, head.mu]
    if conv:
        blocks.append(params.lift)
    out = [MAGIC + VERSION,
           _HEADER.pack(tag.encode("ascii").ljust(TAG_LEN, b"\0"), flags, params.N,
                        float(params.h), params.n, head.M, len(blocks))]
    out += [_block(a) for a in blocks]
    return b"".join(out)


def save_model(path, params, head):
    with open(path, "wb") as fh:
        fh.write(dump_model(params, head))


class _Reader:
    def __init__(self, buf, name):
        self.buf, self.pos, self.name = buf, 0, name

    def take(self, size, what):
        if self.pos + size > len(self.buf):
            raise ModelFormatError(f"{self.name}: truncated while reading {what} at byte {self.pos}")
        chunk = self.buf[self.pos:self.pos + size]
        self.pos += size
        return chunk

    def block(self, i):
        (ndim,) = struct.unpack("<I", self.take(4, f"block {i} rank"))
        if ndim > 4:
            raise ModelFormatError(f"{self.name}: block {i} has implausible rank {ndim}")
        shape = struct.unpack(f"<{ndim}Q", self.take(8 * ndim, f"block {i} shape"))
        count = int(np.prod(shape)) if ndim else 1
        data = self.take(8 * count, f"block {i} data")
        return np.frombuffer(data, dtype="<f8").astype(np.float64).reshape(shape)


def parse_model(buf: bytes, name="<bytes>"):
    """Inverse of :func:`dump_model`; returns ``(params, head)``."""
    r = _Reader(bytes(buf), name)
    magic = r.take(len(MAGIC), "magic")
    if magic != MAGIC:
        raise ModelFormatError(f"{name}: not a model file (magic {magic!r}, expected {MAGIC!r})")
    version = r.take(1, "version")
    if version != VERSION:
        raise ModelVersionError(
            f"{name}: unsupported model format version {version!r}, this build reads {VERSION!r}")
    tag, flags, N, h, n, M, count = _HEADER.unpack(r.take(_HEADER.size, "header"))
    tag = tag.rstrip(b"\0").decode("ascii", errors="replace")
    conv = bool(flags & FLAG_CONV)
    expected = 2 * N + 2 + (1 if conv else 0)
    if count != expected:
        raise ModelDimensionError(f"{name}: {count} parameter blocks, expected {expected} for N={N}")
    blocks = [r.block(i) for i in range(count)]
    if r.pos != len(r.buf):
        raise ModelFormatError(f"{name}: {len(r.buf) - r.pos} trailing bytes after offset {r.pos}")
    K, b = blocks[:N], blocks[N:2 * N]
    try:
        head = OutputHead(blocks[2 * N], blocks[2 * N + 1], M)
        if conv:
            params = ConvHamiltonianNet(blocks[-1], K, b, h, tag[1:])
        else:
            tied = bool(flags & FLAG_TIED)
            if tied and N:
                K, b = [K[0]] * N, [b[0]] * N
            params = NetworkParams(tag, n, h, K, b, tied)
    except ValueError as exc:
        raise ModelDimensionError(f"{name}: dimension mismatch: {exc}") from exc
    if params.n != n or head.n != n:
        raise ModelDimensionError(
            f"{name}: dimension mismatch: header n={n}, network {params.n}, head {head.n}")
    return params, head


def load_model(path):
    with open(path, "rb") as fh:
        return parse_model(fh.read(), str(path))
