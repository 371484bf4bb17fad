"""Time-varying probability kernels and reproducible per-node sampling.

Draws are counter based: the Philox key for a time node is derived from
``(seed, run_id, node)`` by ``numpy.random.SeedSequence``, and sample ``j``
consumes raw words ``j*l .. j*l + l - 1`` of that stream (``l`` coordinates).
A sample therefore depends only on ``(seed, run_id, node, j)`` and not on the
batch size or on the order in which nodes are generated.

Every coordinate is produced by inversion from one 53-bit uniform on the open
interval (0, 1); normals use ``scipy.special.ndtri``.
"""
from __future__ import annotations

import zlib
from dataclasses import dataclass
from typing import Sequence, Union

import numpy as np
from scipy.special import ndtri

_WORD_SCALE = 2.0 ** -53


class KernelConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class Normal:
    mean: float
    sd: float

    def __post_init__(self):
        if not self.sd > 0:
            raise KernelConfigurationError("normal sd must be > 0")

    def from_uniform(self, u, t):
        return self.mean + self.sd * ndtri(u)


@dataclass(frozen=True)
class UniformAffine:
    """``U(a0 + a1*t, b0 + b1*t)``."""

    a0: float
    a1: float
    b0: float
    b1: float

    def support(self, t):
        return self.a0 + self.a1 * t, self.b0 + self.b1 * t

    def from_uniform(self, u, t):
        lo, hi = self.support(t)
        if not lo < hi:
            raise KernelConfigurationError(f"empty uniform range [{lo}, {hi}] at t={t}")
        return lo + (hi - lo) * u


Distribution = Union[Normal, UniformAffine]


@dataclass(frozen=True)
class ProbabilityKernel:
    coordinates: Sequence[Distribution]

    def __post_init__(self):
        object.__setattr__(self, "coordinates", tuple(self.coordinates))
        if not self.coordinates:
            raise KernelConfigurationError("kernel needs at least one coordinate")

    @property
    def dim(self):
        return len(self.coordinates)

    def validate(self, horizon: float):
        """Check uniform supports are nonempty on ``[0, horizon]`` (affine, so endpoints suffice)."""
        for c in self.coordinates:
            if isinstance(c, UniformAffine):
                for t in (0.0, horizon):
                    lo, hi = c.support(t)
                    if not lo < hi:
                        raise KernelConfigurationError(f"empty uniform range at t={t}")


def stream_id(*parts) -> int:
    """Stable 32-bit identity for a named run, e.g. ``stream_id("trial", 0.5, 30, 2)``."""
    return zlib.crc32(repr(tuple(parts)).encode())


@dataclass(frozen=True)
class RngStream:
    seed: int
    run_id: int = 0

    def node_generator(self, node: int) -> np.random.Philox:
        ss = np.random.SeedSequence([self.seed & 0xFFFFFFFFFFFFFFFF, self.run_id, node])
        return np.random.Philox(ss)

    def uniforms(self, node: int, count: int) -> np.ndarray:
        """First ``count`` open-interval uniforms of the node's stream."""
        raw = self.node_generator(node).random_raw(count)
        return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _WORD_SCALE


@dataclass(frozen=True)
class SampleBatch:
    t: float
    samples: np.ndarray  # (J, l)

    @property
    def size(self):
        return self.samples.shape[0]


def sample_batch(kernel: ProbabilityKernel, t: float, J: int, stream: RngStream, node: int) -> SampleBatch:
    """``J`` i.i.d. draws from ``P_t`` for time node ``node``."""
    if J < 1:
        raise ValueError("batch size J must be >= 1")
    ell = kernel.dim
    u = stream.uniforms(node, J * ell).reshape(J, ell)
    out = np.empty((J, ell))
    for k, dist in enumerate(kernel.coordinates):
        out[:, k] = dist.from_uniform(u[:, k], t)
    return SampleBatch(t=float(t), samples=out)
