"""Convex feasible regions with closed-form Euclidean projections.

Every set used by either stage is a box in disguise (whole space, the
nonnegative orthant, a general box, or ``r * [-1, 1]^d``), so projection is a
componentwise clamp. Bounds may carry leading batch dimensions; the last axis
is always the coordinate axis.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class DimensionError(ValueError):
    """Raised when a point does not match the dimension of a set."""


class ConvexSet:
    """Base class; subclasses expose ``dim``, ``lower`` and ``upper``."""

    dim: int

    @property
    def lower(self) -> np.ndarray:
        raise NotImplementedError

    @property
    def upper(self) -> np.ndarray:
        raise NotImplementedError

    def bounds(self, shape=None):
        """Return ``(lower, upper)`` broadcast to ``shape`` (default: own shape)."""
        lo, hi = self.lower, self.upper
        if shape is not None:
            lo = np.broadcast_to(lo, shape)
            hi = np.broadcast_to(hi, shape)
        return lo, hi


@dataclass(frozen=True)
class WholeSpace(ConvexSet):
    dim: int

    @property
    def lower(self):
        return np.full(self.dim, -np.inf)

    @property
    def upper(self):
        return np.full(self.dim, np.inf)


@dataclass(frozen=True)
class NonnegativeOrthant(ConvexSet):
    dim: int

    @property
    def lower(self):
        return np.zeros(self.dim)

    @property
    def upper(self):
        return np.full(self.dim, np.inf)


@dataclass(frozen=True, eq=False)
class Box(ConvexSet):
    """``{z : lower <= z <= upper}``; bounds may be batched as ``(..., dim)``."""

    lo: np.ndarray
    hi: np.ndarray

    def __init__(self, lower, upper):
        lo = np.asarray(lower, dtype=float)
        hi = np.asarray(upper, dtype=float)
        lo, hi = np.broadcast_arrays(lo, hi)
        if lo.ndim == 0:
            raise DimensionError("box bounds must be at least one-dimensional")
        if np.any(lo > hi):
            raise ValueError("box requires lower <= upper componentwise")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self):
        return self.lo.shape[-1]

    @property
    def lower(self):
        return self.lo

    @property
    def upper(self):
        return self.hi


@dataclass(frozen=True, eq=False)
class ScaledSymmetricBox(ConvexSet):
    """``radius * [-1, 1]^dim``; ``radius`` may be an array of batch radii."""

    radius: np.ndarray
    dim: int

    def __init__(self, radius, dim):
        r = np.asarray(radius, dtype=float)
        if np.any(r < 0):
            raise ValueError("radius must be nonnegative")
        object.__setattr__(self, "radius", r)
        object.__setattr__(self, "dim", int(dim))

    @property
    def lower(self):
        return -self.upper

    @property
    def upper(self):
        return np.multiply.outer(self.radius, np.ones(self.dim))


def _check(s: ConvexSet, z) -> np.ndarray:
    z = np.asarray(z, dtype=float)
    if z.ndim == 0 or z.shape[-1] != s.dim:
        raise DimensionError(f"point has shape {z.shape}, set has dimension {s.dim}")
    return z


def project(s: ConvexSet, z) -> np.ndarray:
    """Euclidean projection of ``z`` onto ``s``."""
    z = _check(s, z)
    if isinstance(s, WholeSpace):
        return z.copy()
    return np.minimum(np.maximum(z, s.lower), s.upper)


def distance(s: ConvexSet, z) -> np.ndarray:
    """Euclidean distance from ``z`` to ``s`` (reduced over the last axis)."""
    z = _check(s, z)
    return np.linalg.norm(z - project(s, z), axis=-1)


def contains(s: ConvexSet, z, tol: float = 0.0):
    """True iff ``dist(z, s) <= tol``."""
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    d = distance(s, z)
    return bool(d <= tol) if np.ndim(d) == 0 else d <= tol
