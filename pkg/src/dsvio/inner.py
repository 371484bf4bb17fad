"""Second-stage convex programs and their FISTA solvers.

Two problem classes appear in the applications:

* ``L1LeastSquaresProblem``: ``0.5 ||H y - c||^2 + mu ||y||_1`` over a box.
* ``BoxQuadraticProblem``: ``sum_k (w_k / 2) ||G_k y - d_k||^2`` over a box.

Both accept an optional leading batch axis on every array (``H`` of shape
``(B, n_r, m)``, ``c`` of shape ``(B, n_r)``, box bounds of shape ``(B, m)``);
the returned :class:`InnerSolution` then carries batched fields. Batched
problems are solved in one compiled call.

``FixedSelection`` covers instances whose solution map is set-valued and a
particular measurable selection is prescribed instead of computed.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from . import _fista
from .geometry import ConvexSet, WholeSpace, project

_POWER_MAX_ITER = 1000
_POWER_RTOL = 1e-12
FEASIBILITY_TOL = 1e-12


@dataclass(frozen=True)
class SolverConfig:
    max_iter: int = 5000
    tol: float = 1e-8
    restart: bool = True
    check_every: int = 5
    polish: bool = True

    def __post_init__(self):
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if self.check_every < 1:
            raise ValueError("check_every must be >= 1")


@dataclass
class InnerSolution:
    y: np.ndarray
    iterations: np.ndarray
    kkt_residual: np.ndarray
    converged: np.ndarray
    objective_trace: Optional[np.ndarray] = field(default=None, repr=False)


@dataclass(frozen=True, eq=False)
class L1LeastSquaresProblem:
    H: np.ndarray
    c: np.ndarray
    mu: float
    feasible: ConvexSet

    def __post_init__(self):
        H = np.asarray(self.H, dtype=float)
        c = np.asarray(self.c, dtype=float)
        object.__setattr__(self, "H", H)
        object.__setattr__(self, "c", c)
        if not self.mu > 0:
            raise ValueError("mu must be > 0")
        if H.ndim < 2 or c.shape != H.shape[:-1]:
            raise ValueError(f"inconsistent shapes H{H.shape}, c{c.shape}")
        if self.feasible.dim != H.shape[-1]:
            raise ValueError("feasible set dimension does not match H")

    @property
    def batch_shape(self):
        return self.H.shape[:-2]

    @property
    def dim(self):
        return self.H.shape[-1]

    def quadratic(self):
        """``(Q, q)`` with smooth part ``0.5 y'Qy - q'y + const``."""
        Ht = np.swapaxes(self.H, -1, -2)
        return Ht @ self.H, (Ht @ self.c[..., None])[..., 0]

    def objective(self, y):
        r = (self.H @ np.asarray(y)[..., None])[..., 0] - self.c
        return 0.5 * np.sum(r * r, axis=-1) + self.mu * np.sum(np.abs(y), axis=-1)


@dataclass(frozen=True, eq=False)
class BoxQuadraticProblem:
    residual_blocks: Sequence[Tuple[np.ndarray, np.ndarray, float]]
    feasible: ConvexSet

    def __post_init__(self):
        if len(self.residual_blocks) == 0:
            raise ValueError("at least one residual block is required")
        blocks = []
        for G, d, w in self.residual_blocks:
            G = np.asarray(G, dtype=float)
            d = np.asarray(d, dtype=float)
            if not w > 0:
                raise ValueError("block weights must be > 0")
            if G.ndim < 2 or d.shape != G.shape[:-1]:
                raise ValueError(f"inconsistent block shapes G{G.shape}, d{d.shape}")
            if G.shape[-1] != self.feasible.dim:
                raise ValueError("feasible set dimension does not match blocks")
            blocks.append((G, d, float(w)))
        object.__setattr__(self, "residual_blocks", tuple(blocks))

    @property
    def batch_shape(self):
        return np.broadcast_shapes(*(G.shape[:-2] for G, _, _ in self.residual_blocks))

    @property
    def dim(self):
        return self.feasible.dim

    mu = 0.0

    def quadratic(self):
        Q = 0.0
        q = 0.0
        for G, d, w in self.residual_blocks:
            Gt = np.swapaxes(G, -1, -2)
            Q = Q + w * (Gt @ G)
            q = q + w * (Gt @ d[..., None])[..., 0]
        return Q, q

    def objective(self, y):
        y = np.asarray(y)
        f = 0.0
        for G, d, w in self.residual_blocks:
            r = (G @ y[..., None])[..., 0] - d
            f = f + 0.5 * w * np.sum(r * r, axis=-1)
        return f


@dataclass(frozen=True, eq=False)
class FixedSelection:
    """A prescribed element of the solution set; nothing is solved."""

    y: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "y", np.asarray(self.y, dtype=float))


def soft_threshold(v, mu):
    """Proximal map of ``mu * ||.||_1``."""
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - mu, 0.0)


def lipschitz_estimate(H) -> float | np.ndarray:
    """``lambda_max(H'H)`` by power iteration on the smaller Gram matrix.

    Accepts a single matrix or a batch ``(B, r, m)``. An all-zero matrix
    yields 1e-16 so that step sizes stay finite.
    """
    H = np.asarray(H, dtype=float)
    single = H.ndim == 2
    Hb = H.reshape((-1,) + H.shape[-2:])
    Ht = np.swapaxes(Hb, -1, -2)
    G = Hb @ Ht if Hb.shape[-2] <= Hb.shape[-1] else Ht @ Hb
    lam = _fista.power_iteration(np.ascontiguousarray(G), _POWER_MAX_ITER, _POWER_RTOL)
    lam = lam.reshape(H.shape[:-2])
    return float(lam) if single else lam


def _gram_lipschitz(problem):
    if isinstance(problem, L1LeastSquaresProblem):
        return lipschitz_estimate(problem.H)
    rows = sum(G.shape[-2] for G, _, _ in problem.residual_blocks)
    if rows < problem.dim:
        batch = problem.batch_shape
        stacked = np.concatenate(
            [np.sqrt(w) * np.broadcast_to(G, batch + G.shape[-2:]) for G, _, w in problem.residual_blocks],
            axis=-2,
        )
        return lipschitz_estimate(stacked)
    Q, _ = problem.quadratic()
    lam = _fista.power_iteration(np.ascontiguousarray(Q.reshape((-1,) + Q.shape[-2:])),
                                 _POWER_MAX_ITER, _POWER_RTOL)
    return lam.reshape(Q.shape[:-2])


def _solve(problem, config: SolverConfig, y0=None, record=False) -> InnerSolution:
    batch = problem.batch_shape
    m = problem.dim
    empty2, empty3 = np.empty((0, 0)), np.empty((0, 0, 0))
    factored = isinstance(problem, L1LeastSquaresProblem) and problem.H.shape[-2] < m
    if factored:
        F = np.ascontiguousarray(problem.H.reshape(-1, *problem.H.shape[-2:]))
        d = np.ascontiguousarray(problem.c.reshape(F.shape[:2]))
        Q, q = empty3, empty2
    else:
        Q, q = problem.quadratic()
        Q = np.ascontiguousarray(np.broadcast_to(Q, batch + (m, m)).reshape(-1, m, m))
        q = np.ascontiguousarray(np.broadcast_to(q, batch + (m,)).reshape(-1, m))
        F, d = empty3, empty2
    lo, hi = problem.feasible.bounds(batch + (m,))
    lo = np.ascontiguousarray(lo.reshape(-1, m))
    hi = np.ascontiguousarray(hi.reshape(-1, m))
    nb = lo.shape[0]
    L = np.ascontiguousarray(np.broadcast_to(_gram_lipschitz(problem), batch).reshape(-1), dtype=float)
    if y0 is None:
        y0 = np.zeros((nb, m))
    else:
        y0 = np.ascontiguousarray(np.broadcast_to(np.asarray(y0, dtype=float), batch + (m,)).reshape(-1, m))
    K = config.max_iter // config.check_every + 1 if record else 0
    trace = np.full((nb, K), np.nan)
    Y, its, res, conv = _fista.fista(
        Q, q, F, d, factored, lo, hi, float(problem.mu), L, y0, float(config.tol),
        int(config.max_iter), bool(config.restart), int(config.check_every), trace,
        bool(config.polish),
    )
    sol = InnerSolution(
        y=Y.reshape(batch + (m,)),
        iterations=its.reshape(batch),
        kkt_residual=res.reshape(batch),
        converged=conv.reshape(batch),
    )
    if record:
        sol.objective_trace = trace.reshape(batch + (K,))
    if not batch:
        sol.iterations = int(sol.iterations)
        sol.kkt_residual = float(sol.kkt_residual)
        sol.converged = bool(sol.converged)
    return sol


def solve_l1(problem: L1LeastSquaresProblem, config: SolverConfig = SolverConfig(), y0=None,
             record=False) -> InnerSolution:
    """FISTA with step 1/L; the prox is soft-threshold followed by the box clamp."""
    return _solve(problem, config, y0, record)


def solve_box_quadratic(problem: BoxQuadraticProblem, config: SolverConfig = SolverConfig(), y0=None,
                        record=False) -> InnerSolution:
    """Accelerated projected gradient with the box projection as prox."""
    return _solve(problem, config, y0, record)


def solve(problem, config: SolverConfig = SolverConfig(), y0=None) -> InnerSolution:
    if isinstance(problem, FixedSelection):
        shape = problem.y.shape[:-1]
        return InnerSolution(problem.y, np.zeros(shape, int), np.zeros(shape), np.ones(shape, bool))
    if isinstance(problem, (L1LeastSquaresProblem, BoxQuadraticProblem)):
        return _solve(problem, config, y0)
    raise TypeError(f"unsupported inner problem type {type(problem).__name__}")


def kkt_residual(problem, y):
    """Natural residual ``||y - prox(y - grad(y))||_inf`` with unit step."""
    y = np.asarray(y, dtype=float)
    feasible = problem.feasible
    if not isinstance(feasible, WholeSpace):
        lo, hi = feasible.bounds()
        viol = np.max(np.maximum(lo - y, 0.0) + np.maximum(y - hi, 0.0), axis=-1)
        if np.any(viol > FEASIBILITY_TOL):
            raise ValueError("kkt_residual requires a feasible point")
    Q, q = problem.quadratic()
    grad = (Q @ y[..., None])[..., 0] - q
    w = y - grad
    if problem.mu > 0:
        w = soft_threshold(w, problem.mu)
    r = np.max(np.abs(y - project(feasible, w)), axis=-1)
    return float(r) if np.ndim(r) == 0 else r
