"""Forward-Euler and SAA-Euler time stepping for projected dynamics.

The continuous model is

    x'(t) = Pi_X(x(t) - E_{P_t}[Phi(t, xi, x(t), y(t, xi))]) - x(t),
    Phi = Phi1(t, xi, x) + sum_i B_i(t, xi, x) y_i,
    y_i(t, xi) in argmin_{y in Y_i(t, xi)} f_i(t, xi, x, y).

Model callables are vectorised over a sample batch: given ``t``, samples of
shape ``(J, l)`` and the state ``x`` of shape ``(n,)``, ``phi1`` returns
``(J, n)``, each ``b_maps[i]`` returns ``(J, n, m_i)`` and each
``inner_builders[i]`` returns a batched inner problem from :mod:`dsvio.inner`.
"""
from __future__ import annotations

import csv
import enum
import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from . import inner
from .geometry import ConvexSet, WholeSpace, contains, distance, project
from .sampling import ProbabilityKernel, RngStream, SampleBatch, UniformAffine, sample_batch

log = logging.getLogger(__name__)

FEASIBILITY_TOL = 1e-12


class Mode(enum.Enum):
    SAA = "saa"
    EXACT = "exact"


class SchemeConfigurationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DsvioProblem:
    n: int
    X: ConvexSet
    phi1: Callable
    b_maps: Sequence[Callable]
    inner_builders: Sequence[Callable]
    kernel: ProbabilityKernel
    exact_drift: Optional[Callable] = None

    def __post_init__(self):
        object.__setattr__(self, "b_maps", tuple(self.b_maps))
        object.__setattr__(self, "inner_builders", tuple(self.inner_builders))
        if len(self.b_maps) < 1 or len(self.b_maps) != len(self.inner_builders):
            raise SchemeConfigurationError("need k >= 1 coupling maps, one per inner problem")
        if self.X.dim != self.n:
            raise SchemeConfigurationError("state set dimension does not match n")

    @property
    def k(self):
        return len(self.b_maps)


@dataclass(frozen=True)
class SchemeConfig:
    T: float
    N: int
    J: int = 1
    stream: RngStream = RngStream(0)

    def __post_init__(self):
        if not self.T > 0:
            raise SchemeConfigurationError("T must be > 0")
        if self.N < 1 or self.J < 1:
            raise SchemeConfigurationError("N and J must be >= 1")
        if self.h > 1:
            raise SchemeConfigurationError(f"step h = T/N = {self.h} exceeds 1")

    @property
    def h(self):
        return self.T / self.N


@dataclass
class Trajectory:
    nodes: np.ndarray   # (N+1,)
    states: np.ndarray  # (N+1, n)
    diagnostics: dict = field(default_factory=dict)

    @property
    def h(self):
        return self.nodes[1] - self.nodes[0] if len(self.nodes) > 1 else 0.0

    @property
    def T(self):
        return self.nodes[-1]


@dataclass
class StepRecord:
    node: int
    batch: SampleBatch
    inner_solutions: List[inner.InnerSolution]
    drift_estimate: np.ndarray


def saa_drift(problem: DsvioProblem, t, x, batch: SampleBatch,
              solver_config: inner.SolverConfig = inner.SolverConfig(), warm=None):
    """Sample mean of ``Phi`` over a batch, summed in ascending sample order.

    Returns ``(drift, solutions)`` with one batched InnerSolution per inner problem.
    """
    x = np.asarray(x, dtype=float)
    xi = batch.samples
    phi = np.array(problem.phi1(t, xi, x), dtype=float)
    solutions = []
    for i, (bmap, build) in enumerate(zip(problem.b_maps, problem.inner_builders)):
        y0 = None if warm is None else warm[i]
        sol = inner.solve(build(t, xi, x), solver_config, y0)
        phi += np.einsum("jnm,jm->jn", bmap(t, xi, x), sol.y)
        solutions.append(sol)
    drift = np.cumsum(phi, axis=0)[-1] / phi.shape[0]
    return drift, solutions


def euler_step(x, drift, h, X: ConvexSet):
    """``x + h (Pi_X(x - drift) - x)``."""
    if not 0 < h <= 1:
        raise SchemeConfigurationError("step must satisfy 0 < h <= 1")
    x = np.asarray(x, dtype=float)
    p = project(X, x - np.asarray(drift, dtype=float))
    if h == 1:
        return p
    out = x + h * (p - x)
    if isinstance(X, WholeSpace) or not contains(X, x, 0.0):
        return out
    # convex combination of two points of X; clamp away rounding residue
    return project(X, out)


def run_scheme(problem: DsvioProblem, x0, config: SchemeConfig,
               solver_config: inner.SolverConfig = inner.SolverConfig(),
               mode: Mode = Mode.SAA, warm_start: bool = True, keep_records: bool = True):
    """Iterate the Euler update for nodes 0..N-1.

    SAA mode draws a fresh batch per node from ``sample_batch(kernel, t_nu, J,
    stream, nu)``. Exact mode evaluates ``problem.exact_drift(t, x)``.
    Returns ``(Trajectory, records)``; records is empty unless ``keep_records``.
    """
    mode = Mode(mode)
    if mode is Mode.EXACT and problem.exact_drift is None:
        raise SchemeConfigurationError("exact mode requires problem.exact_drift")
    x = np.array(x0, dtype=float).reshape(problem.n)
    if not contains(problem.X, x, FEASIBILITY_TOL):
        warnings.warn("x0 lies outside X; the scheme is still defined", stacklevel=2)
    if mode is Mode.SAA:
        problem.kernel.validate(config.T)
    N, h = config.N, config.h
    nodes = np.arange(N + 1) * h
    states = np.empty((N + 1, problem.n))
    states[0] = x
    records = []
    warm = None
    solves = unconverged = 0
    worst = 0.0
    for nu in range(N):
        t = nodes[nu]
        if mode is Mode.EXACT:
            drift = np.asarray(problem.exact_drift(t, x), dtype=float)
        else:
            batch = sample_batch(problem.kernel, t, config.J, config.stream, nu)
            drift, sols = saa_drift(problem, t, x, batch, solver_config, warm)
            if warm_start:
                warm = [s.y for s in sols]
            for s in sols:
                conv = np.asarray(s.converged)
                solves += conv.size
                unconverged += int(conv.size - np.count_nonzero(conv))
                worst = max(worst, float(np.max(s.kkt_residual)))
            if keep_records:
                records.append(StepRecord(nu, batch, sols, drift))
        x = euler_step(x, drift, h, problem.X)
        states[nu + 1] = x
    traj = Trajectory(nodes, states)
    if mode is Mode.SAA:
        traj.diagnostics = {"inner_solves": solves, "inner_unconverged": unconverged,
                            "max_kkt_residual": worst}
        if unconverged:
            log.info("%d of %d inner solves stopped at max_iter (max residual %.3e)",
                     unconverged, solves, worst)
    return traj, records


def interpolate(traj: Trajectory, t):
    """Piecewise-linear interpolant of the node states."""
    T = traj.nodes[-1]
    if not 0 <= t <= T:
        raise ValueError(f"t={t} outside [0, {T}]")
    N = len(traj.nodes) - 1
    if N == 0:
        return traj.states[0].copy()
    h = traj.h
    nu = min(int(t // h), N - 1)
    t0, t1 = traj.nodes[nu], traj.nodes[nu + 1]
    if t == t0:
        return traj.states[nu].copy()
    if t == t1:
        return traj.states[nu + 1].copy()
    return ((t1 - t) / h) * traj.states[nu] + ((t - t0) / h) * traj.states[nu + 1]


def feasibility_report(traj: Trajectory, X: ConvexSet, tol: float = FEASIBILITY_TOL):
    """``(max distance to X over nodes, first node with distance > tol or None)``."""
    d = distance(X, traj.states)
    bad = np.flatnonzero(d > tol)
    return float(d.max()), (int(bad[0]) if bad.size else None)


def write_trajectory_csv(traj: Trajectory, path):
    n = traj.states.shape[1]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x_{i + 1}" for i in range(n)])
        for t, x in zip(traj.nodes, traj.states):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in x])


def read_trajectory_csv(path) -> Trajectory:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if header[0] != "t":
        raise ValueError("trajectory CSV must start with a 't' column")
    data = np.array([[float(v) for v in r] for r in body])
    return Trajectory(data[:, 0], data[:, 1:])


# -- the closed-form example whose solution set is the whole simplex ----------

def remark_selector(nu: int):
    """Index of the zero-mean sign pattern used at node ``nu``.

    ``(-1)^floor(2^k xi)`` has mean zero under U(0,1) for every k >= 1; k is
    cycled through 1..52 because doubles hold at most 53 mantissa bits.
    """
    return 1 + (nu % 52)


def remark_instance(h: float | None = None) -> DsvioProblem:
    """``xi ~ U(0,1)``, ``X = R``, ``Phi = x + sin(2 pi xi) + (y1 - y2)``.

    Every point of the simplex is optimal for the inner problem, so the
    selection ``y = ((1 + r)/2, (1 - r)/2)`` with ``r = (-1)^floor(2^k xi)`` is
    prescribed. ``E[Phi] = x``, whose exact Euler iterates are ``(1-h)^nu x0``.
    Pass the scheme step ``h`` so the selector can recover the node index;
    without it the pattern index stays at 1.
    """
    def select(t, xi, x):
        k = remark_selector(int(round(t / h)) if h else 0)
        r = np.where(np.floor(np.ldexp(xi[:, 0], k)) % 2 == 0, 1.0, -1.0)
        return inner.FixedSelection(np.stack([(1 + r) / 2, (1 - r) / 2], axis=1))

    def phi1(t, xi, x):
        return x[None, :] + np.sin(2 * np.pi * xi[:, :1])

    def bmap(t, xi, x):
        return np.broadcast_to(np.array([[[1.0, -1.0]]]), (xi.shape[0], 1, 2))

    return DsvioProblem(
        n=1, X=WholeSpace(1), phi1=phi1, b_maps=[bmap], inner_builders=[select],
        kernel=ProbabilityKernel([UniformAffine(0.0, 0.0, 1.0, 0.0)]),
        exact_drift=lambda t, x: np.asarray(x, dtype=float),
    )
