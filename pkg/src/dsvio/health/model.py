"""Health-state tracking dynamics.

The latent state ``x in [0, 2]`` follows

    x_{nu+1} = Pi_[0,2](x - A x - p + q(t) + mean_iota l(t, xi_iota))

where ``l = l0 + dl1 * sum_i alpha_i B_i y_i`` and each ``y_i`` solves a box
constrained least-squares problem that blends the current feature row ``B_i``
with a random subsample ``H_i`` of the history. The reference ("true")
trajectory replaces ``B_i y_i`` with the test-day labels.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import softmax

from .. import inner
from ..geometry import Box
from ..sampling import RngStream
from ..scheme import euler_step

STATE_SET = Box([0.0], [2.0])
HEALTH_SOLVER = inner.SolverConfig(max_iter=5000, tol=1e-8, restart=True, check_every=5)


@dataclass(frozen=True)
class HealthModelParams:
    A: float = float(np.exp(-3.0))
    p: float = 0.01
    harmonics: tuple = ((0.15, 0.025), (0.17, 0.021))
    phases: tuple = (0.0, 0.0)
    eps1: float = 0.0
    ell0: float = 0.02
    delta_ell1: float = 1.5
    alpha: tuple = (0.4, 0.4, 0.2)
    lam: tuple = (0.5, 0.5, 0.5)
    rho: tuple = (5.0, 5.0, 5.0)
    box: tuple = (-10.0, 10.0)
    thresholds: tuple = (2 / 3, 4 / 3)
    n_subsamples: int = 20
    subsample_size: int = 50
    history_days: int = 90
    hours_per_step: float = 5.0 / 3600

    def __post_init__(self):
        if len(self.alpha) != 3 or min(self.alpha) < 0:
            raise ValueError("alpha needs three nonnegative weights")
        if len(self.lam) != 3 or min(self.lam) < 0:
            raise ValueError("lam needs three nonnegative scales")
        if len(self.rho) != 3 or min(self.rho) <= 0:
            raise ValueError("rho needs three positive weights")
        if len(self.phases) != len(self.harmonics):
            raise ValueError("one phase per harmonic")
        if not self.box[0] < self.box[1]:
            raise ValueError("box lower bound must be below the upper bound")
        if not 0 <= self.thresholds[0] < self.thresholds[1] <= 2:
            raise ValueError("thresholds must satisfy 0 <= low < high <= 2")
        if not 1 <= self.subsample_size <= self.history_days or self.n_subsamples < 1:
            raise ValueError("need 1 <= subsample_size <= history_days and n_subsamples >= 1")


def pdist2(b_row, H):
    """Squared Euclidean distances from ``b_row`` to every row of ``H`` (batched over leading axes)."""
    H = np.asarray(H, dtype=float)
    b = np.asarray(b_row, dtype=float)
    if b.ndim < 2 or b.shape[-2] != 1:
        b = b[..., None, :]
    return np.sum((H - b) ** 2, axis=-1)


def correction_weights(b_row, H, lam: float):
    """``lam * (1 - softmax(-||b - H_r||^2 / h^2))`` with ``h`` the median row distance of ``H``.

    ``H`` may carry leading batch axes ``(..., n_r, m)``; ``b_row`` of shape
    ``(m,)``, ``(1, m)`` or ``(..., 1, m)`` broadcasts against them. When every row of ``H`` coincides the
    bandwidth is zero and the softmax is replaced by its uniform limit.
    """
    H = np.asarray(H, dtype=float)
    d = pdist2(b_row, H)
    n_r = H.shape[-2]
    iu, ju = np.triu_indices(n_r, 1)
    if iu.size:
        pair = np.sqrt(np.sum((H[..., iu, :] - H[..., ju, :]) ** 2, axis=-1))
        bw = np.median(pair, axis=-1)
    else:
        bw = np.zeros(H.shape[:-2])
    s = np.full(d.shape, 1.0 / n_r)
    ok = bw > 0
    if np.any(ok):
        s[ok] = softmax(-d[ok] / (bw[ok] ** 2)[..., None], axis=-1)
    return lam * (1.0 - s)


def circadian(t, harmonics=HealthModelParams.harmonics, phases=None, eps1=0.0):
    """``sum_i a_i sin(2 pi f_i t + phi_i) + eps1``."""
    phases = phases if phases is not None else (0.0,) * len(harmonics)
    return sum(a * np.sin(2 * np.pi * f * t + ph) for (a, f), ph in zip(harmonics, phases)) + eps1


def exogenous_drive(by, params: HealthModelParams):
    """``l0 + dl1 * sum_i alpha_i (B_i y_i)``; ``by`` has the source index last."""
    by = np.asarray(by, dtype=float)
    return params.ell0 + params.delta_ell1 * (by @ np.asarray(params.alpha, dtype=float))


def draw_subsamples(stream: RngStream, node: int, params: HealthModelParams):
    """``(n_subsamples, subsample_size)`` row indices without replacement from the history."""
    u = stream.uniforms(node, params.n_subsamples * params.history_days)
    order = np.argsort(u.reshape(params.n_subsamples, params.history_days), axis=1, kind="stable")
    return order[:, :params.subsample_size]


@dataclass
class StepResult:
    x: float
    drive: np.ndarray            # (n_subsamples,) values of l
    by: np.ndarray               # (n_subsamples, 3) values of B_i y_i
    solutions: list = field(default_factory=list)


def inner_problem(b, H, c, x, lam, rho, box):
    """Batched tracking problem for one source.

    ``b`` (m,), ``H`` (S, n_r, m), ``c`` (S, n_r). Minimises
    ``(rho/2)||b y - x||^2 + 0.5 ||H y - N x - c||^2`` over ``box^m``.
    """
    S, n_r, m = H.shape
    N = correction_weights(b, H, lam) if lam > 0 else np.zeros((S, n_r))
    G1 = np.broadcast_to(b, (S, 1, m))
    d1 = np.full((S, 1), float(x))
    Y = Box(np.full((S, m), float(box[0])), np.full((S, m), float(box[1])))
    return inner.BoxQuadraticProblem([(G1, d1, rho), (H, N * x + c, 1.0)], Y)


def health_step(x, t, test_rows: Sequence[np.ndarray], histories: Sequence[np.ndarray],
                history_labels: Sequence[np.ndarray], subsamples, params: HealthModelParams,
                solver_config: inner.SolverConfig = HEALTH_SOLVER, warm=None) -> StepResult:
    """One tracking update from the state ``x`` at time ``t`` (hours).

    ``test_rows[i]`` is the current row ``B_i`` (m_i,), ``histories[i]`` the
    rows of the history days (history_days, m_i) and ``history_labels[i]``
    their labels. ``subsamples`` holds the row indices of every subsample.
    """
    x = float(x)
    idx = np.asarray(subsamples)
    by = np.empty((idx.shape[0], len(test_rows)))
    sols = []
    for i, (b, Hall, lab) in enumerate(zip(test_rows, histories, history_labels)):
        b = np.asarray(b, dtype=float)
        prob = inner_problem(b, np.asarray(Hall)[idx], np.asarray(lab, dtype=float)[idx], x,
                             params.lam[i], params.rho[i], params.box)
        sol = inner.solve(prob, solver_config, None if warm is None else warm[i])
        by[:, i] = sol.y @ b
        sols.append(sol)
    ell = exogenous_drive(by, params)
    mean_ell = np.cumsum(ell)[-1] / ell.size
    q = circadian(t, params.harmonics, params.phases, params.eps1)
    drift = params.A * x + params.p - q - mean_ell
    x_next = float(euler_step(np.array([x]), np.array([drift]), 1.0, STATE_SET)[0])
    return StepResult(x_next, ell, by, sols)


def true_step(x, t, eta, params: HealthModelParams) -> float:
    """Reference update driven by the test-day labels ``eta`` (one per source)."""
    x = float(x)
    q = circadian(t, params.harmonics, params.phases, params.eps1)
    ell = params.ell0 + params.delta_ell1 * float(np.dot(params.alpha, eta))
    drift = params.A * x + params.p - q - ell
    return float(euler_step(np.array([x]), np.array([drift]), 1.0, STATE_SET)[0])


def standardize(history, *rows):
    """Scale by per-column history mean and sd (sd 0 is left unscaled)."""
    mu = history.mean(axis=0)
    sd = history.std(axis=0)
    sd = np.where(sd > 0, sd, 1.0)
    return [(r - mu) / sd for r in (history,) + rows]


@dataclass
class DayResult:
    nu: np.ndarray
    t: np.ndarray
    x_pred: np.ndarray
    x_true: np.ndarray
    diagnostics: dict


def simulate_day(data, test_day: int, params: HealthModelParams = HealthModelParams(),
                 solver_config: inner.SolverConfig = HEALTH_SOLVER, stream: RngStream = RngStream(0),
                 redraw: bool = True, warm_start: bool = True, x0: Optional[float] = None,
                 steps: Optional[int] = None) -> DayResult:
    """Tracked and reference trajectories over one test day.

    ``data`` is a :class:`~dsvio.health.data.SourceData`. Features are
    standardised per source with history-day statistics. ``x0`` defaults to
    the day's first label; both recursions start there. With ``redraw`` a new
    set of subsamples is drawn at every node, otherwise node 0's set is kept.
    """
    from .data import SOURCES
    H0 = params.history_days
    row = H0 + test_day
    if not 0 <= test_day < data.days - H0:
        raise ValueError(f"test_day {test_day} out of range")
    S = data.steps if steps is None else min(steps, data.steps)
    hours = params.hours_per_step * data.downsample
    Zs = []
    for s in SOURCES:
        Z = data.Z[s]
        hist, test = standardize(Z[:H0].reshape(-1, Z.shape[-1]), Z[row])
        Zs.append((hist.reshape(H0, Z.shape[1], -1), test))
    labels = data.labels
    x = float(labels[row, 0]) if x0 is None else float(x0)
    xt = x
    xp = np.empty(S + 1)
    xr = np.empty(S + 1)
    xp[0] = xr[0] = x
    idx = draw_subsamples(stream, 0, params)
    warm = None
    solves = unconverged = 0
    worst = 0.0
    for nu in range(S):
        t = nu * hours
        if redraw and nu > 0:
            idx = draw_subsamples(stream, nu, params)
        res = health_step(x, t, [z[1][nu] for z in Zs], [z[0][:, nu] for z in Zs],
                          [labels[:H0, nu]] * 3, idx, params, solver_config,
                          warm if warm_start else None)
        for sol in res.solutions:
            solves += sol.converged.size
            unconverged += int(sol.converged.size - np.count_nonzero(sol.converged))
            worst = max(worst, float(np.max(sol.kkt_residual)))
        warm = [sol.y for sol in res.solutions]
        x = res.x
        xt = true_step(xt, t, [labels[row, nu]] * 3, params)
        xp[nu + 1] = x
        xr[nu + 1] = xt
    nus = np.arange(S + 1)
    return DayResult(nus, nus * hours, xp, xr,
                     {"inner_solves": solves, "inner_unconverged": unconverged, "max_kkt_residual": worst})
