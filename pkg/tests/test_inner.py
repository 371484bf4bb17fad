import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dsvio import inner
from dsvio.geometry import Box, ScaledSymmetricBox, WholeSpace
from dsvio.inner import (BoxQuadraticProblem, FixedSelection, L1LeastSquaresProblem, SolverConfig,
                         kkt_residual, lipschitz_estimate, soft_threshold, solve, solve_box_quadratic,
                         solve_l1)

TIGHT = SolverConfig(max_iter=20000, tol=1e-12)


def grid_minimise(f, lo, hi, points=41, rounds=40):
    """Zooming grid search over a box: ``f`` maps (k, m) points to (k,) values."""
    lo, hi = np.array(lo, float), np.array(hi, float)
    m = lo.size
    best = None
    for _ in range(rounds):
        axes = [np.linspace(lo[i], hi[i], points) for i in range(m)]
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, m)
        vals = f(pts)
        best = pts[np.argmin(vals)]
        step = (hi - lo) / (points - 1)
        lo, hi = np.maximum(best - 2 * step, lo), np.minimum(best + 2 * step, hi)
    return best


# -- soft threshold ---------------------------------------------------------------

def test_soft_threshold_examples():
    np.testing.assert_array_equal(soft_threshold([3.0], 1), [2.0])
    np.testing.assert_array_equal(soft_threshold([-0.5], 1), [0.0])
    np.testing.assert_array_equal(soft_threshold([0.0, -4.0], 0.5), [0.0, -3.5])


@given(st.floats(-100, 100), st.floats(1e-3, 10))
def test_soft_threshold_is_a_prox(v, mu):
    z = soft_threshold([v], mu)[0]
    grid = np.linspace(z - 1, z + 1, 2001)
    f = lambda w: 0.5 * (w - v) ** 2 + mu * np.abs(w)
    assert f(z) <= f(grid).min() + 1e-12


# -- Lipschitz constant -----------------------------------------------------------

def test_lipschitz_examples():
    assert lipschitz_estimate(np.array([[2.0, 0], [0, 1]])) == pytest.approx(4, rel=1e-12)
    assert lipschitz_estimate(np.eye(3)) == pytest.approx(1, rel=1e-12)
    assert lipschitz_estimate(np.zeros((2, 3))) == 1e-16


@pytest.mark.parametrize("shape", [(3, 10), (10, 3), (2, 4), (50, 14)])
def test_lipschitz_matches_dense_eigensolver(shape):
    rng = np.random.default_rng(sum(shape))
    for _ in range(10):
        H = rng.normal(size=shape)
        true = np.linalg.eigvalsh(H.T @ H)[-1]
        est = lipschitz_estimate(H)
        assert abs(est - true) <= 1e-8 * true
        assert est >= true * (1 - 1e-8)


def test_lipschitz_batch():
    H = np.random.default_rng(0).normal(size=(5, 3, 10))
    est = lipschitz_estimate(H)
    assert est.shape == (5,)
    np.testing.assert_allclose(est, [np.linalg.eigvalsh(h.T @ h)[-1] for h in H], rtol=1e-8)


# -- L1 least squares -------------------------------------------------------------

def test_l1_scalar_closed_form():
    s = solve_l1(L1LeastSquaresProblem(np.array([[1.0]]), np.array([3.0]), 1.0, WholeSpace(1)))
    assert s.converged
    np.testing.assert_allclose(s.y, [2.0], atol=1e-10)


def test_l1_separable_closed_form():
    s = solve_l1(L1LeastSquaresProblem(np.eye(2), np.array([0.004, 10.0]), 0.005, WholeSpace(2)))
    np.testing.assert_allclose(s.y, [0.0, 9.995], atol=1e-10)


def test_l1_random_instance_certified():
    rng = np.random.default_rng(3)
    H, c = rng.normal(size=(3, 10)), rng.normal(size=3)
    p = L1LeastSquaresProblem(H, c, 5e-3, ScaledSymmetricBox(5.0, 10))
    s = solve_l1(p, SolverConfig(tol=1e-6))
    assert s.converged and s.kkt_residual <= 1e-6
    assert kkt_residual(p, s.y) == pytest.approx(s.kkt_residual, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 6), st.integers(0, 2 ** 32 - 1))
def test_l1_diagonal_matches_closed_form(m, seed):
    rng = np.random.default_rng(seed)
    h = rng.uniform(0.2, 3.0, m) * rng.choice([-1, 1], m)
    c = rng.normal(0, 3, m)
    mu = rng.uniform(1e-3, 2.0)
    r = rng.uniform(0.1, 5.0)
    p = L1LeastSquaresProblem(np.diag(h), c, mu, ScaledSymmetricBox(r, m))
    # separable: min 0.5 (h y - c)^2 + mu |y| on [-r, r]
    expected = np.clip(soft_threshold(h * c, mu) / h ** 2, -r, r)
    s = solve_l1(p, TIGHT)
    np.testing.assert_allclose(s.y, expected, atol=1e-8)


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_l1_solution_feasible_and_no_worse_than_grid(seed):
    rng = np.random.default_rng(seed)
    H, c = rng.normal(size=(3, 2)), rng.normal(0, 3, 3)
    r = rng.uniform(0.1, 3)
    p = L1LeastSquaresProblem(H, c, 0.05, ScaledSymmetricBox(r, 2))
    s = solve_l1(p, TIGHT)
    assert np.all(np.abs(s.y) <= r + 1e-12)
    best = grid_minimise(p.objective, [-r, -r], [r, r])
    assert p.objective(s.y) <= p.objective(best) + 1e-9


def test_batched_solve_equals_individual_solves():
    rng = np.random.default_rng(11)
    H, c = rng.normal(size=(6, 3, 10)), rng.normal(size=(6, 3))
    r = rng.uniform(0.5, 3, 6)
    cfg = SolverConfig(tol=1e-8)
    batch = solve_l1(L1LeastSquaresProblem(H, c, 5e-3, ScaledSymmetricBox(r, 10)), cfg)
    for k in range(6):
        one = solve_l1(L1LeastSquaresProblem(H[k], c[k], 5e-3, ScaledSymmetricBox(r[k], 10)), cfg)
        np.testing.assert_array_equal(batch.y[k], one.y)
        assert batch.iterations[k] == one.iterations


@pytest.mark.parametrize("polish", [True, False])
def test_objective_trace_is_monotone(polish):
    rng = np.random.default_rng(5)
    H = rng.normal(size=(4, 3, 10))
    c = rng.normal(size=(4, 3))
    p = L1LeastSquaresProblem(H, c, 5e-3, ScaledSymmetricBox(2.0, 10))
    s = solve_l1(p, SolverConfig(max_iter=500, tol=1e-14, polish=polish), record=True)
    for tr in s.objective_trace:
        tr = tr[~np.isnan(tr)]
        assert tr.size > 0
        assert np.all(np.diff(tr) <= 0)


def test_warm_start_is_clamped_into_the_box():
    p = L1LeastSquaresProblem(np.eye(2), np.array([1.0, 1.0]), 0.1, ScaledSymmetricBox(0.5, 2))
    s = solve_l1(p, SolverConfig(), y0=np.array([100.0, -100.0]))
    np.testing.assert_allclose(s.y, [0.5, 0.5], atol=1e-12)


def test_nonconvergence_is_reported():
    rng = np.random.default_rng(1)
    p = L1LeastSquaresProblem(rng.normal(size=(3, 10)), rng.normal(size=3), 5e-3,
                              ScaledSymmetricBox(5.0, 10))
    s = solve_l1(p, SolverConfig(max_iter=3, tol=1e-14, polish=False))
    assert not s.converged
    assert s.iterations == 3
    assert np.all(np.abs(s.y) <= 5.0)


# -- box quadratics ---------------------------------------------------------------

def test_box_quadratic_examples():
    one = lambda d: BoxQuadraticProblem([(np.array([[1.0]]), np.array([d]), 1.0)], Box([-10.0], [10.0]))
    np.testing.assert_allclose(solve_box_quadratic(one(0.5)).y, [0.5], atol=1e-12)
    np.testing.assert_allclose(solve_box_quadratic(one(20.0)).y, [10.0], atol=1e-12)


def test_box_quadratic_two_blocks_1d_grid():
    p = BoxQuadraticProblem([(np.array([[1.0]]), np.array([1.0]), 5.0),
                             (np.array([[2.0]]), np.array([3.0]), 1.0)], Box([-10.0], [10.0]))
    s = solve_box_quadratic(p)
    coarse = np.arange(-10, 10 + 1e-9, 1e-3)
    y0 = coarse[np.argmin(p.objective(coarse[:, None]))]
    fine = np.arange(y0 - 1e-3, y0 + 1e-3, 1e-6)
    yg = fine[np.argmin(p.objective(fine[:, None]))]
    assert abs(s.y[0] - yg) <= 1e-5
    assert s.y[0] == pytest.approx(11 / 9, abs=1e-8)


@pytest.mark.parametrize("m", [1, 2, 3])
def test_box_quadratic_matches_grid_oracle(m):
    rng = np.random.default_rng(100 + m)
    for _ in range(20):
        G1, d1 = rng.normal(size=(1, m)), rng.normal(size=1)
        G2, d2 = rng.normal(size=(m + 2, m)), rng.normal(0, 3, m + 2)
        lo = rng.uniform(-2, 0, m)
        hi = lo + rng.uniform(0.1, 2, m)
        p = BoxQuadraticProblem([(G1, d1, 5.0), (G2, d2, 1.0)], Box(lo, hi))
        s = solve_box_quadratic(p, SolverConfig(tol=1e-10))
        assert s.converged
        yg = grid_minimise(p.objective, lo, hi)
        np.testing.assert_allclose(s.y, yg, atol=1e-3)
        assert p.objective(s.y) <= p.objective(yg) + 1e-6


def test_box_quadratic_batch_broadcasts_blocks():
    rng = np.random.default_rng(2)
    b = rng.normal(size=4)
    H = rng.normal(size=(5, 8, 4))
    c = rng.normal(size=(5, 8))
    lo = np.full((5, 4), -10.0)
    p = BoxQuadraticProblem([(np.broadcast_to(b, (5, 1, 4)), np.ones((5, 1)), 5.0), (H, c, 1.0)],
                            Box(lo, -lo))
    s = solve_box_quadratic(p)
    assert s.y.shape == (5, 4) and np.all(s.converged)
    for k in range(5):
        pk = BoxQuadraticProblem([(b[None, :], np.ones(1), 5.0), (H[k], c[k], 1.0)], Box(lo[k], -lo[k]))
        np.testing.assert_allclose(solve_box_quadratic(pk).y, s.y[k], atol=1e-7)


# -- KKT residual -----------------------------------------------------------------

def test_kkt_residual_examples():
    p = L1LeastSquaresProblem(np.array([[1.0]]), np.array([3.0]), 1.0, WholeSpace(1))
    assert kkt_residual(p, np.array([2.0])) <= 1e-12
    assert kkt_residual(p, np.array([2.1])) > 0.01
    q = BoxQuadraticProblem([(np.array([[1.0]]), np.array([20.0]), 1.0)], Box([-10.0], [10.0]))
    assert kkt_residual(q, np.array([10.0])) <= 1e-12
    with pytest.raises(ValueError):
        kkt_residual(q, np.array([10.5]))


# -- configuration and dispatch ---------------------------------------------------

@pytest.mark.parametrize("kwargs", [{"max_iter": 0}, {"tol": 0.0}, {"check_every": 0}])
def test_solver_config_validation(kwargs):
    with pytest.raises(ValueError):
        SolverConfig(**kwargs)


def test_problem_validation():
    with pytest.raises(ValueError):
        L1LeastSquaresProblem(np.eye(2), np.ones(2), 0.0, WholeSpace(2))
    with pytest.raises(ValueError):
        L1LeastSquaresProblem(np.eye(2), np.ones(3), 1.0, WholeSpace(2))
    with pytest.raises(ValueError):
        BoxQuadraticProblem([], Box([0.0], [1.0]))
    with pytest.raises(ValueError):
        BoxQuadraticProblem([(np.eye(1), np.ones(1), -1.0)], Box([0.0], [1.0]))


def test_fixed_selection_passthrough():
    y = np.array([[1.0, 0.0], [0.0, 1.0]])
    s = solve(FixedSelection(y))
    np.testing.assert_array_equal(s.y, y)
    assert np.all(s.converged) and np.all(s.iterations == 0)
    with pytest.raises(TypeError):
        solve(object())
