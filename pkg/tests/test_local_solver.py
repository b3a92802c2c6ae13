import cvxpy as cp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import projection_cvxpy, projection_grid_polish

from conftest import random_params
from mogrid.local_solver import (
    FeasibleOutputProblem,
    ProsumerAgent,
    max_demand_envelope,
    project_onto_Di,
)
from mogrid.prosumer import ProsumerParams, TimeGrid, check_feasible, demand_output


def projection(target, w, x0=0.5, params=ProsumerParams(), T=0.5):
    target, w = np.atleast_1d(np.asarray(target, float)), np.atleast_1d(np.asarray(w, float))
    return project_onto_Di(FeasibleOutputProblem(target, w, x0, params, TimeGrid(T, len(w))))


def random_case(rng, N):
    p = random_params(rng)
    w = rng.normal(0.5, 0.5, N)
    return p, w, rng.uniform(0, p.capacity), w + rng.normal(0, 1, N)


def test_target_equal_to_w_gives_idle():
    w = np.array([0.3, -0.1, 0.8, 0.4])
    sol = projection(w, w)
    np.testing.assert_array_equal(sol.z, w)
    np.testing.assert_array_equal(sol.u.u_minus, 0.0)
    np.testing.assert_array_equal(sol.u.u_plus, 0.0)


def test_single_step_far_above_is_clipped():
    # 1.5 kWh of room but at most 0.5 kW for half an hour: the rate limit binds
    sol = projection([10.0], [0.2], x0=0.5)
    assert sol.z[0] == pytest.approx(0.7, abs=1e-12)
    # nearly full battery: the charge limit binds, u_plus = (C - x0) / T
    sol = projection([10.0], [0.2], x0=1.9)
    assert sol.u.u_plus[0] == pytest.approx(0.2, abs=1e-12)
    assert sol.z[0] == pytest.approx(0.4, abs=1e-12)


def test_single_step_matches_fine_grid(rng):
    for _ in range(20):
        p, w, x0, target = random_case(rng, 1)
        sol = projection(target, w, x0, p)
        # grid search over the control polygon at resolution 1e-3
        um = np.arange(p.u_min, 1e-12, 1e-3)
        up = np.arange(0.0, p.u_max + 1e-12, 1e-3)
        UM, UP = np.meshgrid(um, up)
        x1 = p.alpha * x0 + 0.5 * (p.beta * UP + UM)
        ok = (UM / p.u_min + UP / p.u_max <= 1 + 1e-12) & (x1 >= 0) & (x1 <= p.capacity)
        vals = np.where(ok, (w[0] + UP + p.gamma * UM - target[0]) ** 2, np.inf)
        best = vals.min()
        got = float((sol.z[0] - target[0]) ** 2)
        # the grid can only be worse, by at most one cell of slope
        assert got <= best + 1e-12
        assert best - got <= 4e-3 * (abs(sol.z[0] - target[0]) + 1e-3)


@pytest.mark.parametrize("N", [1, 2, 3])
def test_matches_oracles(rng, N):
    for _ in range(8):
        p, w, x0, target = random_case(rng, N)
        sol = projection(target, w, x0, p)
        val = float(np.sum((sol.z - target) ** 2))
        grid_val, _ = projection_grid_polish(target, w, x0, p, TimeGrid(0.5, N))
        cvx_val, _ = projection_cvxpy(target, w, x0, p, TimeGrid(0.5, N))
        assert val == pytest.approx(grid_val, abs=1e-6)
        assert val == pytest.approx(cvx_val, abs=1e-6)


def test_long_horizon_matches_cvxpy(rng):
    for _ in range(3):
        p, w, x0, target = random_case(rng, 48)
        sol = projection(target, w, x0, p)
        cvx_val, _ = projection_cvxpy(target, w, x0, p, TimeGrid(0.5, 48))
        assert float(np.sum((sol.z - target) ** 2)) == pytest.approx(cvx_val, abs=1e-6)
        assert sol.converged and sol.kkt_residual <= 1e-8


def test_solution_is_feasible_and_consistent(rng):
    for _ in range(20):
        p, w, x0, target = random_case(rng, 6)
        sol = projection(target, w, x0, p)
        grid = TimeGrid(0.5, 6)
        assert check_feasible(x0, sol.u, p, grid)
        np.testing.assert_allclose(sol.z, demand_output(w, sol.u, p), atol=1e-12)


def min_norm_controls_cvxpy(z, w, x0, p, grid):
    """Smallest ``|u|^2`` among feasible controls that produce exactly ``z``."""
    um, up = cp.Variable(grid.N), cp.Variable(grid.N)
    x, cons = x0, [um <= 0, um >= p.u_min, up >= 0, up <= p.u_max, um / p.u_min + up / p.u_max <= 1]
    cons.append(w + up + p.gamma * um == z)
    for n in range(grid.N):
        x = p.alpha * x + grid.T * (p.beta * up[n] + um[n])
        cons += [x >= 0, x <= p.capacity]
    prob = cp.Problem(cp.Minimize(cp.sum_squares(um) + cp.sum_squares(up)), cons)
    prob.solve(solver=cp.CLARABEL, tol_gap_abs=1e-11, tol_gap_rel=1e-11, tol_feas=1e-10)
    return prob.value


def test_controls_have_minimum_norm_for_their_output():
    """Cycling can be optimal near a full lossy battery, but no cheaper control reaches the same output."""
    p = ProsumerParams(gamma=0.9, beta=0.9)
    rng = np.random.default_rng(3)
    for _ in range(10):
        w = rng.normal(0.5, 0.3, 8)
        x0 = rng.uniform(0, p.capacity)
        sol = projection(w + rng.normal(0, 0.5, 8), w, x0, p)
        norm = float(np.sum(sol.u.u_minus**2) + np.sum(sol.u.u_plus**2))
        assert norm == pytest.approx(min_norm_controls_cvxpy(sol.z, w, x0, p, TimeGrid(0.5, 8)), abs=1e-7)


def test_tie_break_prefers_smallest_controls():
    # gamma = beta = 1: charging and discharging by the same amount leaves z unchanged,
    # so only the secondary criterion selects u
    p = ProsumerParams()
    w = np.array([0.4, 0.4])
    sol = projection(w + np.array([0.1, -0.1]), w, 1.0, p)
    np.testing.assert_allclose(sol.u.u_plus, [0.1, 0.0], atol=1e-10)
    np.testing.assert_allclose(sol.u.u_minus, [0.0, -0.1], atol=1e-10)


def test_no_storage_is_identity_on_w():
    p = ProsumerParams(capacity=0.0)
    w = np.array([0.3, 0.6])
    sol = projection([5.0, -5.0], w, 0.0, p)
    np.testing.assert_array_equal(sol.z, w)


def test_invalid_problem():
    with pytest.raises(ValueError):
        FeasibleOutputProblem(np.zeros(2), np.zeros(2), 3.0, ProsumerParams(), TimeGrid(0.5, 2))
    with pytest.raises(ValueError):
        FeasibleOutputProblem(np.zeros(3), np.zeros(2), 0.5, ProsumerParams(), TimeGrid(0.5, 2))


def test_agent_warm_start_does_not_change_answer(rng):
    p, w, x0, _ = random_case(rng, 10)
    agent = ProsumerAgent(w, x0, p, TimeGrid(0.5, 10))
    for _ in range(5):
        bc = rng.normal(0, 0.5, 10)
        z_prev = agent.z.copy()
        z = agent.respond(bc)
        cold = projection(z_prev - bc, w, x0, p)
        np.testing.assert_allclose(z, cold.z, atol=1e-9)


class TestEnvelope:
    def test_contains_w(self, rng):
        for _ in range(10):
            p, w, x0, t = random_case(rng, 6)
            env = max_demand_envelope(FeasibleOutputProblem(t, w, x0, p, TimeGrid(0.5, 6)))
            assert np.all(env.z_min <= w) and np.all(w <= env.z_max)

    def test_rate_width(self):
        env = max_demand_envelope(FeasibleOutputProblem(np.zeros(3), np.zeros(3), 1.0, ProsumerParams(), TimeGrid(0.5, 3)))
        np.testing.assert_allclose(env.z_max - env.z_min, 1.0)

    def test_empty_battery(self):
        env = max_demand_envelope(FeasibleOutputProblem(np.zeros(3), np.full(3, 0.4), 0.0, ProsumerParams(), TimeGrid(0.5, 3)))
        assert env.z_min[0] == 0.4

    def test_contains_projections(self, rng):
        for _ in range(10):
            p, w, x0, t = random_case(rng, 5)
            prob = FeasibleOutputProblem(t, w, x0, p, TimeGrid(0.5, 5))
            env = max_demand_envelope(prob)
            z = project_onto_Di(prob).z
            assert np.all(z >= env.z_min - 1e-9) and np.all(z <= env.z_max + 1e-9)


# ---------------------------------------------------------------------------
# properties


@st.composite
def cases(draw):
    seed = draw(st.integers(0, 2**32 - 1))
    N = draw(st.integers(1, 12))
    rng = np.random.default_rng(seed)
    p, w, x0, a = random_case(rng, N)
    b = w + rng.normal(0, 1, N)
    return p, w, x0, a, b


@settings(max_examples=60, deadline=None)
@given(cases())
def test_idempotent(case):
    p, w, x0, a, _ = case
    z = projection(a, w, x0, p).z
    np.testing.assert_allclose(projection(z, w, x0, p).z, z, atol=1e-8)


@settings(max_examples=60, deadline=None)
@given(cases())
def test_non_expansive(case):
    p, w, x0, a, b = case
    za, zb = projection(a, w, x0, p).z, projection(b, w, x0, p).z
    assert np.linalg.norm(za - zb) <= np.linalg.norm(a - b) + 1e-9
