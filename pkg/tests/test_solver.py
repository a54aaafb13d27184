import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import linprog

from gesture_isac import optimizer as opt
from gesture_isac import signal as sig
from gesture_isac import solver as so

from conftest import random_instance


def _rand_herm(r, n, psd=False):
    Z = r.standard_normal((n, n)) + 1j * r.standard_normal((n, n))
    return Z @ Z.conj().T / n if psd else (Z + Z.conj().T) / 2


def _single_block(D, C, a, A=None, b=None):
    n = D.shape[0]
    A = np.zeros((0, 1, n, n)) if A is None else A
    b = np.zeros(0) if b is None else b
    return so.ConicProblem(
        linear=D[None], sqrt_coef=[a], sqrt_mat=C[None], sqrt_block=[0], ineq_mat=A, ineq_rhs=b, trace=[1.0]
    )


def test_scalar_blocks():
    # n = 1: the trace fixes X = 1
    prob = so.ConicProblem(
        linear=np.array([[[-0.5]], [[2.0]]]),
        sqrt_coef=[3.0],
        sqrt_mat=np.array([[[4.0]]]),
        sqrt_block=[1],
        ineq_mat=np.zeros((0, 2, 1, 1)),
        ineq_rhs=[],
        trace=[1.0, 1.0],
    )
    rep = so.solve_psd(prob)
    assert rep.ok
    np.testing.assert_allclose(rep.blocks.real.ravel(), [1.0, 1.0], atol=1e-9)
    assert rep.objective == pytest.approx(-0.5 + 2.0 + 6.0, rel=1e-6)


def _grid_max(D, C, a, size=720):
    alpha = np.linspace(0, np.pi / 2, size)
    phi = np.linspace(0, 2 * np.pi, size, endpoint=False)
    ca, sa = np.cos(alpha)[:, None], np.sin(alpha)[:, None]
    e = np.exp(1j * phi)[None, :]

    def form(P):
        return (ca**2 * P[0, 0].real + sa**2 * P[1, 1].real + 2 * (ca * sa * (P[0, 1] * e)).real)

    return float(np.max(form(D) + a * np.sqrt(np.maximum(form(C), 0))))


@pytest.mark.parametrize("seed", range(4))
def test_matches_rank_one_grid(seed):
    # two Hermitian forms on C^2 have a convex joint numerical range, so the
    # optimum over density matrices is attained by a unit vector
    r = np.random.default_rng(seed)
    D, C = _rand_herm(r, 2), _rand_herm(r, 2, psd=True)
    a = float(r.uniform(0.5, 2))
    rep = so.solve_psd(_single_block(D, C, a))
    assert rep.ok
    grid = _grid_max(D, C, a)
    assert rep.objective >= grid - 1e-6 * abs(grid)
    assert rep.objective == pytest.approx(grid, rel=1e-4, abs=1e-5)
    assert rep.dual_bound >= rep.objective - 1e-9
    assert rep.kkt_residual["epigraph_slack"] < 1e-5


@pytest.mark.parametrize("seed", range(5))
def test_diagonal_data_matches_lp(seed):
    # diagonal data: pinching keeps feasibility and value, so the SDP is an LP
    r = np.random.default_rng(100 + seed)
    n, J = 4, 3
    d = r.standard_normal(n)
    A = r.standard_normal((J, n))
    x_feas = r.dirichlet(np.ones(n))
    b = A @ x_feas + r.uniform(0.05, 0.5, J)
    prob = so.ConicProblem(
        linear=np.diag(d)[None],
        sqrt_coef=[],
        sqrt_mat=np.zeros((0, n, n)),
        sqrt_block=[],
        ineq_mat=np.array([np.diag(row)[None] for row in A]),
        ineq_rhs=b,
        trace=[1.0],
    )
    rep = so.solve_psd(prob)
    lp = linprog(-d, A_ub=A, b_ub=b, A_eq=np.ones((1, n)), b_eq=[1.0], bounds=[(0, None)] * n)
    assert lp.status == 0 and rep.ok
    assert rep.objective == pytest.approx(-lp.fun, rel=1e-5, abs=1e-6)
    assert rep.max_violation <= 1e-7


def test_infeasible_certificate():
    n = 3
    # Tr X = 1 but <I, X> <= 0.5
    prob = so.ConicProblem(
        linear=np.eye(n)[None],
        sqrt_coef=[],
        sqrt_mat=np.zeros((0, n, n)),
        sqrt_block=[],
        ineq_mat=np.eye(n)[None, None],
        ineq_rhs=[0.5],
        trace=[1.0],
    )
    assert so.solve_psd(prob).status == so.INFEASIBLE
    lp = linprog(np.zeros(n), A_ub=np.ones((1, n)), b_ub=[0.5], A_eq=np.ones((1, n)), b_eq=[1.0])
    assert lp.status == 2


@pytest.mark.parametrize(
    "kw",
    [
        dict(sqrt_coef=[-1.0]),
        dict(sqrt_block=[3]),
        dict(trace=[0.0]),
        dict(linear=np.array([[[0, 1], [0, 0]]])),
    ],
)
def test_problem_validation(kw):
    base = dict(
        linear=np.zeros((1, 2, 2)),
        sqrt_coef=[1.0],
        sqrt_mat=np.eye(2)[None],
        sqrt_block=[0],
        ineq_mat=np.zeros((0, 1, 2, 2)),
        ineq_rhs=[],
        trace=[1.0],
    )
    base.update(kw)
    with pytest.raises(ValueError):
        so.ConicProblem(**base)


@given(st.integers(0, 2**31))
@settings(max_examples=10, deadline=None)
def test_weak_duality_and_feasibility(seed):
    r = np.random.default_rng(seed)
    n = 3
    D, C = _rand_herm(r, n), _rand_herm(r, n, psd=True)
    A = _rand_herm(r, n)[None, None]
    b = [float(np.trace(A[0, 0]).real / n + 0.1)]  # the maximally mixed state is strictly feasible
    rep = so.solve_psd(_single_block(D, C, 1.0, A, b))
    assert rep.ok
    assert rep.dual_bound >= rep.objective - 1e-9 * max(1, abs(rep.objective))
    assert rep.max_violation <= 1e-7


def test_principal_component():
    v = np.array([1.0, 1j, -1.0]) / np.sqrt(3)
    u, gap = so.principal_component(2.0 * np.outer(v, v.conj()))
    assert gap == pytest.approx(0.0, abs=1e-12)
    assert abs(np.vdot(u, v)) == pytest.approx(1.0)
    assert np.linalg.norm(u) == pytest.approx(1.0)
    _, gap = so.principal_component(np.eye(4))
    assert gap == pytest.approx(0.75)
    with pytest.raises(ValueError):
        so.principal_component(np.zeros((2, 2)))


def test_reduce_rank_keeps_value_and_constraints(rng):
    inputs = random_instance(rng, K=2, M=6, gamma=2.0, p_max=4.0)
    powers = sig.PowerSet(np.array([1.0, 1.0]), 0.5)
    t = np.array([0.3, 0.2])
    prob = opt.beamforming_problem(inputs, powers, t)
    rep = so.solve_psd(prob)
    assert rep.ok
    reduced = so.reduce_rank(prob, rep.blocks)
    before = prob.objective(rep.blocks)
    assert prob.objective(reduced) == pytest.approx(before, rel=1e-8, abs=1e-10)
    assert prob.violation(reduced) <= 1e-7
    rank = lambda X: int(np.sum(np.linalg.eigvalsh(X) > 1e-9 * np.trace(X).real))
    assert sum(map(rank, reduced)) <= sum(map(rank, rep.blocks))
    assert all(rank(X) <= 2 for X in reduced)


# ---------------------------------------------------------------------------
# power subproblem
# ---------------------------------------------------------------------------


def _power_grid(prob: so.PowerProblem, size=1500):
    # K = 1: grid over (P_1, P_r) on the budget triangle
    P = np.linspace(0, prob.p_max, size)
    p1, pr = np.meshgrid(P, P, indexing="ij")
    ok = p1 + pr <= prob.p_max
    val = 2 * prob.t[0] * np.sqrt(pr * prob.echo[0]) - prob.t[0] ** 2 * (p1 * prob.leak[0] + prob.noise_sense)
    qos = p1 * prob.cross[0, 0] - prob.gamma[0] * (pr * prob.sense_at_user[0] + prob.noise_comm)
    ok &= qos >= 0 if prob.gamma[0] > 0 else True
    return float(np.max(np.where(ok, val, -np.inf)))


@pytest.mark.parametrize("seed", range(5))
def test_power_single_user_grid(seed):
    r = np.random.default_rng(seed)
    prob = so.PowerProblem(
        t=[r.uniform(0.2, 1.0)],
        echo=[r.uniform(0.5, 2.0)],
        leak=[r.uniform(0.1, 1.0)],
        cross=[[r.uniform(2.0, 5.0)]],
        sense_at_user=[r.uniform(0.1, 1.0)],
        gamma=[r.uniform(0.5, 2.0)],
        p_max=4.0,
        noise_sense=1.0,
        noise_comm=1.0,
    )
    rep = so.solve_power(prob)
    assert rep.ok
    grid = _power_grid(prob)
    assert rep.objective >= grid - 1e-6
    assert rep.objective == pytest.approx(grid, abs=5e-3)
    assert rep.max_violation <= 1e-7


def test_power_two_user_grid():
    r = np.random.default_rng(7)
    prob = so.PowerProblem(
        t=[0.5, 0.4],
        echo=[1.2, 0.8],
        leak=[0.3, 0.2],
        cross=[[3.0, 0.4], [0.3, 2.5]],
        sense_at_user=[0.5, 0.4],
        gamma=[1.0, 0.8],
        p_max=5.0,
        noise_sense=1.0,
        noise_comm=1.0,
    )
    rep = so.solve_power(prob)
    P = np.linspace(0, 5.0, 161)
    a, b, c = np.meshgrid(P, P, P, indexing="ij")
    ok = a + b + 2 * c <= 5.0
    pc = np.stack([a, b])
    for k in range(2):
        inter = prob.cross[k] @ pc.reshape(2, -1) - prob.cross[k, k] * pc[k].ravel()
        qos = pc[k].ravel() * prob.cross[k, k] - prob.gamma[k] * (inter + c.ravel() * prob.sense_at_user[k] + 1)
        ok &= (qos >= 0).reshape(a.shape)
    val = sum(
        2 * prob.t[k] * np.sqrt(c * prob.echo[k]) - prob.t[k] ** 2 * (pc[k] * prob.leak[k] + 1) for k in range(2)
    )
    grid = float(np.max(np.where(ok, val, -np.inf)))
    assert rep.ok
    assert rep.objective >= grid - 1e-6
    assert rep.objective == pytest.approx(grid, abs=2e-2)
    del r


def test_power_zero_t_and_zero_budget():
    base = dict(
        echo=[1.0], leak=[1.0], cross=[[1.0]], sense_at_user=[0.0], gamma=[0.0], noise_sense=1.0, noise_comm=1.0
    )
    rep = so.solve_power(so.PowerProblem(t=[0.0], p_max=2.0, **base))
    assert rep.ok and rep.objective == 0.0
    rep = so.solve_power(so.PowerProblem(t=[1.0], p_max=0.0, **base))
    assert rep.ok and rep.p_sense == 0.0 and rep.objective == -1.0
    base["gamma"] = [1.0]
    rep = so.solve_power(so.PowerProblem(t=[1.0], p_max=0.0, **base))
    assert rep.status == so.INFEASIBLE


def test_power_infeasible_qos():
    prob = so.PowerProblem(
        t=[1.0], echo=[1.0], leak=[1.0], cross=[[1.0]], sense_at_user=[0.0],
        gamma=[10.0], p_max=1.0, noise_sense=1.0, noise_comm=1.0,
    )
    assert so.solve_power(prob).status == so.INFEASIBLE
