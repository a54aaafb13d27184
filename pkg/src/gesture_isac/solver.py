"""Small dense interior-point solvers for the two per-slot subproblems.

``solve_psd`` handles

    maximize    sum_i <D_i, X_i> + sum_q a_q sqrt(<C_q, X_{b(q)}>) + const
    subject to  sum_i <A_ji, X_i> <= b_j          (j = 1..J)
                sum_i <E_ji, X_i>  = f_j          (optional equalities)
                Tr X_i = e_i,  X_i Hermitian PSD   (i = 1..B)

with complex Hermitian blocks of a common size n. Every square-root term
gets an epigraph scalar s_q with s_q^2 <= <C_q, X_{b(q)}>, so the problem is
a linear objective over PSD cones, quadratic epigraph cones and half-spaces.
It is solved by a log-barrier path-following method. Each Newton system is
reduced through the block structure of the log-det Hessian
(H^{-1}[V] = X V X) to a dense system whose size is the number of
inequalities, epigraph terms and blocks, so the cost per step is
O(J B n^3). Dual multipliers are read off the central path and turned into
a valid upper bound on the optimum; ``optimal`` is only reported when the
certified gap is below tolerance. A phase-1 problem on the same machinery
finds a strictly feasible start or certifies infeasibility.

Blocks marked free have no trace equality; for them e_i must be an upper
bound on Tr X_i implied by the inequalities (it enters the dual bound).

``solve_power`` handles the power-allocation subproblem after the change of
variable u = sqrt(P_r), which makes the objective linear and every
constraint convex quadratic.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
MAX_ITERS = "max_iters"


@dataclass(frozen=True)
class Tolerances:
    feas_tol: float = 1e-7
    gap_tol: float = 1e-6  # relative duality gap / KKT residual
    max_iters: int = 100  # barrier (outer) iterations per phase
    max_newton: int = 60  # Newton steps per centering


@dataclass
class ConicProblem:
    """Data of the PSD-cone maximisation (see module docstring).

    Shapes: ``linear`` (B, n, n); ``sqrt_coef`` (Q,); ``sqrt_mat`` (Q, n, n);
    ``sqrt_block`` (Q,); ``ineq_mat`` (J, B, n, n); ``ineq_rhs`` (J,);
    ``trace`` (B,). ``free_trace`` (B,) marks blocks whose trace is not
    fixed; their ``trace`` entry is an implied upper bound instead.
    ``eq_mat`` (E, B, n, n) and ``eq_rhs`` (E,) are optional equality rows;
    they must hold at the scaled-identity start used by phase 1.
    """

    linear: np.ndarray
    sqrt_coef: np.ndarray
    sqrt_mat: np.ndarray
    sqrt_block: np.ndarray
    ineq_mat: np.ndarray
    ineq_rhs: np.ndarray
    trace: np.ndarray
    constant: float = 0.0
    free_trace: np.ndarray | None = None
    eq_mat: np.ndarray | None = None
    eq_rhs: np.ndarray | None = None

    def __post_init__(self):
        self.linear = np.asarray(self.linear, dtype=complex)
        B, n, _ = self.linear.shape
        free = np.zeros(B, dtype=bool) if self.free_trace is None else self.free_trace
        self.free_trace = np.asarray(free, dtype=bool).reshape(B)
        self.sqrt_coef = np.asarray(self.sqrt_coef, dtype=float).reshape(-1)
        Q = self.sqrt_coef.size
        self.sqrt_mat = np.asarray(self.sqrt_mat, dtype=complex).reshape(Q, n, n)
        self.sqrt_block = np.asarray(self.sqrt_block, dtype=int).reshape(Q)
        self.ineq_rhs = np.asarray(self.ineq_rhs, dtype=float).reshape(-1)
        J = self.ineq_rhs.size
        self.ineq_mat = np.asarray(self.ineq_mat, dtype=complex).reshape(J, B, n, n)
        self.trace = np.asarray(self.trace, dtype=float).reshape(B)
        self.eq_rhs = np.zeros(0) if self.eq_rhs is None else np.asarray(self.eq_rhs, dtype=float).reshape(-1)
        E = self.eq_rhs.size
        eq = np.zeros((0, B, n, n)) if self.eq_mat is None else self.eq_mat
        self.eq_mat = np.asarray(eq, dtype=complex).reshape(E, B, n, n)
        if np.any(self.sqrt_coef < 0):
            raise ValueError("square-root coefficients must be nonnegative")
        if np.any((self.sqrt_block < 0) | (self.sqrt_block >= B)):
            raise ValueError("square-root term refers to a missing block")
        if np.any(self.trace <= 0):
            raise ValueError("block traces must be positive")
        for name in ("linear", "sqrt_mat", "ineq_mat", "eq_mat"):
            a = getattr(self, name)
            if not np.allclose(a, np.swapaxes(a, -1, -2).conj(), atol=1e-12 * (1 + np.abs(a).max(initial=0))):
                raise ValueError(f"{name} must be Hermitian")

    @property
    def num_blocks(self) -> int:
        return self.linear.shape[0]

    @property
    def block_dim(self) -> int:
        return self.linear.shape[1]

    def objective(self, blocks: np.ndarray) -> float:
        lin = _inner(self.linear, blocks).sum()
        vals = _inner(self.sqrt_mat, blocks[self.sqrt_block])
        return float(lin + self.sqrt_coef @ np.sqrt(np.maximum(vals, 0.0)) + self.constant)

    def violation(self, blocks: np.ndarray) -> float:
        """Largest violation of the linear, trace and PSD constraints."""
        viol = [0.0]
        if self.ineq_rhs.size:
            lhs = _inner(self.ineq_mat, blocks[None]).sum(axis=1)
            viol.append(float(np.max(lhs - self.ineq_rhs)))
        if self.eq_rhs.size:
            lhs = _inner(self.eq_mat, blocks[None]).sum(axis=1)
            viol.append(float(np.max(np.abs(lhs - self.eq_rhs))))
        tr_err = np.abs(np.trace(blocks, axis1=1, axis2=2).real - self.trace)
        viol.append(float(np.max(tr_err[~self.free_trace], initial=0.0)))
        eig = np.linalg.eigvalsh(_herm(blocks))
        viol.append(float(-eig.min()))
        return max(viol)


@dataclass
class SolveReport:
    status: str
    objective: float
    blocks: np.ndarray | None = None
    epigraph: np.ndarray | None = None
    max_violation: float = np.inf
    dual_bound: float = np.inf
    kkt_residual: dict = field(default_factory=dict)
    iterations: int = 0
    newton_steps: int = 0
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


def _inner(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Real inner product Re tr(a^H b) over the last two axes."""
    return np.einsum("...ij,...ij->...", a.conj(), b).real


def _herm(a: np.ndarray) -> np.ndarray:
    return 0.5 * (a + np.swapaxes(a, -1, -2).conj())


class _BarrierProblem:
    """Scaled problem data in barrier form with scalar variables u.

    maximize <D, X> + d.u
    s.t. <A_j, X> + g_j.u <= b_j,  <E_j, X> = f_j,
         u[uidx_q]^2 <= <C_q, X[blk_q]>,  Tr X_i = e_i (fixed blocks).
    """

    def __init__(self, D, d, A, g, b, C, blk, uidx, e, free=None, E=None, f=None):
        self.D, self.d = D, d
        self.A, self.g, self.b = A, g, b
        self.C, self.blk, self.uidx = C, blk, uidx
        self.e = e
        B, n, _ = D.shape
        self.free = np.zeros(B, dtype=bool) if free is None else free
        self.fixed = np.flatnonzero(~self.free)
        self.B, self.n = B, n
        self.p = d.size
        self.J = b.size
        self.Q = blk.size
        self.E = np.zeros((0, B, n, n), dtype=complex) if E is None else E
        self.f = np.zeros(0) if f is None else f
        self.Ne = self.f.size
        self.nu = B * n + self.J + self.Q  # barrier parameter
        hu_mask = np.zeros(self.p)
        hu_mask[uidx] = 1.0
        self.hu_mask = hu_mask
        # epigraph matrices embedded as full block-arrays for the low-rank terms
        Cfull = np.zeros((self.Q, B, n, n), dtype=complex)
        Cfull[np.arange(self.Q), blk] = C
        self.G = np.concatenate([A, self.E, Cfull], axis=0)  # (L, B, n, n)

    def objective(self, X, u):
        return float(_inner(self.D, X).sum() + self.d @ u)

    def slacks(self, X, u):
        if self.J == 0:
            return np.zeros(0)
        return self.b - _inner(self.A, X[None]).sum(axis=1) - self.g @ u

    def psi(self, X, u):
        if self.Q == 0:
            return np.zeros(0)
        return _inner(self.C, X[self.blk]) - u[self.uidx] ** 2

    def phi(self, tau, X, u):
        """Barrier merit; +inf outside the interior."""
        try:
            L = np.linalg.cholesky(X)
        except np.linalg.LinAlgError:
            return np.inf
        s = self.slacks(X, u)
        ps = self.psi(X, u)
        if np.any(s <= 0) or np.any(ps <= 0):
            return np.inf
        logdet = 2 * np.log(np.abs(np.diagonal(L, axis1=1, axis2=2))).sum()
        return -tau * self.objective(X, u) - logdet - np.log(s).sum() - np.log(ps).sum()

    def newton(self, tau, X, u):
        """Newton direction for the equality-constrained barrier subproblem.

        The barrier gradient carries beta_l G_l with beta = (1/s, -1/psi),
        which is huge near the boundary. The reduced system is written in
        y = zeta + beta so those terms cancel analytically; y / tau is also
        the multiplier estimate used for the dual bound.
        """
        B, n, p = self.B, self.n, self.p
        Xinv = np.linalg.inv(X)
        Xinv = _herm(Xinv)
        s = self.slacks(X, u)
        ps = self.psi(X, u)
        gX = -tau * self.D - Xinv
        gu = -tau * self.d.copy()
        if self.J:
            gX = gX + np.einsum("j,jbkl->bkl", 1.0 / s, self.A)
            gu += self.g.T @ (1.0 / s)
        if self.Q:
            np.add.at(gX, self.blk, -self.C / ps[:, None, None])
            np.add.at(gu, self.uidx, 2 * u[self.uidx] / ps)
        # low-rank Hessian terms: c_l v_l v_l^T with v_l = (G_l, gamma_l),
        # c_l = 1 / slack_l^2
        # equality rows behave like inequality rows with zero slack
        J, Ne = self.J, self.Ne
        slack = np.concatenate([s, np.zeros(Ne), ps])
        Gam = np.zeros((J + Ne + self.Q, p))
        if J:
            Gam[:J] = self.g
        if self.Q:
            Gam[J + Ne + np.arange(self.Q), self.uidx] = -2 * u[self.uidx]
        hu = np.zeros(p)
        if self.Q:
            np.add.at(hu, self.uidx, 2.0 / ps)

        G = self.G
        Lr = G.shape[0]
        P = X[None] @ G @ X[None]  # H0^{-1} G_l
        R0 = tau * (X @ self.D @ X) + X  # H0^{-1} (tau D + X^{-1})
        Y = X @ X
        trY = np.trace(Y, axis1=1, axis2=2).real
        Kmat = np.einsum("lbij,mbij->lm", G.conj(), P).real
        fi = self.fixed
        N = np.trace(P, axis1=2, axis2=3).real[:, fi]  # (L, fixed blocks)
        Bf = fi.size
        size = Lr + Bf + p
        S = np.zeros((size, size))
        rhs = np.zeros(size)
        il, ib, iu = slice(0, Lr), slice(Lr, Lr + Bf), slice(Lr + Bf, size)
        S[il, il] = Kmat + np.diag(slack**2) if Lr else 0.0
        S[il, ib] = N
        S[il, iu] = -Gam
        S[ib, il] = N.T
        S[ib, ib] = np.diag(trY[fi])
        S[iu, il] = Gam.T
        S[iu, iu] = np.diag(hu)
        sign = np.concatenate([np.ones(J), np.zeros(Ne), -np.ones(self.Q)])
        if Lr:
            rhs[il] = _inner(G, R0[None]).sum(axis=1) + sign * slack
            if Ne:
                rhs[J : J + Ne] -= self.f - _inner(self.E, X[None]).sum(axis=1)
        rhs[ib] = np.trace(R0, axis1=1, axis2=2).real[fi]
        rhs[iu] = tau * self.d
        try:
            sol = np.linalg.solve(S, rhs)
        except np.linalg.LinAlgError:
            sol = np.linalg.lstsq(S, rhs, rcond=None)[0]
        y, du = sol[il], sol[iu]
        w = np.zeros(B)
        w[fi] = sol[ib]
        dX = R0 - np.einsum("l,lbij->bij", y, P) - w[:, None, None] * Y
        dX = _herm(dX)
        decrement = float(_inner(-gX, dX).sum() + (-gu) @ du)
        self.last_y = y / tau
        return dX, du, decrement, w, Xinv

    def max_step(self, X, dX, u, du):
        L = np.linalg.cholesky(X)
        Linv = np.linalg.inv(L)
        M = Linv @ dX @ np.swapaxes(Linv, -1, -2).conj()
        lam = np.linalg.eigvalsh(_herm(M)).min()
        alpha = 1.0 if lam >= 0 else min(1.0, -1.0 / lam)
        if self.J:
            s = self.slacks(X, u)
            ds = -_inner(self.A, dX[None]).sum(axis=1) - self.g @ du
            neg = ds < 0
            if np.any(neg):
                alpha = min(alpha, float(np.min(-s[neg] / ds[neg])))
        return alpha

    def center(self, tau, X, u, max_newton, stop=None):
        """Newton centering; returns (X, u, steps, converged, last w, Xinv)."""
        steps = 0
        w = np.zeros(self.B)
        Xinv = None
        for _ in range(max_newton):
            dX, du, dec, w, Xinv = self.newton(tau, X, u)
            if dec / 2 <= 1e-10:
                return X, u, steps, True, w, Xinv
            alpha = 0.99 * self.max_step(X, dX, u, du)
            f0 = self.phi(tau, X, u)
            while alpha > 1e-14:
                Xn = _herm(X + alpha * dX)
                un = u + alpha * du
                f1 = self.phi(tau, Xn, un)
                if f1 <= f0 - 0.01 * alpha * dec:
                    break
                alpha *= 0.5
            else:
                return X, u, steps, False, w, Xinv
            X, u = Xn, un
            steps += 1
            if stop is not None and stop(X, u):
                return X, u, steps, True, w, Xinv
        dX, du, dec, w, Xinv = self.newton(tau, X, u)
        return X, u, steps, dec / 2 <= 1e-7, w, Xinv

    def newton_multipliers(self):
        """(lam, kap, nu) from the last Newton solve, clipped to the dual cone."""
        y = self.last_y
        J, Ne = self.J, self.Ne
        lam = np.maximum(y[:J], 0.0)
        kap = np.maximum(-y[J + Ne :], 1e-300)
        return lam, kap, y[J : J + Ne]

    def multipliers(self, tau, X, u):
        lam = 1.0 / (tau * self.slacks(X, u)) if self.J else np.zeros(0)
        if self.Q:
            # stationarity in u gives kappa = reduced_cost / (2 u) without the
            # cancellation in <C, X> - u^2
            red = self.d[self.uidx] - (self.g[:, self.uidx].T @ lam if self.J else 0.0)
            kap = red / (2 * u[self.uidx])
        else:
            kap = np.zeros(0)
        return lam, kap

    def block_dual_matrix(self, lam, kap, nu=None):
        """D_i + sum kappa_q C_q - sum lambda_j A_ji - sum nu_j E_ji for every block."""
        Z = self.D.copy()
        if self.J:
            Z = Z - np.einsum("j,jbkl->bkl", lam, self.A)
        if self.Ne and nu is not None:
            Z = Z - np.einsum("j,jbkl->bkl", nu, self.E)
        if self.Q:
            np.add.at(Z, self.blk, kap[:, None, None] * self.C)
        return _herm(Z)

    def dual_bound(self, lam, kap, nu=None):
        """Upper bound from the Lagrangian at (lam >= 0, kap > 0, nu free).

        Only valid when every scalar outside the epigraphs has zero reduced
        cost; callers guarantee that.
        """
        Z = self.block_dual_matrix(lam, kap, nu)
        top = np.linalg.eigvalsh(Z)[:, -1]
        # free blocks: sup of <Z, X> over PSD X with Tr X <= e
        top = np.where(self.free, np.maximum(top, 0.0), top)
        bound = float(lam @ self.b + self.e @ top) if self.J else float(self.e @ top)
        if self.Ne and nu is not None:
            bound += float(nu @ self.f)
        if self.Q:
            red = self.d[self.uidx] - (self.g[:, self.uidx].T @ lam if self.J else 0.0)
            bound += float(np.sum(red**2 / (4 * kap)))
        return bound


def _scale_problem(problem: ConicProblem):
    """Normalise rows and objective; returns scaled arrays and the objective scale."""
    C = problem.sqrt_mat.copy()
    a = problem.sqrt_coef.copy()
    keep = []
    for q in range(C.shape[0]):
        nrm = np.linalg.norm(C[q])
        if nrm == 0 or a[q] == 0:
            continue
        C[q] /= nrm
        a[q] *= np.sqrt(nrm)
        keep.append(q)
    keep = np.asarray(keep, dtype=int)
    C, a, blk = C[keep], a[keep], problem.sqrt_block[keep]

    A = problem.ineq_mat.copy()
    b = problem.ineq_rhs.copy()
    rows = []
    for j in range(A.shape[0]):
        nrm = np.linalg.norm(A[j])
        if nrm == 0:
            if b[j] < 0:
                rows.append(-1)  # 0 <= b < 0: infeasible
            continue
        A[j] /= nrm
        b[j] /= nrm
        rows.append(j)
    trivially_infeasible = -1 in rows
    rows = np.asarray([r for r in rows if r >= 0], dtype=int)
    A, b = A[rows], b[rows]

    E = problem.eq_mat.copy()
    f = problem.eq_rhs.copy()
    for j in range(E.shape[0]):
        nrm = np.linalg.norm(E[j])
        if nrm > 0:
            E[j] /= nrm
            f[j] /= nrm

    D = problem.linear.copy()
    omega = max(np.abs(D).max(initial=0.0), a.max(initial=0.0))
    if omega == 0:
        omega = 1.0
    return D / omega, a / omega, C, blk, A, b, E, f, omega, trivially_infeasible


def _phase_one(A, b, e, n, tol: Tolerances, free=None, E=None, f=None):
    """Find X with Tr X_i = e_i, X PSD and <A_j, X> < b_j, or certify none exists.

    Returns (X, status, iterations, newton_steps).
    """
    B = e.size
    free = np.zeros(B, dtype=bool) if free is None else free
    start = np.where(free, e / (2 * max(free.sum(), 1)), e)
    X = start[:, None, None] * np.eye(n)[None] / n
    viol = _inner(A, X[None]).sum(axis=1) - b
    if np.all(viol < 0):
        return X, OPTIMAL, 0, 0
    J = b.size
    bp = _BarrierProblem(
        D=np.zeros_like(X),
        d=np.array([-1.0]),
        A=A,
        g=-np.ones((J, 1)),
        b=b,
        C=np.zeros((0, n, n), dtype=complex),
        blk=np.zeros(0, dtype=int),
        uidx=np.zeros(0, dtype=int),
        e=e,
        free=free,
        E=E,
        f=f,
    )
    u = np.array([viol.max() + 1.0])
    tau = 1.0
    steps = 0
    for it in range(1, tol.max_iters + 1):
        X, u, k, _, _, _ = bp.center(tau, X, u, tol.max_newton, stop=lambda X, u: u[0] < 0)
        steps += k
        if u[0] < 0:
            return X, OPTIMAL, it, steps
        lam, _ = bp.multipliers(tau, X, u)
        lam = lam / lam.sum()
        # sup over the spectraplex of -<sum lam A, X> gives a bound on -r
        neg_r_bound = bp.dual_bound(lam, np.zeros(0))
        if neg_r_bound < -tol.feas_tol:
            return X, INFEASIBLE, it, steps
        tau *= 10.0
    return X, MAX_ITERS, tol.max_iters, steps


def solve_psd(problem: ConicProblem, tol: Tolerances = Tolerances()) -> SolveReport:
    """Solve a :class:`ConicProblem`; see the module docstring for the form."""
    B, n = problem.num_blocks, problem.block_dim
    D, a, C, blk, A, b, E, f, omega, trivial_infeasible = _scale_problem(problem)
    if trivial_infeasible:
        return SolveReport(INFEASIBLE, -np.inf, message="constraint 0 <= b with b < 0")
    e = problem.trace
    J, Q = b.size, a.size

    free = problem.free_trace
    X, status, it1, ns1 = _phase_one(A, b, e, n, tol, free, E, f)
    if status != OPTIMAL:
        msg = "phase-1 certificate: no strictly feasible point" if status == INFEASIBLE else "phase-1 did not finish"
        return SolveReport(status, -np.inf, blocks=X, iterations=it1, newton_steps=ns1, message=msg)

    bp = _BarrierProblem(
        D=D,
        d=a.copy(),
        A=A,
        g=np.zeros((J, Q)),
        b=b,
        C=C,
        blk=blk,
        uidx=np.arange(Q),
        e=e,
        free=free,
        E=E,
        f=f,
    )
    u = 0.5 * np.sqrt(_inner(C, X[blk])) if Q else np.zeros(0)

    def true_obj(X):
        vals = _inner(C, X[blk]) if Q else np.zeros(0)
        return float(_inner(D, X).sum() + a @ np.sqrt(np.maximum(vals, 0)))

    tau = bp.nu / max(1.0, abs(true_obj(X)))
    steps = ns1
    best = None
    for it in range(1, tol.max_iters + 1):
        X, u, k, centered, w, Xinv = bp.center(tau, X, u, tol.max_newton)
        steps += k
        lam, kap = bp.multipliers(tau, X, u)
        bound = bp.dual_bound(lam, kap)
        # the Newton estimate stays accurate deeper into the path, where
        # 1 / (tau s) suffers from the relative error of tiny slacks
        nu = np.zeros(bp.Ne)
        lam2, kap2, nu2 = bp.newton_multipliers()
        bound2 = bp.dual_bound(lam2, kap2, nu2)
        if bound2 < bound:
            lam, kap, nu, bound = lam2, kap2, nu2, bound2
        obj = true_obj(X)
        gap = bound - obj
        scale = max(abs(obj), abs(bound), 1e-9)
        Z = bp.block_dual_matrix(lam, kap, nu)
        dual_res = float(np.abs(Z + Xinv / tau - (w / tau)[:, None, None] * np.eye(n)).max())
        kkt = {"gap": gap / scale, "dual": dual_res, "complementarity": bp.nu / tau / scale}
        best = (X, u, obj, bound, kkt)
        if gap <= tol.gap_tol * scale:
            break
        tau *= 10.0 if centered else 2.0
    else:
        it = tol.max_iters

    X, u, obj, bound, kkt = best
    X = _herm(X)
    viol = problem.violation(X)
    status = OPTIMAL if (kkt["gap"] <= tol.gap_tol and viol <= tol.feas_tol) else MAX_ITERS
    vals = _inner(problem.sqrt_mat, X[problem.sqrt_block])
    kkt["epigraph_slack"] = _epigraph_slack(bp, X, u)
    return SolveReport(
        status=status,
        objective=obj * omega + problem.constant,
        blocks=X,
        epigraph=np.sqrt(np.maximum(vals, 0.0)),
        max_violation=viol,
        dual_bound=bound * omega + problem.constant,
        kkt_residual=kkt,
        iterations=it1 + it,
        newton_steps=steps,
        message="" if status == OPTIMAL else "gap above tolerance",
    )


def _epigraph_slack(bp: _BarrierProblem, X, u) -> float:
    """Largest relative gap (<C,X> - s^2) / <C,X> of the epigraph iterates."""
    if bp.Q == 0:
        return 0.0
    vals = _inner(bp.C, X[bp.blk])
    return float(np.max((vals - u**2) / np.maximum(vals, 1e-300)))


def _herm_to_vec(P: np.ndarray) -> np.ndarray:
    """Coordinates of Hermitian matrices (last two axes) in an orthonormal real basis."""
    r = P.shape[-1]
    iu = np.triu_indices(r, 1)
    return np.concatenate(
        [
            np.diagonal(P, axis1=-2, axis2=-1).real,
            np.sqrt(2) * P[..., iu[0], iu[1]].real,
            np.sqrt(2) * P[..., iu[0], iu[1]].imag,
        ],
        axis=-1,
    )


def _vec_to_herm(v: np.ndarray, r: int) -> np.ndarray:
    iu = np.triu_indices(r, 1)
    m = iu[0].size
    P = np.zeros((r, r), dtype=complex)
    P[iu] = (v[r : r + m] + 1j * v[r + m :]) / np.sqrt(2)
    P = P + P.conj().T
    P[np.diag_indices(r)] = v[:r]
    return P


def reduce_rank(
    problem: ConicProblem, blocks: np.ndarray, active_tol: float = 1e-7, max_steps: int | None = None
) -> np.ndarray:
    """Lower the ranks of a feasible point without changing its objective.

    Moves along directions inside the ranges of the blocks that leave every
    trace, every active inequality, the total linear objective and every
    square-root argument unchanged, stepping until an eigenvalue (or an
    inactive inequality) reaches zero. Stops when no such direction exists,
    which bounds the sum of squared block ranks by the number of fixed
    functionals.
    """
    X = _herm(np.array(blocks, dtype=complex))
    B, n = problem.num_blocks, problem.block_dim
    max_steps = B * n if max_steps is None else max_steps
    A, b = problem.ineq_mat, problem.ineq_rhs
    rng = np.random.default_rng(0)
    for _ in range(max_steps):
        ranges = []
        for i in range(B):
            lam, vec = np.linalg.eigh(X[i])
            keep = lam > 1e-13 * max(problem.trace[i], lam[-1])
            ranges.append((lam[keep], vec[:, keep]))
        if all(lam.size <= 1 for lam, _ in ranges):
            break
        lhs = _inner(A, X[None]).sum(axis=1) if b.size else np.zeros(0)
        slack = b - lhs
        scale_rows = np.maximum(np.abs(b), np.abs(lhs))
        active = slack <= active_tol * np.maximum(scale_rows, 1.0)

        # fixed functionals as (m, B, n, n) stacks of per-block matrices
        funcs = [np.zeros((B, B, n, n), dtype=complex)]
        funcs[0][np.arange(B), np.arange(B)] = np.eye(n)
        funcs.append(A[active])
        funcs.append(problem.eq_mat)
        if np.any(problem.linear != 0):
            funcs.append(problem.linear[None])
        Q = problem.sqrt_coef.size
        if Q:
            S = np.zeros((Q, B, n, n), dtype=complex)
            S[np.arange(Q), problem.sqrt_block] = problem.sqrt_mat
            funcs.append(S)
        funcs = np.concatenate(funcs)
        inactive = np.flatnonzero(~active)
        Mfix = np.concatenate(
            [_herm_to_vec(V.conj().T @ funcs[:, i] @ V) for i, (_, V) in enumerate(ranges)],
            axis=1,
        )
        norms = np.linalg.norm(Mfix, axis=1, keepdims=True)
        Mfix = Mfix / np.where(norms > 0, norms, 1.0)
        _, sv, vt = np.linalg.svd(Mfix, full_matrices=False)
        basis = vt[sv > 1e-10 * max(sv[0], 1.0)]
        if basis.shape[0] >= Mfix.shape[1]:
            break
        # any null-space vector works; a seeded draw keeps results reproducible
        direction = rng.standard_normal(Mfix.shape[1])
        direction -= basis.T @ (basis @ direction)
        if np.linalg.norm(direction) <= 1e-9:
            break
        direction /= np.linalg.norm(direction)

        deltas, off = [], 0
        mu_lo, mu_hi = np.inf, -np.inf
        for lam, V in ranges:
            r = lam.size
            Dl = _vec_to_herm(direction[off : off + r * r], r)
            off += r * r
            deltas.append(Dl)
            if r:
                s = 1.0 / np.sqrt(lam)
                mu = np.linalg.eigvalsh(Dl * np.outer(s, s))
                mu_lo, mu_hi = min(mu_lo, mu[0]), max(mu_hi, mu[-1])
        sign = 1.0 if -mu_lo >= mu_hi else -1.0
        alpha = 1.0 / (-mu_lo if sign > 0 else mu_hi)
        dX = np.array([V @ (sign * Dl) @ V.conj().T for (lam, V), Dl in zip(ranges, deltas)])
        for j in inactive:
            rate = float(_inner(A[j], dX).sum())
            if rate > 0:
                alpha = min(alpha, slack[j] / rate)
        new = np.empty_like(X)
        for i, ((lam, V), Dl) in enumerate(zip(ranges, deltas)):
            Y = np.diag(lam) + alpha * sign * Dl
            w, U = np.linalg.eigh(_herm(Y))
            w[w < 1e-12 * max(w[-1], 0.0)] = 0.0
            w = np.maximum(w, 0.0)
            new[i] = (V @ U) @ np.diag(w) @ (V @ U).conj().T if lam.size else 0.0
        X = _herm(new)
    return X


def principal_component(W: np.ndarray) -> tuple[np.ndarray, float]:
    """Dominant unit eigenvector of a Hermitian PSD matrix and its rank-one gap.

    The gap is 1 - lambda_max / Tr(W), zero iff W is rank one.
    """
    W = _herm(np.asarray(W, dtype=complex))
    tr = np.trace(W).real
    if not tr > 0:
        raise ValueError("matrix has no dominant direction (zero trace)")
    vals, vecs = np.linalg.eigh(W)
    v = vecs[:, -1]
    # fix the global phase so the largest entry is real positive
    idx = np.argmax(np.abs(v))
    v = v * np.exp(-1j * np.angle(v[idx]))
    gap = float(np.clip(1.0 - vals[-1] / tr, 0.0, 1.0))
    return v / np.linalg.norm(v), gap


# ---------------------------------------------------------------------------
# power subproblem
# ---------------------------------------------------------------------------


@dataclass
class PowerProblem:
    """Power allocation at fixed lifted beams and auxiliary variables.

    Per user k: ``t`` auxiliary variable, ``echo`` = Tr(G W_r G^H),
    ``leak`` = Tr(G W_c G^H), ``cross[k, j]`` = Tr(W_cj h_k h_k^H),
    ``sense_at_user[k]`` = sum_j Tr(W_rj h_k h_k^H), ``gamma`` QoS target.
    """

    t: np.ndarray
    echo: np.ndarray
    leak: np.ndarray
    cross: np.ndarray
    sense_at_user: np.ndarray
    gamma: np.ndarray
    p_max: float
    noise_sense: float
    noise_comm: float

    def __post_init__(self):
        for name in ("t", "echo", "leak", "sense_at_user", "gamma"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=float).reshape(-1))
        self.cross = np.atleast_2d(np.asarray(self.cross, dtype=float))
        if self.noise_sense <= 0:
            raise ValueError("sensing noise power must be > 0")

    @property
    def num_users(self) -> int:
        return self.t.size

    def objective(self, p_comm: np.ndarray, p_sense: float) -> float:
        t = self.t
        return float(
            np.sum(
                2 * t * np.sqrt(p_sense * np.maximum(self.echo, 0))
                - t**2 * (p_comm * self.leak + self.noise_sense)
            )
        )

    def qos_margin(self, p_comm: np.ndarray, p_sense: float) -> np.ndarray:
        """Left side of the linearised QoS constraints (>= 0 when met)."""
        desired = p_comm * np.diag(self.cross)
        inter = self.cross @ p_comm - desired + p_sense * self.sense_at_user + self.noise_comm
        return desired - self.gamma * inter


@dataclass
class PowerReport:
    status: str
    p_comm: np.ndarray
    p_sense: float
    objective: float
    kkt_residual: float = np.inf
    max_violation: float = np.inf
    iterations: int = 0
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.status == OPTIMAL


class _QCQP:
    """maximize c.x s.t. 0.5 x'Q_i x + q_i.x + r_i <= 0 (dense, small)."""

    def __init__(self, c, Qs, qs, rs):
        self.c, self.Qs, self.qs, self.rs = c, Qs, qs, rs
        self.m = rs.size

    def f(self, x):
        return 0.5 * np.einsum("i,kij,j->k", x, self.Qs, x) + self.qs @ x + self.rs

    def grads(self, x):
        return self.Qs @ x + self.qs

    def phi(self, tau, x):
        f = self.f(x)
        if np.any(f >= 0):
            return np.inf
        return -tau * self.c @ x - np.log(-f).sum()

    def center(self, tau, x, max_newton, stop=None):
        steps = 0
        for _ in range(max_newton):
            f = self.f(x)
            gf = self.grads(x)
            inv = 1.0 / -f
            grad = -tau * self.c + gf.T @ inv
            hess = (gf.T * inv**2) @ gf + np.einsum("k,kij->ij", inv, self.Qs)
            try:
                dx = -np.linalg.solve(hess, grad)
            except np.linalg.LinAlgError:
                dx = -np.linalg.lstsq(hess, grad, rcond=None)[0]
            dec = float(-grad @ dx)
            if dec / 2 <= 1e-12:
                return x, steps, True
            alpha = 1.0
            f0 = self.phi(tau, x)
            while alpha > 1e-14:
                xn = x + alpha * dx
                f1 = self.phi(tau, xn)
                if f1 <= f0 - 0.01 * alpha * dec:
                    break
                alpha *= 0.5
            else:
                return x, steps, False
            x = xn
            steps += 1
            if stop is not None and stop(x):
                return x, steps, True
        return x, steps, False

    def kkt(self, tau, x):
        f = self.f(x)
        lam = 1.0 / (tau * -f)
        stat = self.c - self.grads(x).T @ lam
        cnorm = max(np.linalg.norm(self.c), 1e-300)
        return float(np.linalg.norm(stat) / cnorm), lam


def _solve_qcqp(c, Qs, qs, rs, x0, tol: Tolerances):
    """Barrier method with phase 1. Returns (x, status, kkt, iterations)."""
    m, nx = rs.size, c.size
    prob = _QCQP(c, Qs, qs, rs)
    x = x0.copy()
    it_total = 0
    f0 = prob.f(x)
    if np.any(f0 >= 0):
        # phase 1 on (x, r): f_i(x) - r <= 0, minimise r
        Qs1 = np.zeros((m, nx + 1, nx + 1))
        Qs1[:, :nx, :nx] = Qs
        qs1 = np.hstack([qs, -np.ones((m, 1))])
        c1 = np.zeros(nx + 1)
        c1[-1] = -1.0
        p1 = _QCQP(c1, Qs1, qs1, rs)
        y = np.append(x, f0.max() + 1.0)
        tau = 1.0
        found = False
        for _ in range(tol.max_iters):
            y, _, _ = p1.center(tau, y, tol.max_newton, stop=lambda y: y[-1] < 0)
            it_total += 1
            if y[-1] < 0:
                found = True
                break
            if y[-1] - m / tau > tol.feas_tol:
                return y[:nx], INFEASIBLE, np.inf, it_total
            tau *= 10.0
        if not found:
            return y[:nx], MAX_ITERS, np.inf, it_total
        x = y[:nx]
    if not np.any(c):
        return x, OPTIMAL, 0.0, it_total
    tau = m / max(1.0, abs(c @ x))
    kkt = np.inf
    for _ in range(tol.max_iters):
        x, _, centered = prob.center(tau, x, tol.max_newton)
        it_total += 1
        stat, _ = prob.kkt(tau, x)
        comp = m / tau / max(abs(c @ x), 1e-9)
        kkt = max(stat, comp)
        if kkt <= tol.gap_tol:
            return x, OPTIMAL, kkt, it_total
        tau *= 10.0 if centered else 2.0
    return x, MAX_ITERS, kkt, it_total


def solve_power(problem: PowerProblem, tol: Tolerances = Tolerances()) -> PowerReport:
    """Optimal (P_1..P_K, P_r) for the power subproblem.

    Works in x = (P_1..P_K, u) with u = sqrt(P_r): the objective
    sum_k 2 t_k sqrt(echo_k) u - t_k^2 leak_k P_k is linear, the budget
    K u^2 + sum P_k <= P_max and the QoS constraints (sensing leakage enters
    through u^2 with a positive coefficient) are convex.
    """
    K = problem.num_users
    nx = K + 1
    const = -float(np.sum(problem.t**2 * problem.noise_sense))
    if problem.p_max < 0:
        raise ValueError("p_max must be >= 0")
    gamma = problem.gamma
    active = gamma > 0
    if problem.p_max == 0:
        zeros = np.zeros(K)
        margin = problem.qos_margin(zeros, 0.0)
        ok = np.all(margin[active] >= -tol.feas_tol) if np.any(active) else True
        return PowerReport(
            OPTIMAL if ok else INFEASIBLE, zeros, 0.0, const if ok else -np.inf,
            kkt_residual=0.0, max_violation=0.0 if ok else float(-margin.min()),
        )

    c = np.zeros(nx)
    c[:K] = -problem.t**2 * problem.leak
    c[K] = float(np.sum(2 * problem.t * np.sqrt(np.maximum(problem.echo, 0))))
    Qs, qs, rs = [], [], []
    for i in range(nx):  # nonnegativity
        q = np.zeros(nx)
        q[i] = -1.0
        Qs.append(np.zeros((nx, nx)))
        qs.append(q)
        rs.append(0.0)
    Qb = np.zeros((nx, nx))
    Qb[K, K] = 2.0 * K
    qb = np.zeros(nx)
    qb[:K] = 1.0
    Qs.append(Qb)
    qs.append(qb)
    rs.append(-problem.p_max)
    for k in np.flatnonzero(active):
        Qk = np.zeros((nx, nx))
        Qk[K, K] = 2.0 * gamma[k] * problem.sense_at_user[k]
        qk = np.zeros(nx)
        qk[:K] = gamma[k] * problem.cross[k]
        qk[k] = -problem.cross[k, k]
        Qs.append(Qk)
        qs.append(qk)
        rs.append(gamma[k] * problem.noise_comm)
    Qs, qs, rs = np.array(Qs), np.array(qs), np.array(rs)
    # row scaling
    nrm = np.maximum(np.abs(qs).max(axis=1), np.abs(Qs).max(axis=(1, 2)))
    nrm = np.where(nrm > 0, nrm, 1.0)
    Qs, qs, rs = Qs / nrm[:, None, None], qs / nrm[:, None], rs / nrm
    cscale = np.abs(c).max()
    cs = c / cscale if cscale > 0 else c

    x0 = np.empty(nx)
    x0[:K] = problem.p_max / (4 * K)
    x0[K] = np.sqrt(problem.p_max / (4 * K))
    x, status, kkt, iters = _solve_qcqp(cs, Qs, qs, rs, x0, tol)
    p_comm = np.maximum(x[:K], 0.0)
    p_sense = float(max(x[K], 0.0) ** 2)
    viol = max(
        0.0,
        K * p_sense + p_comm.sum() - problem.p_max,
        float(-problem.qos_margin(p_comm, p_sense)[active].min()) if np.any(active) else 0.0,
    )
    obj = problem.objective(p_comm, p_sense) if status != INFEASIBLE else -np.inf
    return PowerReport(status, p_comm, p_sense, obj, kkt, viol, iters)
