"""Per-slot joint power/beamforming design by quadratic transform + alternation.

All quantities handed to the solvers are whitened: H_k = h_k h_k^H / sigma_n^2
and C_k = G_k^H G_k / sigma_r^2, so both noise powers become one and the
surrogate objective per user reads 2 t_k sqrt(P_r <C_k, W_rk>)
- t_k^2 (P_k <C_k, W_ck> + 1). Sensing SINR is invariant to the joint
scaling of G and sigma_r, so every reported value is in original units.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import signal as sig
from .constants import dbm_to_watt
from .solver import (
    INFEASIBLE,
    OPTIMAL,
    ConicProblem,
    PowerProblem,
    Tolerances,
    principal_component,
    reduce_rank,
    solve_power,
    solve_psd,
)

log = logging.getLogger(__name__)

FEASIBLE = "feasible"
NOT_CONVERGED = "max_iters"
INTERNAL_ERROR = "internal_error"

JOINT = "joint"
POWER_ONLY = "power_only"
BEAM_ONLY = "beam_only"


@dataclass(frozen=True)
class OptimizerConfig:
    p_max: float = float(dbm_to_watt(36.0))
    sinr_high: float = sig.SINR_HIGH
    sinr_low: float = sig.SINR_LOW
    rel_tol: float = 1e-4
    max_iters: int = 50
    solver: Tolerances = Tolerances()
    # rank-one beams may miss the QoS target by this fraction before flagging
    rank_one_qos_slack: float = 0.01
    # relative decrease of the surrogate that counts as a broken invariant
    divergence_tol: float = 1e-6


@dataclass
class SlotInputs:
    """Channels and requirements for one slot. ``h``: (K, M); ``G``: (K, M, M)."""

    h: np.ndarray
    G: np.ndarray
    gamma: np.ndarray
    p_max: float
    noise_comm: float
    noise_sense: float
    previous: "SlotSolution | None" = None

    def __post_init__(self):
        self.h = np.atleast_2d(np.asarray(self.h, dtype=complex))
        K, M = self.h.shape
        self.G = np.asarray(self.G, dtype=complex).reshape(K, M, M)
        self.gamma = np.broadcast_to(np.asarray(self.gamma, dtype=float), (K,)).copy()
        if np.any(self.gamma < 0):
            raise ValueError("QoS thresholds must be >= 0")
        if self.p_max < 0:
            raise ValueError("p_max must be >= 0")
        if not self.noise_sense > 0 or not self.noise_comm > 0:
            raise ValueError("noise powers must be > 0")

    @property
    def num_users(self) -> int:
        return self.h.shape[0]

    @property
    def num_antennas(self) -> int:
        return self.h.shape[1]

    def whitened(self) -> tuple[np.ndarray, np.ndarray]:
        """(H, C) with H_k = h h^H / sigma_n^2 and C_k = G^H G / sigma_r^2."""
        H = np.einsum("ki,kj->kij", self.h, self.h.conj()) / self.noise_comm
        C = np.einsum("kji,kjl->kil", self.G.conj(), self.G) / self.noise_sense
        return H, C


@dataclass
class Gains:
    """Scalar gains of lifted beams under whitened channels."""

    echo: np.ndarray  # <C_k, W_rk>
    leak: np.ndarray  # <C_k, W_ck>
    cross: np.ndarray  # [k, j] = <H_k, W_cj>
    sense_at_user: np.ndarray  # sum_j <H_k, W_rj>


def _inner(a, b):
    return np.einsum("...ij,...ij->...", a.conj(), b).real


def lifted_gains(H, C, w_comm, w_sense) -> Gains:
    return Gains(
        echo=_inner(C, w_sense),
        leak=_inner(C, w_comm),
        cross=_inner(H[:, None], w_comm[None]),
        sense_at_user=_inner(H[:, None], w_sense[None]).sum(axis=1),
    )


def surrogate_objective(p_comm, p_sense, t, gains: Gains) -> float:
    """Quadratic-transform objective with unit (whitened) sensing noise."""
    return float(
        np.sum(
            2 * t * np.sqrt(p_sense * np.maximum(gains.echo, 0))
            - t**2 * (p_comm * gains.leak + 1.0)
        )
    )


def ratio_objective(p_comm, p_sense, gains: Gains) -> np.ndarray:
    """Per-user sensing SINR of lifted beams."""
    return p_sense * gains.echo / (p_comm * gains.leak + 1.0)


def _t_closed_form(p_comm, p_sense, gains: Gains) -> np.ndarray:
    return np.sqrt(p_sense * np.maximum(gains.echo, 0)) / (p_comm * gains.leak + 1.0)


def update_t(powers: sig.PowerSet, beams, G: np.ndarray, noise_sense: float) -> np.ndarray:
    """Optimal auxiliary variables for fixed powers and beams.

    ``beams`` is a :class:`~gesture_isac.signal.BeamSet` or a pair of lifted
    arrays ``(w_comm, w_sense)`` of shape (K, M, M).
    """
    if isinstance(beams, sig.BeamSet):
        w_comm = np.einsum("ki,kj->kij", beams.comm, beams.comm.conj())
        w_sense = np.einsum("ki,kj->kij", beams.sense, beams.sense.conj())
    else:
        w_comm, w_sense = beams
    C = np.einsum("kji,kjl->kil", np.conj(G), G)
    num = powers.sense * _inner(C, w_sense)
    den = powers.comm * _inner(C, w_comm) + noise_sense
    return np.sqrt(np.maximum(num, 0)) / den


def qos_matrices(H, powers: sig.PowerSet, gamma) -> tuple[np.ndarray, np.ndarray]:
    """Linear QoS rows over the stacked blocks [W_c1..W_cK, W_r1..W_rK].

    Row k reads sum_i <A_ki, W_i> <= b_k and is the SINR constraint of user k
    multiplied out by its denominator.
    """
    K, M, _ = H.shape
    A = np.zeros((K, 2 * K, M, M), dtype=complex)
    b = np.zeros(K)
    for k in range(K):
        for j in range(K):
            A[k, j] = (-powers.comm[k] if j == k else gamma[k] * powers.comm[j]) * H[k]
            A[k, K + j] = gamma[k] * powers.sense * H[k]
        b[k] = -gamma[k]
    return A, b


def beamforming_problem(inputs: SlotInputs, powers: sig.PowerSet, t: np.ndarray) -> ConicProblem:
    H, C = inputs.whitened()
    K, M = inputs.num_users, inputs.num_antennas
    D = np.zeros((2 * K, M, M), dtype=complex)
    D[:K] = -(t**2 * powers.comm)[:, None, None] * C
    A, b = qos_matrices(H, powers, inputs.gamma)
    active = inputs.gamma > 0
    return ConicProblem(
        linear=D,
        sqrt_coef=2 * t * np.sqrt(powers.sense),
        sqrt_mat=C,
        sqrt_block=np.arange(K, 2 * K),
        ineq_mat=A[active],
        ineq_rhs=b[active],
        trace=np.ones(2 * K),
        constant=-float(np.sum(t**2)),
    )


def beamforming_step(inputs: SlotInputs, powers: sig.PowerSet, t, tol: Tolerances = Tolerances()):
    """Lifted beam matrices for fixed powers and t. Returns (w_comm, w_sense, report)."""
    K = inputs.num_users
    problem = beamforming_problem(inputs, powers, t)
    report = solve_psd(problem, tol)
    if report.blocks is None or report.status == INFEASIBLE:
        return None, None, report
    # interior points sit in the relative interior of the optimal face; move
    # to a low-rank point of the same face so rank-one extraction loses less
    blocks = reduce_rank(problem, report.blocks)
    return blocks[:K], blocks[K:], report


def beam_power_problem(inputs: SlotInputs, t: np.ndarray) -> ConicProblem:
    """Beam design with every power absorbed into its beam matrix.

    Variables are V_ck = P_k W_ck and V_rk = P_r W_rk, all with free trace.
    The shared sensing power becomes equal traces on the V_rk. QoS, budget
    and the quadratic-transform objective are then jointly concave/linear in
    V, so powers and beams move together and the step cannot stall on the
    coupling between them.
    """
    H, C = inputs.whitened()
    K, M = inputs.num_users, inputs.num_antennas
    D = np.zeros((2 * K, M, M), dtype=complex)
    D[:K] = -(t**2)[:, None, None] * C
    A, b = qos_matrices(H, sig.PowerSet(np.ones(K), 1.0), inputs.gamma)
    active = inputs.gamma > 0
    budget = np.zeros((1, 2 * K, M, M), dtype=complex)
    budget[0] = np.eye(M)
    eq = np.zeros((K - 1, 2 * K, M, M), dtype=complex)
    for k in range(1, K):
        eq[k - 1, K + k] = np.eye(M)
        eq[k - 1, K] = -np.eye(M)
    return ConicProblem(
        linear=D,
        sqrt_coef=2 * t,
        sqrt_mat=C,
        sqrt_block=np.arange(K, 2 * K),
        ineq_mat=np.concatenate([A[active], budget]),
        ineq_rhs=np.append(b[active], inputs.p_max),
        trace=np.full(2 * K, inputs.p_max),
        constant=-float(np.sum(t**2)),
        free_trace=np.ones(2 * K, dtype=bool),
        eq_mat=eq,
        eq_rhs=np.zeros(K - 1),
    )


def beam_power_step(inputs: SlotInputs, w_comm, w_sense, t, tol: Tolerances = Tolerances()):
    """Powers and beams together for fixed t.

    Returns (PowerSet | None, w_comm, w_sense, report); a block whose power
    vanishes keeps its previous direction.
    """
    K = inputs.num_users
    problem = beam_power_problem(inputs, t)
    report = solve_psd(problem, tol)
    if report.blocks is None or report.status == INFEASIBLE:
        return None, None, None, report
    blocks = reduce_rank(problem, report.blocks)
    tr = np.trace(blocks, axis1=1, axis2=2).real.clip(min=0.0)
    tiny = 1e-14 * inputs.p_max
    p_comm = tr[:K].copy()
    wc = np.array(w_comm, dtype=complex)
    for k in range(K):
        if p_comm[k] > tiny:
            wc[k] = blocks[k] / p_comm[k]
        else:
            p_comm[k] = 0.0
    p_sense = float(np.mean(tr[K:]))
    wr = np.array(w_sense, dtype=complex)
    if p_sense > tiny:
        wr = blocks[K:] / tr[K:, None, None]
    else:
        p_sense = 0.0
    # trace equalities hold to solver tolerance; keep the budget exact
    total = p_comm.sum() + K * p_sense
    if total > inputs.p_max:
        scale = inputs.p_max / total
        p_comm, p_sense = p_comm * scale, p_sense * scale
    return sig.PowerSet(p_comm, p_sense), wc, wr, report


def power_problem(inputs: SlotInputs, w_comm, w_sense, t) -> PowerProblem:
    H, C = inputs.whitened()
    g = lifted_gains(H, C, w_comm, w_sense)
    return PowerProblem(
        t=t,
        echo=g.echo,
        leak=g.leak,
        cross=g.cross,
        sense_at_user=g.sense_at_user,
        gamma=inputs.gamma,
        p_max=inputs.p_max,
        noise_sense=1.0,
        noise_comm=1.0,
    )


def power_step(inputs: SlotInputs, w_comm, w_sense, t, tol: Tolerances = Tolerances()):
    """Optimal powers for fixed lifted beams and t. Returns (PowerSet | None, report)."""
    report = solve_power(power_problem(inputs, w_comm, w_sense, t), tol)
    if report.status == INFEASIBLE:
        return None, report
    return sig.PowerSet(report.p_comm, report.p_sense), report


@dataclass
class SlotSolution:
    powers: sig.PowerSet
    beams: sig.BeamSet
    w_comm: np.ndarray
    w_sense: np.ndarray
    t: np.ndarray
    trace: list = field(default_factory=list)  # (iteration, step, surrogate value)
    status: str = FEASIBLE
    iterations: int = 0
    comm_sinr: np.ndarray | None = None  # rank-one beams
    sens_sinr: np.ndarray | None = None
    comm_sinr_lifted: np.ndarray | None = None
    sens_sinr_lifted: np.ndarray | None = None
    rank_one_gap: np.ndarray | None = None  # (2, K): comm, sense
    qos_flagged: bool = False
    mode: str = JOINT
    message: str = ""
    # requirements the design was computed for
    gamma: np.ndarray | None = None
    p_max: float = float("nan")

    @property
    def objective(self) -> float:
        """Final surrogate value (equals the lifted sum sensing SINR at convergence)."""
        return self.trace[-1][2] if self.trace else float("nan")

    @property
    def sum_sens_sinr(self) -> float:
        return float(np.sum(self.sens_sinr))

    @property
    def feasible(self) -> bool:
        return self.status in (FEASIBLE, NOT_CONVERGED)


def initial_point(inputs: SlotInputs) -> tuple[sig.PowerSet, np.ndarray, np.ndarray]:
    """Steering beams toward each user and an even power split.

    The steering direction is h_k / ||h_k||, which is a(theta_k) / sqrt(M) up to
    a phase for the LoS channel.
    """
    K = inputs.num_users
    norms = np.linalg.norm(inputs.h, axis=1, keepdims=True)
    v = inputs.h / np.where(norms > 0, norms, 1.0)
    W = np.einsum("ki,kj->kij", v, v.conj())
    share = inputs.p_max / (2 * K)
    return sig.PowerSet(np.full(K, share), share), W.copy(), W.copy()


def _qos_ok(inputs, H, powers, w_comm, w_sense, tol=1e-9) -> bool:
    g = lifted_gains(H, np.zeros_like(H), w_comm, w_sense)
    desired = powers.comm * np.diag(g.cross)
    inter = g.cross @ powers.comm - desired + powers.sense * g.sense_at_user + 1.0
    return bool(np.all(desired - inputs.gamma * inter >= -tol * (1 + np.abs(desired))))


def _alternate(inputs: SlotInputs, config: OptimizerConfig, update_beams: bool, update_powers: bool, start):
    powers, w_comm, w_sense = start
    H, C = inputs.whitened()
    tol = config.solver
    trace = []
    status = NOT_CONVERGED
    message = ""
    t = np.zeros(inputs.num_users)
    feasible_so_far = _qos_ok(inputs, H, powers, w_comm, w_sense)
    prev_obj = None

    def record(it, step):
        nonlocal status, message
        if not feasible_so_far:
            return True
        value = surrogate_objective(powers.comm, powers.sense, t, lifted_gains(H, C, w_comm, w_sense))
        if trace:
            last = trace[-1][2]
            if value < last - config.divergence_tol * max(abs(last), abs(value), 1e-300):
                status = INTERNAL_ERROR
                message = f"surrogate decreased at iteration {it} step {step}: {last} -> {value}"
                log.error(message)
                trace.append((it, step, value))
                return False
        trace.append((it, step, value))
        return True

    def value(p, wc, wr):
        return surrogate_objective(p.comm, p.sense, t, lifted_gains(H, C, wc, wr))

    # A block update never replaces a feasible incumbent by something worse:
    # the incumbent is feasible for the subproblem, so a lower value can only
    # be solver tolerance.
    it = 0
    for it in range(1, config.max_iters + 1):
        if update_beams:
            t = _t_closed_form(powers.comm, powers.sense, lifted_gains(H, C, w_comm, w_sense))
            if not record(it, "t"):
                break
            if update_powers and inputs.p_max > 0:
                new_p, wc, wr, rep = beam_power_step(inputs, w_comm, w_sense, t, tol)
            else:
                new_p = powers
                wc, wr, rep = beamforming_step(inputs, powers, t, tol)
            if wc is None:
                if not feasible_so_far:
                    status, message = INFEASIBLE, f"beamforming step: {rep.message or rep.status}"
                    break
            elif not feasible_so_far or value(new_p, wc, wr) >= value(powers, w_comm, w_sense):
                powers, w_comm, w_sense = new_p, wc, wr
            feasible_so_far = True
            if not record(it, "W"):
                break
        if update_powers:
            t = _t_closed_form(powers.comm, powers.sense, lifted_gains(H, C, w_comm, w_sense))
            if not record(it, "t"):
                break
            new_p, rep = power_step(inputs, w_comm, w_sense, t, tol)
            if new_p is None:
                if not feasible_so_far:
                    status, message = INFEASIBLE, f"power step: {rep.message or rep.status}"
                    break
            elif not feasible_so_far or value(new_p, w_comm, w_sense) >= value(powers, w_comm, w_sense):
                powers = new_p
            feasible_so_far = True
            if not record(it, "P"):
                break
        obj = trace[-1][2] if trace else None
        if prev_obj is not None and obj is not None:
            if abs(obj - prev_obj) <= config.rel_tol * max(abs(obj), 1e-300):
                status = FEASIBLE
                break
        prev_obj = obj
    if status in (FEASIBLE, NOT_CONVERGED):
        # final t so the surrogate equals the ratio objective
        t = _t_closed_form(powers.comm, powers.sense, lifted_gains(H, C, w_comm, w_sense))
    return powers, w_comm, w_sense, t, trace, status, it, message


def _finish(inputs, config, mode, powers, w_comm, w_sense, t, trace, status, iters, message) -> SlotSolution:
    K = inputs.num_users
    comm = np.empty((K, inputs.num_antennas), dtype=complex)
    sense = np.empty_like(comm)
    gaps = np.zeros((2, K))
    for k in range(K):
        comm[k], gaps[0, k] = principal_component(w_comm[k])
        sense[k], gaps[1, k] = principal_component(w_sense[k])
    beams = sig.BeamSet(comm, sense)
    sol = SlotSolution(
        powers=powers,
        beams=beams,
        w_comm=w_comm,
        w_sense=w_sense,
        t=t,
        trace=trace,
        status=status,
        iterations=iters,
        rank_one_gap=gaps,
        mode=mode,
        message=message,
        gamma=inputs.gamma.copy(),
        p_max=inputs.p_max,
    )
    evaluate(sol, inputs.h, inputs.G, inputs.noise_comm, inputs.noise_sense)
    if sol.feasible:
        short = sol.comm_sinr < inputs.gamma * (1 - config.rank_one_qos_slack)
        sol.qos_flagged = bool(np.any(short))
        if sol.qos_flagged:
            log.info("rank-one beams miss QoS for users %s", np.flatnonzero(short).tolist())
    return sol


def evaluate(sol: SlotSolution, h, G, noise_comm, noise_sense) -> SlotSolution:
    """Fill rank-one and lifted SINRs of ``sol`` on the given channels."""
    K = h.shape[0]
    p, b = sol.powers, sol.beams
    sol.comm_sinr = np.array([sig.comm_sinr(k, h[k], b, p, noise_comm) for k in range(K)])
    sol.sens_sinr = np.array([sig.sens_sinr(k, G[k], b, p, noise_sense) for k in range(K)])
    sol.comm_sinr_lifted = np.array(
        [sig.comm_sinr_lifted(k, h[k], sol.w_comm, sol.w_sense, p, noise_comm) for k in range(K)]
    )
    sol.sens_sinr_lifted = np.array(
        [sig.sens_sinr_lifted(k, G[k], sol.w_comm, sol.w_sense, p, noise_sense) for k in range(K)]
    )
    return sol


def _solve(inputs: SlotInputs, config: OptimizerConfig, mode: str) -> SlotSolution:
    default = initial_point(inputs)
    if mode != JOINT:
        result = _alternate(inputs, config, mode == BEAM_ONLY, mode == POWER_ONLY, default)
        return _finish(inputs, config, mode, *result)
    # The alternation is local. It is started from the converged single-block
    # designs (which makes the joint result dominate both) or, inside an
    # episode, from the previous slot plus the power-only design. A previous
    # solution that violates QoS on the new channels is repaired by one power
    # step first.
    H, C = inputs.whitened()
    starts = []
    prev = inputs.previous
    if prev is not None and prev.feasible and prev.w_comm.shape == default[1].shape:
        warm = (prev.powers, prev.w_comm, prev.w_sense)
        if not _qos_ok(inputs, H, *warm):
            t = _t_closed_form(prev.powers.comm, prev.powers.sense, lifted_gains(H, C, prev.w_comm, prev.w_sense))
            repaired, _ = power_step(inputs, prev.w_comm, prev.w_sense, t, config.solver)
            warm = None if repaired is None else (repaired, prev.w_comm, prev.w_sense)
        if warm is not None:
            starts.append(("warm", warm))
    bases = [("power_only", False, True)]
    if not starts:
        bases.append(("beam_only", True, False))
    for label, beams, powers in bases:
        base = _alternate(inputs, config, beams, powers, default)
        if base[5] in (FEASIBLE, NOT_CONVERGED):
            starts.append((label, base[:3]))
    if not starts:
        starts.append(("default", default))
    best = None
    for label, start in starts:
        result = _alternate(inputs, config, True, True, start)
        if result[5] == INTERNAL_ERROR:
            best = result
            break
        if result[5] == INFEASIBLE:
            log.info("joint solve infeasible from %s start: %s", label, result[7])
            if best is None:
                best = result
            continue
        if best is None or best[5] == INFEASIBLE or result[4][-1][2] > best[4][-1][2]:
            best = result
    return _finish(inputs, config, mode, *best)


def ao_solve(inputs: SlotInputs, config: OptimizerConfig = OptimizerConfig()) -> SlotSolution:
    """Alternate t, beams, t, powers until the surrogate settles."""
    return _solve(inputs, config, JOINT)


def baseline_power_only(inputs: SlotInputs, config: OptimizerConfig = OptimizerConfig()) -> SlotSolution:
    """Steering beams frozen; only powers (and t) are optimised."""
    return _solve(inputs, config, POWER_ONLY)


def baseline_beam_only(inputs: SlotInputs, config: OptimizerConfig = OptimizerConfig()) -> SlotSolution:
    """Even power split frozen; only beams (and t) are optimised."""
    return _solve(inputs, config, BEAM_ONLY)


SOLVERS = {JOINT: ao_solve, POWER_ONLY: baseline_power_only, BEAM_ONLY: baseline_beam_only}
