"""Slot loop (track, decide, design, update), experiments and CSV output."""

from __future__ import annotations

import copy
import csv
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from . import channel as ch
from . import optimizer as opt
from . import scenario as sc
from . import signal as sig
from . import tracker as trk
from .constants import dbm_to_watt

log = logging.getLogger(__name__)

STATIC_NO_ADAPT = "static_no_adapt"
MODES = (opt.JOINT, opt.POWER_ONLY, opt.BEAM_ONLY, STATIC_NO_ADAPT)

PMAX_SWEEP = "static_pmax_sweep"
M_SWEEP = "static_m_sweep"
DYNAMIC = "dynamic_episode"
KINDS = (PMAX_SWEEP, M_SWEEP, DYNAMIC)

DEFAULT_MAX_RANGE = 10.0


def channels_for_state(cfg: sc.ScenarioConfig, distance, aoa, radial_velocity, time_s: float):
    """LoS vectors (K, M) and reflection matrices (K, M, M) for a set of user states."""
    geom = ch.ArrayGeometry(cfg.num_antennas, cfg.spacing_ratio)
    K = len(distance)
    h = np.empty((K, cfg.num_antennas), dtype=complex)
    G = np.empty((K, cfg.num_antennas, cfg.num_antennas), dtype=complex)
    for k in range(K):
        h[k] = ch.los_channel(cfg.carrier_frequency, distance[k], cfg.absorption, aoa[k], geom)
        G[k] = ch.reflection_channel(
            cfg.carrier_frequency,
            distance[k],
            cfg.absorption,
            cfg.rcs[k],
            radial_velocity[k],
            time_s,
            aoa[k],
            geom,
        )
    return h, G


def initial_delta(cfg: sc.ScenarioConfig) -> np.ndarray:
    """QoS indicator implied by each user's starting height (held = 1)."""
    mid = 0.5 * (cfg.height_pick + cfg.height_put)
    heights = np.array([p[2] for p in cfg.user_positions]) - cfg.ap_position[2]
    return (heights >= mid).astype(int)


@dataclass
class SlotRecord:
    """Everything logged for one slot; per-user fields have shape (K,)."""

    slot: int
    true_distance: np.ndarray
    true_aoa: np.ndarray
    true_height: np.ndarray
    est_distance: np.ndarray
    est_aoa: np.ndarray
    est_height: np.ndarray
    gesture: tuple
    delta: np.ndarray
    gamma: np.ndarray
    comm_sinr: np.ndarray
    sens_sinr: np.ndarray
    p_comm: np.ndarray
    p_sense: float
    iterations: int
    status: str
    mode: str
    seed: int
    rank_one_gap: np.ndarray = field(default_factory=lambda: np.zeros((2, 0)))
    qos_flagged: bool = False
    wall_time: float = 0.0
    # the design as computed on the predicted channels (SINRs above are on the true ones)
    solution: opt.SlotSolution | None = field(default=None, repr=False)

    @property
    def sum_sens_sinr(self) -> float:
        return float(np.sum(self.sens_sinr))

    @property
    def num_users(self) -> int:
        return len(self.true_distance)


RECORD_COLUMNS = (
    "slot",
    "user",
    "mode",
    "seed",
    "true_distance_m",
    "true_aoa_rad",
    "true_height_m",
    "est_distance_m",
    "est_aoa_rad",
    "est_height_m",
    "gesture",
    "delta",
    "gamma_req",
    "comm_sinr",
    "sens_sinr",
    "sum_sens_sinr",
    "p_comm_w",
    "p_sense_w",
    "comm_rank_one_gap",
    "sense_rank_one_gap",
    "qos_flagged",
    "ao_iterations",
    "status",
)

TABLE_COLUMNS = (
    "kind",
    "axis",
    "axis_value",
    "mode",
    "seed",
    "slot",
    "sum_sens_sinr",
    "mean_sum_sens_sinr",
    "total_power_w",
    "ao_iterations",
    "status",
)


def _tracker_noise(cfg: sc.ScenarioConfig) -> trk.NoiseModel:
    return trk.NoiseModel.from_scenario(cfg)


def run_episode(
    scenario: sc.Scenario,
    mode: str = opt.JOINT,
    opt_config: opt.OptimizerConfig = opt.OptimizerConfig(),
    tracker_config: trk.TrackerConfig = trk.TrackerConfig(),
    seed: int | None = None,
    max_range: float = DEFAULT_MAX_RANGE,
    optimize: bool = True,
) -> list[SlotRecord]:
    """Run the per-slot loop over a realised scenario.

    Per slot: EKF prediction, gesture decision and QoS update, joint design on
    channels built from the predicted state, evaluation on the true channels,
    then the EKF measurement update. ``optimize=False`` only tracks (SINR and
    power fields are NaN). A slot whose design is infeasible keeps the
    previous slot's powers and beams.
    """
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    cfg = scenario.config
    seed = cfg.rng_seed if seed is None else seed
    rng = np.random.default_rng(seed)
    noise = _tracker_noise(cfg)
    K, T = cfg.num_users, cfg.slot_duration
    delta0 = initial_delta(cfg)
    truth0 = sc.ground_truth_at(scenario, 0)
    trackers = [
        trk.UserTracker(truth0.distance[k], truth0.aoa[k], noise, tracker_config, int(delta0[k]))
        for k in range(K)
    ]
    solver = opt.SOLVERS[opt.JOINT if mode == STATIC_NO_ADAPT else mode]
    records: list[SlotRecord] = []
    previous: opt.SlotSolution | None = None

    for l in range(scenario.num_slots):
        truth = sc.ground_truth_at(scenario, l)
        if np.any(truth.distance >= max_range):
            log.info("slot %d: a user left AP coverage (%.2f m), stopping", l, truth.distance.max())
            break
        start = time.perf_counter()
        gestures = [trk.INACTIVE] * K
        if l == 0:
            est = np.array([t.state.estimate for t in trackers])
        else:
            prev_truth = sc.ground_truth_at(scenario, l - 1)
            est = np.empty((K, 2))
            for k, t in enumerate(trackers):
                est[k] = t.predict(prev_truth.radial_velocity[k], prev_truth.tangential_velocity[k], T)
                saved = t.state.delta
                gestures[k], _ = t.decide()
                if mode == STATIC_NO_ADAPT:
                    t.state.delta = saved
        delta = np.array([t.state.delta for t in trackers])
        gamma = sig.qos_threshold(delta, opt_config.sinr_high, opt_config.sinr_low)

        status, iters = "skipped", 0
        sol = design = None
        if optimize:
            h_est, G_est = channels_for_state(cfg, est[:, 0], est[:, 1], truth.radial_velocity, l * T)
            inputs = opt.SlotInputs(
                h_est, G_est, gamma, opt_config.p_max, cfg.noise_power_comm, cfg.noise_power_sense,
                previous=previous,
            )
            sol = solver(inputs, opt_config)
            status, iters = sol.status, sol.iterations
            if not sol.feasible:
                log.warning("slot %d: %s (%s)", l, sol.status, sol.message)
                if previous is not None and status != opt.INTERNAL_ERROR:
                    sol = copy.copy(previous)
                else:
                    sol = None
            if sol is not None:
                previous = design = sol
                h_true, G_true = channels_for_state(
                    cfg, truth.distance, truth.aoa, truth.radial_velocity, l * T
                )
                sol = opt.evaluate(copy.copy(sol), h_true, G_true, cfg.noise_power_comm, cfg.noise_power_sense)

        if l > 0:
            z = sc.synth_measurement(truth, (cfg.sigma_delay, cfg.sigma_aoa), rng)
            for k, t in enumerate(trackers):
                t.update(np.array([z.delay[k], z.aoa[k]]))
        post = np.array([t.state.estimate for t in trackers])
        nan = np.full(K, np.nan)
        records.append(
            SlotRecord(
                slot=l,
                true_distance=truth.distance,
                true_aoa=truth.aoa,
                true_height=truth.height,
                est_distance=post[:, 0],
                est_aoa=post[:, 1],
                est_height=trk.height_of(post[:, 0], post[:, 1]),
                gesture=tuple(gestures),
                delta=delta,
                gamma=np.asarray(gamma, dtype=float),
                comm_sinr=sol.comm_sinr if sol is not None else nan,
                sens_sinr=sol.sens_sinr if sol is not None else nan,
                p_comm=sol.powers.comm if sol is not None else nan,
                p_sense=sol.powers.sense if sol is not None else np.nan,
                iterations=iters,
                status=status,
                mode=mode,
                seed=seed,
                rank_one_gap=sol.rank_one_gap if sol is not None else np.full((2, K), np.nan),
                qos_flagged=bool(sol.qos_flagged) if sol is not None else False,
                wall_time=time.perf_counter() - start,
                solution=design,
            )
        )
    return records


def detection_slots(records: list[SlotRecord]) -> np.ndarray:
    """First slot with a non-inactive gesture decision per user (-1 if none)."""
    K = records[0].num_users if records else 0
    out = np.full(K, -1)
    for rec in records:
        for k, g in enumerate(rec.gesture):
            if out[k] < 0 and g != trk.INACTIVE:
                out[k] = rec.slot
    return out


@dataclass(frozen=True)
class ExperimentSpec:
    kind: str
    axis_values: tuple
    modes: tuple = (opt.JOINT,)
    seeds: tuple = (0,)
    # QoS pattern of the static experiments: user 0 strict, others relaxed
    static_delta: tuple | None = None

    def __post_init__(self):
        object.__setattr__(self, "axis_values", tuple(self.axis_values))
        object.__setattr__(self, "modes", tuple(self.modes))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        self.validate()

    def validate(self) -> None:
        if self.kind not in KINDS:
            raise ValueError(f"unknown experiment kind {self.kind!r}; expected one of {KINDS}")
        if not self.axis_values:
            raise ValueError("need at least one axis value")
        if np.any(np.diff(np.asarray(self.axis_values, dtype=float)) <= 0):
            raise ValueError("axis values must be strictly increasing")
        if not self.modes:
            raise ValueError("need at least one mode")
        for m in self.modes:
            if m not in MODES:
                raise ValueError(f"unknown mode {m!r}")
        if self.kind != DYNAMIC and STATIC_NO_ADAPT in self.modes:
            raise ValueError("static_no_adapt only applies to the dynamic episode")
        if not self.seeds:
            raise ValueError("need at least one seed")

    @property
    def axis(self) -> str:
        return "num_antennas" if self.kind == M_SWEEP else "p_max_dbm"


@dataclass
class ExperimentResult:
    spec: ExperimentSpec
    rows: list = field(default_factory=list)  # dicts keyed by TABLE_COLUMNS
    traces: dict = field(default_factory=dict)  # (axis value, mode, seed) -> records
    solutions: dict = field(default_factory=dict)  # (axis value, mode, seed) -> SlotSolution

    def series(self, mode: str, seed: int | None = None, column: str = "sum_sens_sinr") -> np.ndarray:
        """Values of ``column`` along the axis for one mode (first seed by default)."""
        seed = self.spec.seeds[0] if seed is None else seed
        rows = [r for r in self.rows if r["mode"] == mode and r["seed"] == seed and r["slot"] == -1]
        return np.array([r[column] for r in rows])

    @property
    def has_internal_error(self) -> bool:
        return any(r["status"] == opt.INTERNAL_ERROR for r in self.rows)


def static_inputs(base: sc.ScenarioConfig, delta, p_max: float) -> opt.SlotInputs:
    """Single-slot design inputs on the true channels of the static geometry."""
    cfg = sc.static_config(base)
    scen = sc.build_scenario(cfg)
    truth = sc.ground_truth_at(scen, 0)
    h, G = channels_for_state(cfg, truth.distance, truth.aoa, truth.radial_velocity, 0.0)
    gamma = sig.qos_threshold(np.asarray(delta))
    return opt.SlotInputs(h, G, gamma, p_max, cfg.noise_power_comm, cfg.noise_power_sense)


def _point(job):
    """One (axis value, mode, seed) job; module-level so process pools can pickle it."""
    spec, base, opt_config, tracker_config, value, mode, seed, max_range = job
    if spec.kind == DYNAMIC:
        cfg = replace(base, rng_seed=seed)
        oc = replace(opt_config, p_max=float(dbm_to_watt(value)))
        records = run_episode(sc.build_scenario(cfg), mode, oc, tracker_config, seed, max_range)
        return records, None
    if spec.kind == PMAX_SWEEP:
        cfg, oc = base, replace(opt_config, p_max=float(dbm_to_watt(value)))
    else:
        cfg, oc = replace(base, num_antennas=int(value)), opt_config
    delta = spec.static_delta
    if delta is None:
        delta = (1,) + (0,) * (cfg.num_users - 1)
    inputs = static_inputs(cfg, delta, oc.p_max)
    sol = opt.SOLVERS[mode](inputs, oc)
    return None, sol


def run_experiment(
    spec: ExperimentSpec,
    base: sc.ScenarioConfig = sc.ScenarioConfig(),
    opt_config: opt.OptimizerConfig = opt.OptimizerConfig(),
    tracker_config: trk.TrackerConfig = trk.TrackerConfig(),
    workers: int = 1,
    max_range: float = DEFAULT_MAX_RANGE,
) -> ExperimentResult:
    """Evaluate every (axis value, mode, seed) point of ``spec``.

    Static sweeps use the mid-gesture geometry on true channels with a fixed
    QoS pattern; the dynamic kind runs full episodes (axis = P_max in dBm).
    Rows with ``slot == -1`` summarise a point; dynamic episodes add one row
    per slot.
    """
    spec.validate()
    jobs = [
        (spec, base, opt_config, tracker_config, v, m, s, max_range)
        for v in spec.axis_values
        for m in spec.modes
        for s in spec.seeds
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outputs = list(pool.map(_point, jobs))
    else:
        outputs = [_point(j) for j in jobs]

    result = ExperimentResult(spec)
    for job, (records, sol) in zip(jobs, outputs):
        value, mode, seed = job[4], job[5], job[6]
        key = (value, mode, seed)
        common = {"kind": spec.kind, "axis": spec.axis, "axis_value": value, "mode": mode, "seed": seed}
        if records is not None:
            result.traces[key] = records
            sums = np.array([r.sum_sens_sinr for r in records])
            statuses = [r.status for r in records]
            worst = opt.INTERNAL_ERROR if opt.INTERNAL_ERROR in statuses else (
                next((s for s in statuses if s != opt.FEASIBLE), opt.FEASIBLE)
            )
            result.rows.append(
                dict(
                    common,
                    slot=-1,
                    sum_sens_sinr=float(sums[-1]) if sums.size else np.nan,
                    mean_sum_sens_sinr=float(np.nanmean(sums)) if sums.size else np.nan,
                    total_power_w=float(records[-1].p_sense * len(records[-1].p_comm) + np.sum(records[-1].p_comm)) if records else np.nan,
                    ao_iterations=int(sum(r.iterations for r in records)),
                    status=worst,
                )
            )
            for r in records:
                result.rows.append(
                    dict(
                        common,
                        slot=r.slot,
                        sum_sens_sinr=r.sum_sens_sinr,
                        mean_sum_sens_sinr=r.sum_sens_sinr,
                        total_power_w=float(r.p_sense * r.num_users + np.sum(r.p_comm)),
                        ao_iterations=r.iterations,
                        status=r.status,
                    )
                )
        else:
            result.solutions[key] = sol
            s = sol.sum_sens_sinr
            result.rows.append(
                dict(
                    common,
                    slot=-1,
                    sum_sens_sinr=s,
                    mean_sum_sens_sinr=s,
                    total_power_w=sol.powers.total(),
                    ao_iterations=sol.iterations,
                    status=sol.status,
                )
            )
    return result


def _fmt(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def record_rows(records: list[SlotRecord]):
    """Flatten slot records to one dict per (slot, user)."""
    for r in records:
        for k in range(r.num_users):
            yield {
                "slot": r.slot,
                "user": k,
                "mode": r.mode,
                "seed": r.seed,
                "true_distance_m": r.true_distance[k],
                "true_aoa_rad": r.true_aoa[k],
                "true_height_m": r.true_height[k],
                "est_distance_m": r.est_distance[k],
                "est_aoa_rad": r.est_aoa[k],
                "est_height_m": r.est_height[k],
                "gesture": r.gesture[k],
                "delta": int(r.delta[k]),
                "gamma_req": r.gamma[k],
                "comm_sinr": r.comm_sinr[k],
                "sens_sinr": r.sens_sinr[k],
                "sum_sens_sinr": r.sum_sens_sinr,
                "p_comm_w": r.p_comm[k],
                "p_sense_w": r.p_sense,
                "comm_rank_one_gap": r.rank_one_gap[0, k],
                "sense_rank_one_gap": r.rank_one_gap[1, k],
                "qos_flagged": r.qos_flagged,
                "ao_iterations": r.iterations,
                "status": r.status,
            }


def emit_csv(data, path) -> None:
    """Write slot records (one row per slot and user) or an experiment table."""
    if isinstance(data, ExperimentResult):
        columns, rows = TABLE_COLUMNS, data.rows
    else:
        columns, rows = RECORD_COLUMNS, record_rows(list(data))
    try:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n", quoting=csv.QUOTE_MINIMAL)
            writer.writerow(columns)
            for row in rows:
                writer.writerow([_fmt(row[c]) for c in columns])
    except OSError as exc:
        raise OSError(f"cannot write CSV to {path}: {exc}") from exc


def read_csv(path) -> list[dict]:
    """Parse a file written by :func:`emit_csv` back into typed dicts."""
    ints = {"slot", "user", "seed", "delta", "qos_flagged", "ao_iterations"}
    text = {"mode", "gesture", "status", "kind", "axis"}
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        for row in csv.DictReader(fh):
            parsed = {}
            for k, v in row.items():
                if k in text:
                    parsed[k] = v
                elif k in ints:
                    parsed[k] = int(v)
                else:
                    parsed[k] = float(v)
            out.append(parsed)
    return out
