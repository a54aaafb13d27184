"""Indoor geometry, gesture schedules, ground-truth kinematics and noisy echoes.

The sensing frame sits at the AP reference point with the polar angle
measured from the vertical axis, so the height feature d*cos(theta) is the
device height above the AP reference plane. Users only move vertically
(hand gestures); radial and tangential velocities are derived from
consecutive truth positions so that the constant-velocity recursion

    d[l] = d[l-1] - v_r[l-1] * T,   theta[l] = theta[l-1] + v_t[l-1] * T / d[l-1]

reproduces the truth exactly.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

from .constants import SPEED_OF_LIGHT, dbm_to_watt

PICK_UP = "pick_up"
PUT_DOWN = "put_down"
IDLE = "idle"
GESTURE_KINDS = (PICK_UP, PUT_DOWN)


class GestureEvent(NamedTuple):
    start_slot: int
    kind: str
    duration_slots: int = 10


def _default_positions():
    # Horizontal offsets 2.5, 0.28, 0.66 and 1.2 m put sin(theta) near
    # 0.88, 0.2, 0.44 and 0.67, about one beamwidth apart for M = 8.
    # User 0 starts with the device put down and users 1-3 holding it. The
    # picking-up user is the farthest, so its weak echo makes a strict QoS
    # target cheap for the sensing objective.
    return (
        (2.165, 1.250, 1.2),
        (0.140, 0.242, 1.5),
        (0.467, 0.467, 1.5),
        (1.128, 0.410, 1.5),
    )


def _default_schedule():
    return (
        (GestureEvent(0, PICK_UP, 10),),
        (GestureEvent(0, PUT_DOWN, 10),),
        (GestureEvent(0, PUT_DOWN, 10),),
        (GestureEvent(0, PUT_DOWN, 10),),
    )


@dataclass(frozen=True)
class ScenarioConfig:
    """Physical and simulation parameters; all quantities in SI units."""

    num_users: int = 4
    num_antennas: int = 12
    room_dimensions: tuple = (5.0, 5.0, 3.0)
    ap_position: tuple = (0.0, 0.0, 0.0)
    user_positions: tuple = field(default_factory=_default_positions)
    slot_duration: float = 0.1
    num_slots: int = 20
    gesture_schedule: tuple = field(default_factory=_default_schedule)
    height_pick: float = 1.5
    height_put: float = 1.2
    rcs: tuple = (1.0, 1.0, 1.0, 1.0)
    carrier_frequency: float = 0.3e12
    absorption: float = 0.02
    spacing_ratio: float = 0.5
    noise_power_comm: float = float(dbm_to_watt(-90.0))
    noise_power_sense: float = float(dbm_to_watt(-90.0))
    sigma_delay: float = 0.1e-9
    sigma_aoa: float = float(np.deg2rad(0.5))
    process_sigma_distance: float = 0.01
    process_sigma_aoa: float = float(np.deg2rad(0.5))
    rng_seed: int = 0

    def __post_init__(self):
        # normalise nested sequences coming from config files
        object.__setattr__(
            self, "user_positions", tuple(tuple(map(float, p)) for p in self.user_positions)
        )
        object.__setattr__(
            self,
            "gesture_schedule",
            tuple(tuple(GestureEvent(*ev) for ev in evs) for evs in self.gesture_schedule),
        )
        rcs = self.rcs
        if np.isscalar(rcs):
            rcs = (rcs,) * self.num_users
        object.__setattr__(self, "rcs", tuple(float(b) for b in rcs))
        object.__setattr__(self, "room_dimensions", tuple(map(float, self.room_dimensions)))
        object.__setattr__(self, "ap_position", tuple(map(float, self.ap_position)))
        self.validate()

    def validate(self) -> None:
        if self.num_users < 1:
            raise ValueError("num_users must be >= 1")
        if self.num_antennas < 1:
            raise ValueError("num_antennas must be >= 1")
        if not self.slot_duration > 0:
            raise ValueError("slot_duration must be > 0")
        if self.num_slots < 1:
            raise ValueError("num_slots must be >= 1")
        if not self.height_pick > self.height_put:
            raise ValueError("height_pick must exceed height_put")
        if len(self.user_positions) != self.num_users:
            raise ValueError("need one position per user")
        if len(self.gesture_schedule) != self.num_users:
            raise ValueError("need one gesture schedule per user")
        if len(self.rcs) != self.num_users:
            raise ValueError("need one rcs value per user")
        for name in (
            "noise_power_comm",
            "noise_power_sense",
            "sigma_delay",
            "sigma_aoa",
            "process_sigma_distance",
            "process_sigma_aoa",
        ):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        room = np.asarray(self.room_dimensions)
        for k, pos in enumerate(self.user_positions):
            p = np.asarray(pos)
            if p.shape != (3,) or np.any(p < 0) or np.any(p > room):
                raise ValueError(f"user {k} position {pos} outside room {self.room_dimensions}")
        for k, events in enumerate(self.gesture_schedule):
            busy_until = -1
            for ev in sorted(events):
                if ev.kind not in GESTURE_KINDS:
                    raise ValueError(f"unknown gesture kind {ev.kind!r}")
                if ev.duration_slots < 1 or ev.start_slot < 0:
                    raise ValueError(f"invalid gesture timing {ev}")
                if ev.start_slot + ev.duration_slots > self.num_slots - 1:
                    raise ValueError(
                        f"user {k} gesture {ev} extends past the last slot {self.num_slots - 1}"
                    )
                if ev.start_slot < busy_until:
                    raise ValueError(f"user {k} has overlapping gestures")
                busy_until = ev.start_slot + ev.duration_slots


class KinematicTruth(NamedTuple):
    """Per-user ground truth for one slot; every field has shape (K,)."""

    distance: np.ndarray
    aoa: np.ndarray
    radial_velocity: np.ndarray
    tangential_velocity: np.ndarray
    height: np.ndarray
    phase: tuple


class Measurement(NamedTuple):
    delay: np.ndarray
    aoa: np.ndarray


@dataclass(frozen=True)
class Scenario:
    config: ScenarioConfig
    horizontal_offset: np.ndarray  # (K,)
    distance: np.ndarray  # (L, K)
    aoa: np.ndarray
    height: np.ndarray
    radial_velocity: np.ndarray
    tangential_velocity: np.ndarray
    phase: tuple  # phase[l][k]

    @property
    def num_slots(self) -> int:
        return self.distance.shape[0]

    @property
    def num_users(self) -> int:
        return self.distance.shape[1]


def height_trajectory(config: ScenarioConfig) -> tuple[np.ndarray, list]:
    """Heights above the AP reference plane, shape (L, K), and per-slot phases."""
    L, K = config.num_slots, config.num_users
    z_ap = config.ap_position[2]
    heights = np.empty((L, K))
    phase = [[IDLE] * K for _ in range(L)]
    swing = config.height_pick - config.height_put
    for k in range(K):
        step = np.zeros(L)  # change applied going from slot l to l+1
        for ev in config.gesture_schedule[k]:
            sign = 1.0 if ev.kind == PICK_UP else -1.0
            step[ev.start_slot : ev.start_slot + ev.duration_slots] = (
                sign * swing / ev.duration_slots
            )
            for l in range(ev.start_slot, ev.start_slot + ev.duration_slots):
                phase[l][k] = ev.kind
        h0 = config.user_positions[k][2] - z_ap
        heights[0, k] = h0
        for l in range(1, L):
            heights[l, k] = heights[l - 1, k] + step[l - 1]
    return heights, phase


def build_scenario(config: ScenarioConfig) -> Scenario:
    """Realise the ground-truth trajectory of every user over all slots."""
    config.validate()
    pos = np.asarray(config.user_positions)
    ap = np.asarray(config.ap_position)
    rho = np.hypot(pos[:, 0] - ap[0], pos[:, 1] - ap[1])
    heights, phase = height_trajectory(config)
    distance = np.hypot(rho, heights)
    if np.any(distance <= 0):
        raise ValueError("user coincides with the AP reference point")
    aoa = np.arctan2(rho, heights)
    T = config.slot_duration
    v_r = np.zeros_like(distance)
    v_t = np.zeros_like(distance)
    v_r[:-1] = (distance[:-1] - distance[1:]) / T
    v_t[:-1] = (aoa[1:] - aoa[:-1]) * distance[:-1] / T
    return Scenario(
        config=config,
        horizontal_offset=rho,
        distance=distance,
        aoa=aoa,
        height=distance * np.cos(aoa),
        radial_velocity=v_r,
        tangential_velocity=v_t,
        phase=tuple(tuple(p) for p in phase),
    )


def ground_truth_at(scenario: Scenario, slot: int) -> KinematicTruth:
    if not 0 <= slot < scenario.num_slots:
        raise IndexError(f"slot {slot} outside [0, {scenario.num_slots})")
    return KinematicTruth(
        distance=scenario.distance[slot].copy(),
        aoa=scenario.aoa[slot].copy(),
        radial_velocity=scenario.radial_velocity[slot].copy(),
        tangential_velocity=scenario.tangential_velocity[slot].copy(),
        height=scenario.height[slot].copy(),
        phase=scenario.phase[slot],
    )


def synth_measurement(
    truth: KinematicTruth, noise: Sequence[float], rng: np.random.Generator
) -> Measurement:
    """Round-trip delay and AoA with independent zero-mean Gaussian errors."""
    sigma_delay, sigma_aoa = noise
    if sigma_delay < 0 or sigma_aoa < 0:
        raise ValueError("noise standard deviations must be >= 0")
    d = np.asarray(truth.distance, dtype=float)
    theta = np.asarray(truth.aoa, dtype=float)
    n_delay = rng.standard_normal(d.shape) * sigma_delay
    n_aoa = rng.standard_normal(d.shape) * sigma_aoa
    return Measurement(delay=2 * d / SPEED_OF_LIGHT + n_delay, aoa=theta + n_aoa)


def static_config(base: ScenarioConfig, heights: Sequence[float] | None = None, **overrides):
    """Copy of ``base`` with no gestures and a single slot (static experiments).

    ``heights`` replaces each user's initial height; by default every user sits
    mid-way between the put-down and picked-up heights.
    """
    if heights is None:
        heights = [0.5 * (base.height_pick + base.height_put)] * base.num_users
    z_ap = base.ap_position[2]
    positions = tuple(
        (p[0], p[1], z_ap + h) for p, h in zip(base.user_positions, heights)
    )
    params = dict(
        user_positions=positions,
        gesture_schedule=tuple(() for _ in range(base.num_users)),
        num_slots=1,
    )
    params.update(overrides)
    return replace(base, **params)
