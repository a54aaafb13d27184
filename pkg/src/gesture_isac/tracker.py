"""Per-user EKF over (distance, AoA), height feature and gesture/QoS decisions."""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .constants import SPEED_OF_LIGHT

INACTIVE = "inactive"
PICKING_UP = "picking_up"
PUTTING_DOWN = "putting_down"


class TrackingDivergence(RuntimeError):
    """Predicted range became non-positive."""


class DegenerateUpdate(np.linalg.LinAlgError):
    """Innovation covariance is singular."""


@dataclass(frozen=True)
class NoiseModel:
    """Diagonal process (Q_s) and measurement (R_m) covariances."""

    sigma_distance: float
    sigma_aoa_process: float
    sigma_delay: float
    sigma_aoa_meas: float

    @property
    def process(self) -> np.ndarray:
        return np.diag([self.sigma_distance**2, self.sigma_aoa_process**2])

    @property
    def measurement(self) -> np.ndarray:
        return np.diag([self.sigma_delay**2, self.sigma_aoa_meas**2])

    @classmethod
    def from_scenario(cls, cfg) -> "NoiseModel":
        return cls(
            cfg.process_sigma_distance,
            cfg.process_sigma_aoa,
            cfg.sigma_delay,
            cfg.sigma_aoa,
        )


@dataclass(frozen=True)
class TrackerConfig:
    epsilon_h: float = 0.1
    # Compare against the height at the last confirmed state change; False
    # gives the plain slot-to-slot difference.
    cumulative: bool = True
    initial_std_distance: float = 0.1
    initial_std_aoa: float = float(np.deg2rad(1.0))


@dataclass
class TrackState:
    estimate: np.ndarray  # [d, theta]
    mse: np.ndarray  # 2x2
    height_prev: float
    height_ref: float
    gesture: str = INACTIVE
    delta: int = 0
    history: list = field(default_factory=list)


def transition(x: np.ndarray, v_r: float, v_t: float, T: float) -> np.ndarray:
    d, theta = x
    return np.array([d - v_r * T, theta + v_t * T / d])


def transition_jacobian(x: np.ndarray, v_t: float, T: float) -> np.ndarray:
    d = x[0]
    return np.array([[1.0, 0.0], [-v_t * T / d**2, 1.0]])


def measurement_fn(x: np.ndarray) -> np.ndarray:
    """Predicted [round-trip delay, AoA] for state x."""
    d, theta = x
    if not d > 0:
        raise ValueError(f"range must be positive, got {d}")
    return np.array([2 * d / SPEED_OF_LIGHT, theta])


def measurement_jacobian(x: np.ndarray | None = None) -> np.ndarray:
    """Constant Jacobian of the measurement model (the state is ignored)."""
    return np.array([[2 / SPEED_OF_LIGHT, 0.0], [0.0, 1.0]])


def height_of(distance, aoa):
    return distance * np.cos(aoa)


def init_state(
    distance: float, aoa: float, config: TrackerConfig = TrackerConfig(), delta: int = 0
) -> TrackState:
    x = np.array([float(distance), float(aoa)])
    mse = np.diag([config.initial_std_distance**2, config.initial_std_aoa**2])
    h = float(height_of(*x))
    return TrackState(estimate=x, mse=mse, height_prev=h, height_ref=h, delta=delta)


def predict(
    state: TrackState, v_r: float, v_t: float, T: float, noise: NoiseModel
) -> tuple[np.ndarray, np.ndarray]:
    """Prior (x, M) for the next slot."""
    x = state.estimate
    if not x[0] > 0:
        raise TrackingDivergence(f"non-positive range estimate {x[0]}")
    x_pred = transition(x, v_r, v_t, T)
    if not x_pred[0] > 0:
        raise TrackingDivergence(f"predicted range {x_pred[0]} is not positive")
    F = transition_jacobian(x, v_t, T)
    m_pred = F @ state.mse @ F.T + noise.process
    return x_pred, m_pred


def update(
    x_pred: np.ndarray, m_pred: np.ndarray, z: np.ndarray, noise: NoiseModel
) -> tuple[np.ndarray, np.ndarray]:
    """Posterior (x, M) after measurement z = [delay, aoa]."""
    H = measurement_jacobian(x_pred)
    S = noise.measurement + H @ m_pred @ H.T
    # delay entries are ~1e-9 s; solve through the scaled system for conditioning
    scale = np.array([SPEED_OF_LIGHT / 2, 1.0])
    S_scaled = S * np.outer(scale, scale)
    try:
        gain = np.linalg.solve(S_scaled, (m_pred @ H.T * scale).T).T * scale
    except np.linalg.LinAlgError as exc:
        raise DegenerateUpdate("singular innovation covariance") from exc
    if not np.all(np.isfinite(gain)):
        raise DegenerateUpdate("singular innovation covariance")
    innovation = np.asarray(z, dtype=float) - measurement_fn(x_pred)
    x_post = x_pred + gain @ innovation
    m_post = (np.eye(2) - gain @ H) @ m_pred
    m_post = 0.5 * (m_post + m_post.T)
    return x_post, m_post


def detect_gesture(
    state: TrackState, new_height: float, epsilon_h: float, cumulative: bool = True
) -> tuple[str, int]:
    """Apply the threshold rule to the height change and update ``state`` in place.

    Returns the gesture decision and the resulting QoS indicator. An inactive
    decision keeps the previous indicator.
    """
    if not epsilon_h > 0:
        raise ValueError("epsilon_h must be > 0")
    ref = state.height_ref if cumulative else state.height_prev
    dh = new_height - ref
    if abs(dh) < epsilon_h:
        gesture = INACTIVE
    elif dh > 0:
        gesture = PICKING_UP
        state.delta = 1
        state.height_ref = new_height
    else:
        gesture = PUTTING_DOWN
        state.delta = 0
        state.height_ref = new_height
    state.gesture = gesture
    state.height_prev = new_height
    return gesture, state.delta


class UserTracker:
    """Sequential per-slot EKF for one user."""

    def __init__(
        self,
        distance: float,
        aoa: float,
        noise: NoiseModel,
        config: TrackerConfig = TrackerConfig(),
        delta: int = 0,
    ):
        self.noise = noise
        self.config = config
        self.state = init_state(distance, aoa, config, delta)
        self._prior = None

    def predict(self, v_r: float, v_t: float, T: float) -> np.ndarray:
        self._prior = predict(self.state, v_r, v_t, T, self.noise)
        return self._prior[0]

    @property
    def prior(self):
        return self._prior

    def decide(self, x: np.ndarray | None = None) -> tuple[str, int]:
        x = self._prior[0] if x is None else x
        h = float(height_of(*x))
        return detect_gesture(self.state, h, self.config.epsilon_h, self.config.cumulative)

    def update(self, z: np.ndarray) -> np.ndarray:
        if self._prior is None:
            raise RuntimeError("update() called before predict()")
        x, m = update(*self._prior, z, self.noise)
        self.state = replace(self.state, estimate=x, mse=m)
        self._prior = None
        return x


def simulate_state_space(
    x0: np.ndarray,
    velocities: np.ndarray,
    T: float,
    noise: NoiseModel,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Draw a trajectory and measurements from the stochastic state-space model.

    ``velocities`` has shape (L, 2) holding (v_r, v_t) per slot. Returns states
    of shape (L+1, 2) and measurements for slots 1..L of shape (L, 2).
    """
    L = len(velocities)
    xs = np.empty((L + 1, 2))
    zs = np.empty((L, 2))
    xs[0] = x0
    q_std = np.sqrt(np.diag(noise.process))
    r_std = np.sqrt(np.diag(noise.measurement))
    for l in range(L):
        v_r, v_t = velocities[l]
        xs[l + 1] = transition(xs[l], v_r, v_t, T) + q_std * rng.standard_normal(2)
        zs[l] = measurement_fn(xs[l + 1]) + r_std * rng.standard_normal(2)
    return xs, zs
