"""Dual-functional transmit model, communication/sensing SINR, QoS thresholds."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

SINR_HIGH = 5.0
SINR_LOW = 1.0


@dataclass
class BeamSet:
    """Per-user unit-norm beams. ``comm`` and ``sense`` have shape (K, M)."""

    comm: np.ndarray
    sense: np.ndarray

    def __post_init__(self):
        self.comm = np.atleast_2d(np.asarray(self.comm, dtype=complex))
        self.sense = np.atleast_2d(np.asarray(self.sense, dtype=complex))
        if self.comm.shape != self.sense.shape:
            raise ValueError(
                f"comm beams {self.comm.shape} and sense beams {self.sense.shape} differ"
            )

    @property
    def num_users(self) -> int:
        return self.comm.shape[0]

    @property
    def num_antennas(self) -> int:
        return self.comm.shape[1]

    def check_unit_norm(self, tol: float = 1e-9) -> bool:
        norms = np.concatenate(
            [np.linalg.norm(self.comm, axis=1), np.linalg.norm(self.sense, axis=1)]
        )
        return bool(np.all(np.abs(norms - 1.0) <= tol))


@dataclass
class PowerSet:
    """Per-user communication powers ``comm`` (W) and the shared sensing power ``sense`` (W)."""

    comm: np.ndarray
    sense: float

    def __post_init__(self):
        self.comm = np.atleast_1d(np.asarray(self.comm, dtype=float))
        self.sense = float(self.sense)
        if np.any(self.comm < 0) or self.sense < 0:
            raise ValueError("powers must be nonnegative")

    @property
    def num_users(self) -> int:
        return self.comm.shape[0]

    def total(self) -> float:
        """Budget usage K * P_r + sum_k P_k."""
        return self.num_users * self.sense + float(self.comm.sum())


def _check_dims(powers: PowerSet, beams: BeamSet) -> None:
    if powers.num_users != beams.num_users:
        raise ValueError(
            f"{powers.num_users} user powers but {beams.num_users} beam pairs"
        )


def transmit_covariance(powers: PowerSet, beams: BeamSet) -> np.ndarray:
    """E[x x^H] = sum_k P_k w_ck w_ck^H + P_r sum_k w_rk w_rk^H."""
    _check_dims(powers, beams)
    wc, wr = beams.comm, beams.sense
    return (wc.T * powers.comm) @ wc.conj() + powers.sense * (wr.T @ wr.conj())


def sample_transmit_symbols(
    powers: PowerSet, beams: BeamSet, n_samples: int, rng: np.random.Generator
) -> np.ndarray:
    """Draw ``n_samples`` transmit vectors x = W_c s_c + W_r s_r, shape (M, n).

    Communication and radar streams are independent i.i.d. CN(0, 1) symbols.
    """
    _check_dims(powers, beams)
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    k = powers.num_users
    shape = (2 * k, n_samples)
    s = (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / np.sqrt(2)
    w_c = beams.comm.T * np.sqrt(powers.comm)
    w_r = beams.sense.T * np.sqrt(powers.sense)
    return w_c @ s[:k] + w_r @ s[k:]


def comm_sinr(
    k: int, h_k: np.ndarray, beams: BeamSet, powers: PowerSet, noise_power: float
) -> float:
    """Communication SINR of user k with rank-one beams."""
    _check_dims(powers, beams)
    gain_c = np.abs(beams.comm.conj() @ h_k) ** 2  # |h_k^H w_cj|^2
    gain_r = np.abs(beams.sense.conj() @ h_k) ** 2
    desired = powers.comm[k] * gain_c[k]
    interference = (
        float(powers.comm @ gain_c) - desired + powers.sense * float(gain_r.sum())
    )
    return float(desired / (interference + noise_power))


def sens_sinr(
    k: int, g_k: np.ndarray, beams: BeamSet, powers: PowerSet, noise_power: float
) -> float:
    """Sensing SINR of user k: own sensing echo over own comm leakage plus noise."""
    _check_dims(powers, beams)
    echo = np.linalg.norm(g_k @ beams.sense[k]) ** 2
    leak = np.linalg.norm(g_k @ beams.comm[k]) ** 2
    return float(powers.sense * echo / (powers.comm[k] * leak + noise_power))


def comm_sinr_lifted(
    k: int,
    h_k: np.ndarray,
    w_comm: np.ndarray,
    w_sense: np.ndarray,
    powers: PowerSet,
    noise_power: float,
) -> float:
    """Communication SINR evaluated with lifted beam matrices of shape (K, M, M)."""
    hh = np.outer(h_k, h_k.conj())
    gain_c = np.einsum("ij,kji->k", hh, w_comm).real
    gain_r = np.einsum("ij,kji->k", hh, w_sense).real
    desired = powers.comm[k] * gain_c[k]
    interference = (
        float(powers.comm @ gain_c) - desired + powers.sense * float(gain_r.sum())
    )
    return float(desired / (interference + noise_power))


def sens_sinr_lifted(
    k: int,
    g_k: np.ndarray,
    w_comm: np.ndarray,
    w_sense: np.ndarray,
    powers: PowerSet,
    noise_power: float,
) -> float:
    """Sensing SINR with lifted matrices, using Tr(G W G^H)."""
    echo = np.trace(g_k @ w_sense[k] @ g_k.conj().T).real
    leak = np.trace(g_k @ w_comm[k] @ g_k.conj().T).real
    return float(powers.sense * echo / (powers.comm[k] * leak + noise_power))


def qos_threshold(delta, sinr_high: float = SINR_HIGH, sinr_low: float = SINR_LOW):
    """Required communication SINR (linear ratio) for gesture indicator delta."""
    delta = np.asarray(delta)
    if not np.all((delta == 0) | (delta == 1)):
        raise ValueError("delta must be 0 or 1")
    out = delta * sinr_high + (1 - delta) * sinr_low
    return float(out) if out.ndim == 0 else out.astype(float)
