from __future__ import annotations

import numpy as np
import pytest

from gesture_isac import channel as ch
from gesture_isac import optimizer as opt
from gesture_isac import signal as sig


def random_instance(rng, K=2, M=8, gamma=1.0, p_max=4.0, spread=True, span=0.9):
    """Small LoS/reflection instance with users at distinct angles (whitening-friendly units)."""
    geom = ch.ArrayGeometry(M)
    if spread:
        base = np.linspace(-span, span, K)
        thetas = np.arcsin(np.clip(base + rng.uniform(-0.05, 0.05, K), -0.99, 0.99))
    else:
        thetas = rng.uniform(-1.2, 1.2, K)
    dist = rng.uniform(1.0, 3.0, K)
    f, absorb = 0.3e12, 0.02
    h = np.array([ch.los_channel(f, d, absorb, th, geom) for d, th in zip(dist, thetas)])
    G = np.array(
        [ch.reflection_channel(f, d, absorb, 1.0, 0.0, 0.0, th, geom) for d, th in zip(dist, thetas)]
    )
    return opt.SlotInputs(h, G, np.broadcast_to(gamma, (K,)), p_max, 1e-12, 1e-12)


def random_beams(rng, K, M):
    def unit(shape):
        z = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
        return z / np.linalg.norm(z, axis=-1, keepdims=True)

    return sig.BeamSet(unit((K, M)), unit((K, M)))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        ok, detail = results[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
