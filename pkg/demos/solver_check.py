"""Check the in-house conic solver and the alternating design on tiny cases.

With two antennas every unit beam is (cos a, e^{j phi} sin a) up to a phase,
so a dense grid over (a, phi) gives a brute-force reference value.
"""

from __future__ import annotations

import numpy as np

from gesture_isac import channel as ch
from gesture_isac import optimizer as opt
from gesture_isac import solver as so

rng = np.random.default_rng(0)

# one block: maximise <D, W> + a sqrt(<C, W>) over unit-trace PSD W
Z = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
D = (Z + Z.conj().T) / 2
Y = rng.standard_normal((2, 2)) + 1j * rng.standard_normal((2, 2))
C = Y @ Y.conj().T
problem = so.ConicProblem(
    linear=D[None], sqrt_coef=[1.3], sqrt_mat=C[None], sqrt_block=[0],
    ineq_mat=np.zeros((0, 1, 2, 2)), ineq_rhs=[], trace=[1.0],
)
rep = so.solve_psd(problem)

a, phi = np.meshgrid(np.linspace(0, np.pi / 2, 720), np.linspace(0, 2 * np.pi, 720), indexing="ij")
v = np.stack([np.cos(a), np.exp(1j * phi) * np.sin(a)], axis=-1)
quad = lambda M: np.einsum("...i,ij,...j->...", v.conj(), M, v).real
grid = np.max(quad(D) + 1.3 * np.sqrt(np.maximum(quad(C), 0)))
print(f"solve_psd {rep.objective:.8f}  grid {grid:.8f}  dual bound {rep.dual_bound:.8f}  status {rep.status}")

# one user, two antennas: joint design against a scan of its beams
geom = ch.ArrayGeometry(2)
theta, dist = 0.3, 2.0
h = ch.los_channel(0.3e12, dist, 0.02, theta, geom)[None]
G = ch.reflection_channel(0.3e12, dist, 0.02, 1.0, 0.0, 0.0, theta, geom)[None]
inputs = opt.SlotInputs(h, G, np.array([1.0]), 4.0, 1e-12, 1e-12)
sol = opt.ao_solve(inputs)
print(f"joint design sum sensing SINR {sol.sum_sens_sinr:.6e} after {sol.iterations} iterations ({sol.status})")
print("powers", sol.powers, "rank-one gaps", sol.rank_one_gap.ravel())
