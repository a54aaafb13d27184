"""Sum sensing SINR against the power budget and the array size.

The joint design is compared with the power-only baseline (steering beams)
along P_max, and with the beam-only baseline (even power split) along M.
Takes about a minute.
"""

from __future__ import annotations

from gesture_isac import optimizer as opt
from gesture_isac import runner as rn

pmax = rn.run_experiment(
    rn.ExperimentSpec(rn.PMAX_SWEEP, (30, 32, 34, 36, 38), modes=(opt.JOINT, opt.POWER_ONLY))
)
print("P_max [dBm]   joint       power_only")
for v, j, p in zip(pmax.spec.axis_values, pmax.series(opt.JOINT), pmax.series(opt.POWER_ONLY)):
    print(f"{v:8.0f}   {j:.4e}   {p:.4e}")

ants = rn.run_experiment(
    rn.ExperimentSpec(rn.M_SWEEP, (8, 10, 12, 14, 16), modes=(opt.JOINT, opt.BEAM_ONLY))
)
print("\nM             joint       beam_only")
for v, j, b in zip(ants.spec.axis_values, ants.series(opt.JOINT), ants.series(opt.BEAM_ONLY)):
    print(f"{v:8d}   {j:.4e}   {b:.4e}")
