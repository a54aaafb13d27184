"""YAML run configuration: scenario, tracker, optimizer and experiment sections.

Keys inside ``scenario`` and ``tracker`` are the dataclass field names (SI
units, angles in radians). A few convenience keys are accepted as well:
``*_dbm`` for powers and ``*_deg`` for angles. Example::

    scenario:
      num_antennas: 12
      noise_power_comm_dbm: -90
      sigma_aoa_deg: 0.5
    tracker:
      epsilon_h: 0.1
    optimizer:
      p_max_dbm: 36
      rel_tol: 1.0e-4
    experiment:
      kind: static_pmax_sweep
      axis_values: [30, 32, 34, 36, 38]
      modes: [joint, power_only]
      seeds: [0]
    run:
      mode: joint
      seed: 0
      max_range: 10.0
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np
import yaml

from . import optimizer as opt
from . import runner as rn
from . import scenario as sc
from . import tracker as trk
from .constants import dbm_to_watt


@dataclass
class RunConfig:
    scenario: sc.ScenarioConfig = field(default_factory=sc.ScenarioConfig)
    tracker: trk.TrackerConfig = field(default_factory=trk.TrackerConfig)
    optimizer: opt.OptimizerConfig = field(default_factory=opt.OptimizerConfig)
    experiment: rn.ExperimentSpec | None = None
    mode: str = opt.JOINT
    seed: int = 0
    max_range: float = rn.DEFAULT_MAX_RANGE
    workers: int = 1


def _convert(section: dict, cls, where: str) -> dict:
    out = {}
    names = {f.name for f in fields(cls)}
    for key, value in (section or {}).items():
        if key.endswith("_dbm") and key[:-4] in names:
            out[key[:-4]] = float(dbm_to_watt(value))
        elif key.endswith("_deg") and key[:-4] in names:
            out[key[:-4]] = float(np.deg2rad(value))
        elif key in names:
            out[key] = value
        else:
            raise ValueError(f"unknown key {key!r} in section {where!r}")
    return out


def from_dict(data: dict) -> RunConfig:
    data = dict(data or {})
    unknown = set(data) - {"scenario", "tracker", "optimizer", "experiment", "run"}
    if unknown:
        raise ValueError(f"unknown config sections: {sorted(unknown)}")
    scen = sc.ScenarioConfig(**_convert(data.get("scenario"), sc.ScenarioConfig, "scenario"))
    track = trk.TrackerConfig(**_convert(data.get("tracker"), trk.TrackerConfig, "tracker"))
    opt_kw = _convert(data.get("optimizer"), opt.OptimizerConfig, "optimizer")
    tol_kw = opt_kw.pop("solver", None)
    optc = opt.OptimizerConfig(**opt_kw)
    if tol_kw:
        optc = replace(optc, solver=replace(optc.solver, **tol_kw))
    exp = data.get("experiment")
    spec = rn.ExperimentSpec(**exp) if exp else None
    run = dict(data.get("run") or {})
    bad = set(run) - {"mode", "seed", "max_range", "workers"}
    if bad:
        raise ValueError(f"unknown key(s) {sorted(bad)} in section 'run'")
    cfg = RunConfig(scenario=scen, tracker=track, optimizer=optc, experiment=spec, **run)
    if cfg.mode not in rn.MODES:
        raise ValueError(f"unknown mode {cfg.mode!r}")
    return cfg


def load_config(path) -> RunConfig:
    with open(path, encoding="utf-8") as fh:
        return from_dict(yaml.safe_load(fh))
