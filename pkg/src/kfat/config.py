"""Shared JSON configuration for scans, tuning runs and validation.

Layout::

    {
      "system":   {"name": "tracking_1d", "sensor_kind": "non_integrating"},
      "scenario": {"true_noise": {"V": [1.0], "W": [0.1]}, "dt": 0.1,
                   "steps": 200, "runs": 200, "master_seed": 0},
      "tuner":    {"dt_list": [0.1, 0.5], "n_seed": 20, "n_iter": 200, ...}
    }

``system`` may instead give explicit row-major ``A``, ``G``, ``Gamma`` and
``H`` arrays.  Every section is optional; missing values fall back to the
1-D tracking benchmark with true intensities (1, 0.1).
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

from .simulate import ScenarioConfig
from .sysmodel import ContinuousModel, model_from_dict, model_to_dict
from .tuner import TuneConfig

__all__ = ["ExperimentConfig", "DEFAULT_TRUTH", "load_config"]

DEFAULT_TRUTH = {
    "tracking_1d": {"V": [1.0], "W": [0.1]},
    "tracking_2d": {"V": [1.0, 2.0], "W": [0.2, 0.1]},
}


@dataclass(frozen=True)
class ExperimentConfig:
    model: ContinuousModel
    scenario: ScenarioConfig
    tuner: TuneConfig
    raw: dict

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ExperimentConfig":
        unknown = set(d) - {"system", "scenario", "tuner"}
        if unknown:
            raise ValueError(f"unknown config sections {sorted(unknown)}")
        model = model_from_dict(d.get("system", {"name": "tracking_1d"}))
        sc = dict(d.get("scenario", {}))
        if "true_noise" not in sc:
            if model.name not in DEFAULT_TRUTH:
                raise ValueError("scenario.true_noise is required for custom systems")
            sc["true_noise"] = DEFAULT_TRUTH[model.name]
        scenario = ScenarioConfig.from_dict(sc, model=model)
        tuner = TuneConfig.from_dict(d.get("tuner", {}), scenario)
        return cls(model=model, scenario=scenario, tuner=tuner, raw=dict(d))

    def to_dict(self) -> dict:
        sc = self.scenario.to_dict()
        sc.pop("system")
        return {"system": model_to_dict(self.model), "scenario": sc, "tuner": self.tuner.to_dict()}


def load_config(path: str | Path | None) -> ExperimentConfig:
    if path is None:
        return ExperimentConfig.from_dict({})
    with open(path) as fh:
        return ExperimentConfig.from_dict(json.load(fh))
