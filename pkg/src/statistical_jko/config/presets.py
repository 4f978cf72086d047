"""
Named run presets.

`reference_ou` is the stationary-OU reference setup; the other presets pin
the experiment id and the replication counts used for the reported figures.
Presets are plain override mappings validated through the same path as
configuration files.
"""

import copy
from typing import Any, Dict, List, Optional

from ..core.exceptions import ConfigError
from ..models.run_config import ExperimentConfig, parse_config

REFERENCE_OU: Dict[str, Any] = {
    "potential": {"id": "quadratic", "theta": [0.0], "beta": 1.0},
    "grid": {"half_width": 5.0, "intervals": 200},
    "time": {"horizon": 0.5, "steps": 50},
    "initial": {"mean": [0.0], "variance": 1.44},
    "sampling": {"eta": 1.0, "batch_size": 10, "scheme": "online_cumulative"},
    "jko": {"delta": 0.01},
}

PRESETS: Dict[str, Dict[str, Any]] = {
    "reference_ou": {},
    "empty": {"experiment": "empty"},
    "fig1_density": {"experiment": "fig1_density", "run": {"seed": 1}},
    "fig2_slice": {"experiment": "fig2_slice", "run": {"seed": 2}},
    "fig3_contour": {"experiment": "fig3_contour", "run": {"seed": 3, "svg": True}},
    "prop53_variance": {
        "experiment": "prop53_variance",
        "run": {"seed": 53, "replications": 10_000},
        "prop53": {"t": 1.0, "n_list": [1000], "integral": "trapezoid", "refine": 100},
    },
    "prop53_sweep": {
        "experiment": "prop53_sweep",
        "run": {"seed": 54, "replications": 1},
        "prop53": {"t": 1.0, "sweep_unit": 1e-4, "sweep_max": 100},
    },
    "clt_offline": {
        "experiment": "clt_offline",
        "run": {"seed": 7, "replications": 2000},
        "clt": {"n": 2000, "eta": 1.0},
    },
    "oracle_v1": {
        "experiment": "oracle_v1",
        "run": {"seed": 11},
        "limit": {"oracle_intervals": 400, "oracle_steps": 200},
    },
    "bw_convergence": {
        "experiment": "bw_convergence",
        "run": {"seed": 66},
        "bw": {"deltas": [0.04, 0.02, 0.01], "n_list": [10_000, 1_000_000]},
    },
}


def _merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def preset_names() -> List[str]:
    return sorted(PRESETS)


def get_preset(name: str, overrides: Optional[Dict[str, Any]] = None) -> ExperimentConfig:
    """
    Build the configuration of a named preset.

    Raises:
        ConfigError: For an unknown preset name or invalid overrides
    """
    if name not in PRESETS:
        raise ConfigError(f"Unknown preset {name!r}; available: {', '.join(preset_names())}", preset=name)
    data = _merge(REFERENCE_OU, PRESETS[name])
    if overrides:
        data = _merge(data, overrides)
    return parse_config(data, f"preset {name}")
