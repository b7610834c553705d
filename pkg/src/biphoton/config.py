"""Run configuration: presets, YAML config files and unit conversion at the boundary.

Boundary units are ns for times, mm for lengths, MHz for the OPO linewidth
delta_omega / 2 pi, and radians or degrees for phases (``"90deg"``,
``"1.2rad"``; bare numbers are radians).  Layering is preset < file < flags.
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Tuple

import yaml

from .errors import InvalidInputError
from .model import DetectionParams, InterferometerConfig, Regime, SourceParams
from .sim import SimConfig

_BASE = {
    "source": {"linewidth_mhz": 7.8, "tau_r_ns": 1.63, "delta": 0.0},
    "detection": {"t_d_ns": 0.22, "tau_0_ns": 55.0, "bin_width_ns": 0.1,
                  "window_ns": [5.0, 105.0]},
    "interferometer": {"delta_l_mm": 170.0, "theta": 0.0, "regime": "unbalanced",
                       "c1": 1.0, "c2": 0.0},
    "sim": {"n_pairs": 1_000_000, "accidental_fraction": 0.0, "seed": 0,
            "phase_jitter_sigma": 0.0, "pair_rate": 1e4},
    "fit": {"free": ["c1", "c2", "theta"], "initial": {}},
}


def _preset(delta_l_mm: float, regime: str) -> Dict[str, Any]:
    d = copy.deepcopy(_BASE)
    d["interferometer"].update(delta_l_mm=delta_l_mm, regime=regime)
    return d


PRESETS: Dict[str, Dict[str, Any]] = {
    "paper-unbalanced": _preset(170.0, "unbalanced"),
    "paper-balanced-perfect": _preset(0.0, "perfect-balanced"),
    "paper-balanced-rough": _preset(0.74, "rough-balanced"),
}
DEFAULT_PRESET = "paper-unbalanced"


def parse_angle(value) -> float:
    """Radians from a number or a string with a ``deg``/``rad`` suffix."""
    if isinstance(value, (int, float)):
        return float(value)
    text = str(value).strip().lower().replace(" ", "")
    try:
        if text.endswith("deg"):
            return math.radians(float(text[:-3]))
        if text.endswith("rad"):
            return float(text[:-3])
        return float(text)
    except ValueError:
        raise InvalidInputError(f"cannot parse angle {value!r}") from None


def merge(base: Dict[str, Any], override: Dict[str, Any]) -> Dict[str, Any]:
    out = copy.deepcopy(base)
    for key, val in (override or {}).items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = merge(out[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def load_config_file(path) -> Dict[str, Any]:
    with open(path, "r", encoding="utf-8") as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise InvalidInputError(f"{path}: top level must be a mapping")
    return data


@dataclass
class RunConfig:
    src: SourceParams
    det: DetectionParams
    cfg: InterferometerConfig
    sim: Optional[SimConfig]
    fit_free: Tuple[str, ...]
    fit_initial: Dict[str, float]
    preset: str
    outputs: Dict[str, str] = field(default_factory=dict)
    raw: Dict[str, Any] = field(default_factory=dict)


_INITIAL_UNITS = {
    "c1": ("c1", 1.0), "c2": ("c2", 1.0), "delta": ("delta", 1.0),
    "tau_0_ns": ("tau_0", 1e-9), "tau_r_ns": ("tau_r", 1e-9), "t_d_ns": ("t_d", 1e-9),
    "T_ns": ("T", 1e-9), "linewidth_mhz": ("delta_omega_opo", 2.0 * math.pi * 1e6),
}


def _num(section: Dict[str, Any], key: str, where: str) -> float:
    try:
        return float(section[key])
    except KeyError:
        raise InvalidInputError(f"missing {where}.{key}") from None
    except (TypeError, ValueError):
        raise InvalidInputError(f"{where}.{key} must be a number") from None


def build(data: Dict[str, Any]) -> RunConfig:
    """Resolve a layered dict (boundary units) into validated SI parameter objects."""
    preset = data.get("preset", DEFAULT_PRESET)
    if preset not in PRESETS:
        raise InvalidInputError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    d = merge(PRESETS[preset], {k: v for k, v in data.items() if k != "preset"})
    s, t, i, m, f = (d[k] for k in ("source", "detection", "interferometer", "sim", "fit"))

    src = SourceParams(2.0 * math.pi * _num(s, "linewidth_mhz", "source") * 1e6,
                       _num(s, "tau_r_ns", "source") * 1e-9, _num(s, "delta", "source"))
    window = t.get("window_ns")
    if not isinstance(window, (list, tuple)) or len(window) != 2:
        raise InvalidInputError("detection.window_ns must be [lo, hi]")
    det = DetectionParams(_num(t, "t_d_ns", "detection") * 1e-9,
                          _num(t, "tau_0_ns", "detection") * 1e-9,
                          _num(t, "bin_width_ns", "detection") * 1e-9,
                          (float(window[0]) * 1e-9, float(window[1]) * 1e-9))
    cfg = InterferometerConfig(_num(i, "delta_l_mm", "interferometer") * 1e-3,
                               parse_angle(i.get("theta", 0.0)),
                               Regime.parse(i.get("regime", "unbalanced")),
                               _num(i, "c1", "interferometer"), _num(i, "c2", "interferometer"))
    n_pairs = m.get("n_pairs", 0)
    if isinstance(n_pairs, str):  # YAML 1.1 reads 1e6 as a string
        n_pairs = _num(m, "n_pairs", "sim")
    if isinstance(n_pairs, float) and n_pairs.is_integer():
        n_pairs = int(n_pairs)
    sim = SimConfig(
        n_pairs,
        _num(m, "accidental_fraction", "sim"),
        int(m.get("seed", 0)),
        parse_angle(m.get("phase_jitter_sigma", 0.0)),
        _num(m, "pair_rate", "sim"),
    )
    initial = {}
    for k, v in (f.get("initial") or {}).items():
        if k == "theta":
            initial[k] = parse_angle(v)
        elif k in _INITIAL_UNITS:
            name, scale = _INITIAL_UNITS[k]
            initial[name] = float(v) * scale
        else:
            raise InvalidInputError(f"unknown fit.initial key {k!r}")
    free = f.get("free", ["c1", "c2", "theta"])
    if isinstance(free, str):
        free = [x.strip() for x in free.split(",") if x.strip()]
    return RunConfig(src, det, cfg, sim, tuple(free), initial, preset,
                     dict(d.get("outputs") or {}), d)
