"""Sectioned TOML configuration: schema, validation and model construction.

Frequencies and rates in the file are ordinary frequencies in Hz (keys end
in ``_hz``); they become rad/s here. Every other quantity is SI.
"""
from __future__ import annotations

import hashlib
import json
import math
import sys
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Any, Optional

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .params import TWO_PI, MechanicalMode, OpticalDrive, SystemParams, ThermalBath
from .response import BandpassStage, FeedbackController, cooling_phase, gain_for_damping


class ConfigError(ValueError):
    """Invalid configuration; ``errors`` lists every violation found."""

    def __init__(self, errors):
        self.errors = list(errors)
        super().__init__("; ".join(self.errors))


def _number(x):
    return isinstance(x, (int, float)) and not isinstance(x, bool)


def positive(x):
    return None if _number(x) and x > 0 and math.isfinite(x) else "must be a positive finite number"


def positive_or_inf(x):
    return None if _number(x) and x > 0 else "must be a positive number (inf allowed)"


def non_negative(x):
    return None if _number(x) and x >= 0 and math.isfinite(x) else "must be a finite number >= 0"


def finite(x):
    return None if _number(x) and math.isfinite(x) else "must be a finite number"


def fraction(x):
    return None if _number(x) and 0 <= x <= 1 else "must lie in [0, 1]"


def negative(x):
    return None if _number(x) and x < 0 else "must be negative (red detuning)"


def count(x):
    return None if isinstance(x, int) and not isinstance(x, bool) and x >= 1 else "must be an integer >= 1"


def positive_list(x):
    if not isinstance(x, list) or not x:
        return "must be a non-empty list"
    return None if all(positive_or_inf(v) is None for v in x) else "entries must be positive numbers"


def finite_list(x):
    if not isinstance(x, list) or not x:
        return "must be a non-empty list"
    return None if all(finite(v) is None for v in x) else "entries must be finite numbers"


def phase_value(x):
    if x == "cool" or finite(x) is None:
        return None
    return "must be \"cool\" or a phase in radians"


def objective_name(x):
    return None if x in ("whittle", "wls") else "must be \"whittle\" or \"wls\""


Key = tuple  # (validator, required)

SCHEMA: dict[str, dict[str, Key]] = {
    "mechanics": {
        "frequency_hz": (positive, True),
        "linewidth_hz": (positive, False),
        "quality_factor": (positive, False),
        "mass_kg": (positive, True),
    },
    "bath": {
        "temperature_k": (positive, False),
        "n_th": (non_negative, False),
    },
    "probe": {
        "kappa_hz": (positive, True),
        "g0_hz": (positive, True),
        "cooperativity": (positive_or_inf, False),
        "n_cav": (non_negative, False),
        "eta_c": (fraction, False),
        "eta_det": (fraction, True),
    },
    "aux": {
        "kappa_hz": (positive, True),
        "detuning_hz": (negative, True),
        "eta_c": (fraction, False),
        "force_noise_ratio": (non_negative, False),
        "gamma_opt_hz": (non_negative, False),
        "spring_shift_hz": (finite, False),
        "coupling_ref_hz": (positive, False),
        "power_ref_w": (positive, False),
    },
    "feedback": {
        "center_hz": (positive, True),
        "bandwidth_hz": (positive, True),
        "order": (count, False),
        "delay_s": (non_negative, False),
        "phase": (phase_value, False),
        "damping_hz": (positive, False),
        "gain": (non_negative, False),
    },
    "sweep": {
        "damping_min_hz": (positive, False),
        "damping_max_hz": (positive, False),
        "points": (count, False),
        "cooperativities": (positive_list, False),
        "powers_w": (positive_list, False),
        "spectrum_span_hz": (positive, False),
        "spectrum_points": (count, False),
    },
    "fit": {
        "averages": (count, False),
        "objective": (objective_name, False),
        "span_hz": (positive, False),
        "bins": (count, False),
        "force_excess": (positive, False),
    },
    "calibration": {
        "k_cal": (positive, False),
        "power_min_w": (positive, False),
        "power_max_w": (positive, False),
        "points": (count, False),
        "relative_noise": (non_negative, False),
        "g0_hz": (positive, False),
        "temperature_k": (positive, False),
    },
    "heating": {
        "n_i": (positive, False),
        "n_f": (positive, False),
        "gamma_eff_per_s": (positive, False),
        "t_start_s": (finite, False),
        "t_stop_s": (positive, False),
        "dt_s": (positive, False),
        "relative_noise": (non_negative, False),
    },
    "ringdown": {
        "time_constants": (positive, False),
        "samples": (count, False),
        "relative_noise": (non_negative, False),
    },
    "noise": {
        "reference_power_w": (positive, False),
        "classical_ratio": (non_negative, False),
        "shot_slope": (positive, False),
        "offset": (non_negative, False),
        "powers_w": (positive_list, False),
        "relative_noise": (non_negative, False),
        "filter_kappa_hz": (positive, False),
        "filter_eta_c": (fraction, False),
        "frequency_hz": (positive, False),
        "c_yy": (non_negative, False),
        "detunings_hz": (finite_list, False),
    },
}

REQUIRED_SECTIONS = ("mechanics", "bath", "probe", "feedback")


def validate(raw: dict) -> list[str]:
    """Every violation in ``raw`` (empty list when valid)."""
    errors = []
    for section, body in raw.items():
        if section not in SCHEMA:
            errors.append(f"unknown section [{section}]")
            continue
        if not isinstance(body, dict):
            errors.append(f"[{section}] must be a table")
            continue
        for key, value in body.items():
            if key not in SCHEMA[section]:
                errors.append(f"unknown key '{key}' in [{section}]")
                continue
            problem = SCHEMA[section][key][0](value)
            if problem:
                errors.append(f"{section}.{key} {problem} (got {value!r})")
    for section in REQUIRED_SECTIONS:
        if section not in raw:
            errors.append(f"missing section [{section}]")
    for section, keys in SCHEMA.items():
        body = raw.get(section)
        if not isinstance(body, dict):
            continue
        for key, (_, required) in keys.items():
            if required and key not in body:
                errors.append(f"missing key '{key}' in [{section}]")
    mech = raw.get("mechanics")
    if isinstance(mech, dict) and ("linewidth_hz" in mech) == ("quality_factor" in mech):
        errors.append("[mechanics] needs exactly one of linewidth_hz, quality_factor")
    bath = raw.get("bath")
    if isinstance(bath, dict) and ("temperature_k" in bath) == ("n_th" in bath):
        errors.append("[bath] needs exactly one of temperature_k, n_th")
    probe = raw.get("probe")
    if isinstance(probe, dict) and ("cooperativity" in probe) == ("n_cav" in probe):
        errors.append("[probe] needs exactly one of cooperativity, n_cav")
    fb = raw.get("feedback", {})
    if isinstance(fb, dict) and "damping_hz" in fb and "gain" in fb:
        errors.append("[feedback] accepts at most one of damping_hz, gain")
    sweep = raw.get("sweep", {})
    if isinstance(sweep, dict) and _number(sweep.get("damping_min_hz")) and _number(sweep.get("damping_max_hz")):
        if sweep["damping_min_hz"] >= sweep["damping_max_hz"]:
            errors.append("sweep.damping_min_hz must be below sweep.damping_max_hz")
    return errors


def config_hash(raw: dict) -> str:
    canonical = json.dumps(raw, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


@dataclass(frozen=True)
class Config:
    raw: dict
    source: str = "<dict>"

    @property
    def hash(self) -> str:
        return config_hash(self.raw)

    def section(self, name: str) -> dict:
        return dict(self.raw.get(name, {}))

    def get(self, section: str, key: str, default: Any = None) -> Any:
        return self.raw.get(section, {}).get(key, default)

    def hz(self, section: str, key: str, default: Optional[float] = None) -> Optional[float]:
        """Angular value of a ``*_hz`` key."""
        value = self.get(section, key, default)
        return None if value is None else TWO_PI * float(value)

    # ---- model construction

    def mode(self) -> MechanicalMode:
        omega = self.hz("mechanics", "frequency_hz")
        if "linewidth_hz" in self.raw["mechanics"]:
            gamma = self.hz("mechanics", "linewidth_hz")
        else:
            gamma = omega / float(self.raw["mechanics"]["quality_factor"])
        return MechanicalMode(omega, gamma, float(self.raw["mechanics"]["mass_kg"]))

    def params(self, cooperativity: Optional[float] = None) -> SystemParams:
        bath_cfg = self.raw["bath"]
        bath = ThermalBath(temperature=bath_cfg.get("temperature_k"), n_th=bath_cfg.get("n_th"))
        probe_cfg = self.raw["probe"]
        probe = OpticalDrive(kappa=self.hz("probe", "kappa_hz"), g0=self.hz("probe", "g0_hz"),
                             n_cav=float(probe_cfg.get("n_cav", 0.0)), eta_c=float(probe_cfg.get("eta_c", 1.0)))
        aux = None
        aux_ratio = gamma_opt = shift = 0.0
        if "aux" in self.raw:
            a = self.raw["aux"]
            aux = OpticalDrive(kappa=self.hz("aux", "kappa_hz"), g0=self.hz("probe", "g0_hz"),
                               detuning=self.hz("aux", "detuning_hz"), eta_c=float(a.get("eta_c", 1.0)),
                               role="auxiliary")
            aux_ratio = float(a.get("force_noise_ratio", 0.0))
            gamma_opt = self.hz("aux", "gamma_opt_hz", 0.0)
            shift = self.hz("aux", "spring_shift_hz", 0.0)
        params = SystemParams(mode=self.mode(), bath=bath, probe=probe, eta_det=float(probe_cfg["eta_det"]),
                              aux=aux, aux_ratio=aux_ratio, gamma_opt=gamma_opt, spring_shift=shift)
        c_q = cooperativity if cooperativity is not None else probe_cfg.get("cooperativity")
        if c_q is not None:
            params = params.with_cooperativity(float(c_q))
        return params

    def controller(self, params: SystemParams, phase: Any = None) -> FeedbackController:
        """Main controller; the phase comes from ``phase`` (CLI) or the config (default ``cool``)."""
        fb = self.raw["feedback"]
        stage = BandpassStage(self.hz("feedback", "center_hz"), self.hz("feedback", "bandwidth_hz"),
                              int(fb.get("order", 2)))
        ctrl = FeedbackController(gain=0.0, phase=0.0, delay=float(fb.get("delay_s", 0.0)), main=stage)
        phase = fb.get("phase", "cool") if phase is None else phase
        if phase == "cool":
            ctrl = ctrl.with_phase(cooling_phase(params.loaded_mode, ctrl))
        else:
            ctrl = ctrl.with_phase(float(phase))
        if "gain" in fb:
            ctrl = ctrl.with_gain(float(fb["gain"]))
        elif "damping_hz" in fb:
            ctrl = ctrl.with_gain(gain_for_damping(params.mode, ctrl, self.hz("feedback", "damping_hz")))
        return ctrl


def from_dict(raw: dict, source: str = "<dict>") -> Config:
    errors = validate(raw)
    if errors:
        raise ConfigError(errors)
    return Config(raw=raw, source=source)


def load(path) -> Config:
    """Parse and validate a TOML file; raises :class:`ConfigError` listing every problem."""
    path = Path(path)
    try:
        with path.open("rb") as fh:
            raw = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError([f"config file not found: {path}"]) from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError([f"{path}: {exc}"]) from None
    return from_dict(raw, str(path))


def bundled_path(name: str = "paper.toml") -> Path:
    return Path(str(resources.files("fbcool") / "data" / name))


def load_bundled(name: str = "paper.toml") -> Config:
    return load(bundled_path(name))
