"""Run configuration: a key = value text document with a fixed schema.

Lines are ``key = value``; ``#`` starts a comment. Lists are comma
separated and grids may be written ``start:stop:count``. Angle-valued keys
take radians, or degrees with an explicit ``deg`` suffix (``30deg``).
Values are overridden by ``CVCLUSTER_<KEY>`` environment variables and
then by command-line flags.
"""

from __future__ import annotations

import os
import re
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .errors import ConfigError

ENV_PREFIX = "CVCLUSTER_"
EXPERIMENTS = ("nullifiers", "tomography-single", "tomography-cz", "circuit-encoder", "noise-sweep", "calibrate-D")
SINGLE_GATES = ("rotation", "shear", "squeeze", "identity")
_NUMBER = re.compile(r"^\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)\s*(deg|rad)?\s*$")


def _number(text: str, angle: bool = False) -> float:
    m = _NUMBER.match(text)
    if not m:
        raise ConfigError(f"not a number: {text!r}")
    value, unit = float(m.group(1)), m.group(2)
    if unit and not angle:
        raise ConfigError(f"unit suffix {unit!r} is only allowed on angle values: {text!r}")
    return float(np.deg2rad(value)) if unit == "deg" else value


def parse_float(text: str) -> float:
    return _number(text)


def parse_angle(text: str) -> float:
    return _number(text, angle=True)


def parse_int(text: str) -> int:
    try:
        return int(text.strip())
    except ValueError:
        raise ConfigError(f"not an integer: {text!r}") from None


def parse_bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


def parse_list(item: Callable[[str], Any]) -> Callable[[str], tuple]:
    def parse(text: str) -> tuple:
        text = text.strip()
        if text.count(":") == 2 and "," not in text:
            a, b, n = text.split(":")
            count = parse_int(n)
            if count < 1:
                raise ConfigError(f"grid count must be positive: {text!r}")
            lo, hi = item(a), item(b)
            return tuple(float(v) for v in np.linspace(lo, hi, count))
        parts = [p for p in (s.strip() for s in text.split(",")) if p]
        if not parts:
            raise ConfigError("empty list")
        return tuple(item(p) for p in parts)

    return parse


def parse_str(text: str) -> str:
    return text.strip()


@dataclass(frozen=True)
class Field:
    parse: Callable[[str], Any]
    default: Any
    help: str
    choices: tuple | None = None


SCHEMA: dict[str, Field] = {
    "experiment": Field(parse_str, None, "experiment to run", EXPERIMENTS),
    "N": Field(parse_int, 12, "modes per cylinder circumference (even, >= 4)"),
    "K": Field(parse_int, None, "temporal window; default depends on the experiment"),
    "r": Field(parse_float, 1.0, "squeezing parameter of the pure sources"),
    "edge_convention": Field(parse_str, "cluster_type", "nullifier edge weight", ("cluster_type", "approximate")),
    "source": Field(parse_str, "pure", "pure r sources or OPO temporal-mode variances", ("pure", "opo")),
    "squeezing_db": Field(parse_float, -4.4, "OPO calibration target for the squeezed quadrature [dB]"),
    "opo_pump": Field(parse_float, None, "OPO pump P/P_thr; overrides calibration when set"),
    "opo_eta": Field(parse_float, 0.777, "overall efficiency"),
    "opo_gamma": Field(parse_float, 2 * np.pi * 7.7e6, "OPO decay rate [rad/s]"),
    "opo_kappa": Field(parse_float, 2 * np.pi * 2.0e6, "mode-function width [rad/s]"),
    "opo_tau": Field(parse_float, 247e-9, "temporal mode duration [s]"),
    "phase_jitter": Field(parse_angle, 0.0, "std of Gaussian detector angle noise (radians or deg suffix)"),
    "jitter_samples": Field(parse_int, 200, "Monte-Carlo samples of angle noise per pump value"),
    "pump_grid": Field(parse_list(parse_float), tuple(np.linspace(0, 0.9, 10)), "pump values for noise-sweep"),
    "mode": Field(parse_str, "det", "execution mode", ("det", "mc")),
    "seed": Field(parse_int, 0, "unsigned 64-bit seed"),
    "shots": Field(parse_int, 10_000, "shots per readout quadrant in mc mode"),
    "workers": Field(parse_int, 1, "worker threads for sampling"),
    "gate": Field(parse_str, "rotation", "single-mode gate kind", SINGLE_GATES),
    "values": Field(parse_list(parse_angle), None, "gate parameter grid (angles accept deg suffix)"),
    "param": Field(parse_angle, 0.3, "gate parameter for calibrate-D"),
    "wire": Field(parse_int, 0, "wire for calibrate-D"),
    "wires": Field(parse_list(parse_int), (0, 1), "wires for tomography (one even, one odd by default)"),
    "g_values": Field(parse_list(parse_float), (0.0, 0.5, -0.5, 1.0, -1.0), "CZ coupling grid"),
    "r_values": Field(parse_list(parse_float), (0.1, 0.25, 0.5, 1.0, 2.0), "squeezing grid for nullifiers"),
    "probes_per_parity": Field(parse_int, 2, "untouched wire segments read per parity"),
    "figures": Field(parse_bool, True, "render figures next to the tables"),
    "out": Field(parse_str, "results", "output directory"),
}

DEFAULT_VALUES = {
    "rotation": tuple(float(v) for v in np.linspace(-np.pi / 2, np.pi / 2, 7)),
    "shear": tuple(float(v) for v in np.linspace(-1.5, 1.5, 7)),
    "squeeze": tuple(float(v) for v in np.linspace(-0.6, 0.6, 7)),
    "identity": (0.0,),
}
DEFAULT_K = {
    "nullifiers": 228,
    "tomography-single": 88,
    "tomography-cz": 88,
    "circuit-encoder": 108,
    "noise-sweep": 88,
    "calibrate-D": 88,
}


@dataclass(frozen=True)
class RunConfig:
    settings: dict = field(default_factory=dict)
    sources: dict = field(default_factory=dict)

    def __getattr__(self, name):
        try:
            return self.__dict__["settings"][name]
        except KeyError:
            raise AttributeError(name) from None

    def snapshot(self) -> dict:
        """JSON-ready copy of every setting."""
        return {k: list(v) if isinstance(v, tuple) else v for k, v in sorted(self.settings.items())}


def parse_text(text: str, origin: str = "<config>") -> dict:
    """Raw key/value pairs; unknown keys and duplicates are errors."""
    raw = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{origin}:{n}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(f"{origin}:{n}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"{origin}:{n}: duplicate key {key!r}")
        raw[key] = value
    return raw


def env_overrides(environ=None) -> dict:
    environ = os.environ if environ is None else environ
    raw = {}
    for key in SCHEMA:
        name = ENV_PREFIX + key.upper().replace("-", "_")
        if name in environ:
            raw[key] = environ[name]
    return raw


def build_config(file_values: dict | None = None, env_values: dict | None = None, overrides: dict | None = None) -> RunConfig:
    """Merge defaults < file < environment < flags and validate."""
    values = {k: f.default for k, f in SCHEMA.items()}
    sources = {k: "default" for k in SCHEMA}
    for origin, raw in (("file", file_values or {}), ("env", env_values or {})):
        for key, text in raw.items():
            if key not in SCHEMA:
                raise ConfigError(f"unknown key {key!r} ({origin})")
            try:
                values[key] = SCHEMA[key].parse(text)
            except ConfigError as exc:
                raise ConfigError(f"{key}: {exc} ({origin})") from None
            sources[key] = origin
    for key, value in (overrides or {}).items():
        if key not in SCHEMA:
            raise ConfigError(f"unknown key {key!r} (flag)")
        if value is not None:
            values[key] = value
            sources[key] = "flag"
    validate(values)
    if values["K"] is None:
        values["K"] = DEFAULT_K[values["experiment"]]
    if values["values"] is None:
        values["values"] = DEFAULT_VALUES[values["gate"]]
    return RunConfig(values, sources)


def validate(values: dict):
    for key, f in SCHEMA.items():
        if f.choices and values[key] is not None and values[key] not in f.choices:
            raise ConfigError(f"{key} must be one of {f.choices}, got {values[key]!r}")
    if values["experiment"] is None:
        raise ConfigError("experiment is required")
    if values["shots"] < 1:
        raise ConfigError("shots must be positive")
    if values["workers"] < 1:
        raise ConfigError("workers must be positive")
    if not 0 <= values["seed"] < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    if values["jitter_samples"] < 1:
        raise ConfigError("jitter_samples must be positive")
    if values["phase_jitter"] < 0:
        raise ConfigError("phase_jitter must be nonnegative")
    if any(not 0 <= p < 1 for p in values["pump_grid"]):
        raise ConfigError("pump_grid values must lie in [0, 1)")
    if values["opo_pump"] is not None and not 0 <= values["opo_pump"] < 1:
        raise ConfigError("opo_pump must lie in [0, 1)")
    if any(w < 0 for w in values["wires"]):
        raise ConfigError("wires must be nonnegative")


def load_config(path=None, environ=None, overrides=None) -> RunConfig:
    file_values = {}
    if path is not None:
        try:
            with open(path) as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        file_values = parse_text(text, str(path))
    return build_config(file_values, env_overrides(environ), overrides)


def schema_help() -> str:
    lines = []
    for key, f in SCHEMA.items():
        default = f.default
        if isinstance(default, tuple):
            default = ", ".join(f"{v:g}" for v in default)
        choice = f" {{{'|'.join(f.choices)}}}" if f.choices else ""
        lines.append(f"  {key:<18}{f.help}{choice} [default: {default}]")
    return "\n".join(lines)
