"""INI run configuration with a fixed schema and LIDARNAV_<SECTION>_<KEY> overrides.

Precedence, lowest first: schema defaults, the config file, environment
variables, command-line flags.  Unknown sections or keys are errors.
"""

from __future__ import annotations

import configparser
import os
from pathlib import Path

ENV_PREFIX = "LIDARNAV_"


def _bool(text: str) -> bool:
    t = text.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _str_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _int_list(text: str) -> list[int]:
    return [int(t) for t in _str_list(text)]


def _choice(*options):
    def parse(text: str) -> str:
        t = text.strip()
        if t not in options:
            raise ValueError(f"{t!r} not one of {options}")
        return t
    parse.__name__ = "one of " + "/".join(options)
    return parse


# section -> key -> (parser, default text)
SCHEMA: dict[str, dict[str, tuple]] = {
    "paths": {
        "dataset": (str, "data"),
        "checkpoint": (str, "model.sevw"),
        "out": (str, "out"),
    },
    "data": {
        "tracks": (_str_list, "train_a,train_b,train_c,train_d,train_a_cw,train_b_cw,train_c_cw,train_d_cw"),
        "frames": (int, "2400"),
        "seed": (int, "0"),
        "K": (int, "10"),
    },
    "train": {
        "epochs": (int, "8"),
        "batch_size": (int, "16"),
        "lr0": (float, "3e-3"),
        "weight_decay": (float, "1e-4"),
        "mode": (_choice("hybrid", "deterministic"), "hybrid"),
        "navigation": (_bool, "false"),
        "rotate": (_bool, "true"),
        "scale": (_bool, "true"),
        "d_recover": (float, "8"),
        "seed": (int, "0"),
    },
    "sim": {
        "tracks": (_str_list, "test"),
        "speed": (float, "5.0"),
        "dt": (float, "0.1"),
        "distance": (float, "0"),
        "cte_max": (float, "1.5"),
        "heading_max_deg": (float, "60"),
        "max_hold": (int, "3"),
        "speed_noise": (float, "0.1"),
    },
    "fusion": {
        "mode": (_choice("none", "uniform", "evidential", "all"), "all"),
        "literal_division": (_bool, "false"),
        "fuse_gamma": (_bool, "false"),
    },
    "failure": {
        "enabled": (_bool, "true"),
        "period": (float, "50"),
        "duration": (float, "5"),
        "kind": (_choice("empty_cloud", "frozen_cloud"), "empty_cloud"),
    },
    "run": {
        "seeds": (int, "5"),
        "seed": (int, "0"),
        "workers": (int, "1"),
        "recovery_trials": (int, "0"),
        "recovery_deg": (float, "20"),
    },
    "bench": {
        "sizes": (_int_list, "10000,50000,200000"),
        "channels": (int, "16"),
        "warmups": (int, "10"),
        "reps": (int, "30"),
        "seed": (int, "0"),
    },
    "gradcheck": {
        "points": (int, "1000"),
        "seed": (int, "0"),
    },
}


class ConfigError(ValueError):
    """The configuration does not match the schema."""


def _parse(section: str, key: str, text: str, origin: str):
    parser, _ = SCHEMA[section][key]
    try:
        value = parser(text)
    except ValueError as exc:
        raise ConfigError(f"{origin}: [{section}] {key} = {text!r}: {exc}") from None
    if parser in (int, float) and value < 0:
        raise ConfigError(f"{origin}: [{section}] {key} must be non-negative")
    return value


def load_config(path=None, environ=None) -> dict[str, dict]:
    """Resolve the full configuration as nested dicts of typed values."""
    environ = os.environ if environ is None else environ
    raw = {s: {k: (d, "default") for k, (_, d) in keys.items()} for s, keys in SCHEMA.items()}
    if path is not None:
        path = Path(path)
        cp = configparser.ConfigParser(interpolation=None)
        cp.optionxform = str
        try:
            with open(path) as f:
                cp.read_file(f)
        except (OSError, configparser.Error) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        for section in cp.sections():
            if section not in SCHEMA:
                raise ConfigError(f"{path}: unknown section [{section}]")
            for key, text in cp.items(section):
                if key not in SCHEMA[section]:
                    raise ConfigError(f"{path}: unknown key {key!r} in [{section}]")
                raw[section][key] = (text, str(path))
    lookup = {f"{ENV_PREFIX}{s.upper()}_{k.upper()}": (s, k) for s, keys in SCHEMA.items() for k in keys}
    for name, text in environ.items():
        if not name.startswith(ENV_PREFIX):
            continue
        if name not in lookup:
            raise ConfigError(f"unknown environment override {name}")
        s, k = lookup[name]
        raw[s][k] = (text, name)
    return {s: {k: _parse(s, k, text, origin) for k, (text, origin) in keys.items()}
            for s, keys in raw.items()}


def schema_text() -> str:
    """Human-readable schema, one ``[section] key = default  (type)`` line per key."""
    lines = []
    for s, keys in SCHEMA.items():
        for k, (parser, default) in keys.items():
            kind = getattr(parser, "__name__", str(parser)).lstrip("_")
            lines.append(f"[{s}] {k} = {default}  ({kind})")
    return "\n".join(lines)
