"""Run configuration: JSON text, defaults, validation, environment overrides.

Any key can be overridden from the environment as ``KRFLAB__<section>__<key>``
(or ``KRFLAB__<key>`` for top-level keys).  Override values are parsed as
JSON when possible and taken as plain strings otherwise.
"""

from __future__ import annotations

import copy
import difflib
import json
import os
from dataclasses import dataclass
from typing import Any, Callable, Mapping

from .potentials import PRESETS

ENV_PREFIX = "KRFLAB__"
POTENTIAL_KINDS = ("legendre_coeffs", "radial_poly", "random") + PRESETS
SUITES = ("geometry", "functionals", "spectrum", "flow", "flow_cpn", "evolution", "ma_path")


class ConfigError(ValueError):
    """Invalid configuration; ``field`` is the dotted key at fault (may be empty)."""

    def __init__(self, message: str, field: str = ""):
        super().__init__(f"{field}: {message}" if field else message)
        self.field = field


# ---------------------------------------------------------------------------
# field checks
# ---------------------------------------------------------------------------

def _number(value, key):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"expected a number, got {value!r}", key)
    return float(value)


def _integer(value, key):
    if isinstance(value, bool) or not isinstance(value, int):
        if isinstance(value, float) and value.is_integer():
            return int(value)
        raise ConfigError(f"expected an integer, got {value!r}", key)
    return int(value)


def positive(value, key):
    v = _number(value, key)
    if not v > 0:
        raise ConfigError(f"must be positive, got {value!r}", key)
    return v


def nonnegative(value, key):
    v = _number(value, key)
    if not v >= 0:
        raise ConfigError(f"must be non-negative, got {value!r}", key)
    return v


def int_at_least(lo: int) -> Callable:
    def check(value, key):
        v = _integer(value, key)
        if v < lo:
            raise ConfigError(f"must be an integer >= {lo}, got {value!r}", key)
        return v
    return check


def boolean(value, key):
    if not isinstance(value, bool):
        raise ConfigError(f"expected true or false, got {value!r}", key)
    return value


def text(value, key):
    if not isinstance(value, str) or not value:
        raise ConfigError(f"expected a non-empty string, got {value!r}", key)
    return value


def one_of(*choices) -> Callable:
    def check(value, key):
        if value not in choices:
            hint = difflib.get_close_matches(str(value), [str(c) for c in choices], n=1)
            extra = f"; did you mean {hint[0]!r}?" if hint else ""
            raise ConfigError(f"must be one of {list(choices)}, got {value!r}{extra}", key)
        return value
    return check


def optional(check: Callable) -> Callable:
    def wrapped(value, key):
        return None if value is None else check(value, key)
    return wrapped


def float_list(value, key):
    if not isinstance(value, list) or not value:
        raise ConfigError("expected a non-empty list of numbers", key)
    return [_number(v, f"{key}[{i}]") for i, v in enumerate(value)]


def seed_value(value, key):
    v = _integer(value, key)
    if not 0 <= v < 2 ** 64:
        raise ConfigError("seed must be an unsigned 64-bit integer", key)
    return v


def seed_list(value, key):
    if not isinstance(value, list) or not value:
        raise ConfigError("expected a non-empty list of seeds", key)
    return [seed_value(v, f"{key}[{i}]") for i, v in enumerate(value)]


def suite_list(value, key):
    if not isinstance(value, list) or not value:
        raise ConfigError("expected a non-empty list of suite names", key)
    pick = one_of(*SUITES)
    return [pick(v, f"{key}[{i}]") for i, v in enumerate(value)]


def tolerance_map(value, key):
    if not isinstance(value, dict):
        raise ConfigError("expected a mapping from check name to tolerance", key)
    return {str(k): positive(v, f"{key}.{k}") for k, v in sorted(value.items())}


# ---------------------------------------------------------------------------
# schema: section -> key -> (default, check)
# ---------------------------------------------------------------------------

SCHEMA: dict[str, dict[str, tuple[Any, Callable]]] = {
    "geometry": {
        "kind": ("S2Zonal", one_of("S2Zonal", "CPnRadial")),
        "n": (1, int_at_least(1)),
        "grid_size": (64, int_at_least(8)),
    },
    "initial_potential": {
        "kind": ("p2", one_of(*POTENTIAL_KINDS)),
        "coefficients": (None, optional(float_list)),
        "seed": (None, optional(seed_value)),
        "amplitude": (None, optional(_number)),
        "order": (6, int_at_least(1)),
        "density_floor": (0.1, positive),
    },
    "flow": {
        "t_max": (40.0, positive),
        "stop_tol": (1e-5, nonnegative),
        "dt_init": (1e-4, positive),
        "dt_min": (1e-9, positive),
        "dt_max": (0.05, positive),
        "tol": (1e-11, positive),
        "sample_dt": (0.05, positive),
        "monitor_stride": (20, int_at_least(1)),
        "checkpoint_stride": (0, int_at_least(0)),
        "path_points": (24, int_at_least(1)),
    },
    "ma_path": {
        "steps": (21, int_at_least(2)),
    },
    "spectrum": {
        "modes": (4, int_at_least(1)),
        "tol": (1e-8, positive),
    },
    "output": {
        "directory": ("krflab_out", text),
        "emit_csv": (True, boolean),
        "emit_json": (True, boolean),
        "emit_svg": (True, boolean),
    },
    "verify": {
        "suites": (list(SUITES), suite_list),
        "seeds": (None, optional(seed_list)),
        "random_count": (20, int_at_least(1)),
        "tolerances": ({}, tolerance_map),
    },
}
TOP_LEVEL: dict[str, tuple[Any, Callable]] = {
    "seed": (0, seed_value),
    "threads": (1, int_at_least(1)),
}


@dataclass(frozen=True)
class RunConfig:
    """Validated configuration; ``data`` holds every section with defaults filled."""

    data: Mapping[str, Any]

    def __getitem__(self, section: str):
        return self.data[section]

    @property
    def seed(self) -> int:
        return self.data["seed"]

    @property
    def threads(self) -> int:
        return self.data["threads"]

    @property
    def potential_seed(self) -> int:
        s = self.data["initial_potential"]["seed"]
        return self.seed if s is None else s

    @property
    def verify_seeds(self) -> list[int]:
        v = self.data["verify"]
        if v["seeds"] is not None:
            return list(v["seeds"])
        return [(self.seed + i) % 2 ** 64 for i in range(v["random_count"])]

    def tolerance(self, name: str, default: float) -> float:
        return float(self.data["verify"]["tolerances"].get(name, default))

    def to_dict(self) -> dict:
        return copy.deepcopy(dict(self.data))


def default_dict() -> dict:
    out: dict[str, Any] = {k: copy.deepcopy(v[0]) for k, v in TOP_LEVEL.items()}
    for section, keys in SCHEMA.items():
        out[section] = {k: copy.deepcopy(v[0]) for k, v in keys.items()}
    return out


def _unknown(key: str, known, where: str) -> ConfigError:
    hint = difflib.get_close_matches(key, list(known), n=1, cutoff=0.6)
    extra = f"; did you mean {hint[0]!r}?" if hint else ""
    return ConfigError(f"unknown key {key!r}{extra}", f"{where}.{key}" if where else key)


def _merge(raw: Mapping, base: dict) -> dict:
    if not isinstance(raw, Mapping):
        raise ConfigError("top level must be a JSON object")
    out = copy.deepcopy(base)
    for key, value in raw.items():
        if key in TOP_LEVEL:
            out[key] = value
        elif key in SCHEMA:
            if not isinstance(value, Mapping):
                raise ConfigError("section must be a JSON object", key)
            for sub, v in value.items():
                if sub not in SCHEMA[key]:
                    raise _unknown(sub, SCHEMA[key], key)
                out[key][sub] = v
        else:
            raise _unknown(key, list(TOP_LEVEL) + list(SCHEMA), "")
    return out


def _validate(data: dict) -> dict:
    for key, (_, check) in TOP_LEVEL.items():
        data[key] = check(data[key], key)
    for section, keys in SCHEMA.items():
        for key, (_, check) in keys.items():
            data[section][key] = check(data[section][key], f"{section}.{key}")
    g = data["geometry"]
    if g["kind"] == "S2Zonal" and g["n"] != 1:
        raise ConfigError("S2Zonal geometry has n = 1", "geometry.n")
    f = data["flow"]
    if f["dt_min"] > f["dt_init"]:
        raise ConfigError("must not exceed flow.dt_init", "flow.dt_min")
    if f["dt_init"] > f["dt_max"]:
        raise ConfigError("must not exceed flow.dt_max", "flow.dt_init")
    p = data["initial_potential"]
    if p["kind"] in ("legendre_coeffs", "radial_poly") and p["coefficients"] is None:
        raise ConfigError(f"required when kind is {p['kind']!r}", "initial_potential.coefficients")
    if data["spectrum"]["modes"] * 2 >= g["grid_size"]:
        raise ConfigError("must be below grid_size / 2", "spectrum.modes")
    return data


def env_overrides(environ: Mapping[str, str] | None = None) -> dict:
    """Nested override mapping from ``KRFLAB__section__key`` variables, sorted by name."""
    environ = os.environ if environ is None else environ
    out: dict[str, Any] = {}
    for name in sorted(environ):
        if not name.startswith(ENV_PREFIX):
            continue
        parts = name[len(ENV_PREFIX):].split("__")
        raw = environ[name]
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        if len(parts) == 1 and parts[0]:
            out[parts[0]] = value
        elif len(parts) == 2 and all(parts):
            out.setdefault(parts[0], {})
            if not isinstance(out[parts[0]], dict):
                raise ConfigError("conflicting environment overrides", parts[0])
            out[parts[0]][parts[1]] = value
        else:
            raise ConfigError(f"malformed override variable {name!r}; use {ENV_PREFIX}section__key")
    return out


def parse_config(text: str = "", environ: Mapping[str, str] | None = None,
                 overrides: Mapping | None = None) -> RunConfig:
    """Parse JSON text into a validated RunConfig.

    Precedence, lowest first: defaults, the text, environment variables,
    then ``overrides`` (used for command-line flags).
    """
    raw: Any = {}
    if text and text.strip():
        try:
            raw = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"JSON syntax error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from None
    data = _merge(raw, default_dict())
    data = _merge(env_overrides({} if environ is None else environ), data)
    if overrides:
        data = _merge(overrides, data)
    return RunConfig(data=_validate(data))


def load_config(path: str | None, environ: Mapping[str, str] | None = None,
                overrides: Mapping | None = None) -> RunConfig:
    text = ""
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path!r}: {exc.strerror}") from None
    return parse_config(text, environ=environ, overrides=overrides)
