"""Run configuration: a TOML file with [lattice], [physics], [numerics] and [output] tables.

Unknown keys, wrong types and missing scenario-required keys raise
:class:`ConfigError` naming the key path.  Parsing fills every default so the
effective configuration can be echoed and hashed.
"""
from __future__ import annotations

import copy
import hashlib
import math
import sys

import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

SCENARIOS = ("kernel-check", "grid-equivalence", "free-field", "correlator",
             "divergence-scan", "ensemble")


class ConfigError(ValueError):
    pass


# (type, default); None default means "no default"
SCHEMA = {
    "lattice": {
        "dims": ("int_list", [1]),
        "spacing": ("float", 1.0),
    },
    "physics": {
        "m": ("float", 1.0),
        "lambda3": ("float", 0.0),
        "lambda4": ("float", 0.0),
        "eta": ("float", 1.0),
        "xi": ("float", 0.125),
    },
    "numerics": {
        "dt": ("float", 1e-3),
        "T": ("float", 1.0),
        "points": ("int", 201),
        "L": ("float", 8.0),
        "n": ("int", None),
        "steps": ("int", None),
        "x0": ("float", 1.0),
        "record_every": ("int", 10),
        "samples": ("int", 100000),
        "perturbations": ("int", 100),
        "r": ("float_list", [0.5, 1.0, 2.0, 3.0]),
        "lattice_compare": ("bool", True),
        "size": ("float", 4.0),
        "spacings": ("float_list", [0.5, 0.25, 0.125]),
        "drift": ("str", "gaussian"),
        "checkpoints": ("int", 10),
    },
    "output": {
        "path": ("str", ""),
        "format": ("str", "csv"),
    },
}

# scenario-specific defaults that replace the generic ones above
SCENARIO_DEFAULTS = {
    "correlator": {"lattice.dims": [32, 32, 32], "lattice.spacing": 0.25},
}

REQUIRED = {
    "kernel-check": [],
    "grid-equivalence": [],
    "free-field": ["lattice.dims", "lattice.spacing", "physics.m"],
    "correlator": ["physics.m"],
    "divergence-scan": [],
    "ensemble": ["numerics.n"],
}

# keys each scenario reads; shown by ``entrofield scenarios``
USES = {
    "kernel-check": ["lattice.dims", "physics.eta", "numerics.dt", "numerics.samples",
                     "numerics.perturbations"],
    "grid-equivalence": ["lattice.dims", "lattice.spacing", "physics.m", "physics.lambda3",
                         "physics.lambda4", "physics.eta", "physics.xi", "numerics.dt",
                         "numerics.T", "numerics.points", "numerics.L", "numerics.x0",
                         "numerics.record_every"],
    "free-field": ["lattice.dims", "lattice.spacing", "physics.m", "physics.xi"],
    "correlator": ["lattice.dims", "lattice.spacing", "physics.m", "numerics.r",
                   "numerics.lattice_compare"],
    "divergence-scan": ["physics.m", "physics.xi", "numerics.size", "numerics.spacings"],
    "ensemble": ["lattice.dims", "physics.m", "physics.eta", "physics.xi", "numerics.n",
                 "numerics.steps", "numerics.dt", "numerics.points", "numerics.L",
                 "numerics.x0", "numerics.drift", "numerics.checkpoints"],
}

DRIFTS = ("none", "grid", "gaussian")
FORMATS = ("csv", "json")


def _coerce(path: str, kind: str, value):
    def bad():
        return ConfigError(f"{path}: expected {kind.replace('_', ' ')}, got {type(value).__name__} {value!r}")

    if kind == "float":
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise bad()
        value = float(value)
        if not math.isfinite(value):
            raise ConfigError(f"{path}: value must be finite")
        return value
    if kind == "int":
        if isinstance(value, bool) or not isinstance(value, int):
            raise bad()
        return value
    if kind == "bool":
        if not isinstance(value, bool):
            raise bad()
        return value
    if kind == "str":
        if not isinstance(value, str):
            raise bad()
        return value
    if kind in ("int_list", "float_list"):
        if not isinstance(value, list) or not value:
            raise bad()
        return [_coerce(f"{path}[{i}]", kind[:-5], v) for i, v in enumerate(value)]
    raise AssertionError(kind)


def normalize(raw: dict) -> dict:
    """Validate a parsed TOML document and fill defaults."""
    raw = copy.deepcopy(raw)
    cfg = {}
    scenario = raw.pop("scenario", None)
    if scenario is None:
        raise ConfigError("scenario: missing required key")
    if scenario not in SCENARIOS:
        raise ConfigError(f"scenario: unknown scenario {scenario!r}; choose from {', '.join(SCENARIOS)}")
    cfg["scenario"] = scenario
    seed = raw.pop("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError(f"seed: expected unsigned 64-bit integer, got {seed!r}")
    cfg["seed"] = seed

    given = set()
    for section, keys in SCHEMA.items():
        table = raw.pop(section, {})
        if not isinstance(table, dict):
            raise ConfigError(f"{section}: expected a table")
        out = {}
        for key, value in table.items():
            if key not in keys:
                raise ConfigError(f"{section}.{key}: unknown key")
            out[key] = _coerce(f"{section}.{key}", keys[key][0], value)
            given.add(f"{section}.{key}")
        special = SCENARIO_DEFAULTS.get(scenario, {})
        for key, (_, default) in keys.items():
            default = special.get(f"{section}.{key}", default)
            if key not in out and default is not None:
                out[key] = copy.deepcopy(default)
        cfg[section] = out
    if raw:
        raise ConfigError(f"{sorted(raw)[0]}: unknown key")

    for path in REQUIRED[scenario]:
        key = path.split(".")[1]
        if path not in given:
            raise ConfigError(f"{path}: required for scenario {scenario} (missing key {key!r})")
    _check_values(cfg)
    return cfg


def _check_values(cfg: dict):
    lat, phys, num, out = cfg["lattice"], cfg["physics"], cfg["numerics"], cfg["output"]
    if any(d < 1 for d in lat["dims"]) or len(lat["dims"]) > 3:
        raise ConfigError("lattice.dims: 1-3 axes, each >= 1")
    for path, v in [("lattice.spacing", lat["spacing"]), ("physics.eta", phys["eta"]),
                    ("physics.xi", phys["xi"]), ("numerics.dt", num["dt"]),
                    ("numerics.T", num["T"]), ("numerics.L", num["L"]),
                    ("numerics.size", num["size"])]:
        if not v > 0:
            raise ConfigError(f"{path}: must be positive")
    if phys["m"] < 0:
        raise ConfigError("physics.m: must be >= 0")
    if phys["lambda4"] < 0:
        raise ConfigError("physics.lambda4: must be >= 0")
    if "n" in num and num["n"] < 1:
        raise ConfigError("numerics.n: must be >= 1")
    if "steps" in num and num["steps"] < 0:
        raise ConfigError("numerics.steps: must be >= 0")
    if num["drift"] not in DRIFTS:
        raise ConfigError(f"numerics.drift: choose from {', '.join(DRIFTS)}")
    if out["format"] not in FORMATS:
        raise ConfigError(f"output.format: choose from {', '.join(FORMATS)}")
    if any(r <= 0 for r in num["r"]) or any(a <= 0 for a in num["spacings"]):
        raise ConfigError("numerics.r / numerics.spacings: entries must be positive")


def syntax_error(exc: Exception) -> ConfigError:
    msg = str(exc)
    low = msg.lower()
    if "overwrite" in low or ("declare" in low and "twice" in low):
        return ConfigError(f"duplicate key: {msg}")
    return ConfigError(f"invalid config syntax: {msg}")


def load_toml(text: str) -> dict:
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise syntax_error(exc) from None


def parse_config(text: str) -> dict:
    return normalize(load_toml(text))


def parse_value(text: str):
    """A flag value read as a TOML literal, falling back to a bare string."""
    try:
        return tomllib.loads(f"v = {text}")["v"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(raw: dict, overrides: dict) -> dict:
    """Overrides map ``section.key`` (or top-level ``seed``/``scenario``) to values."""
    raw = copy.deepcopy(raw)
    for path, value in overrides.items():
        parts = path.split(".")
        if len(parts) == 1:
            raw[parts[0]] = value
        elif len(parts) == 2:
            table = raw.setdefault(parts[0], {})
            if not isinstance(table, dict):
                raise ConfigError(f"{parts[0]}: expected a table")
            table[parts[1]] = value
        else:
            raise ConfigError(f"{path}: overrides take the form section.key=value")
    return raw


def dump_config(cfg: dict) -> str:
    """Canonical TOML text of a normalized config."""
    top = {"scenario": cfg["scenario"], "seed": cfg["seed"]}
    tables = {s: dict(sorted(cfg[s].items())) for s in SCHEMA}
    return tomli_w.dumps({**top, **tables})


def provenance_text(cfg: dict) -> str:
    """Canonical text of everything that affects results (the [output] table does not)."""
    body = {k: v for k, v in cfg.items() if k != "output"}
    return dump_config({**body, "output": {}}).replace("[output]\n", "").rstrip() + "\n"


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(provenance_text(cfg).encode()).hexdigest()


def hbar_of(cfg: dict) -> float:
    """ħ = (8ξ)^{1/2}."""
    return math.sqrt(8 * cfg["physics"]["xi"])
