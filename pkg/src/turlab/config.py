"""Experiment configuration: a flat, typed ``key = value`` file or the same keys as JSON.

Example::

    # chain.cfg
    experiment = chain
    source = gaussian-beta
    theta_mean = 1.0
    delta_E = 10.0
    product = 1.0
    replicas = 20000
    seed = 7

Blank lines and ``#`` comments are ignored.  Strings may be quoted.  Unknown
keys and keys that do not belong to the chosen experiment are rejected.
A JSON run report is also accepted; its ``config`` section is used.
"""

from __future__ import annotations

import json
import math
import re
from pathlib import Path

BOOL_WORDS = {"true": True, "yes": True, "1": True, "false": False, "no": False, "0": False}


class ConfigError(ValueError):
    """Invalid configuration; the message names the offending field."""


# key -> (type, default); a default of ``None`` means "not set"
COMMON = {
    "experiment": (str, None),
    "seed": (int, 0),
    "k": (float, 1.0),
    "h": (float, 1.0),
    "c": (float, 1.0),
    "name": (str, None),
    "write_csv": (bool, False),
    "n_sigma": (float, 3.0),
    "n_boot": (int, 200),
}

MODEL_KEYS = {"model": (str, "ideal_gas"), "N": (int, 10), "d": (int, 3), "gap": (float, 1.0),
              "J": (float, 1.0), "field": (float, 0.0)}

EXPERIMENTS = {
    "tur-inference": {**MODEL_KEYS, "theta": (float, 1.0), "sample_size": (int, 10000),
                      "replicas": (int, 200), "variance_method": (str, "control-variate")},
    "tur-fluctuation": {"env": (str, "gaussian"), "theta": (float, 1.0), "E0": (float, 0.0),
                        "sigma": (float, 1.0), "N": (int, 2), "d": (int, 3), "nu": (float, 2.0),
                        "n_particles": (float, 3.0), "pressure": (float, 1.0), "sample_size": (int, 100000)},
    "clock-kinematics": {"m0": (float, 1.0), "v": (float, 0.6), "points": (int, 100), "tolerance": (float, 1e-12)},
    "chain": {"source": (str, "gaussian-beta"), "theta_mean": (float, 1.0), "delta_E": (float, 10.0),
              "product": (float, 1.0), "E_mean": (float, 0.0), "model": (str, None), "N": (int, 10),
              "d": (int, 3), "theta": (float, 1.0), "process": (str, "static"),
              "correlation_time": (float, 1.0), "horizon": (float, None), "replicas": (int, 20000),
              "points": (int, 60), "allow_invalid": (bool, False)},
    "gibbs-boltzmann": {"model": (str, "ideal_gas"), "N": (int, 2), "d": (int, 3), "theta": (float, 1.0),
                        "energy": (float, None), "tolerance": (float, 1e-6)},
    "taylor": {"mean_freq": (float, 1.0), "rel_spread": (float, 0.05), "replicas": (int, 10000),
               "C_max": (float, 2.0)},
    "exchange": {"m": (int, 2), "n": (int, 1), "E_total": (float, 2.0), "steps": (int, 1000000),
                 "exchange_rate": (float, 0.1), "record_every": (int, None), "tolerance": (float, 1e-12)},
}

ALL_KEYS = set(COMMON)
for _keys in EXPERIMENTS.values():
    ALL_KEYS.update(_keys)

NAME_RE = re.compile(r"^[A-Za-z0-9_.-]+$")


def _coerce(key, kind, value):
    if value is None:
        return None
    try:
        if kind is bool:
            if isinstance(value, bool):
                return value
            return BOOL_WORDS[str(value).strip().lower()]
        if kind is int:
            if isinstance(value, bool):
                raise ValueError
            if isinstance(value, float):
                if not value.is_integer():
                    raise ValueError
                return int(value)
            return int(str(value).strip())
        if kind is float:
            if isinstance(value, bool):
                raise ValueError
            out = float(value)
            if not math.isfinite(out):
                raise ValueError
            return out
        return str(value)
    except (ValueError, KeyError):
        raise ConfigError(f"field '{key}': cannot interpret {value!r} as {kind.__name__}") from None


def parse_text(text: str) -> dict:
    """Parse the flat ``key = value`` format into raw (string) values."""
    raw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if len(value) >= 2 and value[0] == value[-1] and value[0] in "'\"":
            value = value[1:-1]
        if key in raw:
            raise ConfigError(f"field '{key}': given twice")
        raw[key] = value
    return raw


def load(path) -> dict:
    """Read a config file (flat text or JSON) and return the raw mapping."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    stripped = text.lstrip()
    if stripped.startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON config: {exc}") from None
        if isinstance(data, dict) and "config" in data and isinstance(data["config"], dict):
            data = data["config"]
        if not isinstance(data, dict):
            raise ConfigError("JSON config must be an object")
        return {k: v for k, v in data.items() if v is not None}
    return parse_text(text)


def normalize(raw: dict) -> dict:
    """Validate keys and types and fill in defaults for the chosen experiment."""
    unknown = sorted(set(raw) - ALL_KEYS)
    if unknown:
        raise ConfigError(f"field '{unknown[0]}': unknown key")
    experiment = raw.get("experiment")
    if experiment is None:
        raise ConfigError("field 'experiment': required")
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"field 'experiment': must be one of {sorted(EXPERIMENTS)}")
    schema = {**COMMON, **EXPERIMENTS[experiment]}
    stray = sorted(set(raw) - set(schema))
    if stray:
        raise ConfigError(f"field '{stray[0]}': not used by experiment '{experiment}'")
    cfg = {key: _coerce(key, kind, raw.get(key, default)) for key, (kind, default) in schema.items()}
    _check_values(cfg)
    return cfg


def _positive(cfg, *keys):
    for key in keys:
        if cfg.get(key) is not None and not cfg[key] > 0:
            raise ConfigError(f"field '{key}': must be positive (got {cfg[key]})")


def _check_values(cfg):
    from .ensembles import MODELS

    _positive(cfg, "k", "h", "c", "n_boot", "n_sigma")
    if cfg["name"] is not None and not NAME_RE.match(cfg["name"]):
        raise ConfigError("field 'name': only letters, digits, '.', '_' and '-' are allowed")
    if cfg["seed"] < 0:
        raise ConfigError("field 'seed': must be non-negative")
    exp = cfg["experiment"]
    if exp == "tur-inference":
        _check_model(cfg, MODELS)
        _positive(cfg, "theta", "sample_size")
        if cfg["replicas"] < 2:
            raise ConfigError("field 'replicas': need at least 2")
        if cfg["variance_method"] not in ("control-variate", "raw"):
            raise ConfigError("field 'variance_method': must be 'control-variate' or 'raw'")
    elif exp == "tur-fluctuation":
        if cfg["env"] not in ("gaussian", "ideal_gas", "power_law", "volume"):
            raise ConfigError("field 'env': must be gaussian, ideal_gas, power_law or volume")
        _positive(cfg, "theta", "sigma", "N", "d", "pressure")
        if cfg["sample_size"] < 1000:
            raise ConfigError("field 'sample_size': need at least 1000")
        if cfg["env"] in ("power_law", "volume") and not cfg["nu"] > -1:
            raise ConfigError("field 'nu': must exceed -1")
    elif exp == "clock-kinematics":
        _positive(cfg, "m0", "tolerance")
        if not abs(cfg["v"]) < cfg["c"]:
            raise ConfigError("field 'v': must satisfy |v| < c")
        if cfg["points"] < 2:
            raise ConfigError("field 'points': need at least 2")
    elif exp == "chain":
        if cfg["source"] == "gaussian-beta":
            _positive(cfg, "theta_mean", "delta_E", "product")
        elif cfg["source"] == "model":
            if cfg["model"] not in ("ideal_gas", "harmonic"):
                raise ConfigError("field 'model': chain needs a continuous model (ideal_gas or harmonic)")
            _check_model(cfg, MODELS)
            _positive(cfg, "theta")
        else:
            raise ConfigError("field 'source': must be 'gaussian-beta' or 'model'")
        if cfg["process"] not in ("static", "mean-reverting"):
            raise ConfigError("field 'process': must be 'static' or 'mean-reverting'")
        _positive(cfg, "correlation_time", "horizon")
        if cfg["replicas"] < 100:
            raise ConfigError("field 'replicas': need at least 100")
        if cfg["points"] < 2:
            raise ConfigError("field 'points': need at least 2")
    elif exp == "gibbs-boltzmann":
        if cfg["model"] not in ("ideal_gas", "harmonic"):
            raise ConfigError("field 'model': must be ideal_gas or harmonic")
        _check_model(cfg, MODELS)
        _positive(cfg, "theta", "energy", "tolerance")
    elif exp == "taylor":
        _positive(cfg, "mean_freq", "rel_spread", "C_max")
        if cfg["rel_spread"] > 0.2:
            raise ConfigError("field 'rel_spread': exceeds the validity guard 0.2")
        if cfg["replicas"] < 100:
            raise ConfigError("field 'replicas': need at least 100")
    elif exp == "exchange":
        if cfg["m"] < 2:
            raise ConfigError("field 'm': need at least 2 subsystems")
        _positive(cfg, "n", "E_total", "steps", "tolerance", "record_every")
        if not 0 < cfg["exchange_rate"] <= 1:
            raise ConfigError("field 'exchange_rate': must lie in (0, 1]")


def model_params(cfg) -> dict:
    name = cfg["model"]
    if name == "ideal_gas":
        return {"N": cfg["N"], "d": cfg["d"]}
    if name == "harmonic":
        return {"N": cfg["N"]}
    if name == "two_level":
        return {"N": cfg["N"], "gap": cfg["gap"]}
    if name == "ising":
        return {"N": cfg["N"], "J": cfg["J"], "field": cfg["field"]}
    raise ConfigError(f"field 'model': unknown model {name!r}")


def _check_model(cfg, models):
    if cfg["model"] not in models:
        raise ConfigError(f"field 'model': must be one of {sorted(models)}")
    from .ensembles import make_model

    params = model_params(cfg)
    try:
        make_model(cfg["model"], **params)
    except (ValueError, TypeError) as exc:
        named = [key for key in params if key in str(exc)]
        raise ConfigError(f"field '{named[0] if named else 'model'}': {exc}") from None
    theta = cfg.get("theta")
    if theta is not None and not theta > 0:
        raise ConfigError(f"field 'theta': must be positive (got {theta})")
