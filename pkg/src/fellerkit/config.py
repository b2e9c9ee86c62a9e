"""Validating loader for experiment configs and builders for the objects they describe."""

from __future__ import annotations

import json
from importlib import resources

import numpy as np
from jsonschema import Draft202012Validator
from jsonschema.exceptions import best_match

from .errors import ConfigError, InputError
from .geometry import MetricSpec
from .measure import FiniteMeasure, function_from_dict
from .system import AffineMap, DiscreteIFS, ExactChain, FlowSpec, JumpFlowSystem, ProbabilityField

CONFIG_SCHEMA_VERSION = "fellerkit-config/1"


def _schema() -> dict:
    text = resources.files("fellerkit").joinpath("schemas/experiment.schema.json").read_text()
    return json.loads(text)


_VALIDATOR = None


def validator() -> Draft202012Validator:
    global _VALIDATOR
    if _VALIDATOR is None:
        _VALIDATOR = Draft202012Validator(_schema())
    return _VALIDATOR


def json_path(parts) -> str:
    out = "$"
    for p in parts:
        out += f"[{p}]" if isinstance(p, int) else f".{p}"
    return out


def validate_config(data: dict) -> dict:
    """Schema check; raises :class:`ConfigError` naming the field path of the most relevant error."""
    err = best_match(validator().iter_errors(data))
    if err is not None:
        raise ConfigError(err.message, json_path(err.absolute_path))
    return data


def load_config(source) -> dict:
    """Read a config from a path, a JSON string or a dict, then validate it and its system block."""
    if isinstance(source, dict):
        data = source
    else:
        try:
            with open(source) as fh:
                data = json.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    validate_config(data)
    system_from_config(data["system"])
    return data


def _build(path, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except InputError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc), path) from exc


def metric_from_config(data, path="$.system.metric") -> MetricSpec:
    return _build(path, MetricSpec.from_dict, data)


def system_from_config(data: dict, path: str = "$.system"):
    """DiscreteIFS, JumpFlowSystem or ExactChain from a system block."""
    metric = metric_from_config(data.get("metric"), path + ".metric")
    kind = data["type"]
    if kind == "chain":
        return _build(path + ".matrix", ExactChain, data["matrix"], data.get("points"), metric)
    maps = [_build(f"{path}.maps[{i}]", AffineMap, m["A"], m["b"]) for i, m in enumerate(data["maps"])]
    p = data["probs"]
    probs = _build(path + ".probs", ProbabilityField, p["kind"], weights=p.get("weights"),
                   theta=p.get("theta"), offsets=p.get("offsets"))
    if kind == "ifs":
        return _build(path, DiscreteIFS, maps, probs, metric)
    flow = _build(path + ".flow", FlowSpec, tuple(data["flow"]["lambda"]))
    return _build(path, JumpFlowSystem, flow, data["gamma"], maps, probs, metric)


def measure_from_config(data, path: str):
    """A finite measure: ``{"atoms": [[coords, w], ...]}`` or a dyadic grid ``{"dyadic_level": n}``."""
    from .criteria import dyadic_lebesgue

    if isinstance(data, dict) and "dyadic_level" in data:
        return _build(path, dyadic_lebesgue, int(data["dyadic_level"]))
    if isinstance(data, dict) and "atoms" in data:
        return _build(path, FiniteMeasure.from_dict, data)
    raise ConfigError("expected {'atoms': ...} or {'dyadic_level': n}", path)


def dictionary_from_config(data, metric: MetricSpec, path: str):
    if not isinstance(data, list) or not data:
        raise ConfigError("dictionary must be a nonempty list", path)
    if all(isinstance(row, list) for row in data):
        return np.asarray(data, dtype=float)
    return [_build(f"{path}[{i}]", function_from_dict, d, metric) for i, d in enumerate(data)]
