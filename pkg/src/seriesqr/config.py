"""Configuration files: JSON with a published schema per command.

Configurations are validated before execution; unknown keys are
rejected. After validation the documented defaults are merged in, so the
dict handed to a command (and echoed into its outputs) is fully
resolved.
"""

from __future__ import annotations

import copy
import json
from importlib import resources

import jsonschema
import numpy as np

from .errors import UserInputError
from .process import QuantileGrid, default_grid

COMMANDS = ("fit", "band", "mc", "estimand-gap", "monotonize")

DEFAULTS = {
    "fit": {
        "covariates": None,
        "grid": None,
        "bandwidth_alpha": 0.05,
        "embed_sample": True,
    },
    "band": {
        "B": None,
        "alpha": 0.10,
        "band": "uniform",
        "critical": "coupling",
        "monotonize": None,
        "gradient_via": "linear_term",
        "functional": {"k": 0, "ws": None, "weights": None, "us": None},
    },
    "mc": {
        "dgp": {},
        "R": 100,
        "alpha": 0.10,
        "B_simulation": 1000,
        "B_bootstrap": 199,
        "grid": None,
    },
    "estimand-gap": {
        "dgp": {},
        "functional": "value",
        "mega_n": 100000,
        "w_points": 25,
        "grid": None,
    },
    "monotonize": {
        "lambda": 0.5,
        "decreasing": False,
    },
}

__all__ = ["COMMANDS", "DEFAULTS", "schema_for", "validate_config", "load_config", "resolve_grid"]


def schema_for(command: str) -> dict:
    """Return the published JSON schema for a command."""
    if command not in COMMANDS:
        raise UserInputError(f"unknown command {command!r}; expected one of {COMMANDS}")
    name = command.replace("-", "_") + ".json"
    text = resources.files("seriesqr").joinpath("schemas").joinpath(name).read_text(encoding="utf-8")
    return json.loads(text)


def _format_error(err) -> str:
    path = "$" + "".join(
        f"[{p}]" if isinstance(p, int) else f".{p}" for p in err.absolute_path
    )
    return f"{path}: {err.message}"


def validate_config(cfg, command: str) -> None:
    """Raise UserInputError on the first schema violation, with its path."""
    schema = schema_for(command)
    validator = jsonschema.Draft202012Validator(schema)
    errors = sorted(validator.iter_errors(cfg), key=lambda e: list(e.absolute_path))
    if errors:
        raise UserInputError(f"config fails the {command} schema at {_format_error(errors[0])}")


def _merge(defaults, given):
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def load_config(path, command: str) -> dict:
    """Read, validate, and default-resolve a JSON configuration file."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise UserInputError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise UserInputError(f"config file {path} is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise UserInputError(f"config file {path} must contain a JSON object")
    validate_config(cfg, command)
    return _merge(DEFAULTS[command], cfg)


def resolve_grid(block) -> QuantileGrid:
    """Turn a config grid block (or None) into a QuantileGrid.

    Accepts {"points": [...]} verbatim or {"lo", "hi", "step"} as an
    inclusive arithmetic progression; step defaults to 0.01. Endpoints
    are rounded to 12 decimals so decimal steps land exactly.
    """
    if block is None:
        return default_grid()
    if "points" in block:
        return QuantileGrid(np.asarray(block["points"], dtype=np.float64))
    lo, hi = block["lo"], block["hi"]
    step = block.get("step", 0.01)
    if hi < lo:
        raise UserInputError(f"grid needs lo <= hi, got lo={lo}, hi={hi}")
    count = int(round((hi - lo) / step)) + 1
    points = np.round(lo + step * np.arange(count), 12)
    points = points[points <= hi + 1e-12]
    return QuantileGrid(points)
