"""Scenario configuration: JSON schema, validation and hashing.

Configs are plain JSON with row-major matrices.  Validation is strict:
unknown keys are rejected so typos fail loudly before any computation.
The canonical hash (sha256 over the key-sorted serialization) ties
certificates to the exact configuration that produced them.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

__all__ = ["ConfigError", "ScenarioConfig", "load_config", "config_hash"]


class ConfigError(ValueError):
    """Raised for malformed or inconsistent scenario configurations."""


_PLANT_KEYS = {
    "nominal": {"type", "A", "B"},
    "uncertain": {"type", "A", "B1", "B2", "C", "D1", "D2"},
    "pendulum": {"type", "params"},
    "vehicle": {"type", "params"},
}
_PENDULUM_PARAMS = {"m", "l", "mu", "g", "u_max", "dt", "theta_bar"}
_VEHICLE_PARAMS = {"U", "C_af", "C_ar", "m", "I_z", "a", "b", "u_max", "dt",
                   "gain_bound"}
_BLOCK_KEYS = {
    "sector": {"type", "channel", "alpha", "beta", "from"},
    "off_by_one": {"type", "channel", "slope_lo", "slope_hi", "from"},
    "norm_bounded_lti": {"type", "channel", "gain_bound", "basis_len", "pole"},
}
_SOLVER_KEYS = {"eps", "p_floor", "solver", "verify_tol"}
_VALIDATION_KEYS = {"samples", "steps", "conv_tol", "inv_tol", "seed",
                    "realizations"}
_TOP_KEYS = {"plant", "nn_weights", "equilibrium", "delta_v", "sweep",
             "blocks", "solver", "validation"}
_SWEEP_KEYS = {"grid", "start", "stop", "num"}


def _require(cond: bool, msg: str) -> None:
    if not cond:
        raise ConfigError(msg)


def _check_keys(d: dict, allowed: set, where: str) -> None:
    unknown = set(d) - allowed
    _require(not unknown, f"{where}: unknown keys {sorted(unknown)}")


def _matrix(data, where: str) -> np.ndarray:
    try:
        M = np.asarray(data, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: not a numeric matrix ({exc})") from None
    _require(M.ndim == 2, f"{where}: expected a 2-d matrix")
    _require(np.all(np.isfinite(M)), f"{where}: non-finite entries")
    return M


@dataclass
class ScenarioConfig:
    """Parsed and validated scenario configuration.

    ``raw`` preserves the original JSON document (after defaulting) for
    hashing and echo; typed accessors expose the pieces the pipelines
    need.
    """

    raw: dict
    path: Path | None = None
    base_dir: Path = field(default_factory=Path)

    @property
    def plant_spec(self) -> dict:
        return self.raw["plant"]

    @property
    def plant_type(self) -> str:
        return self.raw["plant"]["type"]

    @property
    def nn_weights(self) -> Path | None:
        p = self.raw.get("nn_weights")
        if p is None:
            return None
        p = Path(p)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def equilibrium(self):
        return self.raw.get("equilibrium", "origin")

    @property
    def delta_v(self) -> float | None:
        dv = self.raw.get("delta_v")
        return None if dv is None else float(dv)

    @property
    def sweep_grid(self) -> np.ndarray | None:
        sw = self.raw.get("sweep")
        if sw is None:
            return None
        if "grid" in sw:
            return np.asarray(sw["grid"], dtype=float)
        return np.linspace(float(sw["start"]), float(sw["stop"]), int(sw["num"]))

    @property
    def blocks(self) -> list[dict]:
        return list(self.raw.get("blocks", []))

    @property
    def solver_options(self) -> dict:
        return dict(self.raw.get("solver", {}))

    @property
    def validation_options(self) -> dict:
        opts = {"samples": 1000, "steps": 5000, "conv_tol": 1e-4,
                "inv_tol": 1e-6, "seed": 0, "realizations": 20}
        opts.update(self.raw.get("validation", {}))
        return opts

    @property
    def hash(self) -> str:
        return config_hash(self.raw)


def config_hash(raw: dict) -> str:
    """sha256 of the canonical (key-sorted, compact) JSON serialization."""
    canon = json.dumps(raw, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()


def _validate_plant(plant: dict) -> None:
    _require(isinstance(plant, dict), "plant: expected an object")
    ptype = plant.get("type")
    _require(ptype in _PLANT_KEYS, f"plant: unknown type {ptype!r}")
    _check_keys(plant, _PLANT_KEYS[ptype], "plant")
    if ptype == "nominal":
        A = _matrix(plant["A"], "plant.A")
        B = _matrix(plant["B"], "plant.B")
        _require(A.shape[0] == A.shape[1], "plant.A: must be square")
        _require(B.shape[0] == A.shape[0], "plant.B: row count mismatch")
    elif ptype == "uncertain":
        for key in ("A", "B1", "B2", "C", "D1", "D2"):
            _matrix(plant[key], f"plant.{key}")
    else:
        params = plant.get("params", {})
        allowed = _PENDULUM_PARAMS if ptype == "pendulum" else _VEHICLE_PARAMS
        _check_keys(params, allowed, f"plant.params ({ptype})")
        for k, v in params.items():
            _require(isinstance(v, (int, float)), f"plant.params.{k}: not a number")
        for k in ("m", "l", "dt", "u_max", "I_z", "U"):
            if k in params:
                _require(params[k] > 0, f"plant.params.{k}: must be positive")


def _validate_block(i: int, blk: dict) -> None:
    where = f"blocks[{i}]"
    _require(isinstance(blk, dict), f"{where}: expected an object")
    btype = blk.get("type")
    _require(btype in _BLOCK_KEYS, f"{where}: unknown type {btype!r}")
    _check_keys(blk, _BLOCK_KEYS[btype], where)
    ch = blk.get("channel")
    _require(
        ch == "activation" or isinstance(ch, int),
        f"{where}.channel: expected an integer channel index or 'activation'",
    )
    if btype == "norm_bounded_lti":
        _require(isinstance(ch, int), f"{where}: norm_bounded_lti needs a plant channel")
        _require("gain_bound" in blk and blk["gain_bound"] > 0,
                 f"{where}.gain_bound: positive number required")
        if "basis_len" in blk:
            _require(int(blk["basis_len"]) >= 0, f"{where}.basis_len: must be >= 0")
        if "pole" in blk:
            _require(abs(float(blk["pole"])) < 1.0, f"{where}.pole: must satisfy |pole| < 1")
    else:
        explicit = {"alpha", "beta"} if btype == "sector" else {"slope_lo", "slope_hi"}
        has_explicit = explicit <= set(blk)
        has_from = "from" in blk
        _require(has_explicit != has_from,
                 f"{where}: give either explicit bounds {sorted(explicit)} or 'from'")
        if has_from:
            _require(blk["from"] in ("saturation", "plant_nonlinearity", "activation_slope"),
                     f"{where}.from: unknown source {blk['from']!r}")


def validate_raw(raw: dict) -> None:
    _require(isinstance(raw, dict), "config root: expected an object")
    _check_keys(raw, _TOP_KEYS, "config")
    _require("plant" in raw, "config: missing 'plant'")
    _validate_plant(raw["plant"])
    if raw["plant"]["type"] in ("nominal", "uncertain", "pendulum", "vehicle"):
        pass
    if "sweep" in raw:
        sw = raw["sweep"]
        _check_keys(sw, _SWEEP_KEYS, "sweep")
        _require("grid" in sw or {"start", "stop", "num"} <= set(sw),
                 "sweep: need 'grid' or start/stop/num")
    eq = raw.get("equilibrium", "origin")
    _require(eq in ("origin", "solve") or isinstance(eq, list),
             "equilibrium: expected 'origin', 'solve' or a vector")
    for i, blk in enumerate(raw.get("blocks", [])):
        _validate_block(i, blk)
    if "solver" in raw:
        _check_keys(raw["solver"], _SOLVER_KEYS, "solver")
    if "validation" in raw:
        _check_keys(raw["validation"], _VALIDATION_KEYS, "validation")
    if "delta_v" in raw:
        _require(isinstance(raw["delta_v"], (int, float)) and raw["delta_v"] > 0,
                 "delta_v: must be a positive number")


def load_config(path) -> ScenarioConfig:
    """Load, schema-validate and wrap a JSON scenario configuration."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    validate_raw(raw)
    return ScenarioConfig(raw=raw, path=path, base_dir=path.parent)
