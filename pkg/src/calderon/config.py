"""Experiment configuration: TOML or JSON files mapped onto nested dicts with defaults."""
from __future__ import annotations

import copy
import hashlib
import json
import math
import sys
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .conductivity import builtin_field
from .geometry import DomainGeometry


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "domain": {"kind": "disk", "cos": [], "sin": []},
    "conductivity": {"name": "affine", "params": {"a": 2.0, "b": [1.0, 0.0]}},
    "probe": {"anchor_theta": 0.0, "theta": 0.5, "orientation": "ccw"},
    "noise": {"enabled": True, "seed": 0, "K": "auto"},
    "solver": {"mode": "fem", "ppw": 10.0, "tolerance": 1e-10, "h_far": 0.1, "layer_factor": 8.0,
               "grading": 0.3, "ladder": 1.0, "max_triangles": 2_000_000},
    "experiment": {"N": [8, 16, 32, 64, 128], "seeds": [0]},
    "validate": {"h": 0.01, "h_ladder": [0.08, 0.04, 0.02], "modes": [1, 2, 4, 8], "alpha": 0.5,
                 "rel_tol": 0.02, "flux_tol": 0.01, "min_order": 1.5, "residual_tol": 1e-8},
    "grad": {"N": 2, "t_override": "auto", "Q": "auto", "gamma_boundary": "truth",
             "anchors": 16, "stage1_N": 64, "windows": []},
    "noise_stats": {"K": 64, "seeds": 10000, "pairs": 5, "bandwidth": 8,
                    "T": [16, 32, 64, 128, 256], "filter_seeds": 500, "route": "gram",
                    "max_slope": -0.5},
    "rates": {"N": [16, 32, 64, 128, 256], "quantile_N": [64], "quantile_seeds": 200,
              "factor": 3.0, "slack": 0.1, "min_fraction": 0.9},
    "output": {"dir": "out"},
}


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict) and k != "params":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path=None, overrides: dict | None = None) -> dict:
    raw: dict = {}
    if path is not None:
        p = Path(path)
        try:
            text = p.read_bytes()
        except OSError as exc:
            raise ConfigError(f"cannot read config {p}: {exc}") from exc
        try:
            if p.suffix.lower() == ".json":
                raw = json.loads(text)
            else:
                raw = tomllib.loads(text.decode())
        except (ValueError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot parse config {p}: {exc}") from exc
    unknown = set(raw) - set(DEFAULTS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    cfg = _merge(DEFAULTS, raw)
    if overrides:
        cfg = _merge(cfg, overrides)
    validate_config(cfg)
    return cfg


def config_hash(cfg: dict) -> str:
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def seed_list(spec) -> list:
    """``[0, 1, 2]``, an int count, or ``{start, count}``."""
    if isinstance(spec, dict):
        return list(range(int(spec.get("start", 0)), int(spec.get("start", 0)) + int(spec["count"])))
    if isinstance(spec, int):
        return list(range(spec))
    return [int(s) for s in spec]


def build_domain(cfg) -> DomainGeometry:
    d = cfg["domain"]
    if d["kind"] == "disk":
        return DomainGeometry.disk()
    if d["kind"] == "perturbed":
        return DomainGeometry.perturbed(tuple(d.get("cos", ())), tuple(d.get("sin", ())))
    raise ConfigError(f"unknown domain kind {d['kind']!r}")


def build_conductivity(cfg):
    c = cfg["conductivity"]
    try:
        return builtin_field(c["name"], c.get("params", {}))
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def validate_config(cfg: dict) -> None:
    try:
        build_domain(cfg)
    except ValueError as exc:
        raise ConfigError(f"domain: {exc}") from exc
    build_conductivity(cfg)
    th = cfg["probe"]["theta"]
    if not (isinstance(th, (int, float)) and 0 < th < 1):
        raise ConfigError("probe.theta must lie in (0, 1)")
    if cfg["probe"]["orientation"] not in ("ccw", "cw", "+x", "-x"):
        raise ConfigError("probe.orientation must be ccw, cw, +x or -x")
    s = cfg["solver"]
    if s["mode"] not in ("fem", "analytic-disk"):
        raise ConfigError("solver.mode must be 'fem' or 'analytic-disk'")
    if not s["ppw"] >= 4:
        raise ConfigError("solver.ppw must be >= 4")
    N = cfg["experiment"]["N"]
    if not N or any(not (isinstance(n, (int, float)) and n >= 1) for n in N):
        raise ConfigError("experiment.N must be a non-empty list of numbers >= 1")
    if any(b <= a for a, b in zip(N, N[1:])):
        raise ConfigError("experiment.N must be increasing")
    K = cfg["noise"]["K"]
    if K != "auto" and not (isinstance(K, int) and K >= 1):
        raise ConfigError("noise.K must be 'auto' or a positive integer")
    try:
        seed_list(cfg["experiment"]["seeds"])
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"experiment.seeds: {exc}") from exc
    t = cfg["grad"]["t_override"]
    if not (t in ("auto", "none") or (isinstance(t, (int, float)) and t > 0 and math.isfinite(t))):
        raise ConfigError("grad.t_override must be 'auto', 'none' or a positive number")
    if cfg["grad"]["gamma_boundary"] not in ("truth", "stage1"):
        raise ConfigError("grad.gamma_boundary must be 'truth' or 'stage1'")
