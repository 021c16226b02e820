"""Run configuration: one JSON document with per-stage sections, validated up front."""

from __future__ import annotations

import copy
import json
from importlib import resources
from pathlib import Path

from .errors import ConfigError


def default_config() -> dict:
    text = resources.files("v2xguard").joinpath("default_config.json").read_text(encoding="utf-8")
    return json.loads(text)


def _merge(base: dict, override: dict, path: str) -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}.{key}" if path else key
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and base[key] is not None:
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be an object")
            out[key] = _merge(base[key], value, where)
        else:
            out[key] = value
    return out


def _number(cfg: dict, key: str, where: str, *, minimum=None, integer=False, strict=False):
    v = cfg[key]
    ok = isinstance(v, int) if integer else isinstance(v, (int, float))
    if isinstance(v, bool) or not ok:
        kind = "an integer" if integer else "a number"
        raise ConfigError(f"{where}.{key} must be {kind}, got {v!r}")
    if minimum is not None and (v <= minimum if strict else v < minimum):
        raise ConfigError(f"{where}.{key} must be {'>' if strict else '>='} {minimum}, got {v!r}")
    return v


def validate(cfg: dict) -> dict:
    _number(cfg, "seed", "config", minimum=0, integer=True)
    _number(cfg, "d_k", "config", minimum=0)
    sc = cfg["scenario"]
    if not isinstance(sc["source"], str):
        raise ConfigError("scenario.source must be 'synthetic' or a trajectory CSV path")
    _number(sc, "n_vehicles", "scenario", minimum=2, integer=True)
    _number(sc, "n_frames", "scenario", minimum=3, integer=True)
    _number(sc, "lane_count", "scenario", minimum=1, integer=True)
    _number(sc, "dt", "scenario", minimum=0, strict=True)
    _number(sc, "mean_speed", "scenario", minimum=0)
    _number(sc, "transition_frames", "scenario", minimum=1, integer=True)
    _pair(sc, "dwell_frames", "scenario")
    _pair(sc, "bs_position", "scenario")
    jm = cfg["jammer"]
    if not isinstance(jm["enabled"], bool):
        raise ConfigError("jammer.enabled must be true or false")
    if jm["mode"] not in ("constant-single", "periodic-multi"):
        raise ConfigError(f"jammer.mode must be constant-single or periodic-multi, got {jm['mode']!r}")
    if not isinstance(jm["windows"], list) or not all(
            isinstance(w, list) and len(w) == 2 and all(isinstance(x, int) for x in w) for w in jm["windows"]):
        raise ConfigError("jammer.windows must be a list of [start, stop] integer pairs")
    if jm["position"] is not None:
        _pair(jm, "position", "jammer")
    _number(jm, "roadside_offset_m", "jammer")
    _number(jm, "sinr_threshold_db", "jammer")
    for name in ("positional", "communication"):
        g = cfg["gng"][name]
        _number(g, "max_nodes", f"gng.{name}", minimum=2, integer=True)
        _number(g, "lambda_insert", f"gng.{name}", minimum=1, integer=True)
        _number(g, "epochs", f"gng.{name}", minimum=1, integer=True)
    voc = cfg["vocabulary"]
    _number(voc, "smoothing", "vocabulary", minimum=0)
    if voc["pos_features"] not in ("filtered", "raw"):
        raise ConfigError("vocabulary.pos_features must be 'filtered' or 'raw'")
    if voc["letter_metric"] not in ("nll", "mahalanobis"):
        raise ConfigError("vocabulary.letter_metric must be 'nll' or 'mahalanobis'")
    flt = cfg["filter"]
    _number(flt, "n_particles", "filter", minimum=1, integer=True)
    _number(flt, "r_std", "filter", minimum=0, strict=True)
    det = cfg["detection"]
    _number(det, "phi", "detection", minimum=0)
    _number(det, "warmup_frames", "detection", minimum=0, integer=True)
    return cfg


def _pair(cfg: dict, key: str, where: str) -> None:
    v = cfg[key]
    if not (isinstance(v, list) and len(v) == 2 and all(isinstance(x, (int, float)) and not isinstance(x, bool)
                                                        for x in v)):
        raise ConfigError(f"{where}.{key} must be a two-element numeric list, got {v!r}")


def load_config(path=None, overrides: dict | None = None) -> dict:
    """Defaults, then the JSON file at ``path``, then ``overrides``; validated."""
    cfg = default_config()
    if path is not None:
        try:
            user = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: not valid JSON ({exc})") from exc
        if not isinstance(user, dict):
            raise ConfigError(f"{path}: config must be a JSON object")
        cfg = _merge(cfg, user, "")
    if overrides:
        cfg = _merge(cfg, overrides, "")
    return validate(cfg)
