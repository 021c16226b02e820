"""Stage wiring shared by the command line and the end-to-end tests."""

from __future__ import annotations

from dataclasses import fields

import numpy as np

from .errdyn import COMMUNICATION, MODALITIES, POSITIONAL, GngConfig
from .errors import DimensionError, StreamError
from .immjpf import FilterConfig, run_sequence
from .radio import ChannelParams, GraphStreams, JammerConfig, roadside_jammer, simulate_graphs
from .scenario import Scenario, load_trajectories, synthesize_freeway
from .sentinel import AbnormalitySeries, abnormality_values, calibrate_threshold
from .vocabulary import ModelBundle, VocabularyConfig, learn_vocabulary

MODEL_CONFIG_KEYS = ("d_k", "gng", "vocabulary", "filter", "detection")


def build_scenario(cfg: dict, seed: int | None = None) -> Scenario:
    sc = cfg["scenario"]
    seed = cfg["seed"] if seed is None else seed
    if sc["source"] == "synthetic":
        return synthesize_freeway(sc["n_vehicles"], sc["n_frames"], sc["lane_count"], seed,
                                  dt=sc["dt"], mean_speed=sc["mean_speed"],
                                  dwell_frames=tuple(sc["dwell_frames"]),
                                  transition_frames=sc["transition_frames"])
    return load_trajectories(sc["source"], dt=sc["dt"], bs_position=tuple(sc["bs_position"]))


def channel_params(cfg: dict) -> ChannelParams:
    return ChannelParams(**cfg["channel"])


def build_jammer(cfg: dict, scenario: Scenario) -> JammerConfig | None:
    jm = cfg["jammer"]
    if not jm["enabled"] or not jm["windows"]:
        return None
    windows = tuple(tuple(w) for w in jm["windows"])
    power = cfg["channel"]["jammer_power_dbm"]
    if jm["position"] is None:
        return roadside_jammer(scenario, windows, jm["roadside_offset_m"], power, jm["mode"])
    return JammerConfig(tuple(jm["position"]), power, windows, jm["mode"])


def simulate(cfg: dict, seed: int | None = None) -> tuple[Scenario, GraphStreams, JammerConfig | None]:
    seed = cfg["seed"] if seed is None else seed
    scenario = build_scenario(cfg, seed)
    jammer = build_jammer(cfg, scenario)
    streams = simulate_graphs(scenario, cfg["d_k"], jammer, channel_params(cfg), seed,
                              cfg["jammer"]["sinr_threshold_db"])
    return scenario, streams, jammer


def vocabulary_config(cfg: dict) -> VocabularyConfig:
    voc = cfg["vocabulary"]
    return VocabularyConfig(
        pos_gng=GngConfig(**cfg["gng"]["positional"]),
        comm_gng=GngConfig(**cfg["gng"]["communication"]),
        smoothing=float(voc["smoothing"]),
        tau_edges=tuple(voc["tau_edges"]),
        comm_derivative_weight=float(voc["comm_derivative_weight"]),
        letter_metric=voc["letter_metric"],
        pos_features=voc["pos_features"],
        r_std=float(cfg["filter"]["r_std"]),
        accel_std=float(voc["accel_std"]),
    )


def filter_config(cfg: dict) -> FilterConfig:
    names = {f.name for f in fields(FilterConfig)}
    return FilterConfig(**{k: v for k, v in cfg["filter"].items() if k in names})


def model_config(cfg: dict) -> dict:
    return {k: cfg[k] for k in MODEL_CONFIG_KEYS}


def adjacency_stack(graphs) -> np.ndarray:
    return np.array([getattr(g, "adjacency", g) for g in graphs], dtype=np.uint8)


def train(scenario: Scenario, clean_graphs, cfg: dict) -> ModelBundle:
    """Learn the dictionaries, then calibrate per-modality thresholds on the training replay."""
    adj = adjacency_stack(clean_graphs)
    if len(adj) != scenario.n_frames:
        raise StreamError(f"training graphs cover {len(adj)} frames, trajectory has {scenario.n_frames}")
    bundle = learn_vocabulary(scenario, adj, vocabulary_config(cfg), model_config(cfg))
    calibrate(bundle, scenario, adj)
    return bundle


def calibrate(bundle: ModelBundle, scenario: Scenario, adj: np.ndarray) -> None:
    det = bundle.config["detection"]
    warm = int(det["warmup_frames"])
    snaps = run_sequence(bundle, scenario.positions, adj, config=filter_config(bundle.config))
    calib = {"phi": float(det["phi"]), "variance": "sample (n-1)", "warmup_frames": warm}
    for modality in MODALITIES:
        trace = abnormality_values(snaps, modality)[warm:]
        calib[modality] = {"threshold": calibrate_threshold(trace, det["phi"]), "trace": trace.tolist()}
    bundle.calibration = calib


def detect(bundle: ModelBundle, positions, graphs, truth=None, phi: float | None = None):
    """Filter a test stream; returns ({modality: AbnormalitySeries}, snapshots).

    Frames inside the warm-up period are left out of the series: the filter has
    not yet formed a prediction there.
    """
    pos = np.asarray(getattr(positions, "positions", positions), dtype=float)
    if pos.ndim != 3 or pos.shape[1] != bundle.n_vehicles:
        raise DimensionError(f"model expects {bundle.n_vehicles} vehicles, stream has shape {pos.shape}")
    graphs = list(graphs)
    snaps = run_sequence(bundle, pos, graphs, config=filter_config(bundle.config))
    warm = int(bundle.calibration.get("warmup_frames", 0))
    truth = None if truth is None else np.asarray(truth, dtype=bool)
    out = {}
    for modality in MODALITIES:
        values = abnormality_values(snaps, modality)
        cal = bundle.calibration[modality]
        threshold = cal["threshold"]
        if phi is not None:
            threshold = calibrate_threshold(cal["trace"], phi)
        frames = np.arange(len(values))[warm:]
        out[modality] = AbnormalitySeries(modality, values[warm:], threshold,
                                          None if truth is None else truth[warm:], frames)
    return out, snaps


__all__ = ["build_scenario", "build_jammer", "simulate", "train", "detect", "calibrate",
           "vocabulary_config", "filter_config", "POSITIONAL", "COMMUNICATION"]
