"""
RF layer: path loss, shadowing and Rayleigh fading, jammer interference, SINR,
and the distance-thresholded V2V connectivity graph with jammer perturbation.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import DomainError, FormatError, ParameterError
from .scenario import Scenario, VehicleState, pairwise_distances

THERMAL_NOISE_DBM_HZ = -174.0
DEFAULT_D_K = 10.0


def dbm_to_w(dbm: float) -> float:
    return 10.0 ** ((dbm - 30.0) / 10.0)


def w_to_dbm(w: float) -> float:
    return 10.0 * math.log10(w) + 30.0


@dataclass(frozen=True)
class ChannelParams:
    carrier_hz: float = 2.0e9
    bandwidth_hz: float = 1.4e6
    cell_radius_m: float = 500.0
    bs_antenna_height_m: float = 25.0
    vehicle_antenna_height_m: float = 1.5
    bs_gain_dbi: float = 8.0
    vehicle_gain_dbi: float = 3.0
    noise_figure_db: float = 5.0
    tx_power_dbm: float = 23.0
    jammer_power_dbm: float = 23.0
    snr_db: float = 20.0
    pathloss_const_db: float = 128.1
    pathloss_exp_coeff: float = 37.6
    shadow_sigma_db: float = 8.0
    shadowing: bool = True
    fading: bool = True
    min_distance_m: float = 1.0

    def __post_init__(self):
        for name, value in asdict(self).items():
            if isinstance(value, float) and not math.isfinite(value):
                raise ParameterError(f"channel parameter {name} must be finite")
        if self.bandwidth_hz <= 0 or self.cell_radius_m <= 0:
            raise ParameterError("bandwidth and cell radius must be positive")
        if self.shadow_sigma_db < 0 or self.min_distance_m <= 0:
            raise ParameterError("shadow sigma must be >= 0 and min distance > 0")

    @property
    def noise_power_w(self) -> float:
        dbm = THERMAL_NOISE_DBM_HZ + 10.0 * math.log10(self.bandwidth_hz) + self.noise_figure_db
        return dbm_to_w(dbm)

    @property
    def v2v_antenna_gain_db(self) -> float:
        return 2.0 * self.vehicle_gain_dbi


@dataclass(frozen=True)
class JammerConfig:
    position: tuple[float, float]
    power_dbm: float = 23.0
    attack_windows: tuple[tuple[int, int], ...] = ()
    mode: str = "periodic-multi"

    def __post_init__(self):
        wins = tuple((int(a), int(b)) for a, b in self.attack_windows)
        object.__setattr__(self, "attack_windows", wins)
        object.__setattr__(self, "position", tuple(float(v) for v in self.position))
        if self.mode not in ("constant-single", "periodic-multi"):
            raise ParameterError(f"unknown jammer mode {self.mode!r}")
        for a, b in wins:
            if b <= a or a < 0:
                raise ParameterError(f"attack window [{a}, {b}) is empty or negative")
        for (a0, b0), (a1, b1) in zip(wins, wins[1:]):
            if a1 < b0:
                raise ParameterError("attack windows must be sorted and non-overlapping")
        if self.mode == "constant-single" and len(wins) != 1:
            raise ParameterError("constant-single jammer needs exactly one attack window")
        if not math.isfinite(self.power_dbm):
            raise ParameterError("jammer power must be finite")

    def active(self, frame: int) -> bool:
        return any(a <= frame < b for a, b in self.attack_windows)

    def truth(self, n_frames: int) -> np.ndarray:
        out = np.zeros(n_frames, dtype=bool)
        for a, b in self.attack_windows:
            out[a:min(b, n_frames)] = True
        return out

    @staticmethod
    def periodic_windows(start: int, length: int, period: int, count: int) -> tuple[tuple[int, int], ...]:
        if period < length:
            raise ParameterError("period shorter than window length")
        return tuple((start + i * period, start + i * period + length) for i in range(count))


@dataclass(frozen=True)
class ConnectivityGraph:
    adjacency: np.ndarray
    frame: int = 0

    def __post_init__(self):
        a = np.array(self.adjacency, dtype=np.uint8)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise FormatError(f"adjacency must be square, got {a.shape}")
        if np.any(a > 1) or not np.array_equal(a, a.T) or np.any(np.diag(a)):
            raise FormatError("adjacency must be binary, symmetric, with zero diagonal")
        a.setflags(write=False)
        object.__setattr__(self, "adjacency", a)

    @property
    def n(self) -> int:
        return self.adjacency.shape[0]

    @property
    def n_edges(self) -> int:
        return int(self.adjacency.sum() // 2)

    def edges(self) -> list[tuple[int, int]]:
        i, j = np.nonzero(np.triu(self.adjacency, 1))
        return list(zip(i.tolist(), j.tolist()))

    def __eq__(self, other):
        if not isinstance(other, ConnectivityGraph):
            return NotImplemented
        return self.frame == other.frame and np.array_equal(self.adjacency, other.adjacency)

    def to_bits(self) -> str:
        iu = np.triu_indices(self.n, 1)
        return "".join("1" if v else "0" for v in self.adjacency[iu])

    @classmethod
    def from_bits(cls, n: int, bits: str, frame: int = 0) -> ConnectivityGraph:
        iu = np.triu_indices(n, 1)
        if len(bits) != len(iu[0]) or set(bits) - {"0", "1"}:
            raise FormatError(f"bitmap {bits!r} does not describe a {n}-node graph")
        a = np.zeros((n, n), dtype=np.uint8)
        a[iu] = [c == "1" for c in bits]
        return cls(a | a.T, frame)


# -- channel ----------------------------------------------------------------------


def pathloss_db(distance_km: float, params: ChannelParams | None = None) -> float:
    if not distance_km > 0:
        raise DomainError(f"path loss needs a positive distance, got {distance_km}")
    p = params or ChannelParams()
    return p.pathloss_const_db + p.pathloss_exp_coeff * math.log10(distance_km)


def _gain_at(distance_m: float, params: ChannelParams, rng, antenna_gain_db: float) -> float:
    db = -pathloss_db(distance_m / 1000.0, params) + antenna_gain_db
    if params.shadowing:
        db += rng.normal(0.0, params.shadow_sigma_db)
    g = 10.0 ** (db / 10.0)
    if params.fading:
        # |h|^2 for h ~ CN(0, 1)
        g *= rng.exponential(1.0)
    return g


def channel_gain(tx_pos: Sequence[float], rx_pos: Sequence[float], params: ChannelParams,
                 rng: np.random.Generator, antenna_gain_db: float | None = None) -> float:
    """Linear power gain: path loss x log-normal shadowing x Rayleigh power."""
    d = math.dist(tx_pos, rx_pos)
    if d == 0.0:
        raise DomainError("transmitter and receiver are coincident")
    if antenna_gain_db is None:
        antenna_gain_db = params.v2v_antenna_gain_db
    return _gain_at(d, params, rng, antenna_gain_db)


def received_under_hypothesis(link: tuple[Sequence[float], Sequence[float]],
                              jammer: JammerConfig | None, frame: int,
                              params: ChannelParams, rng: np.random.Generator):
    """(signal_w, interference_w, noise_w) at the receiver of ``link = (tx_pos, rx_pos)``.

    H0 (no jammer, or frame outside every attack window) has zero interference.
    """
    tx, rx = link
    signal = dbm_to_w(params.tx_power_dbm) * channel_gain(tx, rx, params, rng)
    interference = 0.0
    if jammer is not None and jammer.active(frame):
        dj = max(math.dist(jammer.position, rx), params.min_distance_m)
        gj = _gain_at(dj, params, rng, params.v2v_antenna_gain_db)
        interference = dbm_to_w(jammer.power_dbm) * gj
    return signal, interference, params.noise_power_w


def sinr_db(signal: float, interference: float, noise: float) -> float:
    return 10.0 * math.log10(signal / (interference + noise))


# -- graphs -----------------------------------------------------------------------


def observe_graph(frame_states: Sequence[VehicleState] | np.ndarray, d_k: float = DEFAULT_D_K,
                  frame: int | None = None) -> ConnectivityGraph:
    """Edge (i, j) iff the vehicles are within ``d_k`` metres of each other."""
    if isinstance(frame_states, np.ndarray):
        pos = frame_states
        t = 0 if frame is None else frame
    else:
        pos = np.array([s.position for s in frame_states], dtype=float)
        t = frame_states[0].timestamp if frame is None else frame
    if pos.shape[0] < 2:
        raise ParameterError("a connectivity graph needs at least 2 vehicles")
    adj = (pairwise_distances(pos) <= d_k).astype(np.uint8)
    np.fill_diagonal(adj, 0)
    return ConnectivityGraph(adj, t)


def perturb_graph(g: ConnectivityGraph, frame_states, jammer: JammerConfig, frame: int,
                  params: ChannelParams, rng: np.random.Generator,
                  sinr_threshold_db: float = 0.0) -> ConnectivityGraph:
    """Drop every edge whose weaker direction falls below ``sinr_threshold_db`` under H1."""
    pos = frame_states if isinstance(frame_states, np.ndarray) else \
        np.array([s.position for s in frame_states], dtype=float)
    if pos.shape[0] != g.n:
        raise FormatError(f"graph has {g.n} nodes but {pos.shape[0]} states were given")
    if not jammer.active(frame) or g.n_edges == 0:
        return g
    adj = np.array(g.adjacency)
    for i, j in g.edges():
        worst = math.inf
        for tx, rx in ((i, j), (j, i)):
            s, inter, noise = received_under_hypothesis((pos[tx], pos[rx]), jammer, frame, params, rng)
            worst = min(worst, sinr_db(s, inter, noise))
        if worst < sinr_threshold_db:
            adj[i, j] = adj[j, i] = 0
    return ConnectivityGraph(adj, g.frame)


def roadside_jammer(scenario: Scenario, attack_windows, offset_m: float = 4.0, power_dbm: float = 23.0,
                    mode: str = "periodic-multi") -> JammerConfig:
    """Jammer parked beside the outermost lane where the platoon is midway through the attack span."""
    wins = tuple(attack_windows)
    if not wins:
        raise ParameterError("a roadside jammer needs at least one attack window")
    mid = min((wins[0][0] + wins[-1][1]) // 2, scenario.n_frames - 1)
    frame = scenario.positions[mid]
    pos = (float(frame[:, 0].mean()), float(frame[:, 1].min()) - offset_m)
    return JammerConfig(pos, power_dbm, wins, mode)


@dataclass(frozen=True)
class GraphStreams:
    clean: list[ConnectivityGraph]
    observed: list[ConnectivityGraph]
    truth: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=bool))


def simulate_graphs(scenario: Scenario, d_k: float = DEFAULT_D_K, jammer: JammerConfig | None = None,
                    params: ChannelParams | None = None, seed: int = 0,
                    sinr_threshold_db: float = 0.0) -> GraphStreams:
    """Clean distance graphs for every frame plus the jammer-perturbed observation."""
    params = params or ChannelParams()
    rng = np.random.default_rng(seed)
    clean, observed = [], []
    for t in range(scenario.n_frames):
        g = observe_graph(scenario.positions[t], d_k, frame=t)
        clean.append(g)
        if jammer is None:
            observed.append(g)
        else:
            observed.append(perturb_graph(g, scenario.positions[t], jammer, t, params, rng,
                                          sinr_threshold_db))
    truth = jammer.truth(scenario.n_frames) if jammer else np.zeros(scenario.n_frames, dtype=bool)
    return GraphStreams(clean, observed, truth)


def write_graph_stream(graphs: Iterable[ConnectivityGraph], path, truth=None) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for k, g in enumerate(graphs):
            rec = {"frame": g.frame, "n": g.n, "bits": g.to_bits()}
            if truth is not None:
                rec["attack"] = bool(truth[k])
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_graph_stream(path) -> tuple[list[ConnectivityGraph], np.ndarray | None]:
    graphs, truth = [], []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                graphs.append(ConnectivityGraph.from_bits(int(rec["n"]), rec["bits"], int(rec["frame"])))
            except (KeyError, ValueError, TypeError) as exc:
                raise FormatError(f"{path}: line {lineno}: {exc}") from exc
            truth.append(rec.get("attack"))
    if truth and all(v is not None for v in truth):
        return graphs, np.array(truth, dtype=bool)
    return graphs, None
