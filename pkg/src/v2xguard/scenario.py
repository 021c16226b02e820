"""
Multi-vehicle freeway trajectories: CSV ingestion, synthesis and replay.

A Scenario holds N vehicles over T frames at a fixed step ``dt``. Positions and
velocities are kept as (T, N, 2) arrays; ``Scenario.frame(t)`` exposes one
timestep as a tuple of VehicleState for callers that want per-vehicle records.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .errors import FormatError, GapError, InsufficientDataError, ParameterError

DEFAULT_DT = 0.1
LANE_WIDTH_M = 3.7
CSV_COLUMNS = ("frame", "vehicle_id", "x_m", "y_m")
SCENARIO_VERSION = "v2xguard-scenario/1"


@dataclass(frozen=True)
class VehicleState:
    vehicle_id: int
    position: tuple[float, float]
    velocity: tuple[float, float]
    timestamp: int

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (*self.position, *self.velocity)):
            raise ParameterError(f"non-finite state for vehicle {self.vehicle_id}")


def _frozen(a) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Scenario:
    positions: np.ndarray  # (T, N, 2) metres
    velocities: np.ndarray  # (T, N, 2) m/s
    dt: float = DEFAULT_DT
    bs_position: tuple[float, float] = (0.0, 0.0)
    source_tag: str = ""

    def __post_init__(self):
        pos = _frozen(self.positions)
        vel = _frozen(self.velocities)
        if pos.ndim != 3 or pos.shape[2] != 2 or pos.shape != vel.shape:
            raise FormatError(f"positions/velocities must be (T, N, 2), got {pos.shape} and {vel.shape}")
        if not (np.all(np.isfinite(pos)) and np.all(np.isfinite(vel))):
            raise FormatError("scenario contains non-finite positions or velocities")
        if self.dt <= 0:
            raise ParameterError(f"dt must be positive, got {self.dt}")
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "velocities", vel)
        object.__setattr__(self, "bs_position", tuple(float(v) for v in self.bs_position))

    @property
    def n_vehicles(self) -> int:
        return self.positions.shape[1]

    @property
    def n_frames(self) -> int:
        return self.positions.shape[0]

    def __len__(self):
        return self.n_frames

    def frame(self, t: int) -> tuple[VehicleState, ...]:
        return tuple(
            VehicleState(n, tuple(self.positions[t, n]), tuple(self.velocities[t, n]), t)
            for n in range(self.n_vehicles)
        )

    @property
    def frames(self) -> Iterator[tuple[VehicleState, ...]]:
        return (self.frame(t) for t in range(self.n_frames))

    def slice(self, start: int, stop: int) -> Scenario:
        return Scenario(self.positions[start:stop], self.velocities[start:stop], self.dt,
                        self.bs_position, self.source_tag)

    def __eq__(self, other):
        if not isinstance(other, Scenario):
            return NotImplemented
        return (
            self.dt == other.dt
            and self.bs_position == other.bs_position
            and self.source_tag == other.source_tag
            and np.array_equal(self.positions, other.positions)
            and np.array_equal(self.velocities, other.velocities)
        )

    # -- serialization -------------------------------------------------------

    def to_json(self) -> str:
        doc = {
            "version": SCENARIO_VERSION,
            "n_vehicles": self.n_vehicles,
            "dt": self.dt,
            "bs_position": list(self.bs_position),
            "source_tag": self.source_tag,
            "positions": self.positions.tolist(),
            "velocities": self.velocities.tolist(),
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> Scenario:
        try:
            doc = json.loads(text)
            if doc.get("version") != SCENARIO_VERSION:
                raise FormatError(f"unsupported scenario version {doc.get('version')!r}")
            return cls(
                np.asarray(doc["positions"], dtype=float),
                np.asarray(doc["velocities"], dtype=float),
                float(doc["dt"]),
                tuple(doc["bs_position"]),
                doc.get("source_tag", ""),
            )
        except (KeyError, TypeError, json.JSONDecodeError) as exc:
            raise FormatError(f"malformed scenario document: {exc}") from exc

    def save(self, path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def load(cls, path) -> Scenario:
        return cls.from_json(Path(path).read_text(encoding="utf-8"))


def forward_velocities(positions: np.ndarray, dt: float) -> np.ndarray:
    """v_t = (p_{t+1} - p_t) / dt; the last frame repeats the previous velocity."""
    positions = np.asarray(positions, dtype=float)
    if positions.shape[0] < 2:
        raise InsufficientDataError("need at least 2 frames to difference positions")
    vel = np.empty_like(positions)
    vel[:-1] = (positions[1:] - positions[:-1]) / dt
    vel[-1] = vel[-2]
    return vel


def relative_distance(a: VehicleState, b: VehicleState) -> float:
    return math.hypot(a.position[0] - b.position[0], a.position[1] - b.position[1])


def pairwise_distances(positions: np.ndarray) -> np.ndarray:
    """(N, 2) positions -> (N, N) Euclidean distance matrix."""
    p = np.asarray(positions, dtype=float)
    diff = p[:, None, :] - p[None, :, :]
    return np.sqrt(np.sum(diff * diff, axis=-1))


# -- CSV ------------------------------------------------------------------------


def load_trajectories(path, dt: float = DEFAULT_DT, bs_position=(0.0, 0.0)) -> Scenario:
    """Read a (frame, vehicle_id, x_m, y_m) CSV into a Scenario.

    Vehicle ids are mapped to indices 0..N-1 in ascending order and frames are
    re-indexed from 0. Every vehicle must report in every frame.
    """
    path = Path(path)
    rows: dict[int, dict[int, tuple[float, float]]] = {}
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        missing = [c for c in CSV_COLUMNS if c not in header]
        if missing:
            raise FormatError(f"{path}: missing column(s) {', '.join(missing)}")
        for lineno, row in enumerate(reader, start=2):
            try:
                frame = int(row["frame"])
                vid = int(row["vehicle_id"])
                x = float(row["x_m"])
                y = float(row["y_m"])
            except (TypeError, ValueError) as exc:
                raise FormatError(f"{path}: row {lineno} is not numeric: {exc}") from exc
            if not (math.isfinite(x) and math.isfinite(y)):
                raise FormatError(f"{path}: row {lineno} has a non-finite coordinate")
            rows.setdefault(frame, {})[vid] = (x, y)

    frames = sorted(rows)
    if len(frames) < 3:
        raise InsufficientDataError(f"{path}: {len(frames)} frame(s), need at least 3")
    vehicles = sorted(set().union(*(rows[f].keys() for f in frames)))
    if len(vehicles) < 1:
        raise InsufficientDataError(f"{path}: no vehicles")
    positions = np.empty((len(frames), len(vehicles), 2))
    for t, f in enumerate(frames):
        for n, vid in enumerate(vehicles):
            try:
                positions[t, n] = rows[f][vid]
            except KeyError:
                raise GapError(f"{path}: vehicle {vid} absent from frame {f}") from None
    return Scenario(positions, forward_velocities(positions, dt), dt, bs_position, path.name)


def write_trajectories(scenario: Scenario, path) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_COLUMNS)
        for t in range(scenario.n_frames):
            for n in range(scenario.n_vehicles):
                x, y = scenario.positions[t, n]
                writer.writerow([t, n, repr(float(x)), repr(float(y))])


# -- synthesis --------------------------------------------------------------------


def _formation_library(n_vehicles: int, lane_count: int, n_formations: int,
                       d_nominal: float, margin: float) -> np.ndarray:
    """Relative slot layouts, fixed by (N, lane_count) so that every seed shares them.

    Each formation gives every vehicle a (longitudinal, lateral) offset. Pairwise
    distances keep ``margin`` metres away from the nominal connectivity range so a
    formation's graph is unambiguous, and consecutive formations differ in graph.
    """
    rng = np.random.default_rng([n_vehicles, lane_count, 80])
    span = max(12.0, 5.0 * n_vehicles / lane_count + 6.0)
    out = []
    for k in range(n_formations):
        m = margin
        for attempt in range(20000):
            if attempt and attempt % 4000 == 0:
                m *= 0.5
            lanes = rng.integers(0, lane_count, size=n_vehicles)
            xs = rng.uniform(0.0, span, size=n_vehicles)
            slots = np.column_stack([xs, lanes * LANE_WIDTH_M])
            d = pairwise_distances(slots)
            iu = np.triu_indices(n_vehicles, 1)
            same_lane = lanes[:, None] == lanes[None, :]
            if np.any(d[iu][same_lane[iu]] < 6.0):
                continue
            if np.any(np.abs(d[iu] - d_nominal) < m):
                continue
            adj = d[iu] <= d_nominal
            if adj.sum() == 0:
                continue
            if out:
                prev = pairwise_distances(out[-1])[iu] <= d_nominal
                if np.array_equal(prev, adj):
                    continue
            break
        slots[:, 0] -= slots[:, 0].mean()
        out.append(slots)
    return np.array(out)


def synthesize_freeway(n_vehicles: int, n_frames: int, lane_count: int, seed: int, *,
                       dt: float = DEFAULT_DT, mean_speed: float = 0.5,
                       n_formations: int = 4, dwell_frames: tuple[int, int] = (150, 350),
                       transition_frames: int = 40, wobble_m: float = 0.15,
                       d_nominal: float = 10.0) -> Scenario:
    """Deterministic platoon on a congested multi-lane freeway.

    The platoon cycles through a fixed library of formations (lane assignments and
    gaps). Moving between formations is a smooth lane change / gap change over
    ``transition_frames``; the seed drives dwell times, the starting formation,
    speed fluctuation and per-vehicle lane-keeping wobble.
    """
    if n_vehicles < 2 or n_frames < 50 or lane_count < 1:
        raise ParameterError(
            f"need n_vehicles >= 2, n_frames >= 50, lane_count >= 1; "
            f"got ({n_vehicles}, {n_frames}, {lane_count})")
    if dwell_frames[0] < 1 or dwell_frames[1] < dwell_frames[0] or transition_frames < 1:
        raise ParameterError("invalid dwell/transition lengths")
    rng = np.random.default_rng(seed)
    library = _formation_library(n_vehicles, lane_count, n_formations, d_nominal, margin=2.0)

    # formation targets per frame, with smoothstep blending during transitions
    rel = np.empty((n_frames, n_vehicles, 2))
    k = int(rng.integers(n_formations))
    t = 0
    first = True
    while t < n_frames:
        dwell = int(rng.integers(dwell_frames[0], dwell_frames[1] + 1))
        if first:
            dwell = int(rng.integers(1, dwell + 1))
            first = False
        stop = min(n_frames, t + dwell)
        rel[t:stop] = library[k]
        t = stop
        nxt = (k + 1) % n_formations
        stop = min(n_frames, t + transition_frames)
        s = (np.arange(t, stop) - t + 1) / transition_frames
        w = (s * s * (3.0 - 2.0 * s))[:, None, None]
        rel[t:stop] = (1.0 - w) * library[k] + w * library[nxt]
        t = stop
        k = nxt

    # lane-keeping wobble: slow AR(1) per vehicle and axis
    a = 0.995
    noise = rng.normal(0.0, wobble_m * math.sqrt(1 - a * a), size=(n_frames, n_vehicles, 2))
    noise[:, :, 1] *= 0.5
    wob = np.empty_like(noise)
    wob[0] = rng.normal(0.0, wobble_m, size=(n_vehicles, 2)) * np.array([1.0, 0.5])
    for i in range(1, n_frames):
        wob[i] = a * wob[i - 1] + noise[i]

    # platoon reference: slow speed fluctuation around mean_speed
    phase = rng.uniform(0, 2 * math.pi)
    tt = np.arange(n_frames) * dt
    speed = mean_speed * (1.0 + 0.3 * np.sin(2 * math.pi * tt / 60.0 + phase))
    x_ref = np.concatenate([[0.0], np.cumsum(speed[:-1] * dt)])

    positions = rel + wob
    positions[:, :, 0] += x_ref[:, None]
    centre_x = float(0.5 * (x_ref[0] + x_ref[-1]))
    return Scenario(positions, forward_velocities(positions, dt), dt,
                    (centre_x, -50.0), f"synthetic:n={n_vehicles},lanes={lane_count},seed={seed}")


def scenario_from_arrays(positions: Sequence, dt: float = DEFAULT_DT, **kw) -> Scenario:
    positions = np.asarray(positions, dtype=float)
    return Scenario(positions, forward_velocities(positions, dt), dt, **kw)
