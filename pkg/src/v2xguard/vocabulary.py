"""
Per-modality dictionaries (letters and words), dwell-conditioned transition
matrices, the positional-to-communication interaction matrix, and the
versioned JSON model bundle that carries all of them.
"""

from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errdyn import (COMMUNICATION, POSITIONAL, GngConfig, Letter, Scaler,
                     communication_feature_series, extract_letters_with_assignment,
                     gng_fit, letter_scores, null_force_filter, positional_features,
                     relative_positions)
from .errors import (CorruptModelError, DimensionError, InsufficientDataError,
                     ModelVersionError, ParameterError)

MODEL_VERSION = "v2xguard-model/1"
DEFAULT_SMOOTHING = 1e-3
DEFAULT_TAU_EDGES = (1, 3, 6)
ROW_TOL = 1e-9


@dataclass(frozen=True)
class Word:
    id: int
    letters: tuple[int, ...]
    modality: str


@dataclass
class Dictionary:
    modality: str
    letters: list[Letter]
    words: list[Word]
    scaler: Scaler
    word_graphs: list[str] = field(default_factory=list)  # comm words: upper-triangle bitmaps

    def __post_init__(self):
        self.word_index = {w.letters: w.id for w in self.words}
        if len(self.word_index) != len(self.words):
            raise ParameterError("duplicate words in dictionary")
        n_letters = len(self.letters)
        for w in self.words:
            if any(not 0 <= l < n_letters for l in w.letters):
                raise ParameterError(f"word {w.id} references an unknown letter")

    @property
    def n_words(self) -> int:
        return len(self.words)

    @property
    def unknown_id(self) -> int:
        """Reserved id for letter vectors never seen in training."""
        return len(self.words)

    def word_letters(self) -> np.ndarray:
        return np.array([w.letters for w in self.words], dtype=int).reshape(len(self.words), -1)

    def lookup(self, letters: Sequence[int]) -> int:
        return self.word_index.get(tuple(int(l) for l in letters), self.unknown_id)

    def word_adjacency(self, word_id: int, n: int) -> np.ndarray:
        bits = self.word_graphs[word_id]
        iu = np.triu_indices(n, 1)
        a = np.zeros((n, n), dtype=np.uint8)
        a[iu] = [c == "1" for c in bits]
        return a | a.T


def letterize(samples, letters: Sequence[Letter], metric: str = "mahalanobis") -> np.ndarray:
    """Nearest letter for every feature vector (last axis); ties go to the lowest id."""
    if not letters:
        raise ParameterError("letterize needs at least one letter")
    x = np.asarray(samples, dtype=float)
    flat = x.reshape(-1, x.shape[-1])
    ids = letter_scores(flat, letters, metric).argmin(axis=1)
    return ids.reshape(x.shape[:-1])


def build_words(letter_frames, modality: str = POSITIONAL) -> tuple[list[Word], np.ndarray]:
    frames = np.asarray(letter_frames, dtype=int)
    if frames.ndim != 2 or frames.shape[0] == 0:
        raise DimensionError("letter frames must be a non-empty (T, N) array")
    index: dict[tuple[int, ...], int] = {}
    words: list[Word] = []
    series = np.empty(frames.shape[0], dtype=int)
    for t, row in enumerate(frames):
        key = tuple(row.tolist())
        if key not in index:
            index[key] = len(words)
            words.append(Word(len(words), key, modality))
        series[t] = index[key]
    return words, series


# -- transitions ------------------------------------------------------------------


def _smooth_rows(counts: np.ndarray, smoothing: float) -> np.ndarray:
    counts = np.asarray(counts, dtype=float)
    dim = counts.shape[1]
    total = counts.sum(axis=1, keepdims=True) + dim * smoothing
    with np.errstate(invalid="ignore", divide="ignore"):
        probs = (counts + smoothing) / total
    empty = total[:, 0] == 0
    probs[empty] = 1.0 / dim
    return probs


def tau_bin(dwell, edges: Sequence[int]) -> np.ndarray:
    """Bin index of a dwell time (frames spent in the source state)."""
    return np.searchsorted(np.asarray(edges), dwell, side="right") - 1


@dataclass
class TransitionMatrix:
    counts: np.ndarray
    smoothing: float = DEFAULT_SMOOTHING
    tau_edges: tuple[int, ...] = ()
    tau_counts: np.ndarray | None = None  # (bins, dim, dim)

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        self.probs = _smooth_rows(self.counts, self.smoothing)
        if self.tau_counts is not None:
            self.tau_counts = np.asarray(self.tau_counts, dtype=np.int64)
            probs = []
            for c in self.tau_counts:
                p = _smooth_rows(c, self.smoothing)
                unseen = c.sum(axis=1) == 0
                p[unseen] = self.probs[unseen]
                probs.append(p)
            self.tau_probs = np.array(probs)
        else:
            self.tau_probs = None

    @property
    def dim(self) -> int:
        return self.counts.shape[0]

    def rows(self, sources: np.ndarray, dwell: np.ndarray | None = None) -> np.ndarray:
        """Next-state distributions for a batch of source states."""
        if self.tau_probs is None or dwell is None:
            return self.probs[sources]
        return self.tau_probs[tau_bin(dwell, self.tau_edges), sources]

    def to_dict(self) -> dict:
        return {
            "counts": self.counts.tolist(),
            "smoothing": self.smoothing,
            "tau_edges": list(self.tau_edges),
            "tau_counts": None if self.tau_counts is None else self.tau_counts.tolist(),
            "probs": self.probs.tolist(),
        }

    @classmethod
    def from_dict(cls, doc: dict) -> TransitionMatrix:
        tm = cls(np.asarray(doc["counts"]), float(doc["smoothing"]), tuple(doc["tau_edges"]),
                 None if doc["tau_counts"] is None else np.asarray(doc["tau_counts"]))
        _check_stochastic(np.asarray(doc["probs"], dtype=float), "transition matrix")
        return tm


def learn_transitions(series, dim: int, smoothing: float = DEFAULT_SMOOTHING,
                      tau_bin_edges: Sequence[int] | None = None) -> TransitionMatrix:
    """Count consecutive pairs (rows are source states). Accepts one series or a list."""
    many = [np.asarray(s, dtype=int) for s in series] if _is_nested(series) else [np.asarray(series, dtype=int)]
    if sum(len(s) for s in many) < 2 or all(len(s) < 2 for s in many):
        raise InsufficientDataError("a transition series needs at least 2 entries")
    counts = np.zeros((dim, dim), dtype=np.int64)
    edges = tuple(tau_bin_edges) if tau_bin_edges else ()
    tau_counts = np.zeros((len(edges), dim, dim), dtype=np.int64) if edges else None
    for s in many:
        if len(s) and (s.min() < 0 or s.max() >= dim):
            raise ParameterError(f"state id out of range for dim={dim}")
        dwell = 1
        for prev, nxt in zip(s[:-1], s[1:]):
            counts[prev, nxt] += 1
            if tau_counts is not None:
                tau_counts[tau_bin(dwell, edges), prev, nxt] += 1
            dwell = dwell + 1 if nxt == prev else 1
    return TransitionMatrix(counts, smoothing, edges, tau_counts)


def _is_nested(series) -> bool:
    return isinstance(series, (list, tuple)) and len(series) > 0 and np.ndim(series[0]) == 1


@dataclass
class InteractionMatrix:
    counts: np.ndarray
    smoothing: float = DEFAULT_SMOOTHING

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        self.probs = _smooth_rows(self.counts, self.smoothing)

    @property
    def rows(self) -> int:
        return self.counts.shape[0]

    @property
    def cols(self) -> int:
        return self.counts.shape[1]

    def to_dict(self) -> dict:
        return {"counts": self.counts.tolist(), "smoothing": self.smoothing, "probs": self.probs.tolist()}

    @classmethod
    def from_dict(cls, doc: dict) -> InteractionMatrix:
        im = cls(np.asarray(doc["counts"]), float(doc["smoothing"]))
        _check_stochastic(np.asarray(doc["probs"], dtype=float), "interaction matrix")
        return im


def learn_interaction(pos_word_series, comm_word_series, dims: tuple[int, int],
                      smoothing: float = DEFAULT_SMOOTHING) -> InteractionMatrix:
    p = np.asarray(pos_word_series, dtype=int)
    c = np.asarray(comm_word_series, dtype=int)
    if p.shape != c.shape:
        raise DimensionError(f"series lengths differ: {p.shape[0]} vs {c.shape[0]}")
    counts = np.zeros(dims, dtype=np.int64)
    np.add.at(counts, (p, c), 1)
    return InteractionMatrix(counts, smoothing)


def _check_stochastic(probs: np.ndarray, what: str) -> None:
    if probs.ndim != 2 or np.any(probs < 0) or np.any(np.abs(probs.sum(axis=1) - 1.0) > ROW_TOL):
        raise CorruptModelError(f"{what} is not row-stochastic")


# -- learning -----------------------------------------------------------------------


@dataclass(frozen=True)
class VocabularyConfig:
    pos_gng: GngConfig = GngConfig(max_nodes=40, seed=1)
    comm_gng: GngConfig = GngConfig(max_nodes=40, seed=2)
    smoothing: float = DEFAULT_SMOOTHING
    tau_edges: tuple[int, ...] = DEFAULT_TAU_EDGES
    comm_derivative_weight: float = 1.0
    letter_metric: str = "nll"  # or "mahalanobis" (drops the log-determinant term)
    pos_features: str = "filtered"  # null-force Kalman estimates, or "raw" finite differences
    r_std: float = 0.5
    accel_std: float = 1.0


@dataclass
class ModelBundle:
    n_vehicles: int
    dt: float
    pos: Dictionary
    comm: Dictionary
    pos_word_tm: TransitionMatrix
    comm_word_tm: TransitionMatrix
    pos_letter_tm: TransitionMatrix
    comm_letter_tm: TransitionMatrix
    phi: InteractionMatrix
    config: dict = field(default_factory=dict)
    calibration: dict = field(default_factory=dict)
    reference: str = "platoon"  # positional features relative to the platoon centroid, or "absolute"
    comm_derivative_weight: float = 1.0
    letter_metric: str = "nll"

    @property
    def fingerprint(self) -> str:
        blob = json.dumps(self.config, sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def _fit_modality(features: np.ndarray, modality: str, gng: GngConfig, metric: str):
    t, n, k = features.shape
    flat = features.reshape(t * n, k)
    scaler = Scaler.fit(flat)
    z = scaler.transform(flat)
    nodes = gng_fit(z, gng)
    letters, assign = extract_letters_with_assignment(nodes, z, modality, refine=True, metric=metric)
    return scaler, letters, assign.reshape(t, n)


def training_positional_features(scenario, config: VocabularyConfig) -> np.ndarray:
    if config.pos_features == "raw":
        return positional_features(scenario.positions, scenario.velocities)
    if config.pos_features != "filtered":
        raise ParameterError(f"unknown positional feature source {config.pos_features!r}")
    z = relative_positions(scenario.positions)
    return null_force_filter(z, scenario.dt, config.r_std, config.accel_std)


def learn_vocabulary(scenario, adjacencies: np.ndarray, config: VocabularyConfig = VocabularyConfig(),
                     extra_config: dict | None = None) -> ModelBundle:
    """Learn both dictionaries, their transition statistics and the interaction matrix."""
    adjacencies = np.asarray(adjacencies)
    if scenario.n_frames < 3:
        raise InsufficientDataError(f"{scenario.n_frames} frames is too few to train on")
    if adjacencies.shape[0] != scenario.n_frames:
        raise DimensionError("graph stream and scenario have different lengths")
    n = scenario.n_vehicles

    pos_scaler, pos_letters, pos_assign = _fit_modality(
        training_positional_features(scenario, config), POSITIONAL, config.pos_gng,
        config.letter_metric)
    comm_scaler, comm_letters, comm_assign = _fit_modality(
        communication_feature_series(adjacencies, config.comm_derivative_weight), COMMUNICATION, config.comm_gng,
        config.letter_metric)

    pos_words, pos_series = build_words(pos_assign, POSITIONAL)
    comm_words, comm_series = build_words(comm_assign, COMMUNICATION)

    iu = np.triu_indices(n, 1)
    graph_votes: dict[int, Counter] = {}
    for t, w in enumerate(comm_series):
        bits = "".join("1" if v else "0" for v in adjacencies[t][iu])
        graph_votes.setdefault(int(w), Counter())[bits] += 1
    word_graphs = [max(sorted(graph_votes[w.id].items()), key=lambda kv: kv[1])[0] for w in comm_words]

    s = config.smoothing
    bundle = ModelBundle(
        n_vehicles=n,
        dt=scenario.dt,
        pos=Dictionary(POSITIONAL, pos_letters, pos_words, pos_scaler),
        comm=Dictionary(COMMUNICATION, comm_letters, comm_words, comm_scaler, word_graphs),
        pos_word_tm=learn_transitions(pos_series, len(pos_words), s, config.tau_edges),
        comm_word_tm=learn_transitions(comm_series, len(comm_words), s, config.tau_edges),
        pos_letter_tm=learn_transitions([pos_assign[:, k] for k in range(n)], len(pos_letters), s,
                                        config.tau_edges),
        comm_letter_tm=learn_transitions([comm_assign[:, k] for k in range(n)], len(comm_letters), s,
                                         config.tau_edges),
        phi=learn_interaction(pos_series, comm_series, (len(pos_words), len(comm_words)), s),
        config=dict(extra_config or {}),
        comm_derivative_weight=config.comm_derivative_weight,
        letter_metric=config.letter_metric,
    )
    bundle.training_series = {"positional": pos_series, "communication": comm_series}
    return bundle


# -- persistence -------------------------------------------------------------------


def _letter_doc(l: Letter) -> dict:
    return {"id": l.id, "mean": l.mean.tolist(), "covariance": l.covariance.tolist(),
            "member_count": l.member_count}


def _dict_doc(d: Dictionary) -> dict:
    return {
        "modality": d.modality,
        "letters": [_letter_doc(l) for l in d.letters],
        "words": [list(w.letters) for w in d.words],
        "scaler": {"mean": d.scaler.mean.tolist(), "scale": d.scaler.scale.tolist()},
        "word_graphs": list(d.word_graphs),
    }


def _dict_from_doc(doc: dict) -> Dictionary:
    modality = doc["modality"]
    letters = [Letter(int(l["id"]), np.asarray(l["mean"], dtype=float),
                      np.asarray(l["covariance"], dtype=float), modality, int(l["member_count"]))
               for l in doc["letters"]]
    words = [Word(i, tuple(int(v) for v in w), modality) for i, w in enumerate(doc["words"])]
    scaler = Scaler(np.asarray(doc["scaler"]["mean"], dtype=float), np.asarray(doc["scaler"]["scale"], dtype=float))
    return Dictionary(modality, letters, words, scaler, list(doc.get("word_graphs", [])))


def model_to_json(bundle: ModelBundle) -> str:
    doc = {
        "version": MODEL_VERSION,
        "n_vehicles": bundle.n_vehicles,
        "dt": bundle.dt,
        "dictionaries": {"positional": _dict_doc(bundle.pos), "communication": _dict_doc(bundle.comm)},
        "transitions": {
            "positional_words": bundle.pos_word_tm.to_dict(),
            "communication_words": bundle.comm_word_tm.to_dict(),
            "positional_letters": bundle.pos_letter_tm.to_dict(),
            "communication_letters": bundle.comm_letter_tm.to_dict(),
        },
        "interaction": bundle.phi.to_dict(),
        "config": bundle.config,
        "fingerprint": bundle.fingerprint,
        "calibration": bundle.calibration,
        "reference": bundle.reference,
        "comm_derivative_weight": bundle.comm_derivative_weight,
        "letter_metric": bundle.letter_metric,
    }
    return json.dumps(doc, sort_keys=True, indent=1)


def save_model(bundle: ModelBundle, path) -> None:
    Path(path).write_text(model_to_json(bundle) + "\n", encoding="utf-8")


def load_model(path) -> ModelBundle:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except FileNotFoundError:
        raise
    except (OSError, UnicodeDecodeError) as exc:
        raise CorruptModelError(f"{path}: unreadable model file: {exc}") from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CorruptModelError(f"{path}: model file is not valid JSON ({exc})") from exc
    if not isinstance(doc, dict):
        raise CorruptModelError(f"{path}: model file is not a JSON object")
    if doc.get("version") != MODEL_VERSION:
        raise ModelVersionError(f"{path}: model version {doc.get('version')!r}, expected {MODEL_VERSION!r}")
    try:
        tr = doc["transitions"]
        bundle = ModelBundle(
            n_vehicles=int(doc["n_vehicles"]),
            dt=float(doc["dt"]),
            pos=_dict_from_doc(doc["dictionaries"]["positional"]),
            comm=_dict_from_doc(doc["dictionaries"]["communication"]),
            pos_word_tm=TransitionMatrix.from_dict(tr["positional_words"]),
            comm_word_tm=TransitionMatrix.from_dict(tr["communication_words"]),
            pos_letter_tm=TransitionMatrix.from_dict(tr["positional_letters"]),
            comm_letter_tm=TransitionMatrix.from_dict(tr["communication_letters"]),
            phi=InteractionMatrix.from_dict(doc["interaction"]),
            config=doc.get("config", {}),
            calibration=doc.get("calibration", {}),
            reference=doc.get("reference", "platoon"),
            comm_derivative_weight=float(doc.get("comm_derivative_weight", 1.0)),
            letter_metric=doc.get("letter_metric", "nll"),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptModelError(f"{path}: malformed model document: {exc}") from exc
    if doc.get("fingerprint") != bundle.fingerprint:
        raise CorruptModelError(f"{path}: config fingerprint does not match its contents")
    if bundle.phi.rows != bundle.pos.n_words or bundle.phi.cols != bundle.comm.n_words:
        raise CorruptModelError(f"{path}: interaction matrix shape does not match dictionaries")
    return bundle
