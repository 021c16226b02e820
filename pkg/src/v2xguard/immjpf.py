"""
Interactive Markov jump particle filter over the two learned dictionaries.

Discrete level: particles over positional words, propagated with the
dwell-conditioned word transition matrix. Continuous level: one Kalman filter
per vehicle on the platoon-relative state, driven by the letter's mean
derivative. Communication words are not sampled; their prediction is the
interaction-matrix image of the positional belief combined with the
communication word chain, and their diagnostic message comes from the
letterized observed graph.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errdyn import communication_features
from .errors import DimensionError, NormalizationError, ParameterError, StreamError
from .radio import ConnectivityGraph
from .vocabulary import ModelBundle, letterize

NORM_TOL = 1e-9
LOG_2PI = float(np.log(2.0 * np.pi))


@dataclass(frozen=True)
class FilterConfig:
    n_particles: int = 200
    seed: int = 0
    control_gain: float = 0.05
    q_scale: float = 0.1
    r_std: float = 0.5
    init_cov: float = 1e3
    comm_confusion: float = 0.05
    unknown_prior: float = 1e-3
    ess_fraction: float = 0.5
    comm_coupling: str = "posterior"  # use the positional posterior or prediction at t in π(W^c)
    comm_chain: bool = True  # multiply in the communication word chain
    coupling_source: str = "analytic"  # positional posterior as exact reweighting of π, or "particles"

    def __post_init__(self):
        if self.n_particles < 1:
            raise ParameterError("n_particles must be >= 1")
        if not 0.0 <= self.control_gain <= 1.0:
            raise ParameterError("control_gain must lie in [0, 1]")
        if self.r_std <= 0 or self.q_scale < 0 or self.init_cov <= 0:
            raise ParameterError("noise scales must be positive")
        if not 0.0 < self.comm_confusion < 1.0:
            raise ParameterError("comm_confusion must lie in (0, 1)")
        if not 0.0 < self.unknown_prior < 1.0:
            raise ParameterError("unknown_prior must lie in (0, 1)")
        if self.comm_coupling not in ("posterior", "predictive"):
            raise ParameterError(f"unknown comm_coupling {self.comm_coupling!r}")
        if self.coupling_source not in ("analytic", "particles"):
            raise ParameterError(f"unknown coupling_source {self.coupling_source!r}")


@dataclass(frozen=True)
class Particle:
    pos_word: int
    letters: tuple[int, ...]
    weight: float
    dwell: tuple[int, ...]


@dataclass(frozen=True)
class KalmanTrack:
    vehicle_id: int
    mean: np.ndarray
    covariance: np.ndarray
    letter: int = -1

    def __post_init__(self):
        c = np.asarray(self.covariance, dtype=float)
        if not np.allclose(c, c.T, atol=1e-9):
            raise NormalizationError(f"track {self.vehicle_id}: covariance not symmetric")
        if np.linalg.eigvalsh(c).min() < -1e-9:
            raise NormalizationError(f"track {self.vehicle_id}: covariance not PSD")


@dataclass
class BeliefSnapshot:
    frame: int
    pi_word_pos: np.ndarray | None = None
    lambda_word_pos: np.ndarray | None = None
    pi_word_comm: np.ndarray | None = None
    lambda_word_comm: np.ndarray | None = None
    pi_letters: np.ndarray | None = None  # (N, letters)
    lambda_letters: np.ndarray | None = None
    post_word_pos: np.ndarray | None = None  # posterior over known positional words after the update
    particle_word_pos: np.ndarray | None = None  # weighted particle histogram, before resampling
    predicted_graph: ConnectivityGraph | None = None
    tracks: list[KalmanTrack] = field(default_factory=list)
    observed_word_comm: int = -1
    reinitialized: bool = False

    def to_dict(self) -> dict:
        def arr(a):
            return None if a is None else np.asarray(a).tolist()
        return {
            "frame": self.frame,
            "pi_word_pos": arr(self.pi_word_pos),
            "lambda_word_pos": arr(self.lambda_word_pos),
            "pi_word_comm": arr(self.pi_word_comm),
            "lambda_word_comm": arr(self.lambda_word_comm),
            "pi_letters": arr(self.pi_letters),
            "lambda_letters": arr(self.lambda_letters),
            "post_word_pos": arr(self.post_word_pos),
            "particle_word_pos": arr(self.particle_word_pos),
            "predicted_graph": None if self.predicted_graph is None else self.predicted_graph.to_bits(),
            "tracks": [{"vehicle_id": t.vehicle_id, "mean": t.mean.tolist(), "letter": t.letter}
                       for t in self.tracks],
            "observed_word_comm": self.observed_word_comm,
            "reinitialized": self.reinitialized,
        }


def write_snapshots(snapshots, path) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for s in snapshots:
            fh.write(json.dumps(s.to_dict(), sort_keys=True) + "\n")


def _check_dist(p: np.ndarray, what: str, frame: int) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    sums = p.sum(axis=-1)
    if np.any(p < 0) or not np.all(np.isfinite(p)) or np.any(np.abs(sums - 1.0) > NORM_TOL):
        raise NormalizationError(f"frame {frame}: {what} is not a normalized distribution (sum {sums})")
    return p


def _normalize_log(logp: np.ndarray) -> np.ndarray:
    m = np.max(logp, axis=-1, keepdims=True)
    p = np.exp(logp - m)
    return p / p.sum(axis=-1, keepdims=True)


def _normalize(p: np.ndarray) -> np.ndarray:
    return p / p.sum(axis=-1, keepdims=True)


# -- filter state -------------------------------------------------------------------


@dataclass
class FilterState:
    config: FilterConfig
    rng: np.random.Generator
    words: np.ndarray  # (P,) positional word per particle
    weights: np.ndarray  # (P,)
    word_dwell: np.ndarray  # (P,) frames spent in the current word
    letter_dwell: np.ndarray  # (P, N)
    frame: int = 0
    means: np.ndarray | None = None  # (N, 4) physical units
    covs: np.ndarray | None = None  # (N, 4, 4)
    comm_post: np.ndarray | None = None
    prev_adj: np.ndarray | None = None
    pending: BeliefSnapshot | None = None
    pi_pos: np.ndarray | None = None  # predicted positional word distribution (known words only)
    reinit_frames: list[int] = field(default_factory=list)

    def particles(self, model: ModelBundle) -> list[Particle]:
        table = model.pos.word_letters()
        return [Particle(int(w), tuple(table[w].tolist()), float(wt), tuple(d.tolist()))
                for w, wt, d in zip(self.words, self.weights, self.letter_dwell)]


def _control_matrices(gain: float, dt: float):
    eye = np.eye(2)
    f = np.block([[eye, dt * (1.0 - gain) * eye], [np.zeros((2, 2)), (1.0 - gain) * eye]])
    b = np.vstack([gain * dt * eye, gain * eye])
    return f, b


def init_filter(model: ModelBundle, n_particles: int | None = None, seed: int | None = None,
                config: FilterConfig | None = None) -> FilterState:
    config = config or FilterConfig()
    if n_particles is not None or seed is not None:
        config = FilterConfig(**{**config.__dict__,
                                 "n_particles": config.n_particles if n_particles is None else n_particles,
                                 "seed": config.seed if seed is None else seed})
    if model.pos.n_words == 0 or model.comm.n_words == 0:
        raise ParameterError("model dictionary is empty")
    rng = np.random.default_rng(config.seed)
    p = config.n_particles
    words = rng.integers(0, model.pos.n_words, size=p)
    return FilterState(config, rng, words, np.full(p, 1.0 / p), np.ones(p, dtype=int),
                       np.ones((p, model.n_vehicles), dtype=int))


def _sample_rows(rows: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    cum = np.cumsum(rows, axis=1)
    u = rng.random(rows.shape[0]) * cum[:, -1]
    return np.minimum((cum <= u[:, None]).sum(axis=1), rows.shape[1] - 1)


def _letter_marginals(word_dist: np.ndarray, table: np.ndarray, n_letters: int) -> np.ndarray:
    n = table.shape[1]
    out = np.zeros((n, n_letters))
    for k in range(n):
        np.add.at(out[k], table[:, k], word_dist)
    return out


def predict_step(state: FilterState, model: ModelBundle) -> BeliefSnapshot:
    cfg = state.config
    t = state.frame
    table = _model_cache(model)["table"]
    n_words = model.pos.n_words

    if t == 0:
        pi_pos = np.bincount(state.words, weights=state.weights, minlength=n_words)
    else:
        rows = model.pos_word_tm.rows(state.words, state.word_dwell)
        pi_pos = state.weights @ rows
        new = _sample_rows(rows, state.rng)
        same_word = new == state.words
        state.word_dwell = np.where(same_word, state.word_dwell + 1, 1)
        same_letter = table[new] == table[state.words]
        state.letter_dwell = np.where(same_letter, state.letter_dwell + 1, 1)
        state.words = new
    pi_pos = _check_dist(_normalize(pi_pos), "pi(W^p)", t)
    pi_letters = _check_dist(_letter_marginals(pi_pos, table, len(model.pos.letters)), "pi(S)", t)

    if state.means is not None:
        f, b = _control_matrices(cfg.control_gain, model.dt)
        cache = _model_cache(model)
        u = pi_letters @ cache["deriv"]  # (N, 2)
        q = cfg.q_scale * np.tensordot(pi_letters, cache["cov_phys"], axes=1)  # (N, 4, 4)
        state.means = state.means @ f.T + u @ b.T
        c = f @ state.covs @ f.T + q
        state.covs = 0.5 * (c + np.swapaxes(c, 1, 2))

    pi_ext = _check_dist(np.append((1.0 - cfg.unknown_prior) * pi_pos, cfg.unknown_prior), "pi(W^p)", t)
    snap = BeliefSnapshot(frame=t, pi_word_pos=pi_ext, pi_letters=pi_letters)
    state.pi_pos = pi_pos
    if cfg.comm_coupling == "predictive" or t == 0:
        snap.pi_word_comm = _comm_prior(state, model, pi_pos)
        snap.predicted_graph = _predicted_graph(model, snap.pi_word_comm, t)
    state.pending = snap
    return snap


def _comm_prior(state: FilterState, model: ModelBundle, pos_dist: np.ndarray) -> np.ndarray:
    cfg = state.config
    coupling = pos_dist @ model.phi.probs
    if cfg.comm_chain and state.comm_post is not None:
        known = state.comm_post[:-1] @ model.comm_word_tm.probs
        known = known + state.comm_post[-1] / model.comm.n_words
        coupling = coupling * known
    coupling = _normalize(coupling)
    prior = np.append((1.0 - cfg.unknown_prior) * coupling, cfg.unknown_prior)
    return _check_dist(prior, "pi(W^c)", state.frame)


def _predicted_graph(model: ModelBundle, pi_comm: np.ndarray, frame: int) -> ConnectivityGraph:
    w = int(np.argmax(pi_comm[:-1]))
    return ConnectivityGraph(model.comm.word_adjacency(w, model.n_vehicles), frame)


def _relative(model: ModelBundle, positions: np.ndarray) -> np.ndarray:
    if model.reference == "platoon":
        return positions - positions.mean(axis=0, keepdims=True)
    return positions


def _model_cache(model: ModelBundle) -> dict:
    cache = model.__dict__.get("_filter_cache")
    if cache is None:
        letters = model.pos.letters
        cache = {
            "table": model.pos.word_letters(),
            "mean": np.array([l.mean for l in letters]),
            "cov": np.array([l.covariance for l in letters]),
            "deriv": np.array([model.pos.scaler.inverse(l.mean)[2:] for l in letters]),
            "cov_phys": np.array([model.pos.scaler.inverse_cov(l.covariance) for l in letters]),
            "comm_table": model.comm.word_letters(),
        }
        model.__dict__["_filter_cache"] = cache
    return cache


def _systematic_resample(weights: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    p = len(weights)
    positions = (rng.random() + np.arange(p)) / p
    cum = np.cumsum(weights)
    cum[-1] = 1.0
    return np.searchsorted(cum, positions, side="right")


def update_step(state: FilterState, positions, adjacency, model: ModelBundle) -> BeliefSnapshot:
    """Assimilate one frame. ``adjacency`` may be None (no graph report at this frame)."""
    cfg = state.config
    t = state.frame
    snap = state.pending
    if snap is None or snap.frame != t:
        raise StreamError(f"update for frame {t} without a matching prediction")
    pos = np.asarray(positions, dtype=float)
    n = model.n_vehicles
    if pos.shape != (n, 2):
        raise DimensionError(f"frame {t}: expected positions of shape ({n}, 2), got {pos.shape}")

    z = _relative(model, pos)
    r = cfg.r_std ** 2 * np.eye(2)
    if state.means is None:
        state.means = np.hstack([z, np.zeros_like(z)])
        state.covs = np.repeat(cfg.init_cov * np.eye(4)[None], n, axis=0)
    h = np.hstack([np.eye(2), np.zeros((2, 2))])
    p = state.covs
    s_cov = p[:, :2, :2] + r
    gain = np.swapaxes(np.linalg.solve(s_cov, p[:, :2, :]), 1, 2)  # (N, 4, 2)
    state.means = state.means + np.einsum("nij,nj->ni", gain, z - state.means[:, :2])
    ikh = np.eye(4)[None] - gain @ h
    c = ikh @ p @ np.swapaxes(ikh, 1, 2) + gain @ r @ np.swapaxes(gain, 1, 2)
    state.covs = 0.5 * (c + np.swapaxes(c, 1, 2))
    if np.linalg.eigvalsh(state.covs).min() < -1e-9:
        raise NormalizationError(f"frame {t}: a track covariance lost positive semi-definiteness")

    # letter likelihoods in normalized feature space
    cache = _model_cache(model)
    scale = model.pos.scaler.scale
    m = model.pos.scaler.transform(state.means)  # (N, 4)
    pk = state.covs / scale[None, :, None] / scale[None, None, :]
    covs = cache["cov"][None] + pk[:, None]  # (N, L, 4, 4)
    chol = np.linalg.cholesky(covs)
    diff = (m[:, None, :] - cache["mean"][None])[..., None]
    zz = np.linalg.solve(chol, diff)[..., 0]
    logdet = 2.0 * np.sum(np.log(np.diagonal(chol, axis1=2, axis2=3)), axis=2)
    loglik = -0.5 * (np.sum(zz * zz, axis=2) + logdet + m.shape[1] * LOG_2PI)
    lambda_letters = _check_dist(_normalize_log(loglik), "lambda(S)", t)

    table = cache["table"]
    word_ll = loglik[np.arange(n)[None, :], table].sum(axis=1)
    best = loglik.argmax(axis=1)
    if model.pos.lookup(best) == model.pos.unknown_id:
        unknown_ll = loglik.max(axis=1).sum()
    else:
        top2 = np.sort(loglik, axis=1)[:, -2:] if loglik.shape[1] > 1 else np.repeat(loglik, 2, axis=1)
        unknown_ll = loglik.max(axis=1).sum() - np.min(top2[:, 1] - top2[:, 0])
    lambda_pos = _check_dist(_normalize_log(np.append(word_ll, unknown_ll)), "lambda(W^p)", t)

    with np.errstate(divide="ignore"):
        logw = np.log(state.weights) + word_ll[state.words]
    reinit = False
    if not np.any(np.isfinite(logw)):
        reinit = True
        state.reinit_frames.append(t)
        state.words = state.rng.integers(0, model.pos.n_words, size=cfg.n_particles)
        state.word_dwell[:] = 1
        state.letter_dwell[:] = 1
        state.weights = np.full(cfg.n_particles, 1.0 / cfg.n_particles)
    else:
        state.weights = _normalize_log(logw)
    _check_dist(state.weights, "particle weights", t)
    hist = _check_dist(np.bincount(state.words, weights=state.weights, minlength=model.pos.n_words),
                       "particle histogram", t)
    if cfg.coupling_source == "analytic":
        post_pos = _normalize_log(np.log(np.maximum(state.pi_pos, 1e-300)) + word_ll)
    else:
        post_pos = hist
    post_pos = _check_dist(_normalize(post_pos), "posterior(W^p)", t)
    snap.post_word_pos = post_pos
    snap.particle_word_pos = hist

    ess = 1.0 / np.sum(state.weights ** 2)
    if ess < cfg.ess_fraction * cfg.n_particles:
        idx = _systematic_resample(state.weights, state.rng)
        state.words = state.words[idx]
        state.word_dwell = state.word_dwell[idx]
        state.letter_dwell = state.letter_dwell[idx]
        state.weights = np.full(cfg.n_particles, 1.0 / cfg.n_particles)

    # communication modality
    if snap.pi_word_comm is None:
        snap.pi_word_comm = _comm_prior(state, model, post_pos)
        snap.predicted_graph = _predicted_graph(model, snap.pi_word_comm, t)
    if adjacency is None:
        lambda_comm = np.full(model.comm.n_words + 1, 1.0 / (model.comm.n_words + 1))
        observed = -1
    else:
        adj = np.asarray(adjacency)
        if adj.shape != (n, n):
            raise DimensionError(f"frame {t}: expected a {n}x{n} adjacency, got {adj.shape}")
        lambda_comm, observed = _comm_lambda(model, adj, state.prev_adj, cfg.comm_confusion)
        state.prev_adj = adj
    lambda_comm = _check_dist(lambda_comm, "lambda(W^c)", t)
    state.comm_post = _check_dist(_normalize(snap.pi_word_comm * lambda_comm), "posterior(W^c)", t)

    snap.lambda_word_pos = lambda_pos
    snap.lambda_letters = lambda_letters
    snap.lambda_word_comm = lambda_comm
    snap.observed_word_comm = observed
    snap.reinitialized = reinit
    best_letter = lambda_letters.argmax(axis=1)
    snap.tracks = [KalmanTrack(k, state.means[k].copy(), state.covs[k].copy(), int(best_letter[k]))
                   for k in range(n)]
    state.pending = None
    state.frame += 1
    return snap


def _comm_lambda(model: ModelBundle, adj: np.ndarray, prev: np.ndarray | None, eps: float):
    """Word compatibility of the letterized observed graph, UNKNOWN last."""
    feats = model.comm.scaler.transform(communication_features(adj, prev, model.comm_derivative_weight))
    obs = letterize(feats, model.comm.letters, model.letter_metric)
    n_letters = len(model.comm.letters)
    miss = np.log(eps / max(n_letters - 1, 1))
    hit = np.log1p(-eps)
    table = _model_cache(model)["comm_table"]
    matches = (table == obs[None, :]).sum(axis=1)
    n = table.shape[1]
    score = matches * hit + (n - matches) * miss
    wid = model.comm.lookup(obs)
    unknown = n * hit if wid == model.comm.unknown_id else (n - 1) * hit + miss
    return _normalize_log(np.append(score, unknown)), wid


def run_sequence(model: ModelBundle, positions, graphs, n_particles: int | None = None,
                 seed: int | None = None, config: FilterConfig | None = None) -> list[BeliefSnapshot]:
    """Alternate predict/update over every frame. ``graphs`` entries may be None."""
    pos = np.asarray(getattr(positions, "positions", positions), dtype=float)
    graphs = list(graphs)
    if len(pos) != len(graphs):
        raise StreamError(f"{len(pos)} position frames but {len(graphs)} graphs")
    state = init_filter(model, n_particles, seed, config)
    out = []
    for t in range(len(pos)):
        g = graphs[t]
        adj = None if g is None else getattr(g, "adjacency", g)
        predict_step(state, model)
        out.append(update_step(state, pos[t], adj, model))
    return out
