"""
Generalized states, the null-force predictor, generalized errors, Growing
Neural Gas clustering and letter extraction.

Feature vectors are generalized states ``[value; derivative]`` (2d components).
The positional modality uses platoon-relative position and velocity; the
communication modality uses a vehicle's connectivity row and its frame-to-frame
difference.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import DimensionError, InsufficientDataError, ParameterError

POSITIONAL = "positional"
COMMUNICATION = "communication"
MODALITIES = (POSITIONAL, COMMUNICATION)
COV_EPS = 1e-6


@dataclass(frozen=True)
class GeneralizedSample:
    value: np.ndarray
    derivative: np.ndarray
    modality: str = POSITIONAL
    vehicle_id: int = 0
    frame: int = 0

    def __post_init__(self):
        v = np.atleast_1d(np.asarray(self.value, dtype=float))
        d = np.atleast_1d(np.asarray(self.derivative, dtype=float))
        if v.shape != d.shape or v.ndim != 1:
            raise DimensionError(f"value {v.shape} and derivative {d.shape} must be equal 1-D shapes")
        if not (np.all(np.isfinite(v)) and np.all(np.isfinite(d))):
            raise ParameterError("generalized sample is not finite")
        if self.modality not in MODALITIES:
            raise ParameterError(f"unknown modality {self.modality!r}")
        object.__setattr__(self, "value", v)
        object.__setattr__(self, "derivative", d)

    @property
    def dim(self) -> int:
        return self.value.shape[0]

    def vector(self) -> np.ndarray:
        return np.concatenate([self.value, self.derivative])


def null_force_predict(x_prev: GeneralizedSample, dt: float = 0.1) -> GeneralizedSample:
    """Constant-derivative prediction with the control input switched off."""
    return GeneralizedSample(x_prev.value + dt * x_prev.derivative, x_prev.derivative,
                             x_prev.modality, x_prev.vehicle_id, x_prev.frame + 1)


def generalized_error(observed: GeneralizedSample, predicted: GeneralizedSample) -> np.ndarray:
    if observed.dim != predicted.dim:
        raise DimensionError(f"dimension mismatch: {observed.dim} vs {predicted.dim}")
    if observed.modality != predicted.modality:
        raise DimensionError(f"modality mismatch: {observed.modality} vs {predicted.modality}")
    return observed.vector() - predicted.vector()


def constant_velocity_matrix(d: int, dt: float) -> np.ndarray:
    a = np.eye(2 * d)
    a[:d, d:] = dt * np.eye(d)
    return a


def generalized_error_series(features: np.ndarray, dt: float) -> np.ndarray:
    """Null-force errors along one track of generalized states, shape (T-1, 2d)."""
    features = np.asarray(features, dtype=float)
    d = features.shape[1] // 2
    pred = features[:-1] @ constant_velocity_matrix(d, dt).T
    return features[1:] - pred


# -- features -----------------------------------------------------------------------


def positional_features(positions: np.ndarray, velocities: np.ndarray) -> np.ndarray:
    """(T, N, 2) positions/velocities -> (T, N, 4) platoon-relative generalized states."""
    rp = positions - positions.mean(axis=1, keepdims=True)
    rv = velocities - velocities.mean(axis=1, keepdims=True)
    return np.concatenate([rp, rv], axis=2)


def relative_positions(positions: np.ndarray) -> np.ndarray:
    return positions - positions.mean(axis=-2, keepdims=True)


def null_force_filter(z: np.ndarray, dt: float, r_std: float = 0.5, accel_std: float = 1.0,
                      init_cov: float = 1e3) -> np.ndarray:
    """Causal constant-velocity Kalman filter over (T, N, 2) position tracks.

    Returns (T, N, 4) posterior generalized states ``[position; velocity]``.
    Learning on these estimates keeps training features consistent with what the
    online filter can reconstruct from the same observations.
    """
    z = np.asarray(z, dtype=float)
    t_len, n, _ = z.shape
    f = constant_velocity_matrix(2, dt)
    g = np.vstack([0.5 * dt * dt * np.eye(2), dt * np.eye(2)])
    q = accel_std ** 2 * g @ g.T
    r = r_std ** 2 * np.eye(2)
    out = np.empty((t_len, n, 4))
    x = np.concatenate([z[0], np.zeros((n, 2))], axis=1) if t_len else None
    p = np.repeat(init_cov * np.eye(4)[None], n, axis=0)
    for t in range(t_len):
        if t:
            x = x @ f.T
            p = f @ p @ f.T + q
        s = p[:, :2, :2] + r
        k = np.swapaxes(np.linalg.solve(s, p[:, :2, :]), 1, 2)
        x = x + np.einsum("nij,nj->ni", k, z[t] - x[:, :2])
        p = p - k @ p[:, :2, :]
        p = 0.5 * (p + np.swapaxes(p, 1, 2))
        out[t] = x
    return out


def communication_features(adjacency: np.ndarray, previous: np.ndarray | None = None,
                           derivative_weight: float = 1.0) -> np.ndarray:
    """One frame's (N, N) adjacency -> (N, 2N) rows with their (weighted) frame difference."""
    a = np.asarray(adjacency, dtype=float)
    prev = a if previous is None else np.asarray(previous, dtype=float)
    return np.concatenate([a, derivative_weight * (a - prev)], axis=1)


def communication_feature_series(adjacencies: np.ndarray, derivative_weight: float = 1.0) -> np.ndarray:
    a = np.asarray(adjacencies, dtype=float)
    diff = np.zeros_like(a)
    diff[1:] = a[1:] - a[:-1]
    return np.concatenate([a, derivative_weight * diff], axis=2)


@dataclass(frozen=True)
class Scaler:
    """Per-dimension standardisation; constant dimensions keep unit scale."""

    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, x: np.ndarray) -> Scaler:
        x = np.asarray(x, dtype=float)
        std = x.std(axis=0)
        std[std < 1e-12] = 1.0
        return cls(x.mean(axis=0), std)

    def transform(self, x):
        return (np.asarray(x, dtype=float) - self.mean) / self.scale

    def inverse(self, x):
        return np.asarray(x, dtype=float) * self.scale + self.mean

    def transform_cov(self, cov):
        s = 1.0 / self.scale
        return cov * s[:, None] * s[None, :]

    def inverse_cov(self, cov):
        return cov * self.scale[:, None] * self.scale[None, :]


# -- growing neural gas -------------------------------------------------------------


@dataclass(frozen=True)
class GngConfig:
    max_nodes: int = 30
    lambda_insert: int = 100
    eps_b: float = 0.05
    eps_n: float = 0.006
    max_age: int = 88
    alpha_split: float = 0.5
    d_decay: float = 0.995
    epochs: int = 3
    seed: int = 0
    refine_iters: int = 2


@dataclass
class GngNode:
    prototype: np.ndarray
    error_accum: float = 0.0
    edges: dict[int, int] = field(default_factory=dict)


def _connect(nodes, a, b):
    nodes[a].edges[b] = 0
    nodes[b].edges[a] = 0


def gng_fit(samples, config: GngConfig = GngConfig()) -> list[GngNode]:
    """Fritzke's Growing Neural Gas followed by a short centroid polish.

    Nodes are returned with edges re-keyed to their list positions. The polish
    (``refine_iters`` Lloyd steps) removes the bias that neighbour updates leave
    on prototypes of well-separated clusters.
    """
    x = np.asarray(samples, dtype=float)
    if x.ndim != 2:
        raise DimensionError("samples must be a 2-D array")
    if config.max_nodes < 2:
        raise ParameterError("max_nodes must be at least 2")
    if len(x) < config.max_nodes:
        raise InsufficientDataError(f"{len(x)} samples for max_nodes={config.max_nodes}")
    rng = np.random.default_rng(config.seed)

    i0, i1 = rng.choice(len(x), size=2, replace=False)
    nodes: dict[int, GngNode] = {0: GngNode(x[i0].copy()), 1: GngNode(x[i1].copy())}
    _connect(nodes, 0, 1)
    next_id = 2
    step = 0
    for _ in range(config.epochs):
        for idx in rng.permutation(len(x)):
            xi = x[idx]
            ids = list(nodes)
            protos = np.array([nodes[k].prototype for k in ids])
            d2 = np.sum((protos - xi) ** 2, axis=1)
            order = np.argsort(d2, kind="stable")
            s1, s2 = ids[order[0]], ids[order[1]]
            n1 = nodes[s1]
            for nb in n1.edges:
                n1.edges[nb] += 1
                nodes[nb].edges[s1] += 1
            n1.error_accum += float(d2[order[0]])
            n1.prototype += config.eps_b * (xi - n1.prototype)
            for nb in n1.edges:
                nodes[nb].prototype += config.eps_n * (xi - nodes[nb].prototype)
            _connect(nodes, s1, s2)

            stale = [nb for nb, age in n1.edges.items() if age > config.max_age]
            for nb in stale:
                del n1.edges[nb]
                del nodes[nb].edges[s1]
            for k in [k for k, nd in nodes.items() if not nd.edges and len(nodes) > 2]:
                del nodes[k]

            step += 1
            if step % config.lambda_insert == 0 and len(nodes) < config.max_nodes:
                q = max(nodes, key=lambda k: nodes[k].error_accum)
                if nodes[q].edges:
                    f = max(nodes[q].edges, key=lambda k: nodes[k].error_accum)
                    r = next_id
                    next_id += 1
                    nodes[r] = GngNode(0.5 * (nodes[q].prototype + nodes[f].prototype))
                    del nodes[q].edges[f]
                    del nodes[f].edges[q]
                    _connect(nodes, q, r)
                    _connect(nodes, f, r)
                    nodes[q].error_accum *= config.alpha_split
                    nodes[f].error_accum *= config.alpha_split
                    nodes[r].error_accum = nodes[q].error_accum
            for nd in nodes.values():
                nd.error_accum *= config.d_decay

    ids = sorted(nodes)
    remap = {k: i for i, k in enumerate(ids)}
    out = [GngNode(nodes[k].prototype.copy(), nodes[k].error_accum,
                   {remap[nb]: age for nb, age in nodes[k].edges.items()}) for k in ids]

    for _ in range(config.refine_iters):
        protos = np.array([n.prototype for n in out])
        assign = nearest(x, protos)
        for i, n in enumerate(out):
            members = x[assign == i]
            if len(members):
                n.prototype = members.mean(axis=0)
    return out


def nearest(x: np.ndarray, protos: np.ndarray) -> np.ndarray:
    """Index of the nearest prototype per row (Euclidean, lowest index on ties)."""
    d2 = (np.sum(x * x, axis=1)[:, None] - 2.0 * x @ protos.T + np.sum(protos * protos, axis=1)[None, :])
    return np.argmin(d2, axis=1)


def quantization_error(x: np.ndarray, protos: np.ndarray) -> float:
    x = np.asarray(x, dtype=float)
    d2 = np.sum((x[:, None, :] - protos[None, :, :]) ** 2, axis=2)
    return float(d2.min(axis=1).mean())


# -- letters ----------------------------------------------------------------------


@dataclass(frozen=True)
class Letter:
    id: int
    mean: np.ndarray
    covariance: np.ndarray
    modality: str
    member_count: int

    def __post_init__(self):
        if self.member_count < 1:
            raise ParameterError("a letter needs at least one member")

    @property
    def dim(self) -> int:
        return self.mean.shape[0] // 2

    @property
    def mean_value(self) -> np.ndarray:
        return self.mean[: self.dim]

    @property
    def mean_derivative(self) -> np.ndarray:
        return self.mean[self.dim:]


def _cluster_stats(x, assign, k, eps):
    members = x[assign == k]
    mean = members.mean(axis=0)
    if len(members) > 1:
        centred = members - mean
        cov = centred.T @ centred / len(members)
    else:
        cov = np.zeros((x.shape[1], x.shape[1]))
    cov = 0.5 * (cov + cov.T) + eps * np.eye(x.shape[1])
    return mean, cov, len(members)


def letters_from_assignment(x: np.ndarray, assign: np.ndarray, modality: str,
                            eps: float = COV_EPS) -> tuple[list[Letter], np.ndarray]:
    """Gaussian letter per non-empty cluster; returns letters and the re-indexed assignment."""
    used = np.unique(assign)
    remap = np.full(int(assign.max()) + 1, -1)
    remap[used] = np.arange(len(used))
    letters = []
    for new, old in enumerate(used):
        mean, cov, count = _cluster_stats(x, assign, old, eps)
        letters.append(Letter(new, mean, cov, modality, count))
    return letters, remap[assign]


def extract_letters(nodes: Sequence[GngNode], samples, modality: str = POSITIONAL,
                    eps: float = COV_EPS, refine: bool = False,
                    max_iter: int = 30, metric: str = "mahalanobis") -> list[Letter]:
    """Nearest-prototype partition of ``samples`` summarised as Gaussian letters.

    With ``refine`` the partition is iterated under the letterize rule until it
    is a fixed point, so re-letterizing the training samples reproduces it.
    """
    letters, _ = extract_letters_with_assignment(nodes, samples, modality, eps, refine, max_iter, metric)
    return letters


def extract_letters_with_assignment(nodes, samples, modality=POSITIONAL, eps=COV_EPS,
                                    refine=False, max_iter=30, metric="mahalanobis"):
    if not len(nodes):
        raise ParameterError("no GNG nodes to extract letters from")
    x = np.asarray(samples, dtype=float)
    protos = np.array([n.prototype for n in nodes])
    letters, assign = letters_from_assignment(x, nearest(x, protos), modality, eps)
    if refine:
        for _ in range(max_iter):
            new = letter_scores(x, letters, metric).argmin(axis=1)
            if np.array_equal(new, assign):
                break
            letters, assign = letters_from_assignment(x, new, modality, eps)
    return letters, assign


def letter_scores(x: np.ndarray, letters: Sequence[Letter], metric: str = "mahalanobis") -> np.ndarray:
    """Distance of each row to each letter; lower is closer.

    ``metric="mahalanobis"`` is the squared Mahalanobis distance; ``"nll"`` adds the
    log-determinant, i.e. the Gaussian negative log-likelihood up to a constant.
    Letters whose covariance cannot be factorised fall back to squared Euclidean
    distance.
    """
    if metric not in ("nll", "mahalanobis"):
        raise ParameterError(f"unknown letter metric {metric!r}")
    x = np.atleast_2d(np.asarray(x, dtype=float))
    means = np.array([l.mean for l in letters])
    covs = np.array([l.covariance for l in letters])
    diff = x[None, :, :] - means[:, None, :]  # (L, n, d)
    try:
        chol = np.linalg.cholesky(covs)
    except np.linalg.LinAlgError:
        chol = None
    if chol is not None:
        z = np.linalg.solve(chol, np.swapaxes(diff, 1, 2))  # (L, d, n)
        out = np.sum(z * z, axis=1)
        if metric == "nll":
            out += 2.0 * np.sum(np.log(np.diagonal(chol, axis1=1, axis2=2)), axis=1)[:, None]
        return out.T
    out = np.empty((x.shape[0], len(letters)))
    for k, letter in enumerate(letters):
        try:
            ck = np.linalg.cholesky(letter.covariance)
        except np.linalg.LinAlgError:
            out[:, k] = np.sum(diff[k] * diff[k], axis=1)
            continue
        z = np.linalg.solve(ck, diff[k].T)
        out[:, k] = np.sum(z * z, axis=0)
        if metric == "nll":
            out[:, k] += 2.0 * np.sum(np.log(np.diag(ck)))
    return out
