"""Independent reference computations used by the tests."""

from __future__ import annotations

import math

import numpy as np

from v2xguard.errdyn import COMMUNICATION, POSITIONAL, Letter, Scaler
from v2xguard.vocabulary import Dictionary, InteractionMatrix, ModelBundle, TransitionMatrix, Word


def forward_posteriors(A, init, loglik):
    """Exact filtering posteriors p(w_t | x_1..t) of a discrete HMM."""
    A = np.asarray(A, dtype=float)
    alpha = np.asarray(init, dtype=float)
    out = []
    for t, ll in enumerate(loglik):
        if t > 0:
            alpha = alpha @ A
        a = alpha * np.exp(ll - np.max(ll))
        alpha = a / a.sum()
        out.append(alpha)
    return np.array(out)


def gaussian_loglik(x, means, var):
    x = np.asarray(x, dtype=float)[:, None]
    m = np.asarray(means, dtype=float)[None, :]
    return -0.5 * ((x - m) ** 2 / var + math.log(2 * math.pi * var))


def sample_hmm(A, init, means, var, n_frames, seed):
    rng = np.random.default_rng(seed)
    A = np.asarray(A)
    states = [rng.choice(len(init), p=init)]
    for _ in range(n_frames - 1):
        states.append(rng.choice(len(A), p=A[states[-1]]))
    states = np.array(states)
    x = np.asarray(means)[states] + math.sqrt(var) * rng.standard_normal(n_frames)
    return states, x


def hmm_bundle(A, means, var=1.0, vel_var=100.0, dt=0.1, phi_counts=None) -> ModelBundle:
    """One vehicle, one letter per word, Gaussian letters differing only in x.

    ``phi_counts`` (positional words x communication words) sets the coupling;
    by default there is a single communication word.
    """
    k = len(means)
    letters = [Letter(i, np.array([means[i], 0.0, 0.0, 0.0]), np.diag([var, var, vel_var, vel_var]),
                      POSITIONAL, 10) for i in range(k)]
    words = [Word(i, (i,), POSITIONAL) for i in range(k)]
    pos = Dictionary(POSITIONAL, letters, words, Scaler(np.zeros(4), np.ones(4)))
    phi_counts = np.ones((k, 1), dtype=int) if phi_counts is None else np.asarray(phi_counts)
    m = phi_counts.shape[1]
    comm_letters = [Letter(j, np.array([0.0, 10.0 * j]), np.eye(2), COMMUNICATION, 10) for j in range(m)]
    comm = Dictionary(COMMUNICATION, comm_letters, [Word(j, (j,), COMMUNICATION) for j in range(m)],
                      Scaler(np.zeros(2), np.ones(2)), [""] * m)
    counts = np.rint(np.asarray(A) * 100000).astype(int)
    tm = TransitionMatrix(counts, 0.0)
    comm_tm = TransitionMatrix(np.ones((m, m), dtype=int), 0.0)
    phi = InteractionMatrix(phi_counts, 0.0)
    return ModelBundle(1, dt, pos, comm, tm, comm_tm, TransitionMatrix(counts, 0.0), comm_tm, phi,
                       config={"oracle": True}, calibration={}, reference="absolute")


def klda_by_hand(p, q, floor=1e-12):
    """Symmetric KL divergence with floored entries, written out longhand."""
    p = [max(float(v), floor) for v in p]
    q = [max(float(v), floor) for v in q]
    return sum(a * math.log(a / b) for a, b in zip(p, q)) + sum(b * math.log(b / a) for a, b in zip(p, q))
