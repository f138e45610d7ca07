"""Exact tabular I2Q on small deterministic multi-agent MDPs.

``next_state`` has shape ``(S, A_1, ..., A_N)``; ``reward`` has shape
``(S, S)`` and gives R(s, s'). These routines exist to check the learned
operators against exact fixed points.
"""

from __future__ import annotations

import numpy as np


def neighbours(next_state: np.ndarray) -> list[np.ndarray]:
    s = next_state.shape[0]
    return [np.unique(next_state[i].ravel()) for i in range(s)]


def qss_fixed_point(
    next_state: np.ndarray, reward: np.ndarray, gamma: float, tol: float = 1e-12, max_iter: int = 100_000
) -> np.ndarray:
    """Iterate Q^ss(s, s') = R(s, s') + gamma * max_{s'' in N(s')} Q^ss(s', s'').

    Entries for non-neighbouring pairs are ``-inf``.
    """
    n = next_state.shape[0]
    nb = neighbours(next_state)
    valid = np.zeros((n, n), dtype=bool)
    for s in range(n):
        valid[s, nb[s]] = True
    q = np.where(valid, 0.0, -np.inf)
    for _ in range(max_iter):
        best = np.array([q[s, nb[s]].max() for s in range(n)])
        new = np.where(valid, reward + gamma * best[None, :], -np.inf)
        if np.max(np.abs(new[valid] - q[valid])) < tol:
            return new
        q = new
    raise RuntimeError("Q^ss iteration did not converge")


def best_transition(qss: np.ndarray, next_state: np.ndarray, agent: int) -> np.ndarray:
    """Exact f_i(s, a_i): the reachable next state with the highest Q^ss value."""
    n_states = next_state.shape[0]
    n_actions = next_state.shape[agent + 1]
    out = np.zeros((n_states, n_actions), dtype=np.int64)
    for s in range(n_states):
        for a in range(n_actions):
            reach = np.unique(np.take(next_state[s], a, axis=agent).ravel())
            out[s, a] = reach[np.argmax(qss[s, reach])]
    return out


def individual_q(
    qss: np.ndarray, next_state: np.ndarray, reward: np.ndarray, gamma: float, agent: int,
    tol: float = 1e-12, max_iter: int = 100_000,
) -> np.ndarray:
    """Iterate Q_i(s, a_i) = R(s, f_i(s, a_i)) + gamma * max_a' Q_i(f_i(s, a_i), a')."""
    f = best_transition(qss, next_state, agent)
    n_states, n_actions = f.shape
    rows = np.arange(n_states)[:, None]
    q = np.zeros((n_states, n_actions))
    for _ in range(max_iter):
        new = reward[rows, f] + gamma * q.max(axis=1)[f]
        if np.max(np.abs(new - q)) < tol:
            return new
        q = new
    raise RuntimeError("Q_i iteration did not converge")
