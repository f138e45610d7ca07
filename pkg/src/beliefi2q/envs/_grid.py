"""Square-grid helpers shared by the Oracle, Gathering and Escape worlds."""

from __future__ import annotations

import numpy as np

from ..core import FLOAT

UNSEEN = -1.0

# (dx, dy); index 0 is the void action everywhere.
MOVES_4 = ((0, 0), (0, 1), (0, -1), (-1, 0), (1, 0))
MOVES_8 = ((0, 0), (0, 1), (1, 1), (1, 0), (1, -1), (0, -1), (-1, -1), (-1, 0), (-1, 1))


def encode_positions(pos: np.ndarray, grid_size: int) -> np.ndarray:
    return (np.asarray(pos, dtype=np.float64) / (grid_size - 1)).astype(FLOAT).ravel()


def decode_positions(vec: np.ndarray, grid_size: int) -> np.ndarray:
    return np.rint(np.asarray(vec, dtype=np.float64).reshape(-1, 2) * (grid_size - 1)).astype(np.int64)


def apply_moves(pos: np.ndarray, actions, moves, grid_size: int) -> np.ndarray:
    delta = np.array([moves[a] for a in actions], dtype=np.int64)
    return np.clip(pos + delta, 0, grid_size - 1)


def visibility_mask(pos: np.ndarray, grid_size: int, radius: int) -> np.ndarray:
    """Union of Chebyshev disks around every agent, indexed ``[x, y]``."""
    xs = np.arange(grid_size)
    mask = np.zeros((grid_size, grid_size), dtype=bool)
    for x, y in pos:
        mask |= (np.abs(xs[:, None] - x) <= radius) & (np.abs(xs[None, :] - y) <= radius)
    return mask


def sample_cells(rng: np.random.Generator, grid_size: int, n: int, exclude=()) -> np.ndarray:
    """Draw ``n`` distinct cells uniformly, avoiding ``exclude``."""
    banned = {int(x) * grid_size + int(y) for x, y in exclude}
    free = np.array([c for c in range(grid_size * grid_size) if c not in banned])
    if len(free) < n:
        raise ValueError("grid too small for requested placement")
    picked = rng.choice(free, size=n, replace=False)
    return np.stack([picked // grid_size, picked % grid_size], axis=1).astype(np.int64)


def resolve_collisions(old: np.ndarray, proposed: np.ndarray) -> tuple[np.ndarray, int]:
    """Bounce agents that contest a cell or swap places; return (positions, #collisions).

    Resolution repeats until stable because a bounced agent can re-contest
    the cell it came from.
    """
    new = proposed.copy()
    n = len(old)
    collisions = 0
    while True:
        bounce = np.zeros(n, dtype=bool)
        events = 0
        cells: dict[tuple[int, int], list[int]] = {}
        for i in range(n):
            cells.setdefault((int(new[i, 0]), int(new[i, 1])), []).append(i)
        for members in cells.values():
            if len(members) > 1:
                events += 1
                for i in members:
                    if not np.array_equal(new[i], old[i]):
                        bounce[i] = True
        for i in range(n):
            for j in range(i + 1, n):
                moved = not np.array_equal(new[i], old[i]) and not np.array_equal(new[j], old[j])
                if moved and np.array_equal(new[i], old[j]) and np.array_equal(new[j], old[i]):
                    events += 1
                    bounce[i] = bounce[j] = True
        if not bounce.any():
            return new, collisions
        collisions += events
        new[bounce] = old[bounce]
