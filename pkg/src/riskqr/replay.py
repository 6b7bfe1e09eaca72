"""Ring buffer of transitions that also stores each step's violation cost."""
from dataclasses import dataclass

import numpy as np


class InsufficientData(RuntimeError):
    pass


@dataclass(frozen=True)
class Transition:
    obs: np.ndarray
    action: int
    g: float
    cost: float
    next_obs: np.ndarray
    done: bool


@dataclass(frozen=True)
class Batch:
    obs: np.ndarray
    actions: np.ndarray
    g: np.ndarray
    costs: np.ndarray
    next_obs: np.ndarray
    done: np.ndarray

    def __len__(self):
        return self.actions.shape[0]


class ReplayBuffer:
    def __init__(self, capacity):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = int(capacity)
        self.size = 0
        self.cursor = 0
        self._obs = None

    def __len__(self):
        return self.size

    def _allocate(self, obs_dim):
        n = self.capacity
        self._obs = np.zeros((n, obs_dim))
        self._next = np.zeros((n, obs_dim))
        self._act = np.zeros(n, dtype=np.int64)
        self._g = np.zeros(n)
        self._cost = np.zeros(n)
        self._done = np.zeros(n, dtype=bool)

    def push(self, t):
        obs = np.asarray(t.obs, dtype=np.float64)
        nxt = np.asarray(t.next_obs, dtype=np.float64)
        if obs.ndim != 1 or obs.shape != nxt.shape:
            raise ValueError("obs and next_obs must be vectors of equal length")
        if self._obs is None:
            self._allocate(obs.shape[0])
        elif obs.shape[0] != self._obs.shape[1]:
            raise ValueError(f"expected obs of width {self._obs.shape[1]}, got {obs.shape[0]}")
        if not t.cost >= 0.0:
            raise ValueError(f"violation cost must be non-negative, got {t.cost}")
        i = self.cursor
        self._obs[i] = obs
        self._next[i] = nxt
        self._act[i] = t.action
        self._g[i] = t.g
        self._cost[i] = t.cost
        self._done[i] = t.done
        self.cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample_indices(self, batch_size, rng):
        if self.size < batch_size:
            raise InsufficientData(f"buffer holds {self.size} < {batch_size} transitions")
        return rng.integers(0, self.size, size=batch_size)

    def gather(self, idx):
        return Batch(self._obs[idx], self._act[idx], self._g[idx], self._cost[idx],
                     self._next[idx], self._done[idx])

    def sample(self, batch_size, rng):
        """Uniform draws with replacement."""
        return self.gather(self.sample_indices(batch_size, rng))

    def transitions(self):
        """Stored transitions, oldest first."""
        order = [(self.cursor + k) % self.capacity for k in range(self.size)] \
            if self.size == self.capacity else range(self.size)
        return [Transition(self._obs[i].copy(), int(self._act[i]), float(self._g[i]),
                           float(self._cost[i]), self._next[i].copy(), bool(self._done[i]))
                for i in order]
