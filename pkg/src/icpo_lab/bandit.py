"""K-armed linear bandit environment with counter-based common random numbers.

Every random draw is addressed by (seed, stream id, round, purpose), so two
trajectories that share a stream see literally the same uniforms and noise.
That makes coupled (baseline vs. perturbed) runs structural rather than a
matter of careful call ordering.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidConfigError, InvalidDistributionError

SIMPLEX_ATOL = 1e-12

# Purpose tags for the counter-based generator.  Each purpose owns an
# independent substream per round.
_PURPOSE_ACTION = 0
_PURPOSE_NOISE = 1
_PURPOSE_TASK = 2


class CrnStream:
    """Deterministic per-trajectory randomness addressed by (round, purpose).

    Backed by Philox, a counter-based generator: the value at a given
    (seed, stream_id, round, purpose) address never depends on how many
    draws happened before it.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        self._key = np.array(
            [self.seed & 0xFFFFFFFFFFFFFFFF, self.stream_id & 0xFFFFFFFFFFFFFFFF],
            dtype=np.uint64,
        )

    def _generator(self, purpose: int, round_index: int) -> np.random.Generator:
        counter = np.array([purpose, round_index, 0, 0], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=self._key, counter=counter))

    def uniform(self, round_index: int) -> float:
        """Action-selection uniform in [0, 1) for the given round."""
        return float(self._generator(_PURPOSE_ACTION, round_index).random())

    def normal(self, round_index: int) -> float:
        """Standard-normal reward-noise draw for the given round."""
        return float(self._generator(_PURPOSE_NOISE, round_index).standard_normal())

    def task_normals(self, k: int) -> np.ndarray:
        """K standard normals for sampling the task vector."""
        return self._generator(_PURPOSE_TASK, 0).standard_normal(k)


def sample_task(rng: CrnStream, k: int, tau_w: float) -> np.ndarray:
    """Draw a task vector with i.i.d. zero-mean normal entries of std tau_w."""
    if k < 2:
        raise InvalidConfigError(f"need at least 2 arms, got K={k}")
    if tau_w < 0:
        raise InvalidConfigError(f"task prior std must be >= 0, got {tau_w}")
    return tau_w * rng.task_normals(k)


def draw_reward(w: np.ndarray, action: int, noise: float, sigma_xi: float) -> float:
    """Reward for pulling `action`: the arm mean plus scaled noise."""
    if not 0 <= action < len(w):
        raise IndexError(f"action {action} out of range for {len(w)} arms")
    return float(w[action]) + sigma_xi * noise


def _validate_simplex(p: np.ndarray) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.ndim != 1:
        raise InvalidDistributionError(f"expected a vector, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise InvalidDistributionError("probabilities must be finite")
    if np.any(p < -SIMPLEX_ATOL):
        raise InvalidDistributionError(f"negative probability: min={p.min()}")
    total = float(p.sum())
    if abs(total - 1.0) > max(SIMPLEX_ATOL, 4 * len(p) * np.finfo(float).eps):
        raise InvalidDistributionError(f"probabilities sum to {total}, not 1")
    return p


def coupled_sample(p: np.ndarray, u: float) -> int:
    """Inverse-CDF draw: smallest index whose cumulative mass exceeds u.

    Cumulative sums are scanned left to right with no re-normalization, so
    two policies fed the same uniform agree except on the total-variation
    shortfall between them.
    """
    p = _validate_simplex(p)
    acc = 0.0
    for i, pi in enumerate(p):
        acc += pi
        if acc > u:
            return i
    return len(p) - 1  # u landed beyond the (rounded) total mass


@dataclass
class HistoryStep:
    """One (action, one-hot, reward) interaction."""

    action: int
    x: np.ndarray
    r: float


@dataclass
class History:
    """Ordered interaction record with maintained count and reward sums.

    `n[i]` counts pulls of arm i and `g[i]` accumulates its rewards; both are
    kept in sync with `steps` on every append.
    """

    k: int
    steps: list[HistoryStep] = field(default_factory=list)
    n: np.ndarray = field(init=False)
    g: np.ndarray = field(init=False)

    def __post_init__(self):
        self.n = np.zeros(self.k)
        self.g = np.zeros(self.k)

    def __len__(self) -> int:
        return len(self.steps)

    @property
    def t(self) -> int:
        return len(self.steps)

    def append(self, action: int, reward: float) -> None:
        if not 0 <= action < self.k:
            raise IndexError(f"action {action} out of range for {self.k} arms")
        x = np.zeros(self.k)
        x[action] = 1.0
        self.steps.append(HistoryStep(action=action, x=x, r=float(reward)))
        self.n[action] += 1.0
        self.g[action] += float(reward)

    def recompute_stats(self) -> tuple[np.ndarray, np.ndarray]:
        """Rebuild (n, g) from the raw steps, in append order."""
        n = np.zeros(self.k)
        g = np.zeros(self.k)
        for step in self.steps:
            n[step.action] += 1.0
            g[step.action] += step.r
        return n, g

    def copy(self) -> "History":
        out = History(self.k)
        for step in self.steps:
            out.append(step.action, step.r)
        return out
