"""Closed-loop deployment of a trained student and the two validation runs.

The matching run rides the student's own closed loop while scoring the expert
on the same realized histories.  The shock run drives two trajectories off one
shared random-number stream, injects a single observation-side reward bump,
and compares the measured policy drift against its analytical envelope.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .bandit import CrnStream, History, coupled_sample, draw_reward, sample_task
from .errors import InvalidConfigError
from .lsa import TwoChannelParams, two_channel_logits
from .teacher import TeacherConfig, mix_policy, teacher_logits


@dataclass
class RolloutResult:
    """Per-round mixed policies plus the realized actions and observed rewards."""

    policies: np.ndarray  # (T, K)
    actions: np.ndarray  # (T,)
    rewards: np.ndarray  # (T,) as recorded in the history (shock included)
    history: History


def rollout(
    tc: TwoChannelParams,
    w: np.ndarray,
    cfg: TeacherConfig,
    t_max: int,
    stream: CrnStream,
    shock: tuple[int, float] | None = None,
) -> RolloutResult:
    """Run the student loop for `t_max` rounds on task w.

    When `shock = (s, delta_r)` is given, the reward observed at round s is
    bumped by delta_r before entering the history; the environment draw
    itself is untouched, so a coupled baseline sees identical randomness.
    """
    if t_max < 1:
        raise InvalidConfigError(f"horizon must be >= 1, got {t_max}")
    if shock is not None and not 1 <= shock[0] <= t_max:
        raise InvalidConfigError(f"shock round {shock[0]} outside horizon [1, {t_max}]")
    history = History(cfg.k)
    policies = np.zeros((t_max, cfg.k))
    actions = np.zeros(t_max, dtype=np.int64)
    rewards = np.zeros(t_max)
    for t in range(1, t_max + 1):
        policy = mix_policy(two_channel_logits(history, tc), cfg.gamma)
        policies[t - 1] = policy.p
        action = coupled_sample(policy.p, stream.uniform(t))
        reward = draw_reward(w, action, stream.normal(t), cfg.sigma_xi)
        if shock is not None and t == shock[0]:
            reward += shock[1]
        history.append(action, reward)
        actions[t - 1] = action
        rewards[t - 1] = reward
    return RolloutResult(policies=policies, actions=actions, rewards=rewards, history=history)


def teacher_rollout(w: np.ndarray, cfg: TeacherConfig, t_max: int, stream: CrnStream) -> RolloutResult:
    """Run the expert loop under the same stream layout as `rollout`."""
    history = History(cfg.k)
    policies = np.zeros((t_max, cfg.k))
    actions = np.zeros(t_max, dtype=np.int64)
    rewards = np.zeros(t_max)
    for t in range(1, t_max + 1):
        policy = mix_policy(teacher_logits(history, cfg), cfg.gamma)
        policies[t - 1] = policy.p
        action = coupled_sample(policy.p, stream.uniform(t))
        reward = draw_reward(w, action, stream.normal(t), cfg.sigma_xi)
        history.append(action, reward)
        actions[t - 1] = action
        rewards[t - 1] = reward
    return RolloutResult(policies=policies, actions=actions, rewards=rewards, history=history)


@dataclass
class MatchingReport:
    """Round-by-round gap between student and expert mixed policies."""

    rounds: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    b_test: int
    n: int
    seed: int
    cfg: TeacherConfig


def _run_tasks(worker, b_test: int, threads: int) -> None:
    """Run per-task workers sequentially or on a thread pool.

    Each task owns its stream id and writes into its own output row, so the
    result is identical either way.
    """
    if threads <= 1:
        for tau in range(b_test):
            worker(tau)
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(worker, range(b_test)))


def matching_experiment(
    cfg: TeacherConfig,
    tc: TwoChannelParams,
    b_test: int,
    n: int,
    seed: int,
    threads: int = 1,
) -> MatchingReport:
    """Student-driven closed loop with the expert scored on the same histories.

    At every round the realized history is held fixed, both mixed policies
    are computed on it, their L2 gap recorded, and the loop continues with
    the student's policy.
    """
    gaps = np.zeros((b_test, n))

    def worker(tau: int) -> None:
        stream = CrnStream(seed, stream_id=tau)
        w = sample_task(stream, cfg.k, cfg.tau_w)
        history = History(cfg.k)
        for t in range(1, n + 1):
            student = mix_policy(two_channel_logits(history, tc), cfg.gamma)
            expert = mix_policy(teacher_logits(history, cfg), cfg.gamma)
            gaps[tau, t - 1] = float(np.linalg.norm(student.p - expert.p))
            action = coupled_sample(student.p, stream.uniform(t))
            reward = draw_reward(w, action, stream.normal(t), cfg.sigma_xi)
            history.append(action, reward)

    _run_tasks(worker, b_test, threads)
    return MatchingReport(
        rounds=np.arange(1, n + 1),
        mean=gaps.mean(axis=0),
        std=gaps.std(axis=0),
        b_test=b_test,
        n=n,
        seed=seed,
        cfg=cfg,
    )


def shock_constants(cfg: TeacherConfig, w: np.ndarray) -> tuple[float, float]:
    """Drift-envelope constants for one task.

    a scales the direct effect of the bumped reward; b collects the
    task-dependent feedback strength through re-sampled actions and noise.
    """
    u_norm = float(np.linalg.norm(cfg.u, ord=2))
    lead = cfg.c * (1.0 - cfg.gamma) / 2.0
    a = lead * u_norm
    vw_norm = float(np.linalg.norm(cfg.v + cfg.u @ np.diag(np.asarray(w, dtype=float)), ord=2))
    b = lead * math.sqrt(cfg.k / 2.0) * (vw_norm + math.sqrt(2.0 / math.pi) * cfg.sigma_xi * u_norm)
    return a, b


def default_c_b(b: float) -> float:
    """Absolute constant in the envelope; exp(b) dominates the recursion product."""
    return math.exp(b)


def shock_bound(a: float, b: float, c_b: float, s: int, t: int, delta_r: float) -> float:
    """Envelope value a(1+C_b)/s * (t/s)^(b-1) * |delta_r| for rounds s <= t."""
    if not 1 <= s <= t:
        raise ValueError(f"need 1 <= s <= t, got s={s}, t={t}")
    return a * (1.0 + c_b) / s * (t / s) ** (b - 1.0) * abs(delta_r)


def sample_b_distribution(cfg: TeacherConfig, n_tasks: int, seed: int) -> np.ndarray:
    """Per-task envelope exponents b over freshly sampled tasks."""
    values = np.zeros(n_tasks)
    for tau in range(n_tasks):
        stream = CrnStream(seed, stream_id=tau)
        w = sample_task(stream, cfg.k, cfg.tau_w)
        values[tau] = shock_constants(cfg, w)[1]
    return values


@dataclass
class ShockReport:
    """Measured policy drift under a one-shot reward bump plus its envelope."""

    rounds: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    bound: np.ndarray  # per-task envelopes averaged; zero before the shock round
    s: int
    delta_r: float
    b_test: int
    n: int
    seed: int
    cfg: TeacherConfig
    a: float
    b_values: np.ndarray = field(repr=False)
    c_b_values: np.ndarray = field(repr=False)

    @property
    def post_shock_max(self) -> float:
        return float(self.mean[self.s - 1 :].max())


def shock_experiment(
    cfg: TeacherConfig,
    tc: TwoChannelParams,
    b_test: int,
    n: int,
    s: int,
    delta_r: float,
    seed: int,
    c_b_override: float | None = None,
    threads: int = 1,
) -> ShockReport:
    """Coupled baseline/perturbed rollouts per task, drift and envelope per round.

    Both rollouts of a task share one stream, so rounds before the shock agree
    exactly.  The envelope is evaluated per task with its own (a, b) and
    C_b = exp(b) unless overridden, then averaged.  The bound at argument t
    covers the policy one step ahead, so round u >= s+1 uses t = u-1; round s
    itself (where the measured drift is identically zero by coupling) carries
    the envelope's peak value.
    """
    if not 1 <= s <= n:
        raise InvalidConfigError(f"shock round {s} outside horizon [1, {n}]")
    deltas = np.zeros((b_test, n))
    bounds = np.zeros((b_test, n))
    b_values = np.zeros(b_test)
    c_b_values = np.zeros(b_test)
    a_values = np.zeros(b_test)

    def worker(tau: int) -> None:
        stream = CrnStream(seed, stream_id=tau)
        w = sample_task(stream, cfg.k, cfg.tau_w)
        baseline = rollout(tc, w, cfg, n, stream)
        shocked = rollout(tc, w, cfg, n, stream, shock=(s, delta_r))
        deltas[tau] = np.linalg.norm(shocked.policies - baseline.policies, axis=1)
        a_const, b_val = shock_constants(cfg, w)
        c_b = default_c_b(b_val) if c_b_override is None else c_b_override
        a_values[tau] = a_const
        b_values[tau] = b_val
        c_b_values[tau] = c_b
        for u in range(s, n + 1):
            bounds[tau, u - 1] = shock_bound(a_const, b_val, c_b, s, max(u - 1, s), delta_r)

    _run_tasks(worker, b_test, threads)
    return ShockReport(
        rounds=np.arange(1, n + 1),
        mean=deltas.mean(axis=0),
        std=deltas.std(axis=0),
        bound=bounds.mean(axis=0),
        s=s,
        delta_r=delta_r,
        b_test=b_test,
        n=n,
        seed=seed,
        cfg=cfg,
        a=float(a_values[0]),
        b_values=b_values,
        c_b_values=c_b_values,
    )
