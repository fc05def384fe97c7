"""Tabular on-policy control of the positive confidence threshold.

The learner-initiative uncertainty policy gates its questions on a fixed
confidence bound; here that bound becomes an action.  A small SARSA agent
observes (training progress, current bound), nudges the bound up or down by
one grid step, and is rewarded with the accuracy gained per unit of tutor
effort over the last learning step.
"""

from __future__ import annotations

import csv
import enum
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple, Sequence

import numpy as np

from .dialogue import PolicySettings
from .experiment import (
    ADAPTIVE_NAME,
    ExperimentConfig,
    PerformanceCurve,
    run_fold,
)

GRID: tuple[float, ...] = tuple(round(0.55 + 0.05 * i, 2) for i in range(9))
BUCKET_WIDTH = 50
N_BUCKETS = 10
REWARD_EPS = 0.01

# an untrained bank answers 0.5 everywhere, which decides "member" for every
# attribute; exactly 2 of 9 hold per object
UNTRAINED_ACC = 2.0 / 9.0

DEFAULT_ALPHA = 0.1
DEFAULT_GAMMA = 0.9
DEFAULT_EPISODES = 100
DEFAULT_EPS_START = 0.3
DEFAULT_EPS_END = 0.05
START_THRESHOLD = 0.90


class Action(enum.IntEnum):
    INCREASE = 0
    DECREASE = 1
    KEEP = 2


# when all values tie (typically an unvisited state) prefer the direction
# that spares tutor effort
_TIE_ORDER = (Action.DECREASE, Action.KEEP, Action.INCREASE)


class ThresholdState(NamedTuple):
    bucket: int
    threshold: float


def bucket_for(instances: int) -> int:
    return min(instances // BUCKET_WIDTH, N_BUCKETS - 1)


def grid_index(threshold: float) -> int:
    key = round(threshold, 2)
    if key not in GRID:
        raise ValueError(f"threshold {threshold} is off the grid")
    return GRID.index(key)


def apply_action(state: ThresholdState, action: Action) -> ThresholdState:
    """Move one 0.05 step along the grid, clamped at both ends."""
    i = grid_index(state.threshold)
    if action is Action.INCREASE:
        i = min(i + 1, len(GRID) - 1)
    elif action is Action.DECREASE:
        i = max(i - 1, 0)
    return ThresholdState(state.bucket, GRID[i])


def step_reward(acc_before: float, acc_after: float, cost_delta: float) -> float:
    """Accuracy gained per unit cost over one learning step."""
    return (acc_after - acc_before) / max(cost_delta, REWARD_EPS)


QTABLE_FORMAT_VERSION = 1


class QTable:
    """Dense (bucket, threshold, action) value table; zeros when unvisited."""

    def __init__(self, values: np.ndarray | None = None) -> None:
        if values is None:
            values = np.zeros((N_BUCKETS, len(GRID), len(Action)))
        if values.shape != (N_BUCKETS, len(GRID), len(Action)):
            raise ValueError("wrong table shape")
        if not np.all(np.isfinite(values)):
            raise ValueError("table values must be finite")
        self.values = values

    def get(self, state: ThresholdState, action: Action) -> float:
        return float(self.values[state.bucket, grid_index(state.threshold), action])

    def set(self, state: ThresholdState, action: Action, value: float) -> None:
        self.values[state.bucket, grid_index(state.threshold), action] = value

    def sarsa_update(
        self,
        state: ThresholdState,
        action: Action,
        reward: float,
        next_state: ThresholdState,
        next_action: Action,
        alpha: float,
        gamma: float,
    ) -> None:
        q = self.get(state, action)
        target = reward + gamma * self.get(next_state, next_action)
        self.set(state, action, q + alpha * (target - q))

    def greedy_action(self, state: ThresholdState) -> Action:
        row = self.values[state.bucket, grid_index(state.threshold)]
        best = _TIE_ORDER[0]
        for action in _TIE_ORDER:
            if row[action] > row[best] + 1e-12:
                best = action
        return best

    def save(self, path: str | Path) -> None:
        np.savez(
            path,
            version=np.array([QTABLE_FORMAT_VERSION]),
            values=self.values,
        )

    @classmethod
    def load(cls, path: str | Path) -> "QTable":
        with np.load(path, allow_pickle=False) as data:
            version = int(data["version"][0])
            if version != QTABLE_FORMAT_VERSION:
                raise ValueError(f"unsupported table version {version}")
            return cls(data["values"].copy())


class TraceRow(NamedTuple):
    episode: int
    step: int
    state: str
    action: str
    reward: float
    threshold: float


@dataclass
class _Controller:
    """Shared stepping logic: track (s, a), apply, learn on observe."""

    q: QTable
    epsilon: float = 0.0
    rng: np.random.Generator | None = None
    alpha: float = 0.0
    gamma: float = DEFAULT_GAMMA
    learn: bool = False
    start: float = START_THRESHOLD
    episode: int = 0
    trace: list[TraceRow] = field(default_factory=list)

    def _choose(self, state: ThresholdState) -> Action:
        if self.epsilon > 0.0 and self.rng is not None:
            if self.rng.random() < self.epsilon:
                return Action(int(self.rng.integers(len(Action))))
        return self.q.greedy_action(state)

    def initial_threshold(self) -> float:
        self._state = ThresholdState(0, self.start)
        self._action = self._choose(self._state)
        self._threshold = apply_action(self._state, self._action).threshold
        self._step = 0
        self._prev_acc = UNTRAINED_ACC
        self._prev_cost = 0.0
        return self._threshold

    def observe(self, instances: int, acc: float, cum_cost: float) -> float:
        reward = step_reward(self._prev_acc, acc, cum_cost - self._prev_cost)
        nxt = ThresholdState(bucket_for(instances), self._threshold)
        nxt_action = self._choose(nxt)
        if self.learn:
            self.q.sarsa_update(
                self._state, self._action, reward, nxt, nxt_action,
                self.alpha, self.gamma,
            )
        self._step += 1
        self.trace.append(
            TraceRow(
                self.episode,
                self._step,
                f"b{self._state.bucket}/t{self._state.threshold:.2f}",
                self._action.name,
                reward,
                self._threshold,
            )
        )
        self._state, self._action = nxt, nxt_action
        self._threshold = apply_action(nxt, nxt_action).threshold
        self._prev_acc, self._prev_cost = acc, cum_cost
        return self._threshold


def training_controller(
    q: QTable,
    epsilon: float,
    rng: np.random.Generator,
    alpha: float = DEFAULT_ALPHA,
    gamma: float = DEFAULT_GAMMA,
    episode: int = 0,
    start: float = START_THRESHOLD,
) -> _Controller:
    return _Controller(
        q, epsilon=epsilon, rng=rng, alpha=alpha, gamma=gamma,
        learn=True, episode=episode, start=start,
    )


def greedy_controller(q: QTable, start: float = START_THRESHOLD) -> _Controller:
    return _Controller(q, start=start)


def epsilon_schedule(episodes: int, start: float, end: float) -> list[float]:
    if episodes == 1:
        return [start]
    return [
        start + (end - start) * e / (episodes - 1) for e in range(episodes)
    ]


def sarsa_train(
    features: np.ndarray,
    truths: Sequence[dict[str, str]],
    config: ExperimentConfig,
    episodes: int = DEFAULT_EPISODES,
    alpha: float = DEFAULT_ALPHA,
    gamma: float = DEFAULT_GAMMA,
    eps_start: float = DEFAULT_EPS_START,
    eps_end: float = DEFAULT_EPS_END,
    start_threshold: float = START_THRESHOLD,
    seed: int | None = None,
) -> tuple[QTable, list[TraceRow]]:
    """Anneal through full training passes; fold seeds here never overlap
    the evaluation folds."""
    settings = PolicySettings.parse("L+UC+CD")
    root = seed if seed is not None else config.master_seed
    episode_seeds = np.random.SeedSequence([root, 1]).generate_state(
        episodes, np.uint64
    )
    explore = np.random.default_rng(np.random.SeedSequence([root, 2]))
    q = QTable()
    trace: list[TraceRow] = []
    for episode, epsilon in enumerate(epsilon_schedule(episodes, eps_start, eps_end)):
        controller = training_controller(
            q, epsilon, explore, alpha=alpha, gamma=gamma,
            episode=episode, start=start_threshold,
        )
        run_fold(
            features, truths, settings, config, fold=0,
            controller=controller, condition_name=ADAPTIVE_NAME,
            seed=int(episode_seeds[episode]),
        )
        trace.extend(controller.trace)
    return q, trace


def run_adaptive_condition(
    features: np.ndarray,
    truths: Sequence[dict[str, str]],
    config: ExperimentConfig,
    q: QTable,
    start_threshold: float = START_THRESHOLD,
) -> tuple[list[PerformanceCurve], list[TraceRow]]:
    """Evaluation folds under the frozen greedy policy."""
    settings = PolicySettings.parse("L+UC+CD")
    curves, trace = [], []
    for fold in range(config.folds):
        controller = greedy_controller(q, start=start_threshold)
        controller.episode = fold
        curves.append(
            run_fold(
                features, truths, settings, config, fold,
                controller=controller, condition_name=ADAPTIVE_NAME,
            )
        )
        trace.extend(controller.trace)
    return curves, trace


def controller_factory(q: QTable, start: float = START_THRESHOLD):
    """Adapter for the factorial runner's adaptive slot."""

    def make(fold: int) -> _Controller:
        return greedy_controller(q, start=start)

    return make


def write_trace_csv(path: str | Path, rows: Sequence[TraceRow]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["episode", "step", "state", "action", "reward", "threshold"])
        for row in rows:
            writer.writerow(
                [
                    row.episode,
                    row.step,
                    row.state,
                    row.action,
                    f"{row.reward:.8f}",
                    f"{row.threshold:.2f}",
                ]
            )
