"""Threshold-control tests: grid mechanics, update arithmetic, bandit oracle."""

import numpy as np
import pytest

from lexiground.adaptive import (
    GRID,
    Action,
    QTable,
    ThresholdState,
    apply_action,
    bucket_for,
    epsilon_schedule,
    greedy_controller,
    run_adaptive_condition,
    sarsa_train,
    step_reward,
    training_controller,
    write_trace_csv,
)
from lexiground.experiment import ADAPTIVE_NAME, ExperimentConfig

from test_experiment import TOY_CONFIG, toy_corpus


# ---------------------------------------------------------------------------
# grid mechanics


def test_grid_values():
    assert GRID == (0.55, 0.6, 0.65, 0.7, 0.75, 0.8, 0.85, 0.9, 0.95)


def test_apply_action_steps_and_clamps():
    assert apply_action(ThresholdState(3, 0.90), Action.INCREASE).threshold == 0.95
    assert apply_action(ThresholdState(0, 0.95), Action.INCREASE).threshold == 0.95
    assert apply_action(ThresholdState(0, 0.55), Action.DECREASE).threshold == 0.55
    assert apply_action(ThresholdState(5, 0.70), Action.KEEP) == ThresholdState(5, 0.70)


def test_off_grid_threshold_rejected():
    with pytest.raises(ValueError):
        apply_action(ThresholdState(0, 0.72), Action.KEEP)


def test_bucket_clamps_at_nine():
    assert bucket_for(0) == 0
    assert bucket_for(49) == 0
    assert bucket_for(50) == 1
    assert bucket_for(499) == 9
    assert bucket_for(500) == 9


def test_reward_arithmetic():
    assert step_reward(0.50, 0.52, 20.0) == pytest.approx(1.0e-3)
    assert step_reward(0.5, 0.5, 0.0) == 0.0
    # the eps guard keeps zero-cost steps finite
    assert step_reward(0.5, 0.6, 0.0) == pytest.approx(10.0)


def test_epsilon_schedule_endpoints():
    sched = epsilon_schedule(100, 0.3, 0.05)
    assert len(sched) == 100
    assert sched[0] == pytest.approx(0.3)
    assert sched[-1] == pytest.approx(0.05)
    assert epsilon_schedule(1, 0.3, 0.05) == [0.3]


# ---------------------------------------------------------------------------
# table updates


def test_single_sarsa_update_arithmetic():
    q = QTable()
    s = ThresholdState(2, 0.80)
    nxt = ThresholdState(2, 0.85)
    q.sarsa_update(s, Action.INCREASE, 0.5, nxt, Action.KEEP, alpha=0.1, gamma=0.9)
    assert q.get(s, Action.INCREASE) == pytest.approx(0.05)
    assert q.get(nxt, Action.KEEP) == 0.0


def test_bootstrap_uses_next_pair():
    q = QTable()
    nxt = ThresholdState(1, 0.60)
    q.set(nxt, Action.DECREASE, 1.0)
    s = ThresholdState(0, 0.60)
    q.sarsa_update(s, Action.KEEP, 0.0, nxt, Action.DECREASE, alpha=0.5, gamma=0.9)
    assert q.get(s, Action.KEEP) == pytest.approx(0.45)


def test_qtable_roundtrip(tmp_path):
    q = QTable()
    q.set(ThresholdState(4, 0.75), Action.KEEP, 1.25)
    path = tmp_path / "q.npz"
    q.save(path)
    back = QTable.load(path)
    assert np.array_equal(back.values, q.values)


def test_qtable_version_check(tmp_path):
    path = tmp_path / "q.npz"
    np.savez(path, version=np.array([99]), values=np.zeros((10, 9, 3)))
    with pytest.raises(ValueError, match="version"):
        QTable.load(path)


def test_qtable_rejects_bad_shape_and_nan():
    with pytest.raises(ValueError):
        QTable(np.zeros((3, 3, 3)))
    bad = np.zeros((10, 9, 3))
    bad[0, 0, 0] = np.nan
    with pytest.raises(ValueError):
        QTable(bad)


def test_greedy_tie_break_prefers_cheaper_questions():
    q = QTable()
    s = ThresholdState(0, 0.75)
    assert q.greedy_action(s) is Action.DECREASE
    q.set(s, Action.INCREASE, 0.1)
    assert q.greedy_action(s) is Action.INCREASE


# ---------------------------------------------------------------------------
# bandit oracle: an environment where stepping down always pays


def run_bandit_episode(q, rng, epsilon):
    controller = training_controller(q, epsilon, rng, alpha=0.1, gamma=0.9, start=0.75)
    controller.initial_threshold()
    acc, cost = 0.0, 0.0
    for step in range(1, 11):
        reward = 1.0 if controller._action is Action.DECREASE else 0.0
        acc += reward
        cost += 1.0
        controller.observe(step * 10, acc, cost)


def test_bandit_environment_learns_decrease():
    q = QTable()
    rng = np.random.default_rng(17)
    for _ in range(50):
        run_bandit_episode(q, rng, epsilon=0.3)
    visited = np.argwhere(np.any(q.values != 0.0, axis=2))
    assert len(visited) > 0
    for bucket, t in visited:
        row = q.values[bucket, t]
        assert row[Action.DECREASE] > row[Action.INCREASE]
        assert row[Action.DECREASE] > row[Action.KEEP]
        state = ThresholdState(int(bucket), GRID[int(t)])
        assert q.greedy_action(state) is Action.DECREASE


# ---------------------------------------------------------------------------
# full-loop runs on the toy corpus


def test_training_is_reproducible():
    features, truths = toy_corpus()
    runs = []
    for _ in range(2):
        q, trace = sarsa_train(features, truths, TOY_CONFIG, episodes=3)
        runs.append((q.values.copy(), tuple(trace)))
    assert np.array_equal(runs[0][0], runs[1][0])
    assert runs[0][1] == runs[1][1]


def test_greedy_run_stays_on_grid_and_is_labelled():
    features, truths = toy_corpus()
    q = QTable()
    curves, trace = run_adaptive_condition(features, truths, TOY_CONFIG, q)
    assert len(curves) == TOY_CONFIG.folds
    assert all(c.condition == ADAPTIVE_NAME for c in curves)
    assert len(trace) == TOY_CONFIG.folds * (TOY_CONFIG.train // TOY_CONFIG.step)
    for row in trace:
        assert 0.55 <= row.threshold <= 0.95
        assert row.action in {a.name for a in Action}


def test_greedy_controller_is_exploration_free():
    q = QTable()
    q.set(ThresholdState(0, 0.90), Action.INCREASE, 1.0)
    thresholds = set()
    for _ in range(5):
        c = greedy_controller(q)
        thresholds.add(c.initial_threshold())
    assert thresholds == {0.95}


def test_trace_csv(tmp_path):
    features, truths = toy_corpus()
    q, trace = sarsa_train(features, truths, TOY_CONFIG, episodes=2)
    path = tmp_path / "trace.csv"
    write_trace_csv(path, trace)
    lines = path.read_text().splitlines()
    assert lines[0] == "episode,step,state,action,reward,threshold"
    assert len(lines) == len(trace) + 1
