"""Cross-validated factorial evaluation of the dialogue policy grid.

Each fold draws a fresh 500/100 train/test split, runs one dialogue per
training object, feeds the resulting judgements to the classifier bank, and
measures attribute-decision accuracy on the held-out objects after every 10
dialogues.  The gradient of accuracy against cumulative tutor effort is the
headline measure; significance of the policy factors is assessed with a
permutation analysis of variance over the per-fold gradients.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, NamedTuple, Protocol, Sequence

import numpy as np

from .classifiers import ClassifierRegistry, ConfidenceBands
from .dialogue import (
    ALL_CONDITIONS,
    COLOUR,
    SHAPE,
    CostLedger,
    PolicySettings,
    run_dialogue,
)
from .vision import COLORS, FEATURE_DIM, SHAPES, DatasetObject

ATTRIBUTES: tuple[str, ...] = COLORS + SHAPES

# Learning rate and decay used by the experiment runs.  The unit tests for
# the classifier bank exercise the module defaults; the harness runs hotter
# so that early dialogues move verdicts across band boundaries within the
# 500-object budget.
HARNESS_ETA0 = 4.5
HARNESS_LAMBDA = 0.005

DEFAULT_MASTER_SEED = 20240
ADAPTIVE_NAME = "L+UC(adaptive)+CD"

ACCURACY_DEFINITION = (
    "accuracy = mean over test instances and all 9 attribute units of "
    "[(prob >= 0.5) == membership]; untrained units answer 0.5"
)


class DegenerateCurve(ValueError):
    """A curve that cannot support the gradient measure."""


@dataclass(frozen=True)
class ExperimentConfig:
    folds: int = 20
    train: int = 500
    test: int = 100
    step: int = 10
    master_seed: int = DEFAULT_MASTER_SEED
    eta0: float = HARNESS_ETA0
    lam: float = HARNESS_LAMBDA
    positive_threshold: float = 0.9
    implicit_negatives: bool = True
    # block preconditioning assumes the real 1280-dim feature layout; turn
    # off for synthetic feature spaces
    normalize: bool = True

    def __post_init__(self) -> None:
        if self.train <= 0 or self.test <= 0 or self.folds <= 0:
            raise ValueError("folds, train and test must be positive")
        if self.step <= 0 or self.train % self.step:
            raise ValueError("step must divide the training budget")

    def fold_seeds(self) -> list[int]:
        """Per-fold seeds, identical across conditions so folds pair up."""
        ss = np.random.SeedSequence([self.master_seed, 0])
        return [int(s) for s in ss.generate_state(self.folds, np.uint64)]

    def bands(self) -> ConfidenceBands:
        return ConfidenceBands(0.5, self.positive_threshold)


class CurvePoint(NamedTuple):
    step: int
    instances: int
    accuracy: float
    cum_cost: float


@dataclass(frozen=True)
class PerformanceCurve:
    condition: str
    fold: int
    points: tuple[CurvePoint, ...]

    def __post_init__(self) -> None:
        if len(self.points) < 2:
            raise DegenerateCurve("a curve needs at least a baseline and one step")
        for a, b in zip(self.points, self.points[1:]):
            if b.instances <= a.instances:
                raise ValueError("instance counts must increase")
            if b.cum_cost < a.cum_cost - 1e-9:
                raise ValueError("cumulative cost cannot decrease")

    @property
    def delta_acc(self) -> float:
        return self.points[-1].accuracy - self.points[0].accuracy

    @property
    def final_acc(self) -> float:
        return self.points[-1].accuracy

    @property
    def total_cost(self) -> float:
        return self.points[-1].cum_cost

    @property
    def r_perf(self) -> float:
        return overall_performance(self)


def overall_performance(curve: PerformanceCurve) -> float:
    """Accuracy gained per unit of tutor effort across the whole curve."""
    if curve.total_cost <= 0.0:
        raise DegenerateCurve("gradient undefined at zero total cost")
    return curve.delta_acc / curve.total_cost


# ---------------------------------------------------------------------------
# accuracy


def membership_matrix(truths: Sequence[dict[str, str]]) -> np.ndarray:
    rows = np.zeros((len(truths), len(ATTRIBUTES)), dtype=bool)
    for i, truth in enumerate(truths):
        rows[i, ATTRIBUTES.index(truth[COLOUR])] = True
        rows[i, ATTRIBUTES.index(truth[SHAPE])] = True
    return rows


def accuracy(
    registry: ClassifierRegistry,
    features: np.ndarray,
    memberships: np.ndarray,
) -> float:
    """Fraction of correct binary membership decisions over all attributes."""
    if len(features) == 0:
        raise ValueError("empty test set")
    probs = registry.prob_matrix(list(ATTRIBUTES), features)
    return float(np.mean((probs >= 0.5) == memberships))


def object_truth(obj: DatasetObject) -> dict[str, str]:
    return {COLOUR: obj.spec.color, SHAPE: obj.spec.shape}


# ---------------------------------------------------------------------------
# fold runner


class ThresholdController(Protocol):
    """Optional per-step hook that retunes the positive confidence bound."""

    def initial_threshold(self) -> float: ...

    def observe(self, instances: int, acc: float, cum_cost: float) -> float: ...


def run_fold(
    features: np.ndarray,
    truths: Sequence[dict[str, str]],
    settings: PolicySettings,
    config: ExperimentConfig,
    fold: int,
    controller: ThresholdController | None = None,
    condition_name: str | None = None,
    seed: int | None = None,
) -> PerformanceCurve:
    """Train through one 500-object pass, evaluating every learning step."""
    n = len(features)
    if config.train + config.test > n:
        raise ValueError("train+test exceeds the dataset")
    rng = np.random.default_rng(
        seed if seed is not None else config.fold_seeds()[fold]
    )
    perm = rng.permutation(n)
    train_idx = perm[: config.train]
    test_idx = perm[config.train : config.train + config.test]

    threshold = (
        controller.initial_threshold() if controller else config.positive_threshold
    )
    registry = ClassifierRegistry(
        dim=features.shape[1],
        eta0=config.eta0,
        lam=config.lam,
        bands=ConfidenceBands(0.5, threshold),
        normalize=config.normalize,
    )
    test_X = features[test_idx]
    test_M = membership_matrix([truths[i] for i in test_idx])

    ledger = CostLedger()
    spent = 0.0
    points = [CurvePoint(0, 0, accuracy(registry, test_X, test_M), 0.0)]
    for i, idx in enumerate(train_idx, start=1):
        result = run_dialogue(
            f"f{fold}-{i:03d}",
            features[idx],
            truths[idx],
            registry,
            settings,
            ledger=ledger,
            implicit_negatives=config.implicit_negatives,
        )
        spent += result.cost_delta
        for judgement in result.judgements:
            registry.train(judgement)
        if i % config.step == 0:
            acc = accuracy(registry, test_X, test_M)
            points.append(CurvePoint(i // config.step, i, acc, ledger.cumulative))
            if controller is not None:
                threshold = controller.observe(i, acc, ledger.cumulative)
                registry.bands = ConfidenceBands(registry.bands.base, threshold)
    if abs(spent - ledger.cumulative) > 1e-6:
        raise RuntimeError("ledger total disagrees with per-dialogue deltas")
    return PerformanceCurve(condition_name or settings.name, fold, tuple(points))


# ---------------------------------------------------------------------------
# factorial run

_WORKER: dict = {}


def _init_worker(features, truths, config):
    _WORKER.update(features=features, truths=truths, config=config)


def _run_one(args):
    name, fold = args
    return run_fold(
        _WORKER["features"],
        _WORKER["truths"],
        PolicySettings.parse(name),
        _WORKER["config"],
        fold,
    )


@dataclass
class FactorialResult:
    curves: list[PerformanceCurve]
    config: ExperimentConfig

    def by_condition(self) -> dict[str, list[PerformanceCurve]]:
        out: dict[str, list[PerformanceCurve]] = {}
        for curve in sorted(self.curves, key=lambda c: (c.condition, c.fold)):
            out.setdefault(curve.condition, []).append(curve)
        return out

    def summary_rows(self) -> list[dict[str, object]]:
        rows = []
        for name, curves in self.by_condition().items():
            finals = [c.final_acc for c in curves]
            costs = [c.total_cost for c in curves]
            grads = [c.r_perf for c in curves]
            rows.append(
                {
                    "condition": name,
                    "mean_final_acc": float(np.mean(finals)),
                    "sd_final_acc": float(np.std(finals, ddof=1)) if len(finals) > 1 else 0.0,
                    "mean_cost": float(np.mean(costs)),
                    "sd_cost": float(np.std(costs, ddof=1)) if len(costs) > 1 else 0.0,
                    "mean_rperf": float(np.mean(grads)),
                    "sd_rperf": float(np.std(grads, ddof=1)) if len(grads) > 1 else 0.0,
                }
            )
        return rows


def run_factorial(
    features: np.ndarray,
    truths: Sequence[dict[str, str]],
    config: ExperimentConfig,
    conditions: Iterable[PolicySettings] | None = None,
    jobs: int = 1,
    adaptive_controller_factory: Callable[[int], ThresholdController] | None = None,
) -> FactorialResult:
    """Run every condition over every fold; folds pair across conditions.

    Output is identical for any job count: tasks are keyed by
    (condition, fold) and reduced in that order.
    """
    conditions = list(conditions) if conditions is not None else list(ALL_CONDITIONS)
    tasks = [(c.name, fold) for c in conditions for fold in range(config.folds)]
    if jobs > 1:
        with ProcessPoolExecutor(
            max_workers=jobs,
            initializer=_init_worker,
            initargs=(features, truths, config),
        ) as pool:
            curves = list(pool.map(_run_one, tasks, chunksize=4))
    else:
        _init_worker(features, truths, config)
        curves = [_run_one(t) for t in tasks]

    if adaptive_controller_factory is not None:
        for fold in range(config.folds):
            curves.append(
                run_fold(
                    features,
                    truths,
                    PolicySettings.parse("L+UC+CD"),
                    config,
                    fold,
                    controller=adaptive_controller_factory(fold),
                    condition_name=ADAPTIVE_NAME,
                )
            )
    curves.sort(key=lambda c: (c.condition, c.fold))
    return FactorialResult(curves, config)


# ---------------------------------------------------------------------------
# analysis of variance on the per-fold gradient


@dataclass(frozen=True)
class EffectTest:
    name: str
    f_stat: float
    p_value: float


def _factor_levels(name: str) -> dict[str, int]:
    s = PolicySettings.parse(name)
    return {
        "initiative": 0 if s.initiative == "learner" else 1,
        "uncertainty": int(s.uncertainty),
        "context": int(s.context_dependency),
    }


def _f_stats(y: np.ndarray, cells: np.ndarray, factors: np.ndarray) -> np.ndarray:
    """F for the three main effects and initiative x uncertainty.

    Balanced two-level factorial; the residual comes from the full
    eight-cell model.
    """
    grand = y.mean()
    n = len(y)
    ss_within = 0.0
    for c in np.unique(cells):
        grp = y[cells == c]
        ss_within += ((grp - grp.mean()) ** 2).sum()
    denom = ss_within / max(n - 8, 1)

    effects = []
    for j in range(3):
        ss = 0.0
        for lvl in (0, 1):
            grp = y[factors[:, j] == lvl]
            ss += len(grp) * (grp.mean() - grand) ** 2
        effects.append(ss)
    # interaction over the four initiative x uncertainty cells
    ss_iu = 0.0
    for a in (0, 1):
        mean_a = y[factors[:, 0] == a].mean()
        for b in (0, 1):
            mean_b = y[factors[:, 1] == b].mean()
            grp = y[(factors[:, 0] == a) & (factors[:, 1] == b)]
            ss_iu += len(grp) * (grp.mean() - mean_a - mean_b + grand) ** 2
    effects.append(ss_iu)

    out = np.empty(4)
    for j, ss in enumerate(effects):
        if denom <= 0.0:
            out[j] = math.inf if ss > 1e-12 else 0.0
        else:
            out[j] = ss / denom
    return out


def main_effects(
    result: FactorialResult,
    permutations: int = 10_000,
    seed: int | None = None,
) -> dict[str, EffectTest]:
    """Permutation ANOVA over per-fold gradients of the eight-cell grid."""
    grid = {
        name: curves
        for name, curves in result.by_condition().items()
        if name != ADAPTIVE_NAME
    }
    if len(grid) != 8:
        raise ValueError("the analysis needs all eight factorial cells")
    y, cells, factors = [], [], []
    for cell_id, (name, curves) in enumerate(sorted(grid.items())):
        levels = _factor_levels(name)
        for curve in curves:
            y.append(curve.r_perf)
            cells.append(cell_id)
            factors.append(
                [levels["initiative"], levels["uncertainty"], levels["context"]]
            )
    y = np.asarray(y)
    cells = np.asarray(cells)
    factors = np.asarray(factors)

    observed = _f_stats(y, cells, factors)
    rng = np.random.default_rng(
        seed if seed is not None else result.config.master_seed
    )
    exceed = np.zeros(4)
    for _ in range(permutations):
        perm = rng.permutation(len(y))
        exceed += _f_stats(y[perm], cells, factors) >= observed
    p = (1.0 + exceed) / (1.0 + permutations)

    names = ["initiative", "uncertainty", "context", "initiative_x_uncertainty"]
    return {
        name: EffectTest(name, float(observed[j]), float(p[j]))
        for j, name in enumerate(names)
    }


# ---------------------------------------------------------------------------
# files


def write_curves_csv(path: str | Path, curves: Sequence[PerformanceCurve]) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# {ACCURACY_DEFINITION}\n")
        writer = csv.writer(fh)
        writer.writerow(["condition", "fold", "step", "instances", "accuracy", "cum_cost"])
        for curve in sorted(curves, key=lambda c: (c.condition, c.fold)):
            for pt in curve.points:
                writer.writerow(
                    [
                        curve.condition,
                        curve.fold,
                        pt.step,
                        pt.instances,
                        f"{pt.accuracy:.6f}",
                        f"{pt.cum_cost:.2f}",
                    ]
                )


def read_curves_csv(path: str | Path) -> list[PerformanceCurve]:
    rows: dict[tuple[str, int], list[CurvePoint]] = {}
    with open(path, newline="") as fh:
        lines = (line for line in fh if not line.startswith("#"))
        for row in csv.DictReader(lines):
            key = (row["condition"], int(row["fold"]))
            rows.setdefault(key, []).append(
                CurvePoint(
                    int(row["step"]),
                    int(row["instances"]),
                    float(row["accuracy"]),
                    float(row["cum_cost"]),
                )
            )
    return [
        PerformanceCurve(cond, fold, tuple(pts))
        for (cond, fold), pts in sorted(rows.items())
    ]


def write_summary_csv(path: str | Path, result: FactorialResult) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(f"# {ACCURACY_DEFINITION}\n")
        writer = csv.writer(fh)
        writer.writerow(
            ["condition", "mean_final_acc", "sd", "mean_cost", "sd", "mean_rperf", "sd"]
        )
        for row in result.summary_rows():
            writer.writerow(
                [
                    row["condition"],
                    f"{row['mean_final_acc']:.6f}",
                    f"{row['sd_final_acc']:.6f}",
                    f"{row['mean_cost']:.2f}",
                    f"{row['sd_cost']:.2f}",
                    f"{row['mean_rperf']:.8f}",
                    f"{row['sd_rperf']:.8f}",
                ]
            )


def write_anova_csv(path: str | Path, tests: dict[str, EffectTest]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["effect", "f_stat", "p_value"])
        for test in tests.values():
            writer.writerow([test.name, f"{test.f_stat:.4f}", f"{test.p_value:.6f}"])


# ---------------------------------------------------------------------------
# plots


def _mean_curves(curves: Sequence[PerformanceCurve]):
    grouped: dict[str, list[PerformanceCurve]] = {}
    for curve in curves:
        grouped.setdefault(curve.condition, []).append(curve)
    out = {}
    for name, group in sorted(grouped.items()):
        instances = np.array([pt.instances for pt in group[0].points])
        acc = np.mean([[pt.accuracy for pt in c.points] for c in group], axis=0)
        cost = np.mean([[pt.cum_cost for pt in c.points] for c in group], axis=0)
        out[name] = (instances, acc, cost)
    return out


def _styled_axes(ax, xlabel: str, ylabel: str) -> None:
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.3)


def _line_kwargs(name: str) -> dict:
    if name == ADAPTIVE_NAME:
        return {"color": "red", "linewidth": 2.0, "zorder": 5}
    return {}


def plot_curves(
    curves: Sequence[PerformanceCurve],
    out_dir: str | Path,
    stem: str = "fig",
) -> list[Path]:
    """Mean accuracy-vs-instances, cost-vs-instances and accuracy-vs-cost."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    means = _mean_curves(curves)
    paths = []

    specs = [
        ("accuracy_vs_instances", "training instances", "accuracy", 1),
        ("cost_vs_instances", "training instances", "cumulative tutor cost", 2),
        ("accuracy_vs_cost", "cumulative tutor cost", "accuracy", None),
    ]
    for suffix, xlabel, ylabel, column in specs:
        fig, ax = plt.subplots(figsize=(7, 4.5))
        for name, (instances, acc, cost) in means.items():
            series = {1: acc, 2: cost}
            if column is None:
                ax.plot(cost, acc, label=name, **_line_kwargs(name))
            else:
                ax.plot(instances, series[column], label=name, **_line_kwargs(name))
        _styled_axes(ax, xlabel, ylabel)
        ax.legend(fontsize=7, ncol=2)
        path = out / f"{stem}_{suffix}.svg"
        fig.savefig(path, format="svg", bbox_inches="tight")
        plt.close(fig)
        paths.append(path)
    return paths
