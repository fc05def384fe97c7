"""Command line front door.

Subcommands cover the whole pipeline: render the object corpus, build the
visual-word dictionary, run the factorial evaluation, train the adaptive
threshold, re-emit plots, start the tutoring service, and audit logged
transcripts.  A YAML config file supplies defaults per subcommand; explicit
flags always win.  Exit codes: 0 success, 2 bad invocation, 3 runtime error.
"""

from __future__ import annotations

import functools
import json
import time
from dataclasses import asdict
from pathlib import Path

import click
import numpy as np
import yaml

from . import adaptive as adp
from . import experiment as exp
from . import vision
from .dialogue import ALL_CONDITIONS, CostLedger, PolicySettings, replay_cost


class RuntimeFailure(click.ClickException):
    exit_code = 3


def guarded(fn):
    """Map internal errors to exit code 3, leaving usage errors at 2."""

    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except click.ClickException:
            raise
        except (ValueError, RuntimeError, OSError) as err:
            raise RuntimeFailure(str(err)) from err

    return wrapper


@click.group()
@click.option(
    "--config",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
    help="YAML file with per-subcommand option defaults.",
)
@click.version_option()
@click.pass_context
def main(ctx: click.Context, config: str | None) -> None:
    if config:
        with open(config) as fh:
            loaded = yaml.safe_load(fh) or {}
        if not isinstance(loaded, dict):
            raise click.UsageError(f"{config} must hold a mapping")
        ctx.default_map = loaded


# ---------------------------------------------------------------------------
# corpus plumbing shared by the heavier subcommands


def _load_objects(data: str | None, count: int, seed: int):
    if data:
        click.echo(f"reading corpus from {data}")
        return vision.read_dataset(data)
    click.echo(f"rendering {count} objects (seed {seed})")
    return vision.build_dataset(count, seed)


def _load_dictionary(dict_path: str | None, dict_seed: int):
    if dict_path:
        click.echo(f"loading dictionary from {dict_path}")
        return vision.load_dictionary(dict_path)
    click.echo("building dictionary from the reserved seed images")
    return vision.build_dictionary(vision.dictionary_seed_images(), seed=dict_seed)


def _featurize(objects, dictionary) -> np.ndarray:
    click.echo(f"featurizing {len(objects)} images")
    return np.array(
        [vision.extract_features(obj.image, dictionary) for obj in objects]
    )


def _corpus_options(fn):
    opts = [
        click.option(
            "--data",
            type=click.Path(exists=True, file_okay=False),
            default=None,
            help="Rendered corpus directory; omitted = render in process.",
        ),
        click.option("--count", default=600, show_default=True),
        click.option("--data-seed", default=0, show_default=True),
        click.option(
            "--dict",
            "dict_path",
            type=click.Path(exists=True, dir_okay=False),
            default=None,
            help="Saved visual-word dictionary; omitted = build in process.",
        ),
        click.option("--dict-seed", default=0, show_default=True),
    ]
    for opt in reversed(opts):
        fn = opt(fn)
    return fn


def _write_manifest(out_dir: Path, payload: dict) -> None:
    payload = dict(payload)
    payload["accuracy"] = exp.ACCURACY_DEFINITION
    payload["costs"] = {
        "inform_per_attribute": CostLedger.C_INF,
        "acknowledge": CostLedger.C_ACK,
        "correct": CostLedger.C_CRT,
        "parse_per_word": CostLedger.C_PARSE_PER_WORD,
        "produce_per_word": CostLedger.C_PROD_PER_WORD,
    }
    with open(out_dir / "manifest.json", "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _parse_conditions(spec: str) -> list[PolicySettings]:
    if spec.strip().lower() == "all":
        return list(ALL_CONDITIONS)
    return [PolicySettings.parse(tok) for tok in spec.split(",") if tok.strip()]


# ---------------------------------------------------------------------------
# subcommands


@main.command("gen-data")
@click.option("--out", required=True, type=click.Path(file_okay=False))
@click.option("--seed", default=0, show_default=True)
@click.option("--count", default=600, show_default=True)
@guarded
def gen_data(out: str, seed: int, count: int) -> None:
    """Render the balanced colour/shape corpus to PNGs plus a manifest."""
    objects = vision.build_dataset(count, seed)
    vision.write_dataset(objects, out)
    click.echo(f"wrote {len(objects)} objects to {out}")


@main.command("build-dict")
@click.option(
    "--seed-images",
    type=click.Path(exists=True, file_okay=False),
    default=None,
    help="Corpus directory to cluster; omitted = the reserved seed set.",
)
@click.option("--k", default=vision.DICTIONARY_SIZE, show_default=True)
@click.option("--seed", default=0, show_default=True)
@click.option("--out", required=True, type=click.Path(dir_okay=False))
@guarded
def build_dict(seed_images: str | None, k: int, seed: int, out: str) -> None:
    """Cluster edge descriptors into the visual-word dictionary."""
    if seed_images:
        images = [obj.image for obj in vision.read_dataset(seed_images)]
    else:
        images = vision.dictionary_seed_images()
    dictionary = vision.build_dictionary(images, k=k, seed=seed)
    vision.save_dictionary(dictionary, out)
    click.echo(f"wrote {dictionary.size}-word dictionary to {out}")


@main.command("experiment")
@_corpus_options
@click.option("--conditions", default="all", show_default=True)
@click.option("--folds", default=20, show_default=True)
@click.option("--train", default=500, show_default=True)
@click.option("--test", default=100, show_default=True)
@click.option("--step", default=10, show_default=True)
@click.option("--seed", default=exp.DEFAULT_MASTER_SEED, show_default=True)
@click.option("--eta0", default=exp.HARNESS_ETA0, show_default=True)
@click.option("--lam", default=exp.HARNESS_LAMBDA, show_default=True)
@click.option("--threshold", default=0.9, show_default=True)
@click.option(
    "--normalize/--no-normalize",
    default=True,
    help="Per-block feature preconditioning; requires full-size features.",
)
@click.option("--jobs", default=1, show_default=True)
@click.option("--permutations", default=10_000, show_default=True)
@click.option(
    "--adaptive/--no-adaptive",
    default=False,
    help="Also train and evaluate the adaptive-threshold condition.",
)
@click.option("--episodes", default=adp.DEFAULT_EPISODES, show_default=True)
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@guarded
def experiment(
    data,
    count,
    data_seed,
    dict_path,
    dict_seed,
    conditions,
    folds,
    train,
    test,
    step,
    seed,
    eta0,
    lam,
    threshold,
    normalize,
    jobs,
    permutations,
    adaptive,
    episodes,
    out_dir,
) -> None:
    """Run the dialogue-policy factorial and write CSVs, plots, manifest."""
    t0 = time.monotonic()
    wanted = _parse_conditions(conditions)
    config = exp.ExperimentConfig(
        folds=folds,
        train=train,
        test=test,
        step=step,
        master_seed=seed,
        eta0=eta0,
        lam=lam,
        positive_threshold=threshold,
        normalize=normalize,
    )
    objects = _load_objects(data, count, data_seed)
    dictionary = _load_dictionary(dict_path, dict_seed)
    features = _featurize(objects, dictionary)
    truths = [exp.object_truth(obj) for obj in objects]

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    factory = None
    if adaptive:
        click.echo(f"training threshold policy ({episodes} episodes)")
        q, trace = adp.sarsa_train(
            features, truths, config, episodes=episodes, seed=seed
        )
        q.save(out / "qtable.npz")
        adp.write_trace_csv(out / "adaptive_trace.csv", trace)
        factory = adp.controller_factory(q)

    click.echo(
        f"running {len(wanted)} conditions x {config.folds} folds (jobs={jobs})"
    )
    result = exp.run_factorial(
        features, truths, config, conditions=wanted, jobs=jobs,
        adaptive_controller_factory=factory,
    )
    exp.write_curves_csv(out / "curves.csv", result.curves)
    exp.write_summary_csv(out / "summary.csv", result)
    plots = exp.plot_curves(result.curves, out)

    anova = None
    if len(wanted) == len(ALL_CONDITIONS):
        anova = exp.main_effects(result, permutations=permutations, seed=seed)
        exp.write_anova_csv(out / "anova.csv", anova)

    _write_manifest(
        out,
        {
            "command": "experiment",
            "config": asdict(config),
            "conditions": [c.name for c in wanted],
            "adaptive": adaptive,
            "episodes": episodes if adaptive else None,
            "jobs": jobs,
            "permutations": permutations,
            "data": data or f"rendered count={count} seed={data_seed}",
            "dictionary": dict_path or f"built seed={dict_seed}",
            "plots": [p.name for p in plots],
            "wall_seconds": round(time.monotonic() - t0, 1),
        },
    )
    for row in result.summary_rows():
        click.echo(
            f"{row['condition']:>16}  acc {row['mean_final_acc']:.3f}"
            f" +- {row['sd_final_acc']:.3f}"
            f"  cost {row['mean_cost']:.1f}"
        )
    if anova:
        for test_ in anova.values():
            click.echo(f"{test_.name:>16}  F={test_.f_stat:.2f}  p={test_.p_value:.4f}")
    click.echo(f"artifacts in {out}")


@main.command("adaptive")
@_corpus_options
@click.option("--episodes", default=adp.DEFAULT_EPISODES, show_default=True)
@click.option("--alpha", default=adp.DEFAULT_ALPHA, show_default=True)
@click.option("--gamma", default=adp.DEFAULT_GAMMA, show_default=True)
@click.option(
    "--epsilon-schedule",
    default=f"{adp.DEFAULT_EPS_START}:{adp.DEFAULT_EPS_END}",
    show_default=True,
    help="Exploration anneal as start:end.",
)
@click.option("--seed", default=exp.DEFAULT_MASTER_SEED, show_default=True)
@click.option("--folds", default=20, show_default=True)
@click.option("--train", default=500, show_default=True)
@click.option("--test", default=100, show_default=True)
@click.option("--normalize/--no-normalize", default=True)
@click.option("--out-dir", required=True, type=click.Path(file_okay=False))
@guarded
def adaptive_cmd(
    data,
    count,
    data_seed,
    dict_path,
    dict_seed,
    episodes,
    alpha,
    gamma,
    epsilon_schedule,
    seed,
    folds,
    train,
    test,
    normalize,
    out_dir,
) -> None:
    """Train the confidence-threshold policy and evaluate it greedily."""
    try:
        eps_start, eps_end = (float(v) for v in epsilon_schedule.split(":"))
    except ValueError:
        raise click.UsageError("--epsilon-schedule must look like 0.3:0.05")
    config = exp.ExperimentConfig(
        folds=folds, train=train, test=test, master_seed=seed, normalize=normalize
    )
    objects = _load_objects(data, count, data_seed)
    dictionary = _load_dictionary(dict_path, dict_seed)
    features = _featurize(objects, dictionary)
    truths = [exp.object_truth(obj) for obj in objects]

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    click.echo(f"training for {episodes} episodes")
    q, trace = adp.sarsa_train(
        features,
        truths,
        config,
        episodes=episodes,
        alpha=alpha,
        gamma=gamma,
        eps_start=eps_start,
        eps_end=eps_end,
        seed=seed,
    )
    q.save(out / "qtable.npz")
    adp.write_trace_csv(out / "train_trace.csv", trace)

    curves, greedy_trace = adp.run_adaptive_condition(features, truths, config, q)
    exp.write_curves_csv(out / "adaptive_curves.csv", curves)
    adp.write_trace_csv(out / "greedy_trace.csv", greedy_trace)
    _write_manifest(
        out,
        {
            "command": "adaptive",
            "config": asdict(config),
            "episodes": episodes,
            "alpha": alpha,
            "gamma": gamma,
            "epsilon": [eps_start, eps_end],
            "data": data or f"rendered count={count} seed={data_seed}",
            "dictionary": dict_path or f"built seed={dict_seed}",
        },
    )
    final = np.mean([c.points[-1].accuracy for c in curves])
    click.echo(f"greedy policy final accuracy {final:.3f}; artifacts in {out}")


@main.command("plot")
@click.option(
    "--curves-csv", required=True, type=click.Path(exists=True, dir_okay=False)
)
@click.option("--out-svg", required=True, type=click.Path(dir_okay=False))
@guarded
def plot(curves_csv: str, out_svg: str) -> None:
    """Re-emit the figures from a saved curves file."""
    curves = exp.read_curves_csv(curves_csv)
    target = Path(out_svg)
    paths = exp.plot_curves(curves, target.parent, stem=target.stem)
    for path in paths:
        click.echo(f"wrote {path}")


@main.command("serve")
@_corpus_options
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8000, show_default=True)
@click.option(
    "--model",
    type=click.Path(exists=True, dir_okay=False),
    default=None,
    help="Saved classifier bank offered to sessions created with use_model.",
)
@click.option("--eta0", default=exp.HARNESS_ETA0, show_default=True)
@click.option("--lam", default=exp.HARNESS_LAMBDA, show_default=True)
@guarded
def serve(data, count, data_seed, dict_path, dict_seed, host, port, model, eta0, lam):
    """Start the interactive tutoring service."""
    import uvicorn

    from .service import create_app

    objects = _load_objects(data, count, data_seed)
    dictionary = _load_dictionary(dict_path, dict_seed)
    features = _featurize(objects, dictionary)
    app = create_app(objects, features, model_path=model, eta0=eta0, lam=lam)
    click.echo(f"serving on http://{host}:{port}")
    uvicorn.run(app, host=host, port=port, log_level="warning")


@main.command("replay")
@click.option(
    "--transcript", required=True, type=click.Path(exists=True, dir_okay=False)
)
@guarded
def replay(transcript: str) -> None:
    """Recompute a logged transcript's charges and check its cost line."""
    lines = Path(transcript).read_text().splitlines()
    total = replay_cost(lines)
    click.echo(f"replayed {transcript}: cumulative cost {total:.2f}")


if __name__ == "__main__":
    main()
