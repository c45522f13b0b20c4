"""Command-line interface.

Subcommands: synthesize (build a transition matrix), simulate (run the
guided attack pipeline), experiment (cross-validation sweep), attack-demo
(one targeted attack, verbose output).

Exit codes are a stable contract: 0 success, 1 usage or data error, 2
infeasible synthesis. Infeasibility gets its own code because success-rate
analyses count it as a first-class outcome, not a crash.
"""

from __future__ import annotations

import dataclasses
import json
import os
import sys
from pathlib import Path

import click
import numpy as np

from .attacks import (
    ATTACK_NORMS,
    ATTACKS,
    AffineClassifier,
    AttackBudget,
    SyntheticOracle,
)
from .core import (
    TransitionMatrix,
    records_from_jsonl,
    stats_from_records,
    validate_distribution,
    ClassSet,
)
from .errors import AllZeroSignalError, ClassdriftError, InfeasibleError
from .evaluation import (
    ExperimentPlan,
    IndependentReachBackend,
    MethodSpec,
    db_distortion,
    results_csv,
    run_experiment,
)
from .pipeline import (
    ClassifierBackend,
    OracleBackend,
    PipelineRun,
    make_classifier_samples,
    make_oracle_samples,
    outcomes_to_jsonl,
    run_batch,
)
from .synthesis import synthesize as run_synthesis

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INFEASIBLE = 2


def _resolve_seed(seed: int | None) -> tuple[int, bool]:
    if seed is not None:
        return seed, True
    env = os.environ.get("CLASSDRIFT_SEED")
    if env is not None:
        try:
            return int(env), True
        except ValueError:
            raise click.UsageError(f"CLASSDRIFT_SEED must be an integer, got {env!r}")
    return 0, False


@click.group()
@click.option("--seed", type=int, default=None,
              help="Master seed; falls back to CLASSDRIFT_SEED, then 0.")
@click.option("--output-dir", type=click.Path(file_okay=False), default=".",
              show_default=True, help="Directory for emitted files.")
@click.option("--format", "fmt", type=click.Choice(["json", "csv"]), default="json",
              show_default=True, help="Matrix output format for synthesize.")
@click.pass_context
def cli(ctx, seed, output_dir, fmt):
    """Steer a classifier's output-class distribution via guided attacks."""
    ctx.ensure_object(dict)
    resolved, explicit = _resolve_seed(seed)
    ctx.obj["seed"] = resolved
    ctx.obj["seed_explicit"] = explicit
    ctx.obj["output_dir"] = Path(output_dir)
    ctx.obj["format"] = fmt


def _out_dir(ctx) -> Path:
    path = ctx.obj["output_dir"]
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_distribution(path: str):
    return validate_distribution(json.loads(Path(path).read_text()))


@cli.command()
@click.option("--method", type=click.IntRange(1, 4), required=True)
@click.option("--variant", default="default", show_default=True,
              help="default | strict (method 2) | no_laplace / keep_singleton (method 4).")
@click.option("--initial", "initial_file", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="JSON array: current class distribution.")
@click.option("--target", "target_file", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="JSON array: desired class distribution.")
@click.option("--stats", "stats_file", default=None,
              type=click.Path(exists=True, dir_okay=False),
              help="Reachability records JSONL (methods 2-4).")
@click.option("--xi", type=float, default=0.01, show_default=True,
              help="Off-diagonal floor reward cap.")
@click.pass_context
def synthesize(ctx, method, variant, initial_file, target_file, stats_file, xi):
    """Build a transition matrix from the initial to the target distribution."""
    p = _load_distribution(initial_file)
    p_target = _load_distribution(target_file)
    spec = MethodSpec(method, variant)
    cfg = spec.config(xi)
    stats = None
    if stats_file is not None:
        records = records_from_jsonl(Path(stats_file).read_text(), p.k)
        stats = stats_from_records(records, ClassSet(p.k))
    elif method != 1:
        raise click.UsageError(f"method {method} requires --stats")
    result = run_synthesis(method, p, p_target, stats, cfg)

    report = {
        "method": result.method,
        "variant": result.variant,
        "status": result.status.value,
        "objective": result.objective,
        "n_variables": result.n_variables,
    }
    if result.ok:
        check = result.aux.get("check")
        report["max_residual"] = check.max_residual if check else None
        report["diagonal_mass"] = check.diagonal_mass if check else None
        out = _out_dir(ctx)
        if ctx.obj["format"] == "csv":
            path = out / "matrix.csv"
            path.write_text(
                "\n".join(",".join(f"{v:.17g}" for v in row) for row in result.matrix.rows)
                + "\n"
            )
        else:
            path = out / "matrix.json"
            path.write_text(result.matrix.to_json() + "\n")
        report["matrix_file"] = str(path)
    click.echo(json.dumps(report))
    return EXIT_OK if result.ok else EXIT_INFEASIBLE


@cli.command()
@click.option("--matrix", "matrix_file", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--oracle", "oracle_file", default=None,
              type=click.Path(exists=True, dir_okay=False),
              help="Synthetic reachability table JSON.")
@click.option("--classifier", "classifier_file", default=None,
              type=click.Path(exists=True, dir_okay=False),
              help="Affine classifier spec JSON.")
@click.option("--attack", type=click.Choice(sorted(ATTACKS)), default="deepfool",
              show_default=True)
@click.option("--epsilon", type=float, default=float("inf"), show_default=True)
@click.option("--n", type=int, required=True, help="Batch size.")
@click.option("--fallback", type=click.Choice(["stay", "uniform"]), default="stay",
              show_default=True, help="Zero-mass renormalization fallback.")
@click.pass_context
def simulate(ctx, matrix_file, oracle_file, classifier_file, attack, epsilon, n, fallback):
    """Run the guided attack pipeline and emit outcomes plus a summary."""
    if (oracle_file is None) == (classifier_file is None):
        raise click.UsageError("provide exactly one of --oracle or --classifier")
    seed = ctx.obj["seed"]
    matrix = TransitionMatrix.from_json(Path(matrix_file).read_text())
    if oracle_file is not None:
        oracle = SyntheticOracle.from_json(Path(oracle_file).read_text(), seed=seed)
        backend = OracleBackend(oracle)
        samples = make_oracle_samples(matrix.k, n, seed)
    else:
        clf = AffineClassifier.from_json(Path(classifier_file).read_text())
        budget = AttackBudget(epsilon=epsilon, norm=ATTACK_NORMS[attack])
        backend = ClassifierBackend(clf, attack, budget)
        samples = make_classifier_samples(clf, n, seed)

    out = _out_dir(ctx)
    outcomes_path = out / "outcomes.jsonl"
    if n <= 0:
        outcomes_path.write_text("")
        raise click.ClickException("empty batch: --n must be >= 1")
    run = PipelineRun(matrix=matrix, backend=backend, seed=seed, fallback=fallback)
    outcomes, summary = run_batch(samples, run)
    outcomes_path.write_text(outcomes_to_jsonl(outcomes))
    summary_obj = summary.to_obj()
    (out / "summary.json").write_text(json.dumps(summary_obj, indent=2) + "\n")
    click.echo(json.dumps(summary_obj))
    return EXIT_OK


@cli.command()
@click.option("--plan", "plan_file", required=True,
              type=click.Path(exists=True, dir_okay=False),
              help="Experiment plan JSON.")
@click.option("--jobs", type=int, default=1, show_default=True,
              help="Parallel cells; results are identical at any value.")
@click.option("--timings", is_flag=True,
              help="Fill the wall_ms column (breaks byte-identical replays).")
@click.pass_context
def experiment(ctx, plan_file, jobs, timings):
    """Cross-validation sweep; writes results CSV and summary JSON."""
    plan = ExperimentPlan.from_json(Path(plan_file).read_text())
    if ctx.obj["seed_explicit"]:
        plan = dataclasses.replace(plan, seed=ctx.obj["seed"])
    backend = IndependentReachBackend(plan.k, plan.reach_scale)
    progress = lambda msg: click.echo(msg, err=True)
    result = run_experiment(plan, backend, jobs=jobs, timings=timings, progress=progress)
    out = _out_dir(ctx)
    paths = []
    for block in result.blocks:
        name = (
            "results.csv"
            if len(result.blocks) == 1
            else f"results_N{block.n_per_class}.csv"
        )
        path = out / name
        path.write_text(results_csv(block))
        paths.append(str(path))
    (out / "summary.json").write_text(json.dumps(result.summary, indent=2) + "\n")
    click.echo(json.dumps({"results": paths, "summary": str(out / "summary.json")}))
    return EXIT_OK


@cli.command("attack-demo")
@click.option("--classifier", "classifier_file", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--input", "input_vec", required=True,
              help="Comma-separated input coordinates.")
@click.option("--target", type=int, required=True)
@click.option("--attack", type=click.Choice(sorted(ATTACKS)), default="deepfool",
              show_default=True)
@click.option("--epsilon", type=float, default=float("inf"), show_default=True)
def attack_demo(classifier_file, input_vec, target, attack, epsilon):
    """Run one targeted attack and print the adversarial example."""
    clf = AffineClassifier.from_json(Path(classifier_file).read_text())
    x = np.array([float(tok) for tok in input_vec.split(",")])
    budget = AttackBudget(epsilon=epsilon, norm=ATTACK_NORMS[attack])
    example = ATTACKS[attack](clf, x, target, budget)
    obj = example.to_obj()
    obj["norm"] = ATTACK_NORMS[attack]
    obj["predicted"] = clf.predict(example.x_adv)
    try:
        obj["db"] = db_distortion(example.x, example.v)
    except AllZeroSignalError:
        obj["db"] = None
    click.echo(json.dumps(obj, indent=2))
    return EXIT_OK


def main(argv=None) -> int:
    """Run the CLI without click's own exit handling so exceptions map onto
    the documented exit codes."""
    try:
        rv = cli.main(args=argv, standalone_mode=False, obj={})
        return rv if isinstance(rv, int) else EXIT_OK
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.UsageError as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        return EXIT_ERROR
    except click.ClickException as exc:
        exc.show()
        return EXIT_ERROR
    except InfeasibleError as exc:
        click.echo(f"infeasible: {exc}", err=True)
        return EXIT_INFEASIBLE
    except (ClassdriftError, ValueError, OSError, KeyError) as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_ERROR


def entry() -> None:
    sys.exit(main())
