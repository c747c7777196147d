"""Command-line front end: inspect, train, explain, global, sp, bench.

Every subcommand accepts the full option set, so one key=value config
file can drive a whole workflow; explicit flags override file values.
All artifacts land under --out with fixed names and embed the resolved
configuration.  Timing fields inside explain/global/sp artifacts are
normalized to null so reruns with the same seed are byte-identical;
real wall times go to stdout (and to bench.json, which is a timing
report by definition).
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import time
from pathlib import Path

import numpy as np

from .core import (
    ConfigError,
    DataError,
    Dataset,
    LimaseError,
    RandomStream,
    child_seed,
    dataset_summary,
    load_csv,
)
from .external import ExternalModel, attach_external
from .kernel import kernel_shap
from .models import (
    ForestModel,
    TreeModel,
    fit_mlp,
    fit_random_forest,
    load_model,
    save_model,
    training_score,
)
from .pipeline import LimaseConfig, limase_explain, limase_explain_batch
from .shapley import ShapExplanation, forest_shap, tree_shap
from .sp import ExplanationMatrix, sp_explain
from .trees import TreeParams, fit_tree
from .viz import build_force_plot, build_summary_plot, render_svg

# Child-stream indices, one per independent random purpose.
_TRAIN_STREAM = 101
_MLP_STREAM = 102
_BACKGROUND_STREAM = 103
_PICK_STREAM = 104
_KERNEL_STREAM = 105

# Fixed bench budgets, so reported speedups are comparable across machines.
BENCH_KERNEL_BUDGET = 2048
BENCH_BACKGROUND_ROWS = 100
BENCH_BATCH = 100

_EXPLAINERS = ("limase", "treeshap", "kernelshap")
_MODEL_KINDS = ("tree", "forest", "mlp")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="limase",
        description="Local surrogate-tree Shapley explanations for black-box models.",
        allow_abbrev=False,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("inspect", "print a dataset summary"),
        ("train", "fit a model and write model.json"),
        ("explain", "explain one instance (explanation.json + force.svg)"),
        ("global", "explain many instances (matrix.json + summary.svg)"),
        ("sp", "pick representative instances (sp.json + summary.svg)"),
        ("bench", "time the surrogate pipeline against the kernel baseline"),
    ):
        p = sub.add_parser(name, help=help_text, allow_abbrev=False)
        _add_options(p)
    return parser


def _add_options(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", help="CSV file with a header row")
    p.add_argument("--target", default="target", help="target column name")
    p.add_argument("--task", default="regression",
                   choices=("classification", "regression"))
    p.add_argument("--model", default="forest",
                   help="tree | forest | mlp | external:<command> | path to model.json")
    p.add_argument("--explainer", default="limase", choices=_EXPLAINERS)
    p.add_argument("--sigma", type=float, default=None,
                   help="kernel width in standardized units (default: auto = 5)")
    p.add_argument("--n-samples", dest="n_samples", type=int, default=1000,
                   help="perturbations per explained instance")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--budget", type=int, default=10, help="pick budget G for sp")
    p.add_argument("--class", dest="class_index", type=int, default=None,
                   help="class whose probability is explained (default: predicted)")
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    p.add_argument("--config", default=None, help="key=value file; flags override")
    p.add_argument("--instance", type=int, default=0, help="row to explain")
    p.add_argument("--count", type=int, default=100,
                   help="instances for global/sp sampling")
    p.add_argument("--kernel-budget", dest="kernel_budget", default="2048",
                   help="coalition samples for kernelshap, or 'exact'")
    p.add_argument("--background", type=int, default=100,
                   help="background rows for kernelshap")
    p.add_argument("--max-depth", dest="max_depth", type=int, default=6)
    p.add_argument("--min-samples-leaf", dest="min_samples_leaf", type=float, default=5.0)
    p.add_argument("--n-trees", dest="n_trees", type=int, default=50)
    p.add_argument("--hidden", default="16,16", help="MLP hidden widths, comma-separated")
    p.add_argument("--epochs", type=int, default=60)
    p.add_argument("--learning-rate", dest="learning_rate", type=float, default=0.05)


def _explicit_dests(parser: argparse.ArgumentParser, argv: list[str]) -> set[str]:
    """Dests of options literally present on the command line."""
    explicit = set()
    for action in parser._actions:
        for opt in action.option_strings:
            if any(a == opt or a.startswith(opt + "=") for a in argv):
                explicit.add(action.dest)
    return explicit


def _load_config_file(path: str, parser: argparse.ArgumentParser) -> dict:
    """Parse a key=value file into typed values using the option table."""
    types = {}
    for action in parser._actions:
        if action.option_strings:
            types[action.dest] = action.type
    values = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        key = key.strip().replace("-", "_")
        value = value.strip()
        if len(value) >= 2 and value[0] == value[-1] and value[0] in "\"'":
            value = value[1:-1]
        if key not in types:
            raise ConfigError(f"{path}:{lineno}: unknown option {key!r}")
        caster = types[key]
        try:
            values[key] = caster(value) if caster is not None else value
        except ValueError:
            raise ConfigError(f"{path}:{lineno}: bad value for {key}: {value!r}") from None
    return values


def parse_args(argv: list[str]) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        command_parser = _subparser_for(parser, args.command)
        explicit = _explicit_dests(command_parser, argv)
        for key, value in _load_config_file(args.config, command_parser).items():
            if key not in explicit:
                setattr(args, key, value)
    return args


def _subparser_for(parser: argparse.ArgumentParser, command: str) -> argparse.ArgumentParser:
    for action in parser._actions:
        if isinstance(action, argparse._SubParsersAction):
            return action.choices[command]
    raise AssertionError("subparsers not found")


def _config_echo(args: argparse.Namespace) -> dict:
    echo = {k: v for k, v in vars(args).items()}
    return dict(sorted(echo.items()))


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _require_data(args) -> Dataset:
    if not args.data:
        raise ConfigError("--data is required")
    return load_csv(args.data, args.target, args.task)


def _tree_params(args) -> TreeParams:
    return TreeParams(max_depth=args.max_depth, min_samples_leaf=args.min_samples_leaf)


def _limase_config(args) -> LimaseConfig:
    return LimaseConfig(
        n_samples=args.n_samples,
        sigma=args.sigma if args.sigma is not None else 5.0,
        sigma_mode="absolute" if args.sigma is not None else "auto",
        tree_params=_tree_params(args),
        seed=args.seed,
        class_index=args.class_index,
    )


def _parse_kernel_budget(value: str) -> int | str:
    if value == "exact":
        return "exact"
    try:
        return int(value)
    except ValueError:
        raise ConfigError(f"--kernel-budget must be an integer or 'exact', got {value!r}") from None


def _train_model(kind: str, data: Dataset, args):
    params = _tree_params(args)
    if kind == "tree":
        if data.task.is_classification:
            raise ConfigError("model 'tree' supports regression only; use 'forest'")
        weights = np.ones(data.n)
        return TreeModel(fit_tree(data.rows, data.target, weights, params))
    if kind == "forest":
        rng = RandomStream(child_seed(args.seed, _TRAIN_STREAM))
        return fit_random_forest(data, args.n_trees, params, rng)
    if kind == "mlp":
        hidden = [int(h) for h in str(args.hidden).split(",") if h.strip()]
        rng = RandomStream(child_seed(args.seed, _MLP_STREAM))
        return fit_mlp(data, hidden, args.epochs, args.learning_rate, rng)
    raise ConfigError(f"unknown model kind {kind!r}")


def _resolve_model(args, data: Dataset):
    spec = args.model
    if spec.startswith("external:"):
        return attach_external(spec[len("external:"):], data.d, data.task)
    if spec in _MODEL_KINDS:
        return _train_model(spec, data, args)
    path = Path(spec)
    if path.exists():
        model = load_model(path)
        if model.d != data.d:
            raise DataError(f"model expects {model.d} features, dataset has {data.d}")
        if model.task.kind != data.task.kind:
            raise DataError(f"model task {model.task.kind!r} != dataset task {data.task.kind!r}")
        return model
    raise ConfigError(f"unknown model spec {spec!r} (not a kind, external:, or existing file)")


def _validate_class_index(args, data: Dataset) -> None:
    ci = args.class_index
    if ci is None:
        return
    if not data.task.is_classification:
        raise ConfigError("--class applies to classification tasks only")
    if not 0 <= ci < data.task.n_classes:
        raise ConfigError(f"--class {ci} out of range for {data.task.n_classes} classes")


def _background_rows(args, data: Dataset) -> np.ndarray:
    rng = RandomStream(child_seed(args.seed, _BACKGROUND_STREAM))
    count = min(args.background, data.n)
    picked = np.sort(rng.choice(data.n, size=count, replace=False))
    return data.rows[picked]


def _sample_indices(args, data: Dataset, count: int) -> list[int]:
    rng = RandomStream(child_seed(args.seed, _PICK_STREAM))
    return [int(i) for i in np.sort(rng.choice(data.n, size=count, replace=False))]


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _explain_one(args, data: Dataset, model, x: np.ndarray) -> tuple[dict, ShapExplanation]:
    """Dispatch one instance to the configured explainer."""
    names = data.feature_names
    if args.explainer == "limase":
        result = limase_explain(model, x, data.features, _limase_config(args))
        return result.to_json_dict(names), result.explanation
    if args.explainer == "treeshap":
        if isinstance(model, TreeModel):
            e = tree_shap(model.tree, x)
        elif isinstance(model, ForestModel):
            e = forest_shap(model, x, args.class_index)
        else:
            raise ConfigError("--explainer treeshap requires a tree or forest model")
        return e.to_json_dict(names), e
    budget = _parse_kernel_budget(args.kernel_budget)
    rng = RandomStream(child_seed(args.seed, _KERNEL_STREAM))
    e = kernel_shap(model, x, _background_rows(args, data), budget, rng, args.class_index)
    return e.to_json_dict(names), e


def cmd_inspect(args) -> int:
    data = _require_data(args)
    payload = dataset_summary(data)
    payload["config"] = _config_echo(args)
    print(json.dumps(payload, indent=2, sort_keys=True))
    return 0


def cmd_train(args) -> int:
    data = _require_data(args)
    if args.model.startswith("external:") or args.model not in _MODEL_KINDS:
        raise ConfigError(f"train expects --model in {_MODEL_KINDS}, got {args.model!r}")
    model = _train_model(args.model, data, args)
    out = _out_dir(args)
    path = out / "model.json"
    save_model(model, path, data.feature_names)
    payload = json.loads(path.read_text(encoding="utf-8"))
    payload["config"] = _config_echo(args)
    _write_json(path, payload)
    score = training_score(model, data)
    metric = "accuracy" if data.task.is_classification else "r2"
    print(f"trained {args.model} on {data.n} rows: train {metric} {score:.4f}")
    print(f"wrote {path}")
    return 0


def cmd_explain(args) -> int:
    data = _require_data(args)
    _validate_class_index(args, data)
    if not 0 <= args.instance < data.n:
        raise ConfigError(f"--instance {args.instance} out of range for {data.n} rows")
    model = _resolve_model(args, data)
    try:
        x = data.rows[args.instance]
        started = time.perf_counter()
        record, explanation = _explain_one(args, data, model, x)
        elapsed = time.perf_counter() - started
    finally:
        if isinstance(model, ExternalModel):
            model.close()
    record["instance_index"] = args.instance
    record["config"] = _config_echo(args)
    record["elapsed_ms"] = None
    out = _out_dir(args)
    _write_json(out / "explanation.json", record)
    force = build_force_plot(explanation, data.features)
    render_svg(force, out / "force.svg")
    print(f"explained instance {args.instance} with {args.explainer} "
          f"in {elapsed * 1000:.1f} ms")
    print(f"wrote {out / 'explanation.json'} and {out / 'force.svg'}")
    return 0


def _explain_many(args, data: Dataset, model, indices: list[int],
                  *, threads: int) -> list[ShapExplanation]:
    rows = data.rows[indices]
    if args.explainer == "limase":
        results = limase_explain_batch(model, rows, data.features,
                                       _limase_config(args), threads=threads)
        failed = [r for r in results if isinstance(r, Exception)]
        if failed:
            raise LimaseError(f"{len(failed)} of {len(results)} explanations failed: {failed[0]}")
        return [r.explanation for r in results]
    if args.explainer == "treeshap":
        if isinstance(model, TreeModel):
            return [tree_shap(model.tree, row) for row in rows]
        if isinstance(model, ForestModel):
            return [forest_shap(model, row, args.class_index) for row in rows]
        raise ConfigError("--explainer treeshap requires a tree or forest model")
    budget = _parse_kernel_budget(args.kernel_budget)
    background = _background_rows(args, data)
    out = []
    for i, row in enumerate(rows):
        rng = RandomStream(child_seed(child_seed(args.seed, _KERNEL_STREAM), i))
        out.append(kernel_shap(model, row, background, budget, rng, args.class_index))
    return out


def cmd_global(args) -> int:
    data = _require_data(args)
    _validate_class_index(args, data)
    if args.count > data.n:
        raise DataError(f"--count {args.count} exceeds the {data.n} dataset rows")
    if args.count < 1:
        raise ConfigError("--count must be >= 1")
    model = _resolve_model(args, data)
    indices = _sample_indices(args, data, args.count)
    started = time.perf_counter()
    try:
        explanations = _explain_many(args, data, model, indices, threads=args.threads)
    finally:
        if isinstance(model, ExternalModel):
            model.close()
    elapsed = time.perf_counter() - started
    matrix = ExplanationMatrix(S=np.vstack([e.phi for e in explanations]), indices=indices)
    payload = {
        "explainer": args.explainer,
        "indices": indices,
        "feature_names": data.feature_names,
        "phi": [[float(v) for v in row] for row in matrix.S],
        "base_values": [float(e.base_value) for e in explanations],
        "fx": [float(e.fx) for e in explanations],
        "config": _config_echo(args),
        "elapsed_ms": None,
    }
    out = _out_dir(args)
    _write_json(out / "matrix.json", payload)
    summary = build_summary_plot(matrix, data.rows[indices], data.features)
    render_svg(summary, out / "summary.svg")
    print(f"explained {args.count} instances with {args.explainer} in {elapsed:.2f} s")
    print(f"wrote {out / 'matrix.json'} and {out / 'summary.svg'}")
    return 0


def cmd_sp(args) -> int:
    data = _require_data(args)
    _validate_class_index(args, data)
    count = min(args.count, data.n)
    model = _resolve_model(args, data)
    indices = _sample_indices(args, data, count)
    started = time.perf_counter()
    try:
        pick, matrix, _ = sp_explain(model, data, indices, _limase_config(args),
                                     args.budget, threads=args.threads)
    finally:
        if isinstance(model, ExternalModel):
            model.close()
    elapsed = time.perf_counter() - started
    picked_rows = [indices[p] for p in pick.selected]
    payload = pick.to_json_dict()
    payload["sample_indices"] = indices
    payload["selected_dataset_rows"] = picked_rows
    payload["config"] = _config_echo(args)
    payload["elapsed_ms"] = None
    out = _out_dir(args)
    _write_json(out / "sp.json", payload)
    picked_matrix = ExplanationMatrix(S=matrix.S[pick.selected], indices=picked_rows)
    summary = build_summary_plot(picked_matrix, data.rows[picked_rows], data.features)
    render_svg(summary, out / "summary.svg")
    print(f"picked {len(pick.selected)} of {count} instances in {elapsed:.2f} s; "
          f"final coverage {pick.coverage_history[-1]:.4f}")
    print(f"wrote {out / 'sp.json'} and {out / 'summary.svg'}")
    return 0


def cmd_bench(args) -> int:
    data = _require_data(args)
    _validate_class_index(args, data)
    if data.n < BENCH_BATCH:
        raise DataError(f"bench needs at least {BENCH_BATCH} rows, got {data.n}")
    model = _resolve_model(args, data)
    if isinstance(model, (TreeModel, ForestModel)):
        raise ConfigError("bench compares against a non-tree black box; use mlp or external:")
    indices = _sample_indices(args, data, BENCH_BATCH)
    rows = data.rows[indices]
    config = _limase_config(args)
    bg_rng = RandomStream(child_seed(args.seed, _BACKGROUND_STREAM))
    bg_count = min(BENCH_BACKGROUND_ROWS, data.n)
    background = data.rows[np.sort(bg_rng.choice(data.n, size=bg_count, replace=False))]

    try:
        started = time.perf_counter()
        limase_explain(model, rows[0], data.features, config)
        limase_single = time.perf_counter() - started

        started = time.perf_counter()
        results = limase_explain_batch(model, rows, data.features, config, threads=1)
        limase_batch = time.perf_counter() - started
        failed = [r for r in results if isinstance(r, Exception)]
        if failed:
            raise LimaseError(f"bench: {len(failed)} explanations failed: {failed[0]}")

        kernel_rng = RandomStream(child_seed(args.seed, _KERNEL_STREAM))
        started = time.perf_counter()
        kernel_shap(model, rows[0], background, BENCH_KERNEL_BUDGET, kernel_rng,
                    args.class_index)
        kernel_single = time.perf_counter() - started

        started = time.perf_counter()
        for i, row in enumerate(rows):
            rng = RandomStream(child_seed(child_seed(args.seed, _KERNEL_STREAM), i))
            kernel_shap(model, row, background, BENCH_KERNEL_BUDGET, rng, args.class_index)
        kernel_batch = time.perf_counter() - started
    finally:
        if isinstance(model, ExternalModel):
            model.close()

    payload = {
        "n_rows": data.n,
        "d": data.d,
        "batch_size": BENCH_BATCH,
        "n_samples": config.n_samples,
        "kernel_budget": BENCH_KERNEL_BUDGET,
        "kernel_background": background.shape[0],
        "limase_single_s": limase_single,
        "limase_batch_s": limase_batch,
        "kernel_single_s": kernel_single,
        "kernel_batch_s": kernel_batch,
        "speedup_single": kernel_single / limase_single,
        "speedup_batch": kernel_batch / limase_batch,
        "config": _config_echo(args),
    }
    out = _out_dir(args)
    _write_json(out / "bench.json", payload)
    print(f"limase:  1 instance {limase_single:.3f} s, "
          f"{BENCH_BATCH} instances {limase_batch:.3f} s (N={config.n_samples})")
    print(f"kernel:  1 instance {kernel_single:.3f} s, "
          f"{BENCH_BATCH} instances {kernel_batch:.3f} s "
          f"(budget={BENCH_KERNEL_BUDGET}, background={background.shape[0]})")
    print(f"speedup: {payload['speedup_single']:.1f}x single, "
          f"{payload['speedup_batch']:.1f}x batch")
    print(f"wrote {out / 'bench.json'}")
    return 0


_COMMANDS = {
    "inspect": cmd_inspect,
    "train": cmd_train,
    "explain": cmd_explain,
    "global": cmd_global,
    "sp": cmd_sp,
    "bench": cmd_bench,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
        return _COMMANDS[args.command](args)
    except (ConfigError, DataError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except LimaseError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # pragma: no cover - last-resort guard
        print(f"error: {type(e).__name__}: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
