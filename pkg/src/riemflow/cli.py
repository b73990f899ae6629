"""Command-line interface.

Subcommands: dataset (synthesize or recombine demonstrations), train,
generate (roll out a trajectory from a trained model), eval (benchmark
methods over a demoset directory), search (random hyperparameter search).

Exit codes: 0 success, 2 usage or input errors, 3 training diverged,
4 generation did not converge (no trajectory is written unless
--allow-partial), 5 every benchmark cell failed.
"""

import argparse
import sys
from dataclasses import fields as dataclass_fields
from pathlib import Path

import numpy as np

from . import __version__, dataset, manifolds, pipeline
from .eval import (
    BENCHMARK_COLUMNS,
    DEFAULT_SEEDS,
    SUMMARY_COLUMNS,
    benchmark,
    stream_field,
    write_csv,
    write_stream_csv,
    write_stream_svg,
)
from .exceptions import ParseError, RiemflowError, SchemaError, TrainingDivergedError
from .flow import MODEL_SCHEMA, FlowModel, init_flow_model
from .train import (
    SEARCH_SPACE,
    TrainConfig,
    random_search,
    train,
    write_history,
)

SEARCH_COLUMNS = ("rank", "trial", "n_layers", "hidden_units", "activation",
                  "optimizer", "learning_rate", "seed", "dtw")

_VERSION_TEXT = (f"riemflow {__version__} (model schema {MODEL_SCHEMA}, "
                 f"demoset schema {dataset.DEMOSET_SCHEMA})")


# ---------------------------------------------------------------------------
# config plumbing

_CONFIG_FIELDS = {f.name: f.type for f in dataclass_fields(TrainConfig)}


def _coerce_config_value(key, raw):
    if key not in _CONFIG_FIELDS:
        raise ParseError(f"unknown config key {key!r}")
    kind = _CONFIG_FIELDS[key]
    try:
        if kind == "bool" or kind is bool:
            lowered = str(raw).strip().lower()
            if lowered in ("true", "1", "yes"):
                return True
            if lowered in ("false", "0", "no"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if kind == "int" or kind is int:
            return int(raw)
        if kind == "float" or kind is float:
            return float(raw)
        return str(raw)
    except ValueError as exc:
        raise ParseError(f"config key {key}: {exc}") from exc


def read_config_file(path):
    """Flat key=value file covering any TrainConfig field."""
    values = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    for ln, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParseError(f"{path}:{ln}: expected key=value, got {line!r}")
        key, _, raw = line.partition("=")
        values[key.strip()] = _coerce_config_value(key.strip(), raw.strip())
    return values


_FLAG_TO_FIELD = {
    "epochs": "epochs",
    "batch_size": "batch_size",
    "learning_rate": "learning_rate",
    "optimizer": "optimizer",
    "layers": "n_layers",
    "hidden": "hidden_units",
    "activation": "activation",
    "seed": "seed",
    "eval_every": "eval_every",
}


def _add_config_flags(parser):
    parser.add_argument("--config", help="key=value file with training settings")
    parser.add_argument("--epochs", type=int)
    parser.add_argument("--batch-size", type=int)
    parser.add_argument("--learning-rate", type=float)
    parser.add_argument("--optimizer")
    parser.add_argument("--layers", type=int, help="number of coupling layers")
    parser.add_argument("--hidden", type=int, help="hidden units per layer")
    parser.add_argument("--activation")
    parser.add_argument("--seed", type=int)
    parser.add_argument("--eval-every", type=int)


def resolve_config(args):
    """File settings first, then command-line flags on top."""
    values = read_config_file(args.config) if args.config else {}
    for flag, field in _FLAG_TO_FIELD.items():
        given = getattr(args, flag, None)
        if given is not None:
            values[field] = given
    return TrainConfig(**values)


def write_config_echo(path, config):
    lines = []
    for f in dataclass_fields(TrainConfig):
        value = getattr(config, f.name)
        if isinstance(value, bool):
            text = "true" if value else "false"
        elif isinstance(value, float):
            text = "%.17g" % value
        else:
            text = str(value)
        lines.append(f"{f.name}={text}")
    Path(path).write_text("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# subcommands


def cmd_dataset(args):
    if args.raw:
        curves = dataset.recombine(dataset.load_raw(args.raw))
        demos = dataset.lift_to_manifold(curves, args.manifold, dt=args.dt,
                                         name=args.name or "recombined")
    else:
        demos = dataset.synth_demoset(args.kind, args.manifold,
                                      n_demos=args.demos, length=args.length,
                                      noise=args.noise, seed=args.seed,
                                      dt=args.dt)
        if args.name:
            demos.name = args.name
    out = dataset.save_demoset(args.out, demos)
    print(f"wrote {demos.n_demos} demos ({demos.manifold}) to {out}")
    return 0


def _build_model(tangent, config):
    return init_flow_model(
        tangent.manifold, "riemannian", tangent.goal, tangent.dt,
        tangent.mean, tangent.std, seed=config.seed,
        n_layers=config.n_layers, hidden_units=config.hidden_units,
        activation=config.activation, noise_gain_init=config.noise_gain_init,
        train_len=max(s.shape[0] for s in tangent.sequences))


def cmd_train(args):
    demos = dataset.load_demoset(args.demos)
    config = resolve_config(args)
    tangent = pipeline.preprocess(demos)
    model = _build_model(tangent, config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_config_echo(out / "config.txt", config)
    model, history = train(model, tangent, config)
    model.save(out / "model.rfm")
    write_history(out / "history.csv", history)
    final = history[-1] if history else {"loss": float("nan"), "dtw": float("nan")}
    print(f"trained {config.epochs} epochs: loss {final['loss']:.6g}, "
          f"dtw {final['dtw']:.6g}; model at {out / 'model.rfm'}")
    return 0


def _parse_start(model, text):
    try:
        values = np.array([float(v) for v in text.split(",")])
    except ValueError as exc:
        raise ParseError(f"--start: {exc}") from exc
    if model.manifold == manifolds.UNIT_QUATERNION:
        if values.shape != (4,):
            raise ParseError(f"--start needs 4 quaternion components, got {values.size}")
        return values
    d = model.goal.shape[0]
    expected = manifolds.mandel_dim(d)
    if values.shape != (expected,):
        raise ParseError(
            f"--start needs {expected} entries ({','.join(dataset.point_columns(model.manifold, d))}), "
            f"got {values.size}")
    return dataset.row_to_point(model.manifold, values, d)


def cmd_generate(args):
    model = FlowModel.load(args.model)
    if args.start is not None:
        start = _parse_start(model, args.start)
    elif args.demos is not None:
        demos = dataset.load_demoset(args.demos)
        if not 0 <= args.start_demo < demos.n_demos:
            raise ParseError(
                f"--start-demo {args.start_demo} out of range (demoset has "
                f"{demos.n_demos} demos)")
        demo = demos.points[args.start_demo]
        if model.manifold == manifolds.UNIT_QUATERNION:
            start = pipeline.align_demo_to_goal(demo, model.goal)[0]
        else:
            start = demo[0]
    else:
        raise ParseError("generate needs either --start or --demos (+ --start-demo)")
    res = pipeline.generate(model, start, xi=args.xi, max_steps=args.max_steps)
    if not res.converged and not args.allow_partial:
        print(f"did not converge within {res.steps} steps "
              f"(final tangent norm {np.linalg.norm(res.tangent[-1]):.3e}); "
              "no trajectory written (use --allow-partial to keep it)",
              file=sys.stderr)
        return 4
    d = model.goal.shape[0] if model.manifold == manifolds.SPD else 2
    columns = ["t"] + dataset.point_columns(model.manifold, d)
    rows = [[i * model.dt] + dataset.point_to_row(model.manifold, p)
            for i, p in enumerate(res.points)]
    write_csv(args.out, columns, [dict(zip(columns, r)) for r in rows])
    status = "converged" if res.converged else "PARTIAL"
    print(f"{status} after {res.steps} steps ({res.violations} constraint "
          f"violations repaired); trajectory at {args.out}")
    return 0 if res.converged else 4


def collect_demosets(path):
    """A demoset directory, or a directory of demoset directories."""
    path = Path(path)
    if (path / dataset.MANIFEST_NAME).exists():
        demos = dataset.load_demoset(path)
        return {demos.name or path.name: demos}
    shapes = {}
    if path.is_dir():
        for sub in sorted(p for p in path.iterdir() if p.is_dir()):
            if (sub / dataset.MANIFEST_NAME).exists():
                demos = dataset.load_demoset(sub)
                shapes[demos.name or sub.name] = demos
    if not shapes:
        raise SchemaError(f"{path}: no demoset (manifest.txt) found")
    return shapes


def _emit_streams(out, shapes, config, seed):
    from .estimator import make_estimator
    for name, demos in shapes.items():
        est = make_estimator("riemannian", demos.manifold, config=config,
                             seed=seed)
        est.fit(demos)
        seqs = [est.encode(demo) for demo in demos.points]
        field = stream_field(est.model_, tangent_seqs=seqs)
        write_stream_csv(out / f"stream_{name}.csv", field)
        write_stream_svg(out / f"stream_{name}.svg", field,
                         curves=[s @ field.basis.T for s in seqs])


def cmd_eval(args):
    shapes = collect_demosets(args.demos)
    config = resolve_config(args)
    seeds = tuple(int(s) for s in args.seeds.split(","))
    methods = tuple(args.methods.split(","))
    rows, summary, failures = benchmark(shapes, methods=methods, config=config,
                                        seeds=seeds, jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_config_echo(out / "config.txt", config)
    write_csv(out / "benchmark.csv", BENCHMARK_COLUMNS, rows)
    write_csv(out / "summary.csv", SUMMARY_COLUMNS, summary)
    for failure in failures:
        print(f"cell failed: {failure}", file=sys.stderr)
    if args.stream:
        _emit_streams(out, shapes, config, seeds[0])
    for s in summary:
        print(f"{s['method']:12s} {s['manifold']:4s} dtw {s['dtw_mean']:.6g} "
              f"+- {s['dtw_std']:.6g}")
    if len(failures) == len(rows):
        print("every benchmark cell failed", file=sys.stderr)
        return 5
    return 0


def read_space_file(path):
    """Search-space overrides: numeric keys take lo,hi; choices a list."""
    pairs = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    for ln, line in enumerate(lines, start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParseError(f"{path}:{ln}: expected key=value, got {line!r}")
        key, _, raw = line.partition("=")
        key = key.strip()
        if key not in SEARCH_SPACE:
            raise ParseError(
                f"{path}:{ln}: unknown space key {key!r}; expected one of "
                f"{tuple(SEARCH_SPACE)}")
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        if key in ("n_layers", "learning_rate"):
            conv = int if key == "n_layers" else float
            try:
                nums = [conv(p) for p in parts]
            except ValueError as exc:
                raise ParseError(f"{path}:{ln}: {exc}") from exc
            if len(nums) == 1:
                nums = nums * 2
            if len(nums) != 2:
                raise ParseError(f"{path}:{ln}: {key} takes lo,hi bounds")
            pairs[key] = tuple(nums)
        else:
            pairs[key] = tuple(parts)
    return pairs


def cmd_search(args):
    demos = dataset.load_demoset(args.demos)
    tangent = pipeline.preprocess(demos)
    base = resolve_config(args)
    space = read_space_file(args.space) if args.space else None
    rows, best = random_search(tangent, trials=args.trials, seed=base.seed,
                               base=base, space=space, jobs=args.jobs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "ranked_configs.csv", SEARCH_COLUMNS, rows)
    if best is None:
        print("every trial diverged; no model written", file=sys.stderr)
        return 3
    best.save(out / "best.rfm")
    top = rows[0]
    print(f"best of {args.trials} trials: dtw {top['dtw']:.6g} "
          f"(layers {top['n_layers']}, {top['activation']}, {top['optimizer']}, "
          f"lr {top['learning_rate']:.3g}); model at {out / 'best.rfm'}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser():
    parser = argparse.ArgumentParser(
        prog="riemflow",
        description="Stable point-to-point motion learning on SPD and "
                    "unit-quaternion manifolds.")
    parser.add_argument("--version", action="version", version=_VERSION_TEXT)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("dataset", help="synthesize or recombine demonstrations")
    p.add_argument("--out", required=True, help="demoset directory to write")
    p.add_argument("--manifold", choices=manifolds.MANIFOLDS, default=manifolds.UNIT_QUATERNION)
    p.add_argument("--kind", choices=dataset.SHAPE_KINDS, default="spiral")
    p.add_argument("--raw", help="planar CSV (demo,t,x,y) to recombine instead")
    p.add_argument("--demos", type=int, default=4, help="demo count (synthetic)")
    p.add_argument("--length", type=int, default=250, help="samples per demo")
    p.add_argument("--noise", type=float, default=0.05)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dt", type=float, default=dataset.DEFAULT_DT)
    p.add_argument("--name", default="")
    p.set_defaults(func=cmd_dataset)

    p = sub.add_parser("train", help="fit a flow model to a demoset")
    p.add_argument("--demos", required=True, help="demoset directory")
    p.add_argument("--out", required=True, help="output directory")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("generate", help="roll out a trajectory from a model")
    p.add_argument("--model", required=True, help="model file (.rfm)")
    p.add_argument("--out", required=True, help="trajectory CSV to write")
    p.add_argument("--demos", help="demoset directory for --start-demo")
    p.add_argument("--start-demo", type=int, default=0,
                   help="index of the demo whose start to use")
    p.add_argument("--start", help="comma-separated start point components")
    p.add_argument("--xi", type=float, default=pipeline.XI_DEFAULT,
                   help="termination threshold on the tangent norm")
    p.add_argument("--max-steps", type=int, default=None)
    p.add_argument("--allow-partial", action="store_true",
                   help="write the trajectory even without convergence")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("eval", help="benchmark methods on demoset directories")
    p.add_argument("--demos", required=True,
                   help="demoset directory, or a directory of them")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--methods", default=",".join(("riemannian", "naive")))
    p.add_argument("--seeds", default=",".join(str(s) for s in DEFAULT_SEEDS))
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--stream", action="store_true",
                   help="emit a stream-field SVG per shape")
    _add_config_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("search", help="random hyperparameter search")
    p.add_argument("--demos", required=True, help="demoset directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--trials", type=int, required=True)
    p.add_argument("--space", help="key=value file overriding the search space")
    p.add_argument("--jobs", type=int, default=1)
    _add_config_flags(p)
    p.set_defaults(func=cmd_search)
    return parser


def entry(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code else 0
    try:
        return args.func(args)
    except TrainingDivergedError as err:
        print(f"training diverged: {err}", file=sys.stderr)
        return 3
    except (RiemflowError, ValueError, OSError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(entry())
