"""Demonstration data: loading, recombination, lifting, synthesis, storage.

Planar handwriting-style recordings (CSV with columns demo,t,x,y) are turned
into 3-D tangent curves by recombining coordinate rows across demonstrations,
then lifted onto a manifold: each curve is shifted so it ends at the origin,
scaled to a common chart radius, and mapped through the goal's exponential.

A demonstration set on disk is a directory with a key=value manifest and a
demos.csv whose floats carry 17 significant digits, so a save/load round
trip reproduces the same values bit for bit.
"""

import math
from pathlib import Path

import numpy as np

from . import manifolds
from .exceptions import (
    ChartOverflowError,
    EmptySequenceError,
    LengthMismatchError,
    ParseError,
    SchemaError,
    ShapeMismatchError,
)
from .pipeline import DemoSet

DEMOSET_SCHEMA = "riemflow.demoset/1"
MANIFEST_NAME = "manifest.txt"
DEMOS_NAME = "demos.csv"

GOAL_UQ = np.array([1.0, 0.0, 0.0, 0.0])
GOAL_SPD = np.diag([100.0, 100.0])

DEFAULT_DT = 0.004
DEFAULT_MAX_NORM = 0.9 * np.pi

SHAPE_KINDS = ("spiral", "s_curve", "angle", "n_like")

# Which rows of the stacked coordinate matrix make up each recombined demo.
RECOMBINE_TRIPLES = ((0, 1, 2), (4, 5, 6), (8, 9, 10), (12, 3, 0))

_FMT = "%.17g"


# ---------------------------------------------------------------------------
# CSV plumbing


def _read_grouped_csv(path, columns):
    """Read a demo-grouped CSV; returns one (M_i, len(columns)-1) array per demo.

    The first column must be a demo index: non-negative, starting at zero,
    consecutive, with each demo's rows contiguous.
    """
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise ParseError(f"{path}: {exc}") from exc
    if not lines:
        raise ParseError(f"{path}:1: empty file")
    header = [c.strip() for c in lines[0].split(",")]
    if header != list(columns):
        raise ParseError(
            f"{path}:1: expected header {','.join(columns)!r}, got {lines[0]!r}")
    groups = []
    for ln, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        cells = line.split(",")
        if len(cells) != len(columns):
            raise ParseError(
                f"{path}:{ln}: expected {len(columns)} fields, got {len(cells)}")
        try:
            idx = int(cells[0])
            values = [float(c) for c in cells[1:]]
        except ValueError as exc:
            raise ParseError(f"{path}:{ln}: {exc}") from exc
        if not all(math.isfinite(v) for v in values):
            raise ParseError(f"{path}:{ln}: non-finite value")
        if idx == len(groups) - 1:
            groups[-1].append(values)
        elif idx == len(groups):
            groups.append([values])
        else:
            raise ParseError(
                f"{path}:{ln}: demo index {idx} out of order (expected "
                f"{max(len(groups) - 1, 0)} or {len(groups)})")
    if not groups:
        raise ParseError(f"{path}: no data rows")
    return [np.array(g) for g in groups]


def _write_rows(path, columns, rows):
    with open(path, "w") as fh:
        fh.write(",".join(columns) + "\n")
        for row in rows:
            fh.write(",".join(_fmt_cell(c) for c in row) + "\n")


def _fmt_cell(c):
    if isinstance(c, (int, np.integer)):
        return str(int(c))
    return _FMT % float(c)


def point_columns(manifold, d=2):
    """CSV column names for one manifold point (SPD: diagonal entries, then
    the upper triangle row-major, one-based indices)."""
    if manifold == manifolds.UNIT_QUATERNION:
        return ["nu", "ux", "uy", "uz"]
    names = [f"m{i + 1}{i + 1}" for i in range(d)]
    iu, ju = np.triu_indices(d, k=1)
    names += [f"m{i + 1}{j + 1}" for i, j in zip(iu, ju)]
    return names


def point_to_row(manifold, p):
    if manifold == manifolds.UNIT_QUATERNION:
        return list(np.asarray(p, dtype=float))
    p = np.asarray(p, dtype=float)
    d = p.shape[0]
    iu, ju = np.triu_indices(d, k=1)
    return list(np.diag(p)) + list(p[iu, ju])


def row_to_point(manifold, values, d=2):
    if manifold == manifolds.UNIT_QUATERNION:
        return np.asarray(values, dtype=float)
    values = np.asarray(values, dtype=float)
    m = np.zeros((d, d))
    m[np.diag_indices(d)] = values[:d]
    iu, ju = np.triu_indices(d, k=1)
    m[iu, ju] = values[d:]
    m[ju, iu] = values[d:]
    return m


# ---------------------------------------------------------------------------
# raw planar recordings


def load_raw(path):
    """Load planar demonstrations from a CSV with header demo,t,x,y.

    Returns a list of (M_i, 2) position arrays, one per demo; the time
    column is only checked for finiteness.
    """
    groups = _read_grouped_csv(path, ("demo", "t", "x", "y"))
    return [g[:, 1:3] for g in groups]


def recombine(demos):
    """Cross demonstrations into 3-D curves by pure row selection.

    The N planar demos are stacked into a (2N, M) matrix D — demo j fills
    rows 2j (x) and 2j+1 (y) — and each output demo is D[triple].T for the
    fixed index triples, so every output value is bit-identical to some
    input value.  Needs at least 7 demos of equal length.
    """
    if len(demos) == 0:
        raise EmptySequenceError("no demonstrations to recombine")
    if len(demos) < 7:
        raise ShapeMismatchError(f"recombination needs >= 7 demos, got {len(demos)}")
    m = demos[0].shape[0]
    for i, demo in enumerate(demos):
        demo = np.asarray(demo)
        if demo.ndim != 2 or demo.shape[1] != 2:
            raise ShapeMismatchError(f"demo {i} must be (M, 2), got {demo.shape}")
        if demo.shape[0] != m:
            raise LengthMismatchError(
                f"demo {i} has {demo.shape[0]} samples, demo 0 has {m}")
    stack = np.empty((2 * len(demos), m))
    for j, demo in enumerate(demos):
        stack[2 * j] = demo[:, 0]
        stack[2 * j + 1] = demo[:, 1]
    return [stack[list(triple)].T for triple in RECOMBINE_TRIPLES]


# ---------------------------------------------------------------------------
# lifting tangent curves onto a manifold


def lift_to_manifold(curves, manifold, goal=None, dt=DEFAULT_DT,
                     max_norm=DEFAULT_MAX_NORM, name=""):
    """Map 3-D curves onto a manifold as goal-reaching demonstrations.

    Each curve is shifted by its own final sample (so it ends exactly at the
    tangent origin) and all curves share one scale factor bringing the
    largest tangent norm to max_norm, inside the quaternion chart's radius
    pi.  The shifted, scaled curves go through the goal's exponential map.
    """
    if manifold not in manifolds.MANIFOLDS:
        raise ShapeMismatchError(f"unknown manifold tag {manifold!r}")
    if not 0.0 < max_norm < np.pi:
        raise ChartOverflowError(
            f"max_norm must be in (0, pi) to stay inside the chart, got {max_norm}")
    if len(curves) == 0:
        raise EmptySequenceError("no curves to lift")
    shifted = []
    for i, curve in enumerate(curves):
        curve = np.asarray(curve, dtype=float)
        if curve.ndim != 2 or curve.shape[1] != 3:
            raise ShapeMismatchError(f"curve {i} must be (M, 3), got {curve.shape}")
        shifted.append(curve - curve[-1])
    peak = max(float(np.linalg.norm(s, axis=1).max()) for s in shifted)
    scale = max_norm / peak if peak > 0.0 else 1.0
    if goal is None:
        goal = GOAL_UQ if manifold == manifolds.UNIT_QUATERNION else GOAL_SPD
    points = []
    if manifold == manifolds.UNIT_QUATERNION:
        for s in shifted:
            points.append(np.array([manifolds.uq_exp(goal, t) for t in scale * s]))
    else:
        chart = manifolds.SpdChart(goal)
        for s in shifted:
            points.append(np.array([chart.exp(manifolds.mandel_unvec(t, 2))
                                    for t in scale * s]))
    return DemoSet(manifold=manifold, points=points, goal=goal, dt=dt, name=name)


# ---------------------------------------------------------------------------
# synthetic shapes


def synth_shape(kind, n_demos=4, length=250, noise=0.05, seed=0):
    """Deterministic 3-D demonstration curves that end exactly at the origin.

    Every coordinate carries the envelope (1 - tau), which is exactly zero
    at the last sample.  noise jitters per-demo amplitudes and phases (the
    curves stay smooth); noise=0 gives n_demos identical curves.
    """
    if kind not in SHAPE_KINDS:
        raise ShapeMismatchError(f"unknown shape kind {kind!r}; expected one of {SHAPE_KINDS}")
    if length < 10:
        raise ShapeMismatchError(f"length must be >= 10, got {length}")
    if n_demos < 1:
        raise ShapeMismatchError(f"n_demos must be >= 1, got {n_demos}")
    rng = np.random.default_rng(seed)
    tau = np.linspace(0.0, 1.0, length)
    env = 1.0 - tau
    curves = []
    for _ in range(n_demos):
        amp = 1.0 + noise * rng.standard_normal(3)
        phase = noise * rng.standard_normal()
        if kind == "spiral":
            xyz = [env * np.cos(4.0 * tau + phase),
                   env * np.sin(4.0 * tau + phase),
                   env]
        elif kind == "s_curve":
            xyz = [env,
                   0.8 * env * np.sin(2.0 * np.pi * tau + phase),
                   0.3 * env * np.cos(np.pi * tau + phase)]
        elif kind == "angle":
            # corner halfway through: one coordinate stalls at zero
            xyz = [env,
                   np.maximum(env - 0.5, 0.0) * 2.0,
                   0.2 * env * np.cos(2.0 * tau + phase)]
        else:  # n_like: three strokes — down, diagonal up, down again
            xyz = [env,
                   env * np.sin(1.5 * np.pi * tau + phase),
                   0.15 * env * np.cos(2.0 * tau + phase)]
        curves.append(np.stack([amp[i] * xyz[i] for i in range(3)], axis=1))
    return curves


def synth_demoset(kind, manifold, n_demos=4, length=250, noise=0.05, seed=0,
                  goal=None, dt=DEFAULT_DT):
    """synth_shape + lift_to_manifold, named after the shape kind."""
    curves = synth_shape(kind, n_demos=n_demos, length=length, noise=noise, seed=seed)
    return lift_to_manifold(curves, manifold, goal=goal, dt=dt, name=kind)


# ---------------------------------------------------------------------------
# demoset directories


def save_demoset(out_dir, demos):
    """Write a DemoSet as manifest.txt + demos.csv under out_dir."""
    lengths = {p.shape[0] for p in demos.points}
    if len(lengths) != 1:
        raise LengthMismatchError(
            f"all demos must have equal length to save, got lengths {sorted(lengths)}")
    n_samples = lengths.pop()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    goal_flat = (demos.goal if demos.goal.ndim == 1 else demos.goal.ravel())
    manifest = [
        f"schema={DEMOSET_SCHEMA}",
        f"name={demos.name}",
        f"manifold={demos.manifold}",
        "goal=" + ",".join(_FMT % v for v in goal_flat),
        f"dt={_FMT % demos.dt}",
        f"n_demos={demos.n_demos}",
        f"n_samples={n_samples}",
    ]
    (out_dir / MANIFEST_NAME).write_text("\n".join(manifest) + "\n")
    d = demos.goal.shape[0] if demos.manifold == manifolds.SPD else 2
    columns = ["demo", "t"] + point_columns(demos.manifold, d)
    rows = []
    for j, demo in enumerate(demos.points):
        for i, p in enumerate(demo):
            rows.append([j, i * demos.dt] + point_to_row(demos.manifold, p))
    _write_rows(out_dir / DEMOS_NAME, columns, rows)
    return out_dir


def _parse_manifest(path):
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise SchemaError(f"{path}: {exc}") from exc
    pairs = {}
    for ln, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        if "=" not in line:
            raise ParseError(f"{path}:{ln}: expected key=value, got {line!r}")
        key, _, value = line.partition("=")
        pairs[key.strip()] = value.strip()
    return pairs


def load_demoset(in_dir):
    """Load a demoset directory; validates schema, counts, and geometry."""
    in_dir = Path(in_dir)
    pairs = _parse_manifest(in_dir / MANIFEST_NAME)
    if pairs.get("schema") != DEMOSET_SCHEMA:
        raise SchemaError(
            f"{in_dir}: expected schema {DEMOSET_SCHEMA!r}, got {pairs.get('schema')!r}")
    for key in ("manifold", "goal", "dt", "n_demos", "n_samples"):
        if key not in pairs:
            raise SchemaError(f"{in_dir}: manifest is missing key {key!r}")
    manifold = pairs["manifold"]
    if manifold not in manifolds.MANIFOLDS:
        raise SchemaError(f"{in_dir}: unknown manifold {manifold!r}")
    try:
        goal_flat = np.array([float(v) for v in pairs["goal"].split(",")])
        dt = float(pairs["dt"])
        n_demos = int(pairs["n_demos"])
        n_samples = int(pairs["n_samples"])
    except ValueError as exc:
        raise ParseError(f"{in_dir}/{MANIFEST_NAME}: {exc}") from exc
    if manifold == manifolds.SPD:
        d = math.isqrt(goal_flat.size)
        if d * d != goal_flat.size:
            raise SchemaError(f"{in_dir}: SPD goal has {goal_flat.size} entries")
        goal = goal_flat.reshape(d, d)
    else:
        d = 2
        goal = goal_flat
    columns = ["demo", "t"] + point_columns(manifold, d)
    groups = _read_grouped_csv(in_dir / DEMOS_NAME, columns)
    if len(groups) != n_demos:
        raise SchemaError(
            f"{in_dir}: manifest says {n_demos} demos, file has {len(groups)}")
    points = []
    for g in groups:
        if g.shape[0] != n_samples:
            raise SchemaError(
                f"{in_dir}: manifest says {n_samples} samples, a demo has {g.shape[0]}")
        points.append(np.array([row_to_point(manifold, row[1:], d) for row in g]))
    return DemoSet(manifold=manifold, points=points, goal=goal, dt=dt,
                   name=pairs.get("name", ""))
