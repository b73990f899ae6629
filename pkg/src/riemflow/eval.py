"""Metrics and the comparison harness.

DTW dissimilarity, per-index manifold distance profiles, stream-field export
for phase portraits, and a benchmark runner that scores the manifold-aware
estimator against naive Euclidean baselines on a suite of shapes.  Each
method is scored by DTW in the coordinate space it was trained in.
"""

import csv
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import manifolds
from .exceptions import (
    EmptySequenceError,
    LengthMismatchError,
    RiemflowError,
    ShapeMismatchError,
)
from .linalg import sym_eig, symmetrize

BENCHMARK_COLUMNS = ("shape", "manifold", "method", "seed", "dtw",
                     "mean_dist", "max_dist", "clip_events", "runtime_s")
SUMMARY_COLUMNS = ("method", "manifold", "dtw_mean", "dtw_std")
STREAM_COLUMNS = ("x", "y", "u", "v")
DEFAULT_SEEDS = (20, 21, 22)
METHODS = ("riemannian", "naive")


# -- DTW ----------------------------------------------------------------------

def _as_seq(x):
    x = np.asarray(x, dtype=float)
    if x.size == 0:
        raise EmptySequenceError("nonempty sequence required")
    if x.ndim == 1:
        x = x[:, None]
    if x.ndim != 2:
        raise ShapeMismatchError(f"expected an (n, k) sequence, got shape {x.shape}")
    return x


def dtw(a, b):
    """Dynamic-time-warping dissimilarity with Euclidean point cost.

    Cumulative DP over the full |a| x |b| cost matrix with match / insert /
    delete steps, so dtw(x, x) == 0.  The table is filled along
    anti-diagonals: every cell of a diagonal depends only on the previous
    two, which turns the inner recurrence into vectorized passes.
    """
    a = _as_seq(a)
    b = _as_seq(b)
    if a.shape[1] != b.shape[1]:
        raise ShapeMismatchError(
            f"point dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    n, m = a.shape[0], b.shape[0]
    cost = np.sqrt(((a[:, None, :] - b[None, :, :]) ** 2).sum(axis=2))
    prev2 = None
    prev1 = None
    for d in range(n + m - 1):
        lo = max(0, d - m + 1)
        hi = min(d, n - 1)
        idx = np.arange(lo, hi + 1)
        cur = np.full(n, np.inf)
        if d == 0:
            cur[0] = cost[0, 0]
        else:
            shifted = np.where(idx > 0, idx - 1, 0)
            up = np.where(idx > 0, prev1[shifted], np.inf)
            left = prev1[idx]
            if prev2 is None:
                diag = np.full(idx.shape, np.inf)
            else:
                diag = np.where(idx > 0, prev2[shifted], np.inf)
            cur[idx] = cost[idx, d - idx] + np.minimum(np.minimum(up, left), diag)
        prev2, prev1 = prev1, cur
    return float(prev1[n - 1])


# -- distance profiles ---------------------------------------------------------

def _traj_array(points, manifold):
    pts = np.asarray(points, dtype=float)
    if pts.size == 0:
        raise EmptySequenceError("nonempty trajectory required")
    if manifold == manifolds.UNIT_QUATERNION:
        if pts.ndim != 2 or pts.shape[1] != 4:
            raise ShapeMismatchError(f"expected (n, 4) quaternions, got {pts.shape}")
    else:
        if pts.ndim != 3 or pts.shape[1] != pts.shape[2]:
            raise ShapeMismatchError(f"expected (n, d, d) matrices, got {pts.shape}")
    return pts


def _tangent_coords(points, manifold, goal):
    if manifold == manifolds.SPD:
        chart = manifolds.SpdChart(goal)
        return np.array([manifolds.mandel_vec(chart.log(p)) for p in points])
    aligned = manifolds.align_hemisphere(points)
    if np.dot(aligned[-1], goal) < 0.0:
        aligned = -aligned
    return np.array([manifolds.uq_log(goal, q) for q in aligned])


def _from_tangent(coords, manifold, goal):
    if manifold == manifolds.SPD:
        chart = manifolds.SpdChart(goal)
        d = chart.g.shape[0]
        return np.array([chart.exp(manifolds.mandel_unvec(t, d)) for t in coords])
    return np.array([manifolds.uq_exp(goal, t) for t in coords])


def resample_trajectory(points, target_len, manifold, goal):
    """Index-linear resampling in the goal's tangent space."""
    pts = _traj_array(points, manifold)
    if target_len < 1:
        raise LengthMismatchError(f"target length must be >= 1, got {target_len}")
    if pts.shape[0] == target_len:
        return pts
    coords = _tangent_coords(pts, manifold, goal)
    if coords.shape[0] == 1:
        coords = np.repeat(coords, target_len, axis=0)
    else:
        src = np.linspace(0.0, 1.0, coords.shape[0])
        dst = np.linspace(0.0, 1.0, target_len)
        coords = np.stack([np.interp(dst, src, coords[:, j])
                           for j in range(coords.shape[1])], axis=1)
    return _from_tangent(coords, manifold, goal)


def distance_profile(gen, demo, manifold, goal):
    """Per-index manifold distance between a generated trajectory and a demo.

    Lengths are reconciled first by resampling the generated trajectory to
    the demo's length; distances are LEd for SPD and LQd for quaternions.
    """
    gen_pts = _traj_array(gen, manifold)
    demo_pts = _traj_array(demo, manifold)
    if gen_pts.shape[0] != demo_pts.shape[0]:
        gen_pts = resample_trajectory(gen_pts, demo_pts.shape[0], manifold, goal)
    if gen_pts.shape[0] != demo_pts.shape[0]:
        raise LengthMismatchError(
            f"resampling failed: {gen_pts.shape[0]} vs {demo_pts.shape[0]} points")
    if manifold == manifolds.SPD:
        dist = manifolds.led_distance
    else:
        dist = manifolds.lqd_distance
    return np.array([dist(p, q) for p, q in zip(gen_pts, demo_pts)])


# -- stream fields -------------------------------------------------------------

@dataclass
class StreamField:
    """Planar slice of the learned tangent velocity field."""
    basis: np.ndarray   # (2, k) orthonormal rows spanning the plane
    xs: np.ndarray      # (r,) plane coordinates
    ys: np.ndarray
    u: np.ndarray       # (r, r) velocity components along basis rows
    v: np.ndarray

    @property
    def speed(self):
        return np.hypot(self.u, self.v)


def plane_basis(tangent_seqs):
    """Orthonormal basis of the plane through the origin that best fits the
    stacked tangent data (top-2 principal directions)."""
    x = np.concatenate([np.asarray(s, dtype=float) for s in tangent_seqs], axis=0)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ShapeMismatchError("plane fit needs a stack of tangent vectors")
    w, vecs = sym_eig(symmetrize(x.T @ x))
    return np.stack([vecs[:, -1], vecs[:, -2]])


def stream_field(model, tangent_seqs=None, basis=None, resolution=20, extent=None):
    """Sample the one-step tangent velocity on an r x r grid in a plane.

    The plane is given either directly (``basis``, two orthonormal rows) or
    fit to demonstration tangent data.  Velocities are projected back onto
    the plane, giving exactly resolution**2 vectors.
    """
    from .pipeline import generate_velocity_step
    if basis is None:
        if tangent_seqs is None:
            raise ShapeMismatchError("either tangent data or a basis is required")
        basis = plane_basis(tangent_seqs)
    basis = np.asarray(basis, dtype=float)
    if basis.shape != (2, model.k):
        raise ShapeMismatchError(f"basis must have shape (2, {model.k})")
    if extent is None:
        if tangent_seqs is None:
            extent = 1.0
        else:
            stacked = np.concatenate([np.asarray(s, float) for s in tangent_seqs])
            extent = 1.1 * float(np.abs(stacked @ basis.T).max())
    xs = np.linspace(-extent, extent, int(resolution))
    ys = np.linspace(-extent, extent, int(resolution))
    gx, gy = np.meshgrid(xs, ys)
    plane_pts = np.stack([gx.ravel(), gy.ravel()], axis=1)
    states = plane_pts @ basis
    vel = (generate_velocity_step(model, states) - states) / model.dt
    planar = vel @ basis.T
    r = len(xs)
    return StreamField(basis=basis, xs=xs, ys=ys,
                       u=planar[:, 0].reshape(r, r),
                       v=planar[:, 1].reshape(r, r))


def streamline_endpoints(model, starts, xi=1e-3, max_steps=10000):
    """March each start along the model dynamics until the tangent norm
    drops below xi.  Returns (endpoints, steps_taken, converged_mask).

    Like trajectory generation, the latent state is walked directly after a
    single inverse per start: re-inverting the flow every step would let
    rounding error accumulate where the flow is badly conditioned.  A row
    whose decoded state still turns non-finite is reported unconverged."""
    from .flow import make_stable
    t = np.atleast_2d(np.asarray(starts, dtype=float)).copy()
    steps = np.zeros(t.shape[0], dtype=int)
    converged = np.zeros(t.shape[0], dtype=bool)
    norms = np.linalg.norm(t, axis=1)
    converged[np.isfinite(norms) & (norms < xi)] = True
    idx = np.flatnonzero(np.isfinite(norms) & (norms >= xi))
    if idx.size:
        q = np.asarray(model.inverse(t[idx] / model.norm_std), dtype=float)
        walk = np.eye(model.k) + model.dt * make_stable(model.latent.v_raw)
        for _ in range(int(max_steps)):
            if not idx.size:
                break
            q = q @ walk.T
            cur = np.asarray(model.forward(q), dtype=float) * model.norm_std
            t[idx] = cur
            steps[idx] += 1
            cn = np.linalg.norm(cur, axis=1)
            done = np.isfinite(cn) & (cn < xi)
            converged[idx[done]] = True
            keep = np.isfinite(cn) & ~done
            idx = idx[keep]
            q = q[keep]
    return t, steps, converged


# -- benchmark harness -----------------------------------------------------------

def _named_shapes(shapes):
    if isinstance(shapes, dict):
        items = list(shapes.items())
    else:
        items = []
        for i, entry in enumerate(shapes):
            if isinstance(entry, tuple):
                items.append(entry)
            else:
                items.append((getattr(entry, "name", "") or f"shape{i}", entry))
    if not items:
        raise EmptySequenceError("at least one shape is required")
    return items


def _bench_cell(name, demos, method, seed, config):
    from .estimator import make_estimator
    t0 = time.perf_counter()
    est = make_estimator(method, demos.manifold, config=config, seed=seed)
    est.fit(demos)
    dtws = []
    profiles = []
    clips = 0
    for demo in demos.points:
        res = est.reproduce(demo)
        dtws.append(dtw(res.tangent, est.encode(demo)))
        profiles.append(distance_profile(res.points, demo, demos.manifold, demos.goal))
        clips += res.violations
    stacked = np.concatenate(profiles)
    return {"shape": name, "manifold": demos.manifold, "method": method,
            "seed": int(seed), "dtw": float(np.mean(dtws)),
            "mean_dist": float(stacked.mean()), "max_dist": float(stacked.max()),
            "clip_events": int(clips),
            "runtime_s": time.perf_counter() - t0}


def _failed_cell(name, demos, method, seed, started):
    return {"shape": name, "manifold": demos.manifold, "method": method,
            "seed": int(seed), "dtw": np.inf, "mean_dist": np.inf,
            "max_dist": np.inf, "clip_events": 0,
            "runtime_s": time.perf_counter() - started}


def benchmark(shapes, methods=METHODS, config=None, seeds=DEFAULT_SEEDS, jobs=1):
    """Train and score every (shape, method, seed) cell.

    shapes: dict name -> DemoSet, or an iterable of (name, DemoSet) pairs.
    Per cell: fit the method, generate from each demo's first point capped
    at the demo length, and record mean DTW (in the method's own training
    space), manifold distance stats, constraint-violation count and wall
    time.  A failing cell is recorded with infinite DTW and the run
    continues.  Returns (rows, summary_rows, failures).
    """
    items = _named_shapes(shapes)
    methods = tuple(methods)
    seeds = tuple(seeds)
    if not methods or not seeds:
        raise EmptySequenceError("at least one method and one seed are required")
    cells = [(name, ds, method, seed)
             for name, ds in items for method in methods for seed in seeds]
    rows = []
    failures = []
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=int(jobs)) as pool:
            futures = [pool.submit(_bench_cell, *cell, config) for cell in cells]
            for cell, fut in zip(cells, futures):
                t0 = time.perf_counter()
                try:
                    rows.append(fut.result())
                except (RiemflowError, ValueError) as err:
                    failures.append(f"{cell[0]}/{cell[2]}/seed{cell[3]}: {err}")
                    rows.append(_failed_cell(cell[0], cell[1], cell[2], cell[3], t0))
    else:
        for cell in cells:
            t0 = time.perf_counter()
            try:
                rows.append(_bench_cell(*cell, config))
            except (RiemflowError, ValueError) as err:
                failures.append(f"{cell[0]}/{cell[2]}/seed{cell[3]}: {err}")
                rows.append(_failed_cell(cell[0], cell[1], cell[2], cell[3], t0))
    return rows, summarize(rows), failures


def summarize(rows):
    """Mean/std of DTW per (method, manifold); failed cells are excluded."""
    groups = {}
    for row in rows:
        if np.isfinite(row["dtw"]):
            groups.setdefault((row["method"], row["manifold"]), []).append(row["dtw"])
    out = []
    for method, manifold in sorted(groups):
        vals = np.asarray(groups[(method, manifold)])
        out.append({"method": method, "manifold": manifold,
                    "dtw_mean": float(vals.mean()), "dtw_std": float(vals.std())})
    return out


# -- file emission ---------------------------------------------------------------

def _fmt(value):
    if isinstance(value, str):
        return value
    if isinstance(value, (bool, np.bool_)):
        return str(int(value))
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def write_csv(path, columns, rows):
    """Write dict rows under a fixed header; floats carry 17 significant digits."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])


def write_stream_csv(path, field):
    rows = []
    for iy in range(len(field.ys)):
        for ix in range(len(field.xs)):
            rows.append({"x": field.xs[ix], "y": field.ys[iy],
                         "u": field.u[iy, ix], "v": field.v[iy, ix]})
    write_csv(path, STREAM_COLUMNS, rows)


def write_stream_svg(path, field, curves=None, size=640):
    """Render the grid as arrows in a standalone SVG, goal marked at the
    origin, optional planar curves (e.g. projected demos) overlaid."""
    lo = float(min(field.xs[0], field.ys[0]))
    hi = float(max(field.xs[-1], field.ys[-1]))
    span = hi - lo if hi > lo else 1.0
    pad = 0.05 * span

    def to_px(x, y):
        px = (x - lo + pad) / (span + 2 * pad) * size
        py = size - (y - lo + pad) / (span + 2 * pad) * size
        return px, py

    cell = span / max(len(field.xs) - 1, 1)
    speed = field.speed
    smax = float(speed.max()) or 1.0
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
             f'viewBox="0 0 {size} {size}">',
             f'<rect width="{size}" height="{size}" fill="white"/>']
    for iy in range(len(field.ys)):
        for ix in range(len(field.xs)):
            sx, sy = float(field.xs[ix]), float(field.ys[iy])
            vx, vy = float(field.u[iy, ix]), float(field.v[iy, ix])
            norm = np.hypot(vx, vy)
            if norm == 0.0:
                continue
            length = 0.45 * cell * (0.25 + 0.75 * norm / smax)
            ex, ey = sx + vx / norm * length, sy + vy / norm * length
            x1, y1 = to_px(sx, sy)
            x2, y2 = to_px(ex, ey)
            parts.append(f'<line x1="{x1:.2f}" y1="{y1:.2f}" x2="{x2:.2f}" y2="{y2:.2f}" '
                         'stroke="#4477aa" stroke-width="1"/>')
            parts.append(f'<circle cx="{x2:.2f}" cy="{y2:.2f}" r="1.4" fill="#4477aa"/>')
    for curve in curves or []:
        pts = " ".join("{:.2f},{:.2f}".format(*to_px(float(p[0]), float(p[1])))
                       for p in np.asarray(curve, dtype=float))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="#cc3311" '
                     'stroke-width="1.5"/>')
    gx, gy = to_px(0.0, 0.0)
    parts.append(f'<circle cx="{gx:.2f}" cy="{gy:.2f}" r="5" fill="none" '
                 'stroke="#222222" stroke-width="2"/>')
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(parts) + "\n")
