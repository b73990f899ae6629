"""End-to-end pipeline: demonstrations to tangent data to manifold trajectories.

preprocess() projects same-goal demonstrations into the goal's tangent space
(hemisphere-aligning quaternions, chart-logging and Mandel-vectorizing SPD
matrices) and computes normalization statistics.  generate() integrates a
trained model's dynamics from a start point until the tangent norm falls
below a threshold xi, mapping every state back to the manifold so each
output point satisfies the geometric constraints.

Normalization convention: per-dimension mean and std are stored, but the
flow consumes states divided by the std only — the mean offset is folded
back so the tangent origin (the goal) is exactly the latent fixed point.
Generation is read-only on the model, so trajectories may be produced
concurrently from one trained model.
"""

from dataclasses import dataclass, field

import numpy as np

from . import manifolds
from .exceptions import (
    AntipodalPairError,
    EmptySequenceError,
    GoalMismatchError,
    ManifoldMismatchError,
    NonFiniteError,
    ShapeMismatchError,
)
from .flow import make_stable
from .linalg import SPD_CLIP_FLOOR, nearest_spd, sym_eig, symmetrize

XI_DEFAULT = 1e-3
MAX_STEPS_FACTOR = 20
STD_FLOOR = 1e-8
GOAL_TOL = 1e-9
UNIT_NORM_TOL = 1e-9

# What the flow models: goal-tangent coordinates, or goal-centered raw
# components (the Euclidean baselines).
MODES = ("riemannian", "naive_uq", "naive_spd")

_CHUNK = 256


@dataclass
class DemoSet:
    """Same-goal demonstrations on one manifold, sampled every dt seconds.

    Points are canonicalized on construction: quaternions renormalized,
    SPD matrices symmetrized.  Every demonstration must end at the goal
    (up to quaternion double cover) within 1e-9 manifold distance.
    """

    manifold: str
    points: list
    goal: np.ndarray
    dt: float
    name: str = ""

    def __post_init__(self):
        if self.manifold not in manifolds.MANIFOLDS:
            raise ManifoldMismatchError(
                f"unknown manifold {self.manifold!r}; expected one of {manifolds.MANIFOLDS}")
        if self.dt <= 0.0:
            raise ShapeMismatchError(f"dt must be positive, got {self.dt}")
        if len(self.points) == 0:
            raise EmptySequenceError("a demonstration set needs at least one demonstration")
        if self.manifold == manifolds.SPD:
            self.goal = manifolds.check_spd(np.asarray(self.goal, dtype=float))
            canon = []
            for demo in self.points:
                demo = np.asarray(demo, dtype=float)
                if demo.ndim != 3 or demo.shape[1:] != self.goal.shape:
                    raise ShapeMismatchError(
                        f"SPD demo must be (M, {self.goal.shape[0]}, {self.goal.shape[0]}),"
                        f" got {demo.shape}")
                canon.append(np.array([manifolds.check_spd(p) for p in demo]))
            self.points = canon
        else:
            self.goal = _canon_quat(np.asarray(self.goal, dtype=float))
            canon = []
            for demo in self.points:
                demo = np.asarray(demo, dtype=float)
                if demo.ndim != 2 or demo.shape[1] != 4:
                    raise ShapeMismatchError(f"quaternion demo must be (M, 4), got {demo.shape}")
                canon.append(np.array([_canon_quat(q) for q in demo]))
            self.points = canon
        for i, demo in enumerate(self.points):
            if _goal_gap(demo[-1], self.goal, self.manifold) > GOAL_TOL:
                raise GoalMismatchError(
                    f"demonstration {i} ends {_goal_gap(demo[-1], self.goal, self.manifold):.3e}"
                    " away from the goal (tolerance 1e-9)")

    @property
    def n_demos(self):
        return len(self.points)


def _canon_quat(q):
    """Validate and renormalize, keeping the caller's bits when the norm is
    already unit to 1e-12 — this is what lets a 17-digit CSV round-trip
    reproduce a demo set exactly."""
    unit = manifolds.check_unit_quaternion(q)
    if abs(float(np.linalg.norm(q)) - 1.0) <= 1e-12:
        return np.asarray(q, dtype=float)
    return unit


def _goal_gap(p, goal, manifold):
    if manifold == manifolds.SPD:
        return manifolds.goal_distance(manifold, p, goal)
    # Quaternion double cover: q and -q are the same rotation.
    return min(manifolds.goal_distance(manifold, p, goal),
               manifolds.goal_distance(manifold, -np.asarray(p, float), goal))


@dataclass
class TangentDemoSet:
    """Tangent-space projections of a DemoSet plus normalization statistics."""

    manifold: str
    sequences: list
    mean: np.ndarray
    std: np.ndarray
    goal: np.ndarray
    dt: float
    name: str = ""

    @property
    def k(self):
        return self.sequences[0].shape[1]


def align_demo_to_goal(demo, goal):
    """Hemisphere-align a quaternion demo, then flip it as a whole onto the
    goal's hemisphere (positive final dot product)."""
    aligned = manifolds.align_hemisphere(demo)
    if np.dot(aligned[-1], goal) < 0.0:
        aligned = -aligned
    return aligned


def preprocess(demos):
    """Project a DemoSet to the goal's tangent space and compute stats.

    Quaternion demos are hemisphere-aligned first and flipped as a whole
    onto the goal's hemisphere; SPD demos go through the goal chart's log
    followed by Mandel vectorization.  Per-dimension mean/std are computed
    over all samples (std floored at 1e-8 for degenerate directions).
    """
    sequences = []
    if demos.manifold == manifolds.SPD:
        chart = manifolds.SpdChart(demos.goal)
        for demo in demos.points:
            sequences.append(np.array([manifolds.mandel_vec(chart.log(p)) for p in demo]))
    else:
        for demo in demos.points:
            aligned = align_demo_to_goal(demo, demos.goal)
            if manifolds.goal_distance(demos.manifold, aligned[-1], demos.goal) > GOAL_TOL:
                raise GoalMismatchError("demonstration does not end at the goal")
            sequences.append(np.array([manifolds.uq_log(demos.goal, q) for q in aligned]))
    data = np.concatenate(sequences, axis=0)
    return TangentDemoSet(
        manifold=demos.manifold,
        sequences=sequences,
        mean=data.mean(axis=0),
        std=np.maximum(data.std(axis=0), STD_FLOOR),
        goal=demos.goal,
        dt=demos.dt,
        name=demos.name,
    )


# -- state coding per mode ---------------------------------------------------------


def expected_dim(manifold, mode, goal):
    if mode == "riemannian":
        if manifold == manifolds.SPD:
            return manifolds.mandel_dim(goal.shape[0])
        return 3
    if mode == "naive_uq":
        return 4
    if mode == "naive_spd":
        return manifolds.mandel_dim(goal.shape[0])
    raise ManifoldMismatchError(f"unknown model mode {mode!r}; expected one of {MODES}")


def _check_model_coding(model):
    goal = model.goal
    if model.mode in ("riemannian", "naive_spd") and model.manifold == manifolds.SPD:
        if goal.ndim != 2 or goal.shape[0] != goal.shape[1]:
            raise ManifoldMismatchError("SPD model goal must be a square matrix")
    if model.mode == "naive_uq" and model.manifold != manifolds.UNIT_QUATERNION:
        raise ManifoldMismatchError("naive_uq mode requires the quaternion manifold")
    if model.mode == "naive_spd" and model.manifold != manifolds.SPD:
        raise ManifoldMismatchError("naive_spd mode requires the SPD manifold")
    k = expected_dim(model.manifold, model.mode, goal)
    if k != model.k:
        raise ManifoldMismatchError(
            f"model dimension {model.k} does not match mode {model.mode!r} ({k})")


def encode_point(model, p):
    """Map one manifold point into the model's training coordinates.

    The quaternion's sign is used as given: q and -q are the same rotation
    but distinct chart points (the chart covers the whole double cover up
    to the antipode), and training keeps demonstration signs smooth rather
    than per-point canonical.
    """
    _check_model_coding(model)
    if model.manifold == manifolds.SPD:
        p = manifolds.check_spd(np.asarray(p, dtype=float))
        if p.shape != model.goal.shape:
            raise ManifoldMismatchError(
                f"point has shape {p.shape}, model goal {model.goal.shape}")
        if model.mode == "riemannian":
            chart = manifolds.SpdChart(model.goal)
            return manifolds.mandel_vec(chart.log(p))
        return manifolds.mandel_vec(p) - manifolds.mandel_vec(model.goal)
    q = _canon_quat(np.asarray(p, dtype=float))
    if model.mode == "riemannian":
        if 1.0 + float(np.dot(q, model.goal)) < 1e-12:
            raise AntipodalPairError(
                "point is antipodal to the goal: the chart direction is undefined")
        return manifolds.uq_log(model.goal, q)
    return q - model.goal


def encode_sequence(model, points):
    """Map a demo's points to training coordinates, (M, k).

    Quaternion sequences are sign-aligned as a whole first, exactly as the
    training projection does, so the result is comparable to trained data.
    """
    points = np.asarray(points, dtype=float)
    if model.manifold == manifolds.UNIT_QUATERNION:
        points = align_demo_to_goal(points, model.goal)
    return np.array([encode_point(model, p) for p in points])


def _decode_states(model, states):
    """Map training-coordinate states back to manifold points.

    Returns (points, coords, violations): naive modes repair each raw state
    (renormalization / nearest-SPD projection), count how many needed it,
    and report the repaired points' coordinates.
    """
    violations = 0
    if model.mode == "riemannian":
        if model.manifold == manifolds.SPD:
            chart = manifolds.SpdChart(model.goal)
            d = model.goal.shape[0]
            pts = np.array([symmetrize(chart.exp(manifolds.mandel_unvec(t, d)))
                            for t in states])
        else:
            pts = np.array([manifolds.uq_exp(model.goal, t) for t in states])
        return pts, states, violations
    if model.mode == "naive_uq":
        raw = states + model.goal
        norms = np.linalg.norm(raw, axis=1)
        if np.any(norms < 1e-8):
            raise NonFiniteError("degenerate quaternion state (norm ~ 0) during generation")
        violations = int(np.sum(np.abs(norms - 1.0) > UNIT_NORM_TOL))
        pts = raw / norms[:, None]
        return pts, pts - model.goal, violations
    goal_vec = manifolds.mandel_vec(model.goal)
    d = model.goal.shape[0]
    pts = []
    coords = []
    for t in states:
        m = symmetrize(manifolds.mandel_unvec(t + goal_vec, d))
        w, _ = sym_eig(m)
        if w.min() < SPD_CLIP_FLOOR:
            violations += 1
            m = nearest_spd(m)
        pts.append(m)
        coords.append(manifolds.mandel_vec(m) - goal_vec)
    return np.array(pts), np.array(coords), violations


# -- generation ---------------------------------------------------------------------


@dataclass
class GenerationResult:
    """A generated trajectory: manifold points plus their training-space
    coordinates, the step count, whether the xi criterion stopped it, and
    how many raw states violated the constraints before repair."""

    points: np.ndarray
    tangent: np.ndarray
    converged: bool
    steps: int
    violations: int = 0

    def __len__(self):
        return self.points.shape[0]


def generate_velocity_step(model, t):
    """One deterministic step in unnormalized training coordinates.

    normalize -> inverse flow -> Euler step under the latent drift ->
    forward flow -> denormalize.  Accepts (k,) or (B, k) states.
    """
    t = np.asarray(t, dtype=float)
    if not np.isfinite(t).all():
        raise NonFiniteError("tangent state contains non-finite entries")
    w = t / model.norm_std
    q = model.inverse(w)
    v = make_stable(model.latent.v_raw)
    q = q + model.dt * (q @ v.T)
    return model.forward(q) * model.norm_std


def generate(model, p_start, xi=XI_DEFAULT, max_steps=None, dt=None):
    """Integrate the learned dynamics from p_start until convergence.

    Stops once the unnormalized coordinate norm drops below xi (the final
    sub-xi state is included), or, failing that, after max_steps steps with
    the result flagged converged=False — the partial trajectory is returned
    rather than raising.  max_steps defaults to 20x the training length;
    dt defaults to the model's.  The start point is returned verbatim as the
    first trajectory point.
    """
    if xi <= 0.0:
        raise ShapeMismatchError(f"xi must be positive, got {xi}")
    step_dt = model.dt if dt is None else float(dt)
    if step_dt <= 0.0:
        raise ShapeMismatchError(f"dt must be positive, got {step_dt}")
    if max_steps is None:
        max_steps = MAX_STEPS_FACTOR * (model.train_len if model.train_len > 0 else 1000)
    max_steps = int(max_steps)
    if max_steps < 0:
        raise ShapeMismatchError(f"max_steps must be >= 0, got {max_steps}")

    t0 = encode_point(model, p_start)
    states = [t0]
    converged = bool(np.linalg.norm(t0) < xi)
    steps = 0
    if not converged and max_steps > 0:
        q = np.asarray(model.inverse(t0 / model.norm_std), dtype=float)
        walk = np.eye(model.k) + step_dt * make_stable(model.latent.v_raw)
        while not converged and steps < max_steps:
            n = min(_CHUNK, max_steps - steps)
            qs = np.empty((n, model.k))
            for i in range(n):
                q = q @ walk.T
                qs[i] = q
            ts = np.asarray(model.forward(qs)) * model.norm_std
            norms = np.linalg.norm(ts, axis=1)
            hits = np.nonzero(norms < xi)[0]
            if hits.size:
                take = int(hits[0]) + 1
                converged = True
            else:
                take = n
            states.extend(ts[:take])
            steps += take
    tangent = np.array(states)
    points, coords, violations = _decode_states(model, tangent)
    if model.manifold == manifolds.SPD:
        points[0] = manifolds.check_spd(np.asarray(p_start, dtype=float))
    else:
        points[0] = _canon_quat(np.asarray(p_start, dtype=float))
    return GenerationResult(points=points, tangent=coords, converged=converged,
                            steps=steps, violations=violations)
