"""Scikit-learn style estimators wrapping the preprocess/train/generate chain.

RiemannianFlow learns dynamics in the goal's tangent space (either manifold);
the two naive baselines learn the same flow over goal-centered raw
components — quaternion coordinates or Mandel-vectorized SPD entries — and
repair constraint violations after the fact, counting how often they do.
"""

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from . import manifolds, pipeline
from .exceptions import ManifoldMismatchError
from .eval import dtw
from .flow import init_flow_model
from .train import TrainConfig, train

METHODS = ("riemannian", "naive")


def _naive_tangent_set(demos, mode):
    """Goal-centered raw coordinates plus stats, in TangentDemoSet form."""
    sequences = []
    if mode == "naive_uq":
        for demo in demos.points:
            aligned = pipeline.align_demo_to_goal(demo, demos.goal)
            sequences.append(aligned - demos.goal)
    else:
        goal_vec = manifolds.mandel_vec(demos.goal)
        for demo in demos.points:
            sequences.append(np.array([manifolds.mandel_vec(p) - goal_vec
                                       for p in demo]))
    data = np.concatenate(sequences, axis=0)
    return pipeline.TangentDemoSet(
        manifold=demos.manifold,
        sequences=sequences,
        mean=data.mean(axis=0),
        std=np.maximum(data.std(axis=0), pipeline.STD_FLOOR),
        goal=demos.goal,
        dt=demos.dt,
        name=demos.name,
    )


class _FlowEstimator(BaseEstimator):
    """Shared fit/generate/encode plumbing; subclasses pick the mode."""

    _mode = None
    _requires = None  # manifold tag this estimator is restricted to, if any

    def __init__(self, epochs=100, batch_size=128, learning_rate=0.00098,
                 optimizer="adam", n_layers=11, hidden_units=64,
                 activation="relu", seed=20, eval_every=5,
                 noise_gain_init=0.1, learn_noise_gain=True, xi=1e-3):
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.optimizer = optimizer
        self.n_layers = n_layers
        self.hidden_units = hidden_units
        self.activation = activation
        self.seed = seed
        self.eval_every = eval_every
        self.noise_gain_init = noise_gain_init
        self.learn_noise_gain = learn_noise_gain
        self.xi = xi

    def _train_config(self):
        return TrainConfig(
            epochs=self.epochs, batch_size=self.batch_size,
            learning_rate=self.learning_rate, optimizer=self.optimizer,
            n_layers=self.n_layers, hidden_units=self.hidden_units,
            activation=self.activation, seed=self.seed,
            eval_every=self.eval_every, noise_gain_init=self.noise_gain_init,
            learn_noise_gain=self.learn_noise_gain)

    def _project(self, demos):
        if self._mode == "riemannian":
            return pipeline.preprocess(demos)
        return _naive_tangent_set(demos, self._mode)

    def fit(self, demos, y=None):
        """Train the flow on a DemoSet; returns self."""
        if self._requires is not None and demos.manifold != self._requires:
            raise ManifoldMismatchError(
                f"{type(self).__name__} handles {self._requires!r} demos, "
                f"got {demos.manifold!r}")
        tangent = self._project(demos)
        config = self._train_config()
        model = init_flow_model(
            manifold=demos.manifold, mode=self._mode, goal=demos.goal,
            dt=demos.dt, norm_mean=tangent.mean, norm_std=tangent.std,
            seed=config.seed, n_layers=config.n_layers,
            hidden_units=config.hidden_units, activation=config.activation,
            noise_gain_init=config.noise_gain_init,
            train_len=max(s.shape[0] for s in tangent.sequences))
        self.model_, self.history_ = train(model, tangent, config)
        return self

    def generate(self, p_start, xi=None, max_steps=None):
        """Roll out a trajectory from a manifold point; see pipeline.generate."""
        check_is_fitted(self, "model_")
        return pipeline.generate(self.model_, p_start,
                                 xi=self.xi if xi is None else xi,
                                 max_steps=max_steps)

    def encode(self, points):
        """Map manifold points to the model's training coordinates, (M, k).

        Quaternion sequences are sign-aligned as a whole, matching the
        projection used during training."""
        check_is_fitted(self, "model_")
        return pipeline.encode_sequence(self.model_, points)

    def reproduce(self, demo, xi=None, max_steps=None):
        """Regenerate a demonstration from its start point.

        Starts from the demo's sign-aligned first sample (so the chart
        representative matches what training saw) and defaults max_steps
        to the demo length minus one."""
        check_is_fitted(self, "model_")
        demo = np.asarray(demo, dtype=float)
        if self.model_.manifold == manifolds.UNIT_QUATERNION:
            start = pipeline.align_demo_to_goal(demo, self.model_.goal)[0]
        else:
            start = demo[0]
        if max_steps is None:
            max_steps = demo.shape[0] - 1
        return self.generate(start, xi=xi, max_steps=max_steps)

    def transform(self, points):
        return self.encode(points)

    def predict(self, starts, xi=None, max_steps=None):
        """Generate one trajectory per start point; returns a list of
        GenerationResult."""
        check_is_fitted(self, "model_")
        return [self.generate(p, xi=xi, max_steps=max_steps) for p in starts]

    def score(self, demos, y=None):
        """Negative mean DTW between reproductions and demonstrations
        (higher is better), computed in training coordinates."""
        check_is_fitted(self, "model_")
        total = 0.0
        for demo in demos.points:
            res = self.reproduce(demo)
            total += dtw(res.tangent, self.encode(demo))
        return -total / len(demos.points)


class RiemannianFlow(_FlowEstimator):
    """Flow over tangent-space coordinates at the goal; both manifolds."""

    _mode = "riemannian"


class NaiveQuaternionFlow(_FlowEstimator):
    """Baseline: flow over goal-centered quaternion components with
    post-hoc renormalization."""

    _mode = "naive_uq"
    _requires = manifolds.UNIT_QUATERNION


class NaiveSpdFlow(_FlowEstimator):
    """Baseline: flow over goal-centered matrix entries with post-hoc
    projection onto the SPD cone."""

    _mode = "naive_spd"
    _requires = manifolds.SPD


def make_estimator(method, manifold, config=None, seed=None):
    """Build an estimator for a (method, manifold) benchmark cell.

    method is "riemannian" or "naive"; config is an optional TrainConfig
    whose fields become estimator parameters; seed overrides config.seed.
    """
    if manifold not in manifolds.MANIFOLDS:
        raise ValueError(f"unknown manifold {manifold!r}")
    if method == "riemannian":
        cls = RiemannianFlow
    elif method == "naive":
        cls = (NaiveQuaternionFlow if manifold == manifolds.UNIT_QUATERNION
               else NaiveSpdFlow)
    else:
        raise ValueError(f"unknown method {method!r}; expected one of {METHODS}")
    est = cls()
    if config is not None:
        est.set_params(
            epochs=config.epochs, batch_size=config.batch_size,
            learning_rate=config.learning_rate, optimizer=config.optimizer,
            n_layers=config.n_layers, hidden_units=config.hidden_units,
            activation=config.activation, seed=config.seed,
            eval_every=config.eval_every,
            noise_gain_init=config.noise_gain_init,
            learn_noise_gain=config.learn_noise_gain)
    if seed is not None:
        est.set_params(seed=seed)
    return est
