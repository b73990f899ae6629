"""Estimator API: sklearn conventions, mode dispatch, fit/generate/encode."""

import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from riemflow import dataset as rds
from riemflow import manifolds as mf
from riemflow import pipeline as pl
from riemflow.estimator import (
    NaiveQuaternionFlow,
    NaiveSpdFlow,
    RiemannianFlow,
    _naive_tangent_set,
    make_estimator,
)
from riemflow.exceptions import ManifoldMismatchError
from riemflow.train import TrainConfig

FAST = dict(epochs=2, batch_size=32, n_layers=2, hidden_units=8, eval_every=10)


def uq_demos(n=3, length=40, seed=0):
    return rds.synth_demoset("spiral", mf.UNIT_QUATERNION, n_demos=n,
                             length=length, noise=0.05, seed=seed)


def spd_demos(n=3, length=40, seed=0):
    return rds.synth_demoset("spiral", mf.SPD, n_demos=n, length=length,
                             noise=0.05, seed=seed)


def test_get_params_and_clone():
    est = RiemannianFlow(epochs=7, learning_rate=0.01)
    params = est.get_params()
    assert params["epochs"] == 7
    assert params["learning_rate"] == 0.01
    assert params["n_layers"] == 11 and params["optimizer"] == "adam"
    twin = clone(est)
    assert twin.get_params() == params
    est.set_params(optimizer="sgd")
    assert est.optimizer == "sgd"


def test_make_estimator_dispatch():
    assert isinstance(make_estimator("riemannian", mf.UNIT_QUATERNION), RiemannianFlow)
    assert isinstance(make_estimator("riemannian", mf.SPD), RiemannianFlow)
    assert isinstance(make_estimator("naive", mf.UNIT_QUATERNION), NaiveQuaternionFlow)
    assert isinstance(make_estimator("naive", mf.SPD), NaiveSpdFlow)
    with pytest.raises(ValueError):
        make_estimator("fancy", mf.SPD)
    with pytest.raises(ValueError):
        make_estimator("riemannian", "torus")


def test_make_estimator_applies_config_and_seed():
    config = TrainConfig(epochs=9, n_layers=8, optimizer="sgd", seed=5,
                         learning_rate=0.02)
    est = make_estimator("riemannian", mf.SPD, config=config)
    assert est.epochs == 9 and est.n_layers == 8
    assert est.optimizer == "sgd" and est.seed == 5
    est = make_estimator("riemannian", mf.SPD, config=config, seed=11)
    assert est.seed == 11 and est.learning_rate == 0.02


def test_unfitted_estimator_raises():
    est = RiemannianFlow()
    with pytest.raises(NotFittedError):
        est.generate(rds.GOAL_UQ)
    with pytest.raises(NotFittedError):
        est.encode([rds.GOAL_UQ])
    with pytest.raises(NotFittedError):
        est.score(uq_demos(n=1, length=12))


def test_fit_riemannian_uq_end_to_end():
    demos = uq_demos()
    est = RiemannianFlow(**FAST).fit(demos)
    assert est.model_.mode == "riemannian"
    assert est.model_.manifold == mf.UNIT_QUATERNION
    assert est.model_.k == 3
    assert len(est.history_) >= 1
    coords = est.encode(demos.points[0])
    assert coords.shape == (40, 3)
    res = est.generate(demos.points[0][0], max_steps=39)
    assert isinstance(res, pl.GenerationResult)
    assert res.tangent.shape[1] == 3 and len(res) <= 40
    s = est.score(demos)
    assert np.isfinite(s) and s <= 0.0


def test_fit_riemannian_spd_end_to_end():
    demos = spd_demos()
    est = RiemannianFlow(**FAST).fit(demos)
    assert est.model_.k == 3
    res = est.generate(demos.points[0][0], max_steps=20)
    assert res.points.shape[1:] == (2, 2)
    assert res.violations == 0


def test_naive_estimators_enforce_manifold():
    with pytest.raises(ManifoldMismatchError):
        NaiveQuaternionFlow(**FAST).fit(spd_demos(n=1, length=12))
    with pytest.raises(ManifoldMismatchError):
        NaiveSpdFlow(**FAST).fit(uq_demos(n=1, length=12))


def test_fit_naive_uq_uses_raw_components():
    demos = uq_demos()
    est = NaiveQuaternionFlow(**FAST).fit(demos)
    assert est.model_.k == 4 and est.model_.mode == "naive_uq"
    coords = est.encode(demos.points[0])
    expected = pl.align_demo_to_goal(demos.points[0], demos.goal) - demos.goal
    assert_allclose(coords, expected, rtol=0, atol=1e-15)


def test_fit_naive_spd_uses_matrix_entries():
    demos = spd_demos()
    est = NaiveSpdFlow(**FAST).fit(demos)
    assert est.model_.k == 3 and est.model_.mode == "naive_spd"
    coords = est.encode(demos.points[0])
    goal_vec = mf.mandel_vec(demos.goal)
    expected = np.array([mf.mandel_vec(p) - goal_vec for p in demos.points[0]])
    assert_allclose(coords, expected, rtol=0, atol=1e-12)


def test_naive_tangent_set_stats_definition():
    demos = uq_demos()
    out = _naive_tangent_set(demos, "naive_uq")
    data = np.concatenate(out.sequences, axis=0)
    assert_array_equal(out.mean, data.mean(axis=0))
    assert_array_equal(out.std, np.maximum(data.std(axis=0), pl.STD_FLOOR))
    assert out.k == 4


def test_fit_is_deterministic_in_seed():
    demos = uq_demos()
    a = RiemannianFlow(**FAST, seed=3).fit(demos)
    b = RiemannianFlow(**FAST, seed=3).fit(demos)
    c = RiemannianFlow(**FAST, seed=4).fit(demos)
    for name, arr in a.model_.params().items():
        assert_array_equal(arr, b.model_.params()[name])
    assert any(not np.array_equal(arr, c.model_.params()[name])
               for name, arr in a.model_.params().items())


def test_reproduce_starts_at_encoded_demo_start():
    # synth uq demos reach tangent norm 0.9*pi, so the first sample sits on
    # the far hemisphere: reproduction must start at the same chart point
    # the encoded reference starts at.
    demos = uq_demos()
    est = RiemannianFlow(**FAST).fit(demos)
    demo = demos.points[0]
    assert np.dot(demo[0], demos.goal) < 0.0
    res = est.reproduce(demo)
    ref = est.encode(demo)
    assert_allclose(res.tangent[0], ref[0], rtol=0, atol=1e-12)
    assert len(res) <= demo.shape[0]


def test_predict_and_transform():
    demos = uq_demos(n=2)
    est = RiemannianFlow(**FAST).fit(demos)
    outs = est.predict([d[0] for d in demos.points], max_steps=10)
    assert len(outs) == 2 and all(len(r) <= 11 for r in outs)
    assert_array_equal(est.transform(demos.points[0]), est.encode(demos.points[0]))
