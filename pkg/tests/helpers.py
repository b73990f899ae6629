"""Shared generators for randomized tests."""

import numpy as np


def random_orthogonal(rng, d):
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    return q * np.sign(np.diag(r))


def random_spd(rng, d, cond_max=1e4, scale=1.0):
    """Random SPD matrix with condition number at most ``cond_max``."""
    cond = rng.uniform(1.0, cond_max)
    w = np.exp(rng.uniform(0.0, np.log(cond), size=d))
    w = w / w.max() * scale
    q = random_orthogonal(rng, d)
    a = (q * w) @ q.T
    return (a + a.T) / 2.0


def random_unit_quaternion(rng):
    q = rng.standard_normal(4)
    return q / np.linalg.norm(q)


def random_symmetric(rng, d, scale=1.0):
    a = rng.standard_normal((d, d)) * scale
    return (a + a.T) / 2.0


def perturb_params(model, rng, scale=0.3):
    """Knock a flow model off its identity initialization, in place."""
    for arr in model.params().values():
        arr += rng.uniform(-scale, scale, size=arr.shape)


def tiny_model(seed=0, k=3, n_layers=3, hidden=8, activation="tanh", dt=0.01):
    """Small identity-initialized tangent-space model for unit tests."""
    from riemflow.flow import init_flow_model

    return init_flow_model(
        manifold="uq",
        mode="riemannian",
        goal=[1.0, 0.0, 0.0, 0.0] if k == 3 else [0.0] * 4,
        dt=dt,
        norm_mean=[0.0] * k,
        norm_std=[1.0] * k,
        seed=seed,
        n_layers=n_layers,
        hidden_units=hidden,
        activation=activation,
    )


def spiral_seqs(n_demos=3, length=60, seed=0, dt=0.01):
    """Smooth 3-D tangent demonstrations spiraling into the origin exactly."""
    rng = np.random.default_rng(seed)
    tau = np.linspace(0.0, 1.0, length)
    env = 1.0 - tau
    seqs = []
    for _ in range(n_demos):
        amp = 1.0 + 0.05 * rng.standard_normal(3)
        phase = 0.1 * rng.standard_normal()
        seqs.append(np.stack([
            amp[0] * env * np.cos(4.0 * tau + phase),
            amp[1] * env * np.sin(4.0 * tau + phase),
            amp[2] * env,
        ], axis=1))
    return seqs, dt
