"""Coupling-layer flow over stable linear latent dynamics.

The model is a stack of affine coupling layers mapping a latent vector q to
an observed tangent vector p, plus a linear stochastic latent system
``q_dot = V q + F beta`` whose drift matrix is re-parameterized so its
eigenvalues always have real part <= -EPS_STAB.  Stability of the latent
system then transfers to the observed space through the diffeomorphism.

Every layer fixes the origin exactly: the scale and shift MLPs are evaluated
with their value at zero subtracted, so b(0) = 0 holds bitwise for all
parameter values and the latent equilibrium maps to the goal.

Model math is written against the dispatch helpers in :mod:`riemflow.autodiff`
so the same code serves fast ndarray generation and Tensor-graph training.
"""

import json

import numpy as np

from . import autodiff as ad
from .exceptions import NonFiniteError, ParseError, SchemaError, ShapeMismatchError

MODEL_SCHEMA = "riemflow.model/1"

EPS_STAB = 1e-3
SCALE_CLAMP = 5.0
COV_JITTER = 1e-6
_LN_2PI = float(np.log(2.0 * np.pi))

ACTIVATIONS = ("relu", "tanh")
DEFAULT_N_LAYERS = 11
DEFAULT_HIDDEN_UNITS = 64


def _check_activation(activation):
    if activation not in ACTIVATIONS:
        raise SchemaError(f"unknown activation {activation!r}, expected one of {ACTIVATIONS}")
    return activation


class Mlp:
    """Plain MLP parameter container: weight/bias arrays plus activation tag."""

    def __init__(self, weights, biases, activation):
        self.weights = [np.asarray(w, dtype=float) for w in weights]
        self.biases = [np.asarray(b, dtype=float) for b in biases]
        self.activation = _check_activation(activation)

    @classmethod
    def init(cls, rng, sizes, activation):
        """Hidden weights uniform in [-0.05, 0.05]; final layer and all biases zero."""
        weights = []
        biases = []
        for i in range(len(sizes) - 1):
            if i == len(sizes) - 2:
                weights.append(np.zeros((sizes[i], sizes[i + 1])))
            else:
                weights.append(rng.uniform(-0.05, 0.05, size=(sizes[i], sizes[i + 1])))
            biases.append(np.zeros(sizes[i + 1]))
        return cls(weights, biases, activation)

    def n_layers(self):
        return len(self.weights)


def mlp_apply(x, layer_params, activation):
    """Run an MLP given ``layer_params`` as a list of (W, b) pairs."""
    act = ad.tanh if activation == "tanh" else ad.relu
    h = x
    for w, b in layer_params[:-1]:
        h = act(h @ w + b)
    w, b = layer_params[-1]
    return h @ w + b


class CouplingLayer:
    """Affine coupling layer with a single 'upper' (conditioning) coordinate.

    Forward: y_upper = x_upper; y_lower = x_lower * exp(s) + t where s and t
    are functions of x_upper alone.  The scale output is clamped through
    SCALE_CLAMP * tanh and both outputs are centered at the origin.
    """

    def __init__(self, k, upper, scale_net, shift_net):
        if not 0 <= upper < k:
            raise ShapeMismatchError(f"upper index {upper} out of range for k={k}")
        self.k = k
        self.upper = upper
        self.scale_net = scale_net
        self.shift_net = shift_net
        self.u_mask = np.zeros(k)
        self.u_mask[upper] = 1.0
        self.l_mask = 1.0 - self.u_mask

    def _terms(self, x_upper_masked, get, prefix):
        """Centered scale and shift, both zero on the upper coordinate."""
        zero = np.zeros((1, self.k))
        s_params = [
            (get(f"{prefix}.scale.w{j}"), get(f"{prefix}.scale.b{j}"))
            for j in range(self.scale_net.n_layers())
        ]
        t_params = [
            (get(f"{prefix}.shift.w{j}"), get(f"{prefix}.shift.b{j}"))
            for j in range(self.shift_net.n_layers())
        ]
        raw_s = mlp_apply(x_upper_masked, s_params, self.scale_net.activation)
        raw_s0 = mlp_apply(zero, s_params, self.scale_net.activation)
        raw_t = mlp_apply(x_upper_masked, t_params, self.shift_net.activation)
        raw_t0 = mlp_apply(zero, t_params, self.shift_net.activation)
        s = ad.tanh(raw_s - raw_s0) * (SCALE_CLAMP * self.l_mask)
        t = (raw_t - raw_t0) * self.l_mask
        return s, t

    def forward(self, x, get, prefix):
        xu = x * self.u_mask
        s, t = self._terms(xu, get, prefix)
        y = xu + (x * self.l_mask) * ad.exp(s) + t
        return y, ad.row_sum(s)

    def inverse(self, y, get, prefix):
        yu = y * self.u_mask
        s, t = self._terms(yu, get, prefix)
        x = yu + (y * self.l_mask - t) * ad.exp(-s)
        return x, ad.row_sum(s)


def make_stable(v_raw, eps=EPS_STAB):
    """Map an unconstrained square matrix to one with Re(eigenvalues) <= -eps.

    V = skew(v_raw) - (sym(v_raw) @ sym(v_raw).T + eps*I).  The symmetric part
    of the result is negative definite, which bounds every eigenvalue's real
    part by its largest eigenvalue (<= -eps).
    """
    k = ad.value_of(v_raw).shape[0]
    sym = (v_raw + v_raw.T) * 0.5
    skew = (v_raw - v_raw.T) * 0.5
    return skew - (sym @ sym.T) - eps * np.eye(k)


class StableLatentDynamics:
    """Latent linear SDE ``q_dot = V q + F beta`` with V constrained stable."""

    def __init__(self, v_raw, noise_gain):
        self.v_raw = np.asarray(v_raw, dtype=float)
        self.noise_gain = np.asarray(noise_gain, dtype=float)
        k = self.v_raw.shape[0]
        if self.v_raw.shape != (k, k) or self.noise_gain.shape != (k, k):
            raise ShapeMismatchError("latent parameter matrices must be square and equal size")

    @classmethod
    def init(cls, k, noise_gain_init=0.1):
        # Unit-rate contraction start: sym part of I squared gives -(1+eps)*I.
        return cls(np.eye(k), noise_gain_init * np.eye(k))

    @property
    def k(self):
        return self.v_raw.shape[0]

    def effective_v(self):
        """The constrained drift matrix actually used by the dynamics."""
        return make_stable(self.v_raw)

    def drift(self, q):
        """Deterministic velocity V q for a single vector or a (B, k) batch."""
        q = np.asarray(q, dtype=float)
        return q @ self.effective_v().T

    def transition_logpdf(self, q_t, q_next, dt, get=None):
        """Log-density of q_next under Euler-Maruyama from q_t over dt.

        Mean is ``q_t + dt * V q_t``; covariance ``dt * F F.T + COV_JITTER*I``.
        Operates on (B, k) batches and returns shape (B,).
        """
        if dt <= 0.0:
            raise ValueError(f"dt must be positive, got {dt}")
        get = get or (lambda name: {"latent.v_raw": self.v_raw,
                                    "latent.noise_gain": self.noise_gain}[name])
        v_raw = get("latent.v_raw")
        gain = get("latent.noise_gain")
        v = make_stable(v_raw)
        mean = q_t + (q_t @ v.T) * dt
        err = q_next - mean
        cov = (gain @ gain.T) * dt + COV_JITTER * np.eye(self.k)
        cov_inv = ad.matinv(cov)
        logdet = ad.slogdet_pd(cov)
        quad = ad.row_sum((err @ cov_inv) * err)
        return (quad + logdet + self.k * _LN_2PI) * (-0.5)


class FlowModel:
    """Coupling-layer diffeomorphism plus stable latent dynamics.

    Parameters are stored as plain ndarrays and exposed by name through
    :meth:`params`; training code passes a dict of Tensors with the same
    names through the ``params`` argument of :meth:`forward` / :meth:`inverse`.
    """

    def __init__(self, manifold, mode, goal, dt, norm_mean, norm_std,
                 layers, latent, train_len=0):
        self.manifold = manifold
        self.mode = mode
        self.goal = np.asarray(goal, dtype=float)
        self.dt = float(dt)
        self.norm_mean = np.asarray(norm_mean, dtype=float)
        self.norm_std = np.asarray(norm_std, dtype=float)
        self.layers = list(layers)
        self.latent = latent
        self.train_len = int(train_len)
        self.k = latent.k
        if self.norm_mean.shape != (self.k,) or self.norm_std.shape != (self.k,):
            raise ShapeMismatchError("normalization stats must have shape (k,)")
        if np.any(self.norm_std <= 0.0):
            raise ShapeMismatchError("normalization std must be positive")

    # -- parameter access ----------------------------------------------------

    def params(self):
        """Live parameter arrays keyed by canonical name."""
        out = {}
        for i, layer in enumerate(self.layers):
            for tag, net in (("scale", layer.scale_net), ("shift", layer.shift_net)):
                for j, (w, b) in enumerate(zip(net.weights, net.biases)):
                    out[f"layers.{i}.{tag}.w{j}"] = w
                    out[f"layers.{i}.{tag}.b{j}"] = b
        out["latent.v_raw"] = self.latent.v_raw
        out["latent.noise_gain"] = self.latent.noise_gain
        return out

    def set_params(self, values):
        """Copy new values into the model's parameter arrays."""
        live = self.params()
        for name, arr in values.items():
            live[name][...] = arr

    def _getter(self, params):
        if params is None:
            live = self.params()
            return lambda name: live[name]
        return lambda name: params[name]

    # -- flow maps -------------------------------------------------------------

    @staticmethod
    def _as_batch(x):
        x = np.asarray(x, dtype=float)
        if not np.isfinite(x).all():
            raise NonFiniteError("flow input contains non-finite entries")
        if x.ndim == 1:
            return x[None, :], True
        return x, False

    def forward(self, q, params=None, with_logdet=False):
        """Latent -> observed map. Accepts (k,) or (B, k); Tensors must be (B, k)."""
        single = False
        if not isinstance(q, ad.Tensor):
            q, single = self._as_batch(q)
        get = self._getter(params)
        x = q
        logdet = None
        for i, layer in enumerate(self.layers):
            x, srow = layer.forward(x, get, f"layers.{i}")
            logdet = srow if logdet is None else logdet + srow
        if single:
            x = x[0]
            logdet = float(logdet[0])
        if with_logdet:
            return x, logdet
        return x

    def inverse(self, p, params=None, with_logdet=False):
        """Observed -> latent map; logdet is the inverse map's (negated) one."""
        single = False
        if not isinstance(p, ad.Tensor):
            p, single = self._as_batch(p)
        get = self._getter(params)
        x = p
        logdet = None
        for i in reversed(range(len(self.layers))):
            x, srow = self.layers[i].inverse(x, get, f"layers.{i}")
            logdet = srow if logdet is None else logdet + srow
        logdet = -logdet
        if single:
            x = x[0]
            logdet = float(logdet[0])
        if with_logdet:
            return x, logdet
        return x

    # -- serialization ---------------------------------------------------------

    def to_dict(self):
        layers = []
        for layer in self.layers:
            layers.append({
                "upper": layer.upper,
                "scale": {"weights": [w.tolist() for w in layer.scale_net.weights],
                          "biases": [b.tolist() for b in layer.scale_net.biases]},
                "shift": {"weights": [w.tolist() for w in layer.shift_net.weights],
                          "biases": [b.tolist() for b in layer.shift_net.biases]},
            })
        return {
            "schema": MODEL_SCHEMA,
            "manifold": self.manifold,
            "mode": self.mode,
            "k": self.k,
            "dt": self.dt,
            "train_len": self.train_len,
            "activation": self.layers[0].scale_net.activation if self.layers else "relu",
            "goal": self.goal.tolist(),
            "norm_mean": self.norm_mean.tolist(),
            "norm_std": self.norm_std.tolist(),
            "layers": layers,
            "latent": {"v_raw": self.latent.v_raw.tolist(),
                       "noise_gain": self.latent.noise_gain.tolist()},
        }

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict) or data.get("schema") != MODEL_SCHEMA:
            raise SchemaError(f"expected schema {MODEL_SCHEMA!r}, got {data.get('schema')!r}"
                              if isinstance(data, dict) else "model file is not an object")
        try:
            k = int(data["k"])
            activation = _check_activation(data["activation"])
            layers = []
            for entry in data["layers"]:
                scale = Mlp(entry["scale"]["weights"], entry["scale"]["biases"], activation)
                shift = Mlp(entry["shift"]["weights"], entry["shift"]["biases"], activation)
                layers.append(CouplingLayer(k, int(entry["upper"]), scale, shift))
            latent = StableLatentDynamics(data["latent"]["v_raw"], data["latent"]["noise_gain"])
            return cls(
                manifold=data["manifold"],
                mode=data["mode"],
                goal=np.asarray(data["goal"], dtype=float),
                dt=float(data["dt"]),
                norm_mean=np.asarray(data["norm_mean"], dtype=float),
                norm_std=np.asarray(data["norm_std"], dtype=float),
                layers=layers,
                latent=latent,
                train_len=int(data.get("train_len", 0)),
            )
        except (KeyError, TypeError) as err:
            raise SchemaError(f"model file missing or malformed field: {err}") from None

    def save(self, path):
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh)
            fh.write("\n")

    @classmethod
    def load(cls, path):
        with open(path, "r", encoding="utf-8") as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as err:
                raise ParseError(f"invalid model file: {err.msg}", line=err.lineno) from None
        return cls.from_dict(data)

    def copy(self):
        return FlowModel.from_dict(self.to_dict())


def rollout_tangent(model, t_start, n_steps, params=None):
    """Roll the deterministic dynamics forward for a fixed number of steps.

    ``t_start`` is an unnormalized tangent state of shape (k,) or a batch
    (B, k).  Returns the visited tangent states including the start, shape
    (n_steps + 1, k) or (B, n_steps + 1, k).  The latent path is integrated
    first (it is linear, so only the transition matrix is needed) and the
    whole path is pushed through the flow in one batched call.
    """
    t = np.asarray(t_start, dtype=float)
    single = t.ndim == 1
    starts = np.atleast_2d(t)
    n_steps = int(n_steps)
    if n_steps < 0:
        raise ShapeMismatchError(f"n_steps must be >= 0, got {n_steps}")
    get = model._getter(params)
    q = model.inverse(starts / model.norm_std, params=params)
    q = ad.value_of(q)
    step = np.eye(model.k) + model.dt * make_stable(ad.value_of(get("latent.v_raw")))
    path = np.empty((starts.shape[0], n_steps + 1, model.k))
    path[:, 0] = q
    for m in range(1, n_steps + 1):
        q = q @ step.T
        path[:, m] = q
    flat = model.forward(path.reshape(-1, model.k), params=params)
    out = (ad.value_of(flat) * model.norm_std).reshape(starts.shape[0], n_steps + 1, model.k)
    out[:, 0] = starts
    return out[0] if single else out


def init_flow_model(manifold, mode, goal, dt, norm_mean, norm_std, seed,
                    n_layers=DEFAULT_N_LAYERS, hidden_units=DEFAULT_HIDDEN_UNITS,
                    activation="relu", noise_gain_init=0.1, train_len=0):
    """Build an identity-initialized model: every layer is the identity map
    and the latent drift is a unit-rate contraction."""
    _check_activation(activation)
    if n_layers < 1:
        raise ShapeMismatchError(f"n_layers must be >= 1, got {n_layers}")
    norm_mean = np.asarray(norm_mean, dtype=float)
    norm_std = np.asarray(norm_std, dtype=float)
    k = norm_mean.shape[0]
    rng = np.random.default_rng(seed)
    sizes = [k, hidden_units, hidden_units, k]
    layers = []
    for i in range(n_layers):
        scale = Mlp.init(rng, sizes, activation)
        shift = Mlp.init(rng, sizes, activation)
        layers.append(CouplingLayer(k, i % k, scale, shift))
    latent = StableLatentDynamics.init(k, noise_gain_init=noise_gain_init)
    return FlowModel(manifold, mode, goal, dt, norm_mean, norm_std,
                     layers, latent, train_len=train_len)
