"""Maximum-likelihood training of the flow over its latent dynamics.

The objective scores observed tangent-space transitions by pulling them back
through the inverse flow and evaluating the discretized latent SDE's
transition density plus the inverse map's log-Jacobian.  Includes the four
supported optimizers, a training loop with DTW monitoring and a
restore-and-halve divergence guard, checkpoint I/O, and random
hyperparameter search.
"""

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from . import autodiff as ad
from .eval import dtw, write_csv
from .exceptions import (
    EmptySequenceError,
    GoalMismatchError,
    NonFiniteError,
    ParseError,
    SchemaError,
    ShapeMismatchError,
    SingularCovarianceError,
    TrainingDivergedError,
)
from .flow import (
    ACTIVATIONS,
    DEFAULT_HIDDEN_UNITS,
    DEFAULT_N_LAYERS,
    FlowModel,
    init_flow_model,
    rollout_tangent,
)

OPTIMIZERS = ("adam", "adamax", "sgd", "rmsprop")
BETA1 = 0.9
BETA2 = 0.999
OPT_EPS = 1e-8

HISTORY_COLUMNS = ("epoch", "loss", "dtw")

# Search bounds: integer layer range, discrete choices, log-uniform rate.
SEARCH_SPACE = {
    "n_layers": (8, 12),
    "activation": ACTIVATIONS,
    "optimizer": OPTIMIZERS,
    "learning_rate": (1e-5, 1e-1),
}


@dataclass
class TrainConfig:
    """One training run's knobs; the defaults are the best-found search point."""

    epochs: int = 100
    batch_size: int = 128
    learning_rate: float = 0.00098
    optimizer: str = "adam"
    n_layers: int = DEFAULT_N_LAYERS
    hidden_units: int = DEFAULT_HIDDEN_UNITS
    activation: str = "relu"
    seed: int = 20
    eval_every: int = 5
    noise_gain_init: float = 0.1
    learn_noise_gain: bool = True

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError(f"epochs must be >= 0, got {self.epochs}")
        for name in ("batch_size", "n_layers", "hidden_units", "eval_every"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1, got {getattr(self, name)}")
        if self.learning_rate <= 0.0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}")
        if self.noise_gain_init <= 0.0:
            raise ValueError(f"noise_gain_init must be positive, got {self.noise_gain_init}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"activation must be one of {ACTIVATIONS}, got {self.activation!r}")


# -- optimizers -----------------------------------------------------------------

class Optimizer:
    """Shared machinery: per-parameter state slots, in-place updates."""

    kind = ""
    _slot_keys = ()

    def __init__(self, learning_rate):
        if learning_rate <= 0.0:
            raise ValueError(f"learning rate must be positive, got {learning_rate}")
        self.learning_rate = float(learning_rate)
        self.step_count = 0
        self.slots = {}

    def step(self, params, grads):
        """Apply one update in place; grads maps a subset of params to arrays."""
        self.step_count += 1
        for name, p in params.items():
            g = grads.get(name)
            if g is None:
                continue
            g = np.asarray(g, dtype=float)
            if g.shape != p.shape:
                raise ShapeMismatchError(
                    f"gradient shape {g.shape} != parameter shape {p.shape} for {name!r}")
            self._apply(name, p, g)

    def _slot(self, name, like):
        slot = self.slots.get(name)
        if slot is None:
            slot = self.slots[name] = {key: np.zeros_like(like) for key in self._slot_keys}
        return slot

    def state_dict(self):
        return {"kind": self.kind,
                "learning_rate": self.learning_rate,
                "step_count": self.step_count,
                "slots": {name: {key: buf.tolist() for key, buf in slot.items()}
                          for name, slot in self.slots.items()}}


class Sgd(Optimizer):
    kind = "sgd"

    def _apply(self, name, p, g):
        p -= self.learning_rate * g


class Adam(Optimizer):
    kind = "adam"
    _slot_keys = ("m", "v")

    def _apply(self, name, p, g):
        slot = self._slot(name, p)
        slot["m"][...] = BETA1 * slot["m"] + (1.0 - BETA1) * g
        slot["v"][...] = BETA2 * slot["v"] + (1.0 - BETA2) * g * g
        m_hat = slot["m"] / (1.0 - BETA1 ** self.step_count)
        v_hat = slot["v"] / (1.0 - BETA2 ** self.step_count)
        p -= self.learning_rate * m_hat / (np.sqrt(v_hat) + OPT_EPS)


class Adamax(Optimizer):
    kind = "adamax"
    _slot_keys = ("m", "u")

    def _apply(self, name, p, g):
        slot = self._slot(name, p)
        slot["m"][...] = BETA1 * slot["m"] + (1.0 - BETA1) * g
        slot["u"][...] = np.maximum(BETA2 * slot["u"], np.abs(g))
        p -= (self.learning_rate / (1.0 - BETA1 ** self.step_count)) \
            * slot["m"] / (slot["u"] + OPT_EPS)


class RmsProp(Optimizer):
    kind = "rmsprop"
    _slot_keys = ("v",)

    def _apply(self, name, p, g):
        slot = self._slot(name, p)
        slot["v"][...] = BETA2 * slot["v"] + (1.0 - BETA2) * g * g
        p -= self.learning_rate * g / (np.sqrt(slot["v"]) + OPT_EPS)


_OPTIMIZER_CLASSES = {cls.kind: cls for cls in (Sgd, Adam, Adamax, RmsProp)}


def make_optimizer(kind, learning_rate):
    try:
        cls = _OPTIMIZER_CLASSES[kind]
    except KeyError:
        raise ValueError(f"unknown optimizer {kind!r}; expected one of {OPTIMIZERS}") from None
    return cls(learning_rate)


def optimizer_from_state(state):
    opt = make_optimizer(state["kind"], float(state["learning_rate"]))
    opt.step_count = int(state["step_count"])
    opt.slots = {name: {key: np.asarray(buf, dtype=float) for key, buf in slot.items()}
                 for name, slot in state["slots"].items()}
    return opt


# -- objective -------------------------------------------------------------------

def nll_loss(model, x_t, x_next, params=None):
    """Mean negative log-likelihood of normalized tangent transitions.

    Both states are pulled back through the inverse flow; the latent pair is
    scored under the Euler-Maruyama transition density and the inverse map's
    log-Jacobian at the endpoint is added.  With a Tensor ``params`` dict the
    result is a scalar Tensor ready for backward(), otherwise a float.
    Raises NonFinite when the value explodes (the trainer's retry signal).
    """
    get = model._getter(params)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        q_t = model.inverse(x_t, params=params)
        q_next, logdet_inv = model.inverse(x_next, params=params, with_logdet=True)
        logp = model.latent.transition_logpdf(q_t, q_next, model.dt, get=get)
        loss = ad.mean_all(-(logp + logdet_inv))
    if not np.isfinite(float(ad.value_of(loss))):
        raise NonFiniteError("training loss is non-finite")
    return loss if isinstance(loss, ad.Tensor) else float(loss)


def monitor_dtw(model, seqs):
    """Mean DTW between fixed-length re-generations (from each demo's first
    tangent state) and the demonstrations, in unnormalized coordinates."""
    vals = []
    for s in seqs:
        path = rollout_tangent(model, s[0], s.shape[0] - 1)
        vals.append(dtw(path, s))
    return float(np.mean(vals))


# -- training loop ----------------------------------------------------------------

def _as_sequences(demos_tangent, k):
    seqs = [np.asarray(s, dtype=float)
            for s in getattr(demos_tangent, "sequences", demos_tangent)]
    if not seqs:
        raise EmptySequenceError("at least one demonstration is required")
    for s in seqs:
        if s.ndim != 2 or s.shape[1] != k or s.shape[0] < 2:
            raise ShapeMismatchError(
                f"demonstrations must be (M >= 2, {k}) arrays, got {s.shape}")
        if not np.isfinite(s).all():
            raise NonFiniteError("demonstration contains non-finite values")
        if np.linalg.norm(s[-1]) > 1e-6:
            raise GoalMismatchError("every demonstration must end at the tangent origin")
    return seqs


def train(model, demos_tangent, config):
    """Fit the model in place on tangent demonstrations; returns (model, history).

    History rows {"epoch", "loss", "dtw"} are recorded at epoch 0, every
    ``config.eval_every`` epochs and at the final epoch; the loss entries are
    full-data evaluations.  Pairs are re-shuffled each epoch from the run
    seed, so a fixed seed reproduces parameters bitwise.  On a non-finite
    loss the last completed epoch is restored and the learning rate halved,
    once; a second failure aborts.
    """
    seqs = _as_sequences(demos_tangent, model.k)
    scaled = [s / model.norm_std for s in seqs]
    x_t = np.concatenate([w[:-1] for w in scaled], axis=0)
    x_next = np.concatenate([w[1:] for w in scaled], axis=0)

    history = []
    if config.epochs == 0:
        return model, history

    def record(epoch):
        history.append({"epoch": epoch,
                        "loss": nll_loss(model, x_t, x_next),
                        "dtw": monitor_dtw(model, seqs)})

    rng = np.random.default_rng(config.seed)
    params = model.params()
    opt = make_optimizer(config.optimizer, config.learning_rate)
    skip = () if config.learn_noise_gain else ("latent.noise_gain",)
    record(0)
    snapshot = ({name: p.copy() for name, p in params.items()}, opt.state_dict())
    halved = False
    n_pairs = x_t.shape[0]
    epoch = 1
    while epoch <= config.epochs:
        perm = rng.permutation(n_pairs)
        try:
            for lo in range(0, n_pairs, config.batch_size):
                sel = perm[lo:lo + config.batch_size]
                leaves = {name: ad.Tensor(p) for name, p in params.items()}
                loss = nll_loss(model, x_t[sel], x_next[sel], params=leaves)
                loss.backward()
                grads = {name: leaf.grad for name, leaf in leaves.items()
                         if leaf.grad is not None and name not in skip}
                opt.step(params, grads)
            if epoch % config.eval_every == 0 or epoch == config.epochs:
                record(epoch)
        except (NonFiniteError, SingularCovarianceError) as err:
            if halved:
                raise TrainingDivergedError(
                    f"non-finite loss at epoch {epoch} after halving the learning rate"
                ) from err
            model.set_params(snapshot[0])
            opt = optimizer_from_state(snapshot[1])
            opt.learning_rate *= 0.5
            halved = True
            continue
        snapshot = ({name: p.copy() for name, p in params.items()}, opt.state_dict())
        epoch += 1
    return model, history


def write_history(path, history):
    """Emit history rows as CSV (epoch, loss, dtw)."""
    write_csv(path, HISTORY_COLUMNS, history)


# -- checkpoints -------------------------------------------------------------------

def save_checkpoint(path, model, optimizer, epoch=0):
    """Model serialization plus optimizer state (still loads as a plain model)."""
    data = model.to_dict()
    data["optimizer"] = optimizer.state_dict()
    data["epoch"] = int(epoch)
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(data, fh)
        fh.write("\n")


def load_checkpoint(path):
    """Returns (model, optimizer, epoch)."""
    with open(path, "r", encoding="utf-8") as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as err:
            raise ParseError(f"invalid checkpoint file: {err.msg}", line=err.lineno) from None
    model = FlowModel.from_dict(data)
    if "optimizer" not in data:
        raise SchemaError("checkpoint file has no optimizer state")
    try:
        opt = optimizer_from_state(data["optimizer"])
    except (KeyError, TypeError, ValueError) as err:
        raise SchemaError(f"malformed optimizer state: {err}") from None
    return model, opt, int(data.get("epoch", 0))


# -- random search -----------------------------------------------------------------

def sample_config(rng, base=None, space=None):
    """One uniform draw from the search space (log-uniform learning rate)."""
    base = base or TrainConfig()
    sp = dict(SEARCH_SPACE)
    if space:
        sp.update(space)
    lo, hi = sp["n_layers"]
    llo, lhi = sp["learning_rate"]
    lr = float(10.0 ** rng.uniform(np.log10(llo), np.log10(lhi)))
    if llo == lhi:
        lr = float(llo)  # 10**log10(x) is not bit-exact; honor a pinned value
    return replace(
        base,
        n_layers=int(rng.integers(int(lo), int(hi) + 1)),
        activation=str(sp["activation"][int(rng.integers(len(sp["activation"])))]),
        optimizer=str(sp["optimizer"][int(rng.integers(len(sp["optimizer"])))]),
        learning_rate=lr,
    )


def _run_trial(seqs, manifold, goal, dt, mean, std, config, index):
    model = init_flow_model(
        manifold, "riemannian", goal, dt, mean, std, seed=config.seed,
        n_layers=config.n_layers, hidden_units=config.hidden_units,
        activation=config.activation, noise_gain_init=config.noise_gain_init,
        train_len=max(s.shape[0] for s in seqs))
    row = {"trial": index, "n_layers": config.n_layers,
           "hidden_units": config.hidden_units, "activation": config.activation,
           "optimizer": config.optimizer, "learning_rate": config.learning_rate,
           "seed": config.seed}
    try:
        model, history = train(model, seqs, config)
        row["dtw"] = history[-1]["dtw"] if history else monitor_dtw(model, seqs)
    except TrainingDivergedError:
        row["dtw"] = float("inf")
        model = None
    return row, model


def random_search(tangent_set, trials, seed, base=None, space=None, jobs=1):
    """Sample configs up front, train each, rank ascending by final DTW.

    Every trial trains with the same base seed, so restricting the space to
    a single point makes all trials identical; the search seed drives only
    the config draws.  A diverged trial scores infinite DTW.  Returns
    (rows, best_model) where rows carry 1-based ranks and best_model is the
    rank-1 trial's trained model (None if every trial diverged).
    """
    trials = int(trials)
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    base = base or TrainConfig(seed=seed)
    rng = np.random.default_rng(seed)
    configs = [sample_config(rng, base, space) for _ in range(trials)]
    seqs = [np.asarray(s, dtype=float)
            for s in getattr(tangent_set, "sequences", tangent_set)]
    args = (seqs, tangent_set.manifold, tangent_set.goal, tangent_set.dt,
            tangent_set.mean, tangent_set.std)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=int(jobs)) as pool:
            futures = [pool.submit(_run_trial, *args, cfg, i)
                       for i, cfg in enumerate(configs)]
            results = [fut.result() for fut in futures]
    else:
        results = [_run_trial(*args, cfg, i) for i, cfg in enumerate(configs)]

    def key(i):
        val = results[i][0]["dtw"]
        return (val if np.isfinite(val) else np.inf, i)

    order = sorted(range(trials), key=key)
    rows = []
    for rank, i in enumerate(order, start=1):
        row = dict(results[i][0])
        row["rank"] = rank
        rows.append(row)
    return rows, results[order[0]][1]
