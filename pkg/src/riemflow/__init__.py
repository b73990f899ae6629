"""riemflow: stable point-to-point motion learning on Riemannian manifolds.

Demonstrations living on the SPD cone or the unit-quaternion sphere are
projected to the tangent space at their goal, a coupling-layer flow over
stable linear latent dynamics is fit to the projected transitions, and new
trajectories are generated by rolling the latent system and mapping back —
every generated point satisfies the manifold constraints by construction.
"""

__version__ = "0.1.0"

from . import manifolds, train
from .dataset import (
    lift_to_manifold,
    load_demoset,
    load_raw,
    recombine,
    save_demoset,
    synth_demoset,
    synth_shape,
)
from .estimator import (
    NaiveQuaternionFlow,
    NaiveSpdFlow,
    RiemannianFlow,
    make_estimator,
)
from .eval import benchmark, dtw, stream_field, streamline_endpoints
from .exceptions import RiemflowError
from .flow import FlowModel, init_flow_model
from .pipeline import DemoSet, GenerationResult, encode_sequence, generate, preprocess
from .train import TrainConfig, random_search

__all__ = [
    "__version__",
    "manifolds",
    "DemoSet",
    "GenerationResult",
    "FlowModel",
    "TrainConfig",
    "RiemflowError",
    "RiemannianFlow",
    "NaiveQuaternionFlow",
    "NaiveSpdFlow",
    "make_estimator",
    "init_flow_model",
    "preprocess",
    "encode_sequence",
    "generate",
    "train",
    "random_search",
    "benchmark",
    "dtw",
    "stream_field",
    "streamline_endpoints",
    "synth_shape",
    "synth_demoset",
    "lift_to_manifold",
    "recombine",
    "load_raw",
    "save_demoset",
    "load_demoset",
]
