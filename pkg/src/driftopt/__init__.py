"""Iterative diffusion-control optimization: losses, simulation, references.

The package trains parametrized feedback controls for controlled diffusions
by minimizing Monte Carlo divergence estimators over simulated path
ensembles, and ships the reference solutions and diagnostics used to judge
the result.
"""

from .approx import (
    ControlField,
    DenseNet,
    FeedForwardNet,
    PerturbedControl,
    TimeIndexedLinear,
    ZeroControl,
    init,
    load_checkpoint,
    save_checkpoint,
)
from .losses import (
    LossOverflowError,
    LossSpec,
    LossValue,
    ce_loss,
    exact_re_gradient,
    logvar_loss,
    moment_loss,
    re_loss,
    var_loss,
)
from .metrics import (
    MetricError,
    crossing_ratio,
    gradient_variance_diag,
    isre,
    l2_error,
    tensorisation_study,
)
from .optim import OptimizerState, TrainConfig, TrainRecord, TrainResult, step, train
from .presets import double_well, make_preset, ou_linear, ou_quadratic
from .reference import (
    OuLinearProblem,
    expm,
    hjb_fd_1d,
    lqg_u_star,
    ou_linear_log_z,
    ou_linear_u_star,
    riccati_solve,
)
from .sde import (
    SdeModel,
    SimulationError,
    TimeGrid,
    girsanov_log_rn,
    mix_seed,
    simulate,
    work,
    ytilde,
)
from .tape import Node, ShapeError, Tape, TapeError, detach, primitive

__version__ = "0.1.0"

__all__ = [
    "ControlField", "DenseNet", "FeedForwardNet", "PerturbedControl",
    "TimeIndexedLinear", "ZeroControl", "init", "load_checkpoint",
    "save_checkpoint",
    "LossOverflowError", "LossSpec", "LossValue", "ce_loss",
    "exact_re_gradient", "logvar_loss", "moment_loss", "re_loss", "var_loss",
    "MetricError", "crossing_ratio", "gradient_variance_diag", "isre",
    "l2_error", "tensorisation_study",
    "OptimizerState", "TrainConfig", "TrainRecord", "TrainResult", "step",
    "train",
    "double_well", "make_preset", "ou_linear", "ou_quadratic",
    "OuLinearProblem", "expm", "hjb_fd_1d", "lqg_u_star", "ou_linear_log_z",
    "ou_linear_u_star", "riccati_solve",
    "SdeModel", "SimulationError", "TimeGrid", "girsanov_log_rn", "mix_seed",
    "simulate", "work", "ytilde",
    "Node", "ShapeError", "Tape", "TapeError", "detach", "primitive",
]
