"""Interfaced operator networks for parametric elliptic interface problems."""
from .autodiff import ParamStore, Tape, Tensor
from .geometry import AstroidSquareGeometry, IntervalGeometry, NestedSpheresGeometry, make_geometry
from .losses import CollocationBatch, LossWeights, ProblemSpec, composite_loss, physics_loss
from .networks import DeepONet, IONet, ModelConfig, build_model
from .solvers import exact_solution, relative_l2, solve_interface_1d
from .training import TrainConfig, adam_step, lr_at, train

__version__ = "0.1.0"
