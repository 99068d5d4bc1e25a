"""Adam training loop with the stepwise exponential learning-rate schedule."""
from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, ParamStore, Tape
from .fields import FunctionSet
from .losses import CollocationBatch, ConfigError, LossWeights, ProblemSpec, composite_loss
from .networks import OperatorNetwork, load_model, save_model


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    epochs: int = 10_000
    lr: float = 1e-3
    decay_rate: float = 0.95
    batch_functions: int = 64
    n_residual: int = 32
    n_interface: int = 16
    n_boundary: int = 16
    n_data: int = 128
    resample: bool = True
    seed: int = 0
    regime: str = "pi"
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.epochs <= 0:
            raise ConfigError("epochs must be positive")
        for name in ("batch_functions", "n_residual", "n_interface", "n_boundary", "n_data"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.regime not in ("pi", "dd", "composite"):
            raise ConfigError(f"unknown regime '{self.regime}'")

    @property
    def decay_interval(self) -> int:
        return max(1, self.epochs // 100)

    def to_dict(self) -> dict:
        return asdict(self)


def lr_at(config: TrainConfig, iteration: int) -> float:
    return config.lr * config.decay_rate ** (iteration // config.decay_interval)


@dataclass
class AdamState:
    m: ParamStore
    v: ParamStore
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: ParamStore) -> "AdamState":
        return cls(ParamStore((k, np.zeros_like(v)) for k, v in params.items()),
                   ParamStore((k, np.zeros_like(v)) for k, v in params.items()))


def adam_step(params: ParamStore, grads, state: AdamState, lr: float) -> tuple[ParamStore, AdamState]:
    """Bias-corrected Adam update, in place on ``params`` and ``state``."""
    if set(grads) != set(params):
        raise ContractError("gradient names do not match the parameters")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1, c2 = 1.0 - b1 ** state.step, 1.0 - b2 ** state.step
    for name, p in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != p.shape:
            raise ContractError(f"gradient shape {g.shape} != parameter shape {p.shape} for {name}")
        m, v = state.m[name], state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
    return params, state


@dataclass
class Labels:
    """Reference values of every function of a split at fixed points."""

    points: np.ndarray
    sides: np.ndarray
    values: np.ndarray  # (N, P)


def sample_batch(problem: ProblemSpec, n_functions: int, cfg: TrainConfig, iteration: int,
                 labels: Labels | None = None, weights: LossWeights | None = None) -> CollocationBatch:
    """Minibatch of function indices and collocation points for one iteration.

    Randomness comes from a stream keyed on (seed, iteration), so a resumed
    run sees the same batches as an uninterrupted one.  With ``resample``
    off, the collocation points are drawn once (iteration 0) and reused.
    """
    geom = problem.geometry
    rng = np.random.default_rng([cfg.seed, 5, iteration])
    idx = np.sort(rng.choice(n_functions, size=min(cfg.batch_functions, n_functions), replace=False))
    prng = rng if cfg.resample else np.random.default_rng([cfg.seed, 4, 0])
    batch = CollocationBatch(idx)
    physics = weights is None or weights.physics > 0
    if physics:
        batch.residual = {i: geom.sample_interior(i, cfg.n_residual, prng)
                          for i in range(1, geom.n_subdomains + 1)}
        batch.interface = geom.interface_points(cfg.n_interface, prng)
        batch.boundary = geom.sample_boundary(cfg.n_boundary, prng)
        batch.boundary_region = geom.boundary_region(batch.boundary)
    if labels is not None and (weights is None or weights.data > 0):
        P = labels.points.shape[0]
        sel = np.sort(prng.choice(P, size=min(cfg.n_data, P), replace=False))
        batch.data_points = labels.points[sel]
        batch.data_sides = labels.sides[sel]
        batch.targets = labels.values[idx][:, sel]
    return batch


def history_columns(n_subdomains: int) -> list[str]:
    return (["iteration", "lr", "total"] + [f"L_r{i}" for i in range(1, n_subdomains + 1)]
            + ["L_GD", "L_GN", "L_b", "L_data"])


def write_history(path, rows: list[dict], n_subdomains: int) -> None:
    cols = history_columns(n_subdomains)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for row in rows:
            w.writerow([row["iteration"]] + [repr(float(row.get(c, 0.0))) for c in cols[1:]])


def read_history(path) -> list[dict]:
    with open(path) as fh:
        return [{k: (int(v) if k == "iteration" else float(v)) for k, v in row.items()}
                for row in csv.DictReader(fh)]


def save_checkpoint(path, model: OperatorNetwork, state: AdamState, iteration: int,
                    extra_meta: dict | None = None) -> None:
    extra = {f"adam.m.{k}": v for k, v in state.m.items()}
    extra.update({f"adam.v.{k}": v for k, v in state.v.items()})
    meta = {"iteration": str(iteration), "adam_step": str(state.step)}
    meta.update(extra_meta or {})
    save_model(path, model, extra, meta)


def load_checkpoint(path) -> tuple[OperatorNetwork, AdamState, int, dict]:
    model, extra, meta = load_model(path)
    state = AdamState.zeros_like(model.params)
    if extra:
        for k, v in model.params.items():
            state.m[k] = extra[f"adam.m.{k}"].reshape(v.shape).copy()
            state.v[k] = extra[f"adam.v.{k}"].reshape(v.shape).copy()
    state.step = int(meta.get("adam_step", 0))
    return model, state, int(meta.get("iteration", 0)), meta


def _diverged_component(comps: dict) -> str:
    for k, v in comps.items():
        if not math.isfinite(v):
            return k
    return "total"


def train(model: OperatorNetwork, problem: ProblemSpec, functions: FunctionSet, cfg: TrainConfig,
          weights: LossWeights, labels: Labels | None = None, state: AdamState | None = None,
          start: int = 0, stop: int | None = None, checkpoint_path=None, log=None,
          on_checkpoint=None):
    """Run iterations ``start .. stop-1`` (default: to ``cfg.epochs``).

    Returns (model, history rows, Adam state).  The model parameters are
    updated in place.  ``on_checkpoint(history)`` runs after each periodic
    checkpoint, e.g. to flush the history rows so far.
    """
    if weights.data > 0 and labels is None:
        raise ConfigError("the data loss needs labeled pairs; generate labels first")
    stop = cfg.epochs if stop is None else stop
    state = state or AdamState.zeros_like(model.params)
    names = list(model.params)
    history = []
    n = len(functions)
    for it in range(start, stop):
        batch = sample_batch(problem, n, cfg, it, labels, weights)
        tape = Tape()
        bound = model.bind(functions.branch_inputs(batch.idx), tape)
        total, comps = composite_loss(bound, problem, batch, weights)
        value = float(ad.value_of(total))
        if not math.isfinite(value):
            raise TrainingDiverged(f"loss became non-finite at iteration {it} "
                                   f"(component {_diverged_component(comps)})")
        grads = tape.gradient(total, names)
        lr = lr_at(cfg, it)
        adam_step(model.params, grads, state, lr)
        row = {"iteration": it, "lr": lr, "total": value, **comps}
        history.append(row)
        if log is not None:
            log(row)
        if checkpoint_path and cfg.checkpoint_every and (it + 1) % cfg.checkpoint_every == 0:
            save_checkpoint(checkpoint_path, model, state, it + 1)
            if on_checkpoint is not None:
                on_checkpoint(history)
    return model, history, state


def window_means(values, window: int = 500) -> np.ndarray:
    """Means of consecutive non-overlapping windows (a trailing partial window is dropped)."""
    v = np.asarray(values, dtype=np.float64)
    k = len(v) // window
    return v[:k * window].reshape(k, window).mean(axis=1)


def moving_average_nonincreasing(values, window: int = 500) -> bool:
    means = window_means(values, window)
    return bool(np.all(np.diff(means) <= 0))
