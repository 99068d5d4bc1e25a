"""Training objectives for operator networks on interface problems.

Every term is an arithmetic mean of squared deviations over its point set
and over the input functions of the batch.  A *field* is anything with an
``evaluate(side, points, order) -> FieldJet`` method: a bound operator
network, or a closed-form stub for testing.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, value_of
from .fields import Channel
from .geometry import Geometry, InterfaceSample
from .networks import FieldJet


class ConfigError(ValueError):
    pass


@dataclass
class ProblemSpec:
    """One parametric interface-problem family, -div(a grad u) + b u = f.

    ``jump_value`` / ``jump_flux`` are evaluated with the interface label as
    their region; ``boundary`` with the subdomain owning the boundary point.
    """

    geometry: Geometry
    coefficient: Channel
    source: Channel | None = None
    reaction: Channel | None = None
    nonlinear_reaction: Callable | None = None
    jump_value: Channel | None = None
    jump_flux: Channel | None = None
    boundary: Channel | None = None


@dataclass
class LossWeights:
    residual: list = field(default_factory=lambda: [1.0, 1.0])
    interface: float = 10.0
    boundary: float = 100.0
    physics: float = 1.0
    data: float = 0.0
    fd_epsilon: float = 1e-5

    def __post_init__(self):
        self.residual = [float(v) for v in self.residual]
        vals = self.residual + [self.interface, self.boundary, self.physics, self.data]
        if any(v < 0 for v in vals):
            raise ConfigError(f"loss weights must be nonnegative: {vals}")
        if self.fd_epsilon <= 0:
            raise ConfigError("finite-difference epsilon must be positive")

    @classmethod
    def regime(cls, name: str, **kw) -> "LossWeights":
        """'pi' -> physics only, 'dd' -> data only, 'composite' -> both."""
        table = {"pi": (1.0, 0.0), "dd": (0.0, 1.0), "composite": (1.0, 1.0)}
        if name not in table:
            raise ConfigError(f"unknown loss regime '{name}'")
        phys, data = table[name]
        return cls(physics=phys, data=data, **kw)


@dataclass
class CollocationBatch:
    """Points shared by every function ``idx`` of one minibatch."""

    idx: np.ndarray
    residual: dict = field(default_factory=dict)
    boundary: np.ndarray | None = None
    boundary_region: np.ndarray | None = None
    interface: InterfaceSample | None = None
    data_points: np.ndarray | None = None
    data_sides: np.ndarray | None = None
    targets: np.ndarray | None = None


def _mean_sq(x):
    if isinstance(x, Tensor):
        return ad.square(x).mean()
    return float(np.mean(np.square(x)))


def _sum_sq(x):
    if isinstance(x, Tensor):
        return ad.square(x).sum()
    return float(np.sum(np.square(x)))


def _directional(jet: FieldJet, normals: np.ndarray):
    out = None
    for j in range(normals.shape[1]):
        term = jet.grad[j] * normals[None, :, j]
        out = term if out is None else out + term
    return out


def residual_loss(u, problem: ProblemSpec, batch: CollocationBatch, i: int):
    """Mean squared PDE residual at the subdomain-``i`` collocation points."""
    pts = batch.residual[i]
    regions = problem.geometry.classify_many(pts)
    if np.any(regions != i):
        raise ad.ContractError(f"residual points not inside subdomain {i}")
    idx = batch.idx
    jet = u.evaluate(i, pts, order=2)
    a = problem.coefficient.value(idx, i, pts)
    ga = problem.coefficient.gradient(idx, i, pts)
    flux_div = a * jet.laplacian()
    for j in range(pts.shape[1]):
        flux_div = flux_div + ga[..., j] * jet.grad[j]
    res = -flux_div
    if problem.reaction is not None:
        res = res + problem.reaction.value(idx, i, pts) * jet.value
    if problem.nonlinear_reaction is not None:
        res = res + problem.nonlinear_reaction(jet.value)
    if problem.source is not None:
        res = res - problem.source.value(idx, i, pts)
    return _mean_sq(res + np.zeros((len(np.atleast_1d(idx)), len(pts))))


def boundary_loss(u, problem: ProblemSpec, batch: CollocationBatch):
    pts, regions = batch.boundary, batch.boundary_region
    total, count = 0.0, 0
    for r in np.unique(regions):
        mask = regions == r
        dev = u.evaluate(int(r), pts[mask]).value - problem.boundary.value(batch.idx, int(r), pts[mask])
        dev = dev + np.zeros((len(np.atleast_1d(batch.idx)), int(mask.sum())))
        total = total + _sum_sq(dev)
        count += value_of(dev).size
    return total * (1.0 / count)


def _jump_data(problem, idx, label, pts, n):
    gd = problem.jump_value.value(idx, label, pts) if problem.jump_value is not None else np.zeros((1, n))
    gn = problem.jump_flux.value(idx, label, pts) if problem.jump_flux is not None else np.zeros((1, n))
    return gd, gn


def _interface_groups(sample: InterfaceSample):
    keys = sorted(set(zip(sample.label.tolist(), sample.inner.tolist(), sample.outer.tolist())))
    for label, inner, outer in keys:
        mask = (sample.label == label) & (sample.inner == inner) & (sample.outer == outer)
        yield label, inner, outer, mask


def interface_losses(u, problem: ProblemSpec, batch: CollocationBatch):
    """Mean squared violation of the value jump and flux jump conditions."""
    idx = batch.idx
    N = len(np.atleast_1d(idx))
    sd, sn, count = 0.0, 0.0, 0
    for label, inner, outer, mask in _interface_groups(batch.interface):
        pts, normals = batch.interface.points[mask], batch.interface.normals[mask]
        jin = u.evaluate(inner, pts, order=1)
        jout = u.evaluate(outer, pts, order=1)
        a_in = problem.coefficient.value(idx, inner, pts)
        a_out = problem.coefficient.value(idx, outer, pts)
        gd, gn = _jump_data(problem, idx, label, pts, len(pts))
        pad = np.zeros((N, len(pts)))
        dvalue = jout.value - jin.value - gd + pad
        dflux = a_out * _directional(jout, normals) - a_in * _directional(jin, normals) - gn + pad
        sd = sd + _sum_sq(dvalue)
        sn = sn + _sum_sq(dflux)
        count += N * len(pts)
    return sd * (1.0 / count), sn * (1.0 / count)


def pideeponet_interface_loss(u, problem: ProblemSpec, batch: CollocationBatch, eps: float = 1e-5):
    """Interface penalties from finite differences of a continuous (single-trunk) field.

    The value jump is G(x + eps n) - G(x - eps n); the flux jump uses the
    one-sided quotients a+ (G(x + eps n) - G(x)) / eps - a- (G(x) - G(x - eps n)) / eps.
    """
    if eps <= 0:
        raise ConfigError("epsilon must be positive")
    idx = batch.idx
    N = len(np.atleast_1d(idx))
    sd, sn, count = 0.0, 0.0, 0
    for label, inner, outer, mask in _interface_groups(batch.interface):
        pts, normals = batch.interface.points[mask], batch.interface.normals[mask]
        plus = u.evaluate(outer, pts + eps * normals).value
        mid = u.evaluate(inner, pts).value
        minus = u.evaluate(inner, pts - eps * normals).value
        a_in = problem.coefficient.value(idx, inner, pts)
        a_out = problem.coefficient.value(idx, outer, pts)
        gd, gn = _jump_data(problem, idx, label, pts, len(pts))
        pad = np.zeros((N, len(pts)))
        dvalue = plus - minus - gd + pad
        dflux = a_out * ((plus - mid) * (1.0 / eps)) - a_in * ((mid - minus) * (1.0 / eps)) - gn + pad
        sd = sd + _sum_sq(dvalue)
        sn = sn + _sum_sq(dflux)
        count += N * len(pts)
    return sd * (1.0 / count), sn * (1.0 / count)


def _single_trunk(u) -> bool:
    model = getattr(u, "model", None)
    return model is not None and model.config.kind == "deeponet"


def physics_loss(u, problem: ProblemSpec, batch: CollocationBatch, w: LossWeights,
                 finite_difference_interface: bool | None = None):
    """Weighted residual, interface and boundary penalties.

    Returns ``(total, components)`` with components as floats keyed
    ``L_r1.. L_rI, L_GD, L_GN, L_b``.
    """
    fd = _single_trunk(u) if finite_difference_interface is None else finite_difference_interface
    comps: dict[str, float] = {}
    total = 0.0
    for i, lam in enumerate(w.residual, start=1):
        if lam == 0 or i not in batch.residual:
            continue
        term = residual_loss(u, problem, batch, i)
        comps[f"L_r{i}"] = float(value_of(term))
        total = total + lam * term
    if w.interface > 0 and batch.interface is not None and len(batch.interface):
        if fd:
            ld, ln = pideeponet_interface_loss(u, problem, batch, w.fd_epsilon)
        else:
            ld, ln = interface_losses(u, problem, batch)
        comps["L_GD"], comps["L_GN"] = float(value_of(ld)), float(value_of(ln))
        total = total + w.interface * (ld + ln)
    if w.boundary > 0 and batch.boundary is not None:
        lb = boundary_loss(u, problem, batch)
        comps["L_b"] = float(value_of(lb))
        total = total + w.boundary * lb
    return total, comps


def data_loss(u, batch: CollocationBatch):
    """Mean squared error against labeled targets at ``batch.data_points``."""
    pts, sides, targets = batch.data_points, batch.data_sides, batch.targets
    total, count = 0.0, 0
    for s in np.unique(sides):
        mask = sides == s
        dev = u.evaluate(int(s), pts[mask]).value - targets[:, mask]
        total = total + _sum_sq(dev)
        count += targets[:, mask].size
    return total * (1.0 / count)


def composite_loss(u, problem: ProblemSpec, batch: CollocationBatch, w: LossWeights):
    """physics weight * physics loss + data weight * data loss; zero-weight parts are skipped."""
    total, comps = 0.0, {}
    if w.physics > 0:
        phys, comps = physics_loss(u, problem, batch, w)
        total = total + w.physics * phys
    if w.data > 0:
        ld = data_loss(u, batch)
        comps["L_data"] = float(value_of(ld))
        total = total + w.data * ld
    return total, comps
