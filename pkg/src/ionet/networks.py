"""Interfaced operator network (IONet) and the single-trunk DeepONet baseline.

Both models merge their branch outputs with a Hadamard product and take the
sum against a trunk output plus a scalar bias::

    G^i(a)(x) = sum_k t^i_k(x) * prod_j b_{j,k}(sensors_j) + b0^i

IONet keeps one trunk net and one bias per subdomain ``i`` and one branch
net per (input channel, subdomain) pair; the prediction at ``x`` uses the
trunk of the subdomain containing ``x``.  DeepONet has one branch fed with
all sensors concatenated and a single trunk.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Any, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ParamStore, Tape, Tensor, value_of
from .geometry import EXTERIOR, INTERFACE, Geometry, GeometryError


class DomainError(ValueError):
    pass


@dataclass
class ModelConfig:
    kind: str = "ionet"
    branch_sizes: list = field(default_factory=lambda: [50, 50])
    n_subdomains: int = 2
    dim: int = 1
    depth: int = 5
    width: int = 100
    latent: int | None = None
    activation: str = "tanh"
    trunk_box: list | None = None  # [lo, hi] corners mapped onto [-1, 1]^dim

    def __post_init__(self):
        if self.kind not in ("ionet", "deeponet"):
            raise ValueError(f"unknown model kind '{self.kind}'")
        if self.kind == "deeponet" and len(self.branch_sizes) != 1:
            self.branch_sizes = [int(sum(self.branch_sizes))]
        self.branch_sizes = [int(m) for m in self.branch_sizes]
        if self.K < 1:
            raise ValueError("latent width must be >= 1")
        if self.trunk_box is not None:
            lo, hi = (np.asarray(v, dtype=np.float64).reshape(-1) for v in self.trunk_box)
            if lo.shape != (self.dim,) or hi.shape != (self.dim,) or np.any(hi <= lo):
                raise ValueError("trunk_box needs two corners of length dim with hi > lo")
            self.trunk_box = [lo.tolist(), hi.tolist()]

    def trunk_map(self):
        """(shift, scale) with trunk input (x - shift) * scale - 1."""
        if self.trunk_box is None:
            return None
        lo, hi = np.asarray(self.trunk_box[0]), np.asarray(self.trunk_box[1])
        return lo, 2.0 / (hi - lo)

    @property
    def K(self) -> int:
        return int(self.latent or self.width)

    @property
    def n_trunks(self) -> int:
        return 1 if self.kind == "deeponet" else self.n_subdomains

    def branch_arch(self, j: int) -> list[int]:
        return ad.layer_sizes(self.branch_sizes[j], self.K, self.depth, self.width)

    def trunk_arch(self) -> list[int]:
        return ad.layer_sizes(self.dim, self.K, self.depth, self.width)

    def param_count(self) -> int:
        n = sum(ad.fnn_param_count(self.branch_arch(j)) for j in range(len(self.branch_sizes)))
        return n + self.n_trunks * (ad.fnn_param_count(self.trunk_arch()) + 1)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class FieldJet:
    """Batch field values on P points for N input functions.

    ``value`` has shape (N, P); ``grad[j]`` and ``second[j]`` hold the first
    and pure second derivative along coordinate ``j`` (also (N, P)).
    Entries may be tape tensors or arrays; (1, P) arrays broadcast.
    """

    value: Any
    grad: list | None = None
    second: list | None = None

    def laplacian(self):
        out = self.second[0]
        for s in self.second[1:]:
            out = out + s
        return out


class OperatorNetwork:
    def __init__(self, config: ModelConfig, params: ParamStore):
        self.config = config
        self.params = params

    # construction -----------------------------------------------------------
    @classmethod
    def initialize(cls, config: ModelConfig, seed: int = 0) -> "OperatorNetwork":
        rng = np.random.default_rng(seed)
        store = ParamStore()
        for j in range(len(config.branch_sizes)):
            ad.init_fnn(store, f"branch{j}", config.branch_arch(j), rng)
        for i in range(config.n_trunks):
            ad.init_fnn(store, f"trunk{i}", config.trunk_arch(), rng)
        for i in range(config.n_trunks):
            store[f"bias{i}"] = np.zeros(1)
        return cls(config, store)

    @property
    def n_params(self) -> int:
        return self.params.count()

    def trunk_index(self, side: int) -> int:
        if self.config.kind == "deeponet":
            return 0
        if not 1 <= side <= self.config.n_subdomains:
            raise DomainError(f"no subdomain {side}")
        return side - 1

    # evaluation -------------------------------------------------------------
    def bind(self, inputs: Sequence[np.ndarray], tape: Tape | None = None) -> "BoundOperator":
        """Fix the input functions (branch inputs, one (N, m_j) array per branch)."""
        p = tape.params(self.params) if tape is not None else self.params
        if self.config.kind == "deeponet" and len(inputs) > 1:
            # the single branch sees every sensor, concatenated
            inputs = [np.concatenate([np.atleast_2d(v) for v in inputs], axis=1)]
        if len(inputs) != len(self.config.branch_sizes):
            raise ad.DimensionError(
                f"expected {len(self.config.branch_sizes)} branch inputs, got {len(inputs)}")
        prod = None
        for j, x in enumerate(inputs):
            x = np.atleast_2d(np.asarray(x, dtype=np.float64))
            if x.shape[1] != self.config.branch_sizes[j]:
                raise ad.DimensionError(
                    f"branch {j}: got {x.shape[1]} sensor values, expected {self.config.branch_sizes[j]}")
            b = ad.fnn_forward(p, x, self.config.branch_arch(j), self.config.activation, f"branch{j}")
            prod = b if prod is None else prod * b
        return BoundOperator(self, p, prod)

    def predict(self, inputs, points, sides) -> np.ndarray:
        """Plain evaluation: (N, P) predictions, trunk chosen per point by ``sides``."""
        bound = self.bind(inputs)
        points = np.asarray(points, dtype=np.float64).reshape(len(points), self.config.dim)
        sides = np.asarray(sides, dtype=int)
        out = np.empty((len(value_of(bound.branch)), len(points)))
        for s in np.unique(sides):
            mask = sides == s
            out[:, mask] = value_of(bound.evaluate(int(s), points[mask]).value)
        return out


class IONet(OperatorNetwork):
    pass


class DeepONet(OperatorNetwork):
    pass


class BoundOperator:
    """An operator network with its input functions fixed: a differentiable field."""

    def __init__(self, model: OperatorNetwork, params, branch):
        self.model, self.p, self.branch = model, params, branch

    def evaluate(self, side: int, points, order: int = 0) -> FieldJet:
        cfg = self.model.config
        i = self.model.trunk_index(side)
        pts = np.asarray(points, dtype=np.float64).reshape(len(points), cfg.dim)
        tmap = cfg.trunk_map()
        scale = np.ones(cfg.dim)
        if tmap is not None:
            shift, scale = tmap
            pts = (pts - shift) * scale - 1.0
        jets = ad.fnn_jets(self.p, pts, cfg.trunk_arch(), cfg.activation, f"trunk{i}",
                           order=order)
        B = self.branch if isinstance(self.branch, Tensor) else Tensor(self.branch)
        value = ad.matmul(B, _T(jets.value)) + self.p[f"bias{i}"]
        if order == 0:
            return FieldJet(_plain(value, self))
        d1 = ad.matmul(B, _T(jets.d1))  # (d, N, P)
        # chain rule through the input map
        grad = [d1[j] * float(scale[j]) for j in range(cfg.dim)]
        second = None
        if order >= 2:
            d2 = ad.matmul(B, _T(jets.d2))
            second = [d2[j] * float(scale[j] ** 2) for j in range(cfg.dim)]
        f = lambda v: _plain(v, self)
        return FieldJet(f(value), [f(g) for g in grad], None if second is None else [f(s) for s in second])


def _T(x):
    return x.mT if isinstance(x, Tensor) else np.swapaxes(x, -1, -2)


def _plain(x, bound: BoundOperator):
    taped = any(isinstance(v, Tensor) and v.tape is not None for v in bound.p.values())
    return x if taped else value_of(x)


def build_model(config: ModelConfig, seed: int = 0) -> OperatorNetwork:
    cls = DeepONet if config.kind == "deeponet" else IONet
    return cls.initialize(config, seed)


def _single(inputs) -> list[np.ndarray]:
    return [np.asarray(v, dtype=np.float64).reshape(1, -1) for v in inputs]


def _region(geom: Geometry, x, side):
    region = geom.classify(x)
    if region == EXTERIOR:
        raise DomainError(f"point {np.ravel(x)} lies outside the domain")
    if region == INTERFACE:
        if side is None:
            raise DomainError("point lies on the interface; pass side= to choose a suboperator")
        region = side
    return region


def ionet_forward(model: OperatorNetwork, sensors: Sequence, x, geom: Geometry,
                  side: int | None = None) -> float:
    """Prediction at one point for one input function (``sensors``: one vector per branch)."""
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    region = _region(geom, x, side)
    return float(model.predict(_single(sensors), x.reshape(1, -1), [region])[0, 0])


def deeponet_forward(model: OperatorNetwork, sensors, x) -> float:
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    return float(model.predict(_single([sensors]), x.reshape(1, -1), [1])[0, 0])


def ionet_jump(model: OperatorNetwork, sensors: Sequence, x_gamma, normal,
               coeff_inner: float, coeff_outer: float, inner: int = 1,
               outer: int = 2) -> tuple[float, float]:
    """Value jump G^outer - G^inner and flux jump a+ dG^outer/dn - a- dG^inner/dn."""
    x = np.atleast_1d(np.asarray(x_gamma, dtype=np.float64)).reshape(1, -1)
    n = np.atleast_1d(np.asarray(normal, dtype=np.float64))
    if not np.all(np.isfinite(n)) or abs(np.linalg.norm(n) - 1.0) > 1e-8:
        raise GeometryError("interface normal is undefined or not unit length")
    bound = model.bind(_single(sensors))
    jin = bound.evaluate(inner, x, order=1)
    jout = bound.evaluate(outer, x, order=1)
    dn_in = sum(value_of(jin.grad[j])[0, 0] * n[j] for j in range(len(n)))
    dn_out = sum(value_of(jout.grad[j])[0, 0] * n[j] for j in range(len(n)))
    value_jump = value_of(jout.value)[0, 0] - value_of(jin.value)[0, 0]
    return float(value_jump), float(coeff_outer * dn_out - coeff_inner * dn_in)


def save_model(path, model: OperatorNetwork, extra: dict | None = None, meta: dict | None = None) -> None:
    import json
    arrays = dict(model.params)
    arrays.update(extra or {})
    header = {"model": json.dumps(model.config.to_dict(), sort_keys=True)}
    header.update(meta or {})
    ad.save_arrays(path, arrays, header)


def load_model(path) -> tuple[OperatorNetwork, dict, dict]:
    import json
    arrays, meta = ad.load_arrays(path)
    config = ModelConfig(**json.loads(meta["model"]))
    ref = OperatorNetwork.initialize(config, 0).params
    params = ParamStore((k, arrays[k].reshape(v.shape)) for k, v in ref.items())
    extra = {k: v for k, v in arrays.items() if k not in params}
    return build_model_from(config, params), extra, meta


def build_model_from(config: ModelConfig, params: ParamStore) -> OperatorNetwork:
    cls = DeepONet if config.kind == "deeponet" else IONet
    return cls(config, params)
