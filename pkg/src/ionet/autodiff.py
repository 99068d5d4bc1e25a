"""Small dense-tensor autodiff: a reverse-mode tape plus forward second-order jets.

Every operation on a :class:`Tensor` that belongs to a :class:`Tape` is
recorded as a node.  Nodes are appended in creation order, which is a valid
topological order, so the backward pass is a single reverse sweep.

Spatial derivatives of a network are obtained by pushing *jets* (value,
first and second directional derivatives) forward through the layers.  The
jet arithmetic is built from the same recorded operations, so parameter
gradients of a PDE residual come out of the ordinary backward pass
(reverse-over-forward, no nested tapes).
"""
from __future__ import annotations

import struct
from collections import OrderedDict
from dataclasses import dataclass
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np


class DimensionError(ValueError):
    """Shape mismatch inside a network evaluation."""


class ContractError(ValueError):
    """A caller violated an operation's precondition."""


class UnsupportedActivation(ValueError):
    pass


# --------------------------------------------------------------------------
# operation registry: name -> (forward, vjp)
# vjp(g, out, *inputs, **attrs) returns one gradient (or None) per input
# --------------------------------------------------------------------------

def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    if g.shape == shape:
        return g
    ndim_extra = g.ndim - len(shape)
    if ndim_extra > 0:
        g = g.sum(axis=tuple(range(ndim_extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _matmul_vjp(g, out, a, b):
    if a.ndim == 1 or b.ndim == 1:
        a2 = a if a.ndim > 1 else a[None, :]
        b2 = b if b.ndim > 1 else b[:, None]
        g2 = g.reshape(np.matmul(a2, b2).shape)
        ga = np.matmul(g2, np.swapaxes(b2, -1, -2)).reshape(a2.shape)
        gb = np.matmul(np.swapaxes(a2, -1, -2), g2).reshape(b2.shape)
        return _unbroadcast(ga, a2.shape).reshape(a.shape), _unbroadcast(gb, b2.shape).reshape(b.shape)
    ga = np.matmul(g, np.swapaxes(b, -1, -2))
    gb = np.matmul(np.swapaxes(a, -1, -2), g)
    return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)


def _sum_vjp(g, out, a, axis=None, keepdims=False):
    if axis is not None and not keepdims:
        g = np.expand_dims(g, axis)
    return (np.broadcast_to(g, a.shape).copy(),)


def _getitem_vjp(g, out, a, index=None):
    ga = np.zeros_like(a)
    np.add.at(ga, index, g)
    return (ga,)


def _stack_vjp(g, out, *arrays, axis=0):
    return tuple(np.take(g, i, axis=axis) for i in range(len(arrays)))


_OPS: dict[str, tuple[Callable, Callable]] = {
    "add": (np.add, lambda g, o, a, b: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape))),
    "sub": (np.subtract, lambda g, o, a, b: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape))),
    "mul": (np.multiply, lambda g, o, a, b: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape))),
    "div": (np.divide, lambda g, o, a, b: (_unbroadcast(g / b, a.shape), _unbroadcast(-g * o / b, b.shape))),
    "neg": (np.negative, lambda g, o, a: (-g,)),
    "square": (np.square, lambda g, o, a: (2.0 * a * g,)),
    "tanh": (np.tanh, lambda g, o, a: (g * (1.0 - o * o),)),
    "relu": (lambda a: np.maximum(a, 0.0), lambda g, o, a: (g * (a > 0),)),
    "exp": (np.exp, lambda g, o, a: (g * o,)),
    "matmul": (np.matmul, _matmul_vjp),
    "sum": (lambda a, axis=None, keepdims=False: np.sum(a, axis=axis, keepdims=keepdims), _sum_vjp),
    "reshape": (lambda a, shape=None: np.reshape(a, shape), lambda g, o, a, shape=None: (g.reshape(a.shape),)),
    "swapaxes": (lambda a, axes=(-1, -2): np.swapaxes(a, *axes),
                 lambda g, o, a, axes=(-1, -2): (np.swapaxes(g, *axes),)),
    "getitem": (lambda a, index=None: a[index], _getitem_vjp),
    "stack": (lambda *arrays, axis=0: np.stack(arrays, axis=axis), _stack_vjp),
}


class Tape:
    """Linear record of operations for one scalar objective.

    A tape is single-threaded; build one per loss evaluation.
    """

    def __init__(self):
        self.nodes: list[Tensor] = []

    def __len__(self):
        return len(self.nodes)

    def _push(self, t: "Tensor") -> "Tensor":
        t.index = len(self.nodes)
        self.nodes.append(t)
        return t

    def param(self, name: str, value: np.ndarray) -> "Tensor":
        return self._push(Tensor(np.asarray(value, dtype=np.float64), tape=self, name=name))

    def const(self, value) -> "Tensor":
        return self._push(Tensor(np.asarray(value, dtype=np.float64), tape=self))

    def params(self, store: "ParamStore") -> dict[str, "Tensor"]:
        return {k: self.param(k, v) for k, v in store.items()}

    def gradient(self, loss: "Tensor", names: Iterable[str] | None = None) -> dict[str, np.ndarray]:
        """Reverse sweep from ``loss``; returns d loss / d param for every named leaf.

        Parameters that do not reach the loss get an exact zero array.
        """
        if loss.tape is not self:
            raise ContractError("loss node was not recorded on this tape")
        if loss.data.size != 1:
            raise ContractError(f"gradient needs a scalar loss, got shape {loss.shape}")
        grads: dict[int, np.ndarray] = {loss.index: np.ones_like(loss.data)}
        for node in reversed(self.nodes[: loss.index + 1]):
            g = grads.pop(node.index, None) if node.op is not None else grads.get(node.index)
            if g is None or node.op is None:
                continue
            _, vjp = _OPS[node.op]
            in_grads = vjp(g, node.data, *(p.data for p in node.parents), **node.attrs)
            for p, pg in zip(node.parents, in_grads):
                if pg is None:
                    continue
                if p.index in grads:
                    grads[p.index] = grads[p.index] + pg
                else:
                    grads[p.index] = pg
        out: dict[str, np.ndarray] = {}
        for node in self.nodes:
            if node.name is not None:
                g = grads.get(node.index)
                prev = out.get(node.name)
                g = np.zeros_like(node.data) if g is None else g
                out[node.name] = g if prev is None else prev + g
        if names is not None:
            out = {k: out.get(k) for k in names}
        return out

    def replay(self, overrides: Mapping[str, np.ndarray] | None = None) -> list[np.ndarray]:
        """Recompute every node from the leaves; optional new parameter values."""
        values: list[np.ndarray] = []
        overrides = overrides or {}
        for node in self.nodes:
            if node.op is None:
                v = overrides.get(node.name, node.data) if node.name is not None else node.data
            else:
                fwd, _ = _OPS[node.op]
                v = fwd(*(values[p.index] for p in node.parents), **node.attrs)
            values.append(np.asarray(v, dtype=np.float64))
        return values


class Tensor:
    """Dense float64 array, optionally recorded on a tape."""

    __array_priority__ = 100

    def __init__(self, data, tape: Tape | None = None, op: str | None = None,
                 parents: Sequence["Tensor"] = (), attrs: dict | None = None,
                 name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = tape
        self.op = op
        self.parents = tuple(parents)
        self.attrs = attrs or {}
        self.name = name
        self.index = -1

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, name={self.name})"

    def numpy(self) -> np.ndarray:
        return self.data

    # arithmetic -----------------------------------------------------------
    def __add__(self, o): return apply("add", self, o)
    def __radd__(self, o): return apply("add", o, self)
    def __sub__(self, o): return apply("sub", self, o)
    def __rsub__(self, o): return apply("sub", o, self)
    def __mul__(self, o): return apply("mul", self, o)
    def __rmul__(self, o): return apply("mul", o, self)
    def __truediv__(self, o): return apply("div", self, o)
    def __rtruediv__(self, o): return apply("div", o, self)
    def __neg__(self): return apply("neg", self)
    def __matmul__(self, o): return apply("matmul", self, o)
    def __rmatmul__(self, o): return apply("matmul", o, self)
    def __getitem__(self, index): return apply("getitem", self, index=index)

    def sum(self, axis=None, keepdims=False):
        return apply("sum", self, axis=axis, keepdims=keepdims)

    def mean(self):
        return apply("sum", self) * (1.0 / self.data.size)

    def reshape(self, *shape):
        shape = shape[0] if len(shape) == 1 and isinstance(shape[0], tuple) else shape
        return apply("reshape", self, shape=tuple(shape))

    @property
    def mT(self):
        return apply("swapaxes", self, axes=(-1, -2))


def _as_tensor(x, tape: Tape | None) -> Tensor:
    if isinstance(x, Tensor):
        if x.tape is tape or tape is None:
            return x
        if x.tape is not None:
            raise ContractError("operands were recorded on different tapes")
        x = x.data
    t = Tensor(x)
    if tape is not None:
        tape._push(t)
    return t


def apply(op: str, *inputs, **attrs) -> Tensor:
    tape = next((x.tape for x in inputs if isinstance(x, Tensor) and x.tape is not None), None)
    parents = [_as_tensor(x, tape) for x in inputs]
    fwd, _ = _OPS[op]
    out = Tensor(fwd(*(p.data for p in parents), **attrs), tape=tape, op=op, parents=parents, attrs=attrs)
    if tape is not None:
        tape._push(out)
    return out


def tanh(x): return apply("tanh", x)
def relu(x): return apply("relu", x)
def square(x): return apply("square", x)
def exp(x): return apply("exp", x)
def matmul(a, b): return apply("matmul", a, b)
def stack(xs, axis=0): return apply("stack", *xs, axis=axis)


def value_of(x) -> np.ndarray:
    return x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)


# --------------------------------------------------------------------------
# parameters
# --------------------------------------------------------------------------

class ParamStore(OrderedDict):
    """Named float64 arrays with a fixed ordering (insertion order)."""

    def count(self) -> int:
        return int(sum(v.size for v in self.values()))

    def flatten(self) -> np.ndarray:
        if not self:
            return np.zeros(0)
        return np.concatenate([np.ravel(v) for v in self.values()])

    def unflatten(self, flat: np.ndarray) -> "ParamStore":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size != self.count():
            raise ContractError(f"expected {self.count()} values, got {flat.size}")
        out, pos = ParamStore(), 0
        for k, v in self.items():
            out[k] = flat[pos:pos + v.size].reshape(v.shape).copy()
            pos += v.size
        return out

    def copy(self) -> "ParamStore":
        return ParamStore((k, v.copy()) for k, v in self.items())


def layer_sizes(n_in: int, n_out: int, depth: int, width: int) -> list[int]:
    """Sizes for ``depth`` weight layers with ``depth - 1`` hidden layers of ``width``."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    return [n_in] + [width] * (depth - 1) + [n_out]


def fnn_param_count(arch: Sequence[int]) -> int:
    return sum(arch[i] * arch[i + 1] + arch[i + 1] for i in range(len(arch) - 1))


def init_fnn(store: ParamStore, prefix: str, arch: Sequence[int], rng: np.random.Generator) -> None:
    """Glorot-uniform weights, zero biases."""
    for l in range(len(arch) - 1):
        limit = np.sqrt(6.0 / (arch[l] + arch[l + 1]))
        store[f"{prefix}.W{l}"] = rng.uniform(-limit, limit, size=(arch[l], arch[l + 1]))
        store[f"{prefix}.b{l}"] = np.zeros(arch[l + 1])


# --------------------------------------------------------------------------
# networks
# --------------------------------------------------------------------------

_ACTIVATIONS = {"tanh": tanh, "relu": relu}


def _layer(params: Mapping[str, Any], prefix: str, l: int):
    try:
        return params[f"{prefix}.W{l}"], params[f"{prefix}.b{l}"]
    except KeyError as exc:
        raise DimensionError(f"missing parameters for layer {l} of '{prefix}'") from exc


def fnn_forward(params: Mapping[str, Any], x, arch: Sequence[int], activation: str = "tanh",
                prefix: str = "net"):
    """Evaluate a fully connected net on ``x`` of shape (..., arch[0]).

    ``params`` may hold numpy arrays or tape tensors; the result has the
    matching type.  The activation is applied after every layer but the last.
    """
    if activation not in _ACTIVATIONS:
        raise UnsupportedActivation(activation)
    act = _ACTIVATIONS[activation]
    h = x
    n_layers = len(arch) - 1
    for l in range(n_layers):
        W, b = _layer(params, prefix, l)
        if value_of(W).shape != (arch[l], arch[l + 1]):
            raise DimensionError(
                f"layer {l}: weight shape {value_of(W).shape} != {(arch[l], arch[l + 1])}")
        if value_of(h).shape[-1] != arch[l]:
            raise DimensionError(f"layer {l}: input width {value_of(h).shape[-1]} != {arch[l]}")
        h = matmul(h, W) + b
        if l < n_layers - 1:
            h = act(h)
    return value_of(h) if _all_plain(params, x) else h


def _all_plain(params, x) -> bool:
    return not isinstance(x, Tensor) and not any(isinstance(v, Tensor) for v in params.values())


@dataclass
class Jet2:
    """Value with first and second derivative along one coordinate."""

    value: Any
    d1: Any
    d2: Any


@dataclass
class NetJets:
    """Output of :func:`fnn_jets` for P points in d dimensions.

    ``value`` has shape (P, K); ``d1`` and ``d2`` have shape (d, P, K) with
    ``d1[j] = du/dx_j`` and ``d2[j] = d2u/dx_j^2``.  Entries are tensors when
    evaluated on a tape.  ``d2`` is ``None`` when second derivatives were not
    requested.
    """

    value: Any
    d1: Any = None
    d2: Any = None


def fnn_jets(params: Mapping[str, Any], x: np.ndarray, arch: Sequence[int],
             activation: str = "tanh", prefix: str = "net", order: int = 2,
             coords: Sequence[int] | None = None) -> NetJets:
    """Forward-propagate second-order jets along each coordinate of ``x``.

    One jet stream per coordinate, stacked along a leading axis, so the cost
    is that of (1 + 2 d) forward passes.  Only tanh is twice differentiable;
    relu supports ``order=1`` with the almost-everywhere derivative 1[z > 0].
    """
    if order == 0:
        return NetJets(fnn_forward(params, x, arch, activation, prefix))
    if activation not in ("tanh", "relu") or (activation == "relu" and order >= 2):
        raise UnsupportedActivation(
            f"second spatial derivatives need a smooth activation, got '{activation}'")
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2:
        raise DimensionError("jets expect points of shape (P, d)")
    P, d = x.shape
    coords = list(range(d)) if coords is None else list(coords)
    n_layers = len(arch) - 1
    h, dh, d2h = x, None, None
    for l in range(n_layers):
        W, b = _layer(params, prefix, l)
        if value_of(W).shape != (arch[l], arch[l + 1]):
            raise DimensionError(
                f"layer {l}: weight shape {value_of(W).shape} != {(arch[l], arch[l + 1])}")
        z = matmul(h, W) + b
        if l == 0:
            # d x / d x_j = e_j, so the first-layer tangent is row j of W
            dz = (W if isinstance(W, Tensor) else Tensor(W))[coords].reshape(len(coords), 1, arch[1])
            d2z = None
        else:
            dz = matmul(dh, W)
            d2z = matmul(d2h, W) if (d2h is not None) else None
        if l < n_layers - 1 and activation == "relu":
            mask = (value_of(z) > 0).astype(np.float64)
            h = relu(z)
            dh = dz * mask
        elif l < n_layers - 1:
            h = tanh(z)
            s = 1.0 - h * h
            dh = s * dz
            if order >= 2:
                curv = (-2.0) * h * s * (dz * dz)
                d2h = curv if d2z is None else s * d2z + curv
        else:
            h, dh, d2h = z, dz, d2z
    if dh is not None and value_of(dh).shape[1] != P:
        dh = dh + np.zeros((1, P, 1))
    if order >= 2 and d2h is None:
        d2h = np.zeros((len(coords), P, arch[-1]))
    if _all_plain(params, x):
        return NetJets(value_of(h), value_of(dh), value_of(d2h) if order >= 2 else None)
    return NetJets(h, dh, d2h if order >= 2 else None)


def spatial_jet(params: Mapping[str, Any], x, j: int, arch: Sequence[int],
                activation: str = "tanh", prefix: str = "net") -> Jet2:
    """u(x), du/dx_j, d2u/dx_j^2 of a scalar-output net at a single point."""
    if activation != "tanh":
        raise UnsupportedActivation(
            f"spatial derivatives need a smooth activation, got '{activation}'")
    x = np.atleast_1d(np.asarray(x, dtype=np.float64))
    if not 0 <= j < x.size:
        raise ContractError(f"coordinate {j} out of range for a {x.size}-dimensional point")
    jets = fnn_jets(params, x[None, :], arch, activation, prefix, order=2, coords=[j])
    val, d1, d2 = jets.value[0], jets.d1[0, 0], jets.d2[0, 0]
    if arch[-1] == 1:
        val, d1, d2 = val[0], d1[0], d2[0]
        if not isinstance(val, Tensor):
            val, d1, d2 = float(val), float(d1), float(d2)
    return Jet2(val, d1, d2)


def grad_params(tape: Tape, loss: Tensor) -> dict[str, np.ndarray]:
    return tape.gradient(loss)


# --------------------------------------------------------------------------
# checkpoints
# --------------------------------------------------------------------------

CHECKPOINT_MAGIC = "IONET-CHECKPOINT 1"


def save_arrays(path, arrays: Mapping[str, np.ndarray], header: Mapping[str, str] | None = None) -> None:
    """Text manifest followed by raw little-endian float64 payloads."""
    lines = [CHECKPOINT_MAGIC, "endian little", "dtype float64"]
    for k, v in (header or {}).items():
        lines.append(f"meta {k} {v}")
    for name, arr in arrays.items():
        shape = "x".join(str(s) for s in np.shape(arr)) or "scalar"
        lines.append(f"array {name} {shape}")
    lines.append("end")
    manifest = ("\n".join(lines) + "\n").encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        for arr in arrays.values():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_arrays(path) -> tuple[OrderedDict, dict[str, str]]:
    with open(path, "rb") as fh:
        (n,) = struct.unpack("<Q", fh.read(8))
        manifest = fh.read(n).decode("utf-8").splitlines()
        if not manifest or manifest[0] != CHECKPOINT_MAGIC:
            raise ValueError(f"{path}: not a checkpoint file")
        meta: dict[str, str] = {}
        specs = []
        for line in manifest[1:]:
            if line.startswith("meta "):
                _, k, v = line.split(" ", 2)
                meta[k] = v
            elif line.startswith("array "):
                _, name, shape = line.split(" ")
                dims = () if shape == "scalar" else tuple(int(s) for s in shape.split("x"))
                specs.append((name, dims))
        arrays = OrderedDict()
        for name, dims in specs:
            count = int(np.prod(dims)) if dims else 1
            arrays[name] = np.frombuffer(fh.read(8 * count), dtype="<f8").astype(np.float64).reshape(dims)
    return arrays, meta
