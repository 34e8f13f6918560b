"""Shared-layer policy/value network with exact reverse-mode gradients.

The network maps the six-feature observation through three shared
ReLU-activated affine layers, then splits into a policy branch (outputs
the Gaussian action mean and a raw standard deviation passed through
softplus plus a small floor) and a value branch (outputs the value
estimate).  Training objectives are built as small computation graphs of
:class:`Var` nodes over numpy arrays; ``backward`` accumulates exact
gradients into every leaf.  The scope is exactly this architecture, not a
general autodiff system.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field

import numpy as np

LOG_SQRT_2PI = 0.5 * math.log(2.0 * math.pi)

HIDDEN_DIMS = (32, 64, 128, 64, 32)
N_SHARED = 3
D_FLOOR = 1e-4


# ---------------------------------------------------------------------------
# reverse-mode tape


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


class Var:
    """Node in the computation graph: a float64 array plus gradient slot."""

    __slots__ = ("value", "grad", "_parents", "_backward")

    def __init__(self, value, parents=(), backward=None):
        self.value = np.asarray(value, dtype=float)
        self.grad = None
        self._parents = parents
        self._backward = backward

    def _accum(self, g):
        g = _unbroadcast(np.asarray(g, dtype=float), self.value.shape)
        self.grad = g if self.grad is None else self.grad + g


def _lift(x) -> Var:
    return x if isinstance(x, Var) else Var(np.asarray(x, dtype=float))


def add(a, b) -> Var:
    a, b = _lift(a), _lift(b)
    out = Var(a.value + b.value, (a, b))
    out._backward = lambda g: (a._accum(g), b._accum(g))
    return out


def sub(a, b) -> Var:
    a, b = _lift(a), _lift(b)
    out = Var(a.value - b.value, (a, b))
    out._backward = lambda g: (a._accum(g), b._accum(-g))
    return out


def mul(a, b) -> Var:
    a, b = _lift(a), _lift(b)
    out = Var(a.value * b.value, (a, b))
    out._backward = lambda g: (a._accum(g * b.value), b._accum(g * a.value))
    return out


def div(a, b) -> Var:
    a, b = _lift(a), _lift(b)
    out = Var(a.value / b.value, (a, b))
    out._backward = lambda g: (
        a._accum(g / b.value),
        b._accum(-g * a.value / (b.value * b.value)),
    )
    return out


def neg(a) -> Var:
    a = _lift(a)
    out = Var(-a.value, (a,))
    out._backward = lambda g: a._accum(-g)
    return out


def matmul(a, b) -> Var:
    a, b = _lift(a), _lift(b)
    out = Var(a.value @ b.value, (a, b))
    out._backward = lambda g: (a._accum(g @ b.value.T), b._accum(a.value.T @ g))
    return out


def relu(a) -> Var:
    a = _lift(a)
    mask = a.value > 0  # subgradient at 0 is 0
    out = Var(np.where(mask, a.value, 0.0), (a,))
    out._backward = lambda g: a._accum(g * mask)
    return out


def softplus(a) -> Var:
    a = _lift(a)
    out = Var(np.logaddexp(0.0, a.value), (a,))
    sig = 1.0 / (1.0 + np.exp(-a.value))
    out._backward = lambda g: a._accum(g * sig)
    return out


def log(a) -> Var:
    a = _lift(a)
    out = Var(np.log(a.value), (a,))
    out._backward = lambda g: a._accum(g / a.value)
    return out


def exp(a) -> Var:
    a = _lift(a)
    out = Var(np.exp(a.value), (a,))
    out._backward = lambda g: a._accum(g * out.value)
    return out


def square(a) -> Var:
    a = _lift(a)
    out = Var(a.value * a.value, (a,))
    out._backward = lambda g: a._accum(2.0 * g * a.value)
    return out


def minimum(a, b) -> Var:
    a, b = _lift(a), _lift(b)
    take_a = a.value <= b.value  # ties route to the first argument
    out = Var(np.where(take_a, a.value, b.value), (a, b))
    out._backward = lambda g: (a._accum(g * take_a), b._accum(g * ~take_a))
    return out


def clip(a, lo: float, hi: float) -> Var:
    a = _lift(a)
    inside = (a.value > lo) & (a.value < hi)
    out = Var(np.clip(a.value, lo, hi), (a,))
    out._backward = lambda g: a._accum(g * inside)
    return out


def vsum(a) -> Var:
    a = _lift(a)
    out = Var(a.value.sum(), (a,))
    out._backward = lambda g: a._accum(np.broadcast_to(g, a.value.shape))
    return out


def col(a, j: int) -> Var:
    """Column j of a 2-D node as a 1-D node."""
    a = _lift(a)
    out = Var(a.value[:, j], (a,))

    def _bk(g):
        full = np.zeros_like(a.value)
        full[:, j] = g
        a._accum(full)

    out._backward = _bk
    return out


def backward(root: Var) -> None:
    """Reverse-mode sweep seeding d(root)/d(root) = 1; fills ``grad`` on every
    node reachable from ``root``.  The root must be scalar."""
    if root.value.size != 1:
        raise ValueError("backward expects a scalar objective")
    topo: list[Var] = []
    seen: set[int] = set()
    stack: list[tuple[Var, bool]] = [(root, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    root.grad = np.ones_like(root.value)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# network parameters


@dataclass
class NetworkParams:
    """All affine-layer weights plus layer-shape metadata.

    ``shared``, ``policy`` and ``value`` are lists of (W, b) pairs; W has
    shape (fan_out, fan_in).  The policy head emits (mean, raw std), the
    value head a single estimate.
    """

    shared: list = field(default_factory=list)
    policy: list = field(default_factory=list)
    value: list = field(default_factory=list)
    n_shared: int = N_SHARED
    dims: tuple = (6,) + HIDDEN_DIMS
    d_floor: float = D_FLOOR

    def arrays(self) -> list:
        out = []
        for group in (self.shared, self.policy, self.value):
            for w, b in group:
                out.append(w)
                out.append(b)
        return out

    def set_arrays(self, arrays: list) -> None:
        it = iter(arrays)
        for group in (self.shared, self.policy, self.value):
            for i in range(len(group)):
                group[i] = (next(it), next(it))

    def copy(self) -> "NetworkParams":
        return NetworkParams(
            [(w.copy(), b.copy()) for w, b in self.shared],
            [(w.copy(), b.copy()) for w, b in self.policy],
            [(w.copy(), b.copy()) for w, b in self.value],
            self.n_shared,
            self.dims,
            self.d_floor,
        )


@dataclass(frozen=True)
class PolicyOutput:
    """Gaussian action law: mean c and standard deviation d >= d_floor."""

    c: float
    d: float


def _branch_dims(dims: tuple, n_shared: int, head_out: int) -> list:
    chain = list(dims[n_shared:]) + [head_out]
    return list(zip(chain[:-1], chain[1:]))


def init_params(
    rng: np.random.Generator,
    input_dim: int = 6,
    hidden: tuple = HIDDEN_DIMS,
    n_shared: int = N_SHARED,
    d_floor: float = D_FLOOR,
    head_gain: float = 0.01,
    raw_std_bias: float = -2.0,
) -> NetworkParams:
    """He-style fan-in scaled uniform initialization; biases start at zero.

    The final layer of each branch is scaled down by ``head_gain`` so the
    fresh policy starts near mean 0 and the value estimate near 0, and the
    raw-std head bias starts at ``raw_std_bias`` so the initial exploration
    noise (softplus(raw_std_bias), about 0.13 by default) does not swamp the
    anchor rewards before the value branch has learned anything.
    """
    dims = (input_dim,) + tuple(hidden)
    if not 0 < n_shared < len(dims):
        raise ValueError("invalid shared-layer count")

    def layer(fan_in, fan_out, gain=1.0):
        lim = gain * math.sqrt(6.0 / fan_in)
        return rng.uniform(-lim, lim, size=(fan_out, fan_in)), np.zeros(fan_out)

    shared = [layer(dims[i], dims[i + 1]) for i in range(n_shared)]

    def branch(head_out):
        pairs = _branch_dims(dims, n_shared, head_out)
        return [
            layer(fi, fo, head_gain if i == len(pairs) - 1 else 1.0)
            for i, (fi, fo) in enumerate(pairs)
        ]

    policy = branch(2)
    policy[-1][1][1] = raw_std_bias
    return NetworkParams(shared, policy, branch(1), n_shared, dims, d_floor)


def zero_params(**kwargs) -> NetworkParams:
    p = init_params(np.random.default_rng(0), **kwargs)
    for w, b in p.shared + p.policy + p.value:
        w[:] = 0.0
    return p


# ---------------------------------------------------------------------------
# plain (tape-free) forward for rollouts


def _branch_plain(x: np.ndarray, layers: list) -> np.ndarray:
    for i, (w, b) in enumerate(layers):
        x = x @ w.T + b
        if i < len(layers) - 1:
            x = np.maximum(x, 0.0)
    return x


def forward_batch(params: NetworkParams, obs: np.ndarray):
    """(means, stds, values) for a batch of observations, without a tape."""
    obs = np.atleast_2d(np.asarray(obs, dtype=float))
    if not np.all(np.isfinite(obs)):
        raise ValueError("non-finite observation")
    x = obs
    for w, b in params.shared:
        x = np.maximum(x @ w.T + b, 0.0)
    pol = _branch_plain(x, params.policy)
    val = _branch_plain(x, params.value)
    c = pol[:, 0]
    d = np.logaddexp(0.0, pol[:, 1]) + params.d_floor
    return c, d, val[:, 0]


def forward(params: NetworkParams, obs: np.ndarray):
    """Single-observation forward pass: (PolicyOutput, value estimate)."""
    c, d, v = forward_batch(params, np.asarray(obs, dtype=float).reshape(1, -1))
    return PolicyOutput(float(c[0]), float(d[0])), float(v[0])


def sample_action(out: PolicyOutput, rng: np.random.Generator) -> float:
    """Draw one action from Gaussian(c, d)."""
    if out.d <= 0:
        raise ValueError("standard deviation must be positive")
    return out.c + out.d * rng.standard_normal()


def log_density(out: PolicyOutput, action: float) -> float:
    """ln phi(action; c, d) of the Gaussian policy."""
    z = (action - out.c) / out.d
    return -math.log(out.d) - LOG_SQRT_2PI - 0.5 * z * z


# ---------------------------------------------------------------------------
# taped forward for training objectives


class TapedNetwork:
    """Wraps the parameter arrays as graph leaves and rebuilds the forward
    pass as Var operations, so any scalar objective of the outputs can be
    differentiated exactly with :func:`backward`."""

    def __init__(self, params: NetworkParams):
        self.params = params
        self.leaves = [Var(a) for a in params.arrays()]
        k = 0
        self._shared, self._policy, self._value = [], [], []
        for group, store in (
            (params.shared, self._shared),
            (params.policy, self._policy),
            (params.value, self._value),
        ):
            for _ in group:
                store.append((self.leaves[k], self.leaves[k + 1]))
                k += 2

    def _branch(self, x: Var, layers: list) -> Var:
        for i, (w, b) in enumerate(layers):
            x = add(matmul(x, transpose(w)), b)
            if i < len(layers) - 1:
                x = relu(x)
        return x

    def forward(self, obs: np.ndarray):
        """(c, d, v) Vars of shape (batch,) for a constant observation batch."""
        x = Var(np.atleast_2d(np.asarray(obs, dtype=float)))
        for w, b in self._shared:
            x = relu(add(matmul(x, transpose(w)), b))
        pol = self._branch(x, self._policy)
        val = self._branch(x, self._value)
        c = col(pol, 0)
        d = add(softplus(col(pol, 1)), Var(self.params.d_floor))
        v = col(val, 0)
        return c, d, v

    def log_density(self, c: Var, d: Var, actions: np.ndarray) -> Var:
        """ln phi(actions; c, d) elementwise, differentiable through c and d."""
        a = Var(np.asarray(actions, dtype=float))
        z = div(sub(a, c), d)
        return sub(neg(add(log(d), Var(LOG_SQRT_2PI))), mul(Var(0.5), square(z)))

    def grads(self) -> list:
        return [np.zeros_like(l.value) if l.grad is None else l.grad for l in self.leaves]


def transpose(a: Var) -> Var:
    out = Var(a.value.T, (a,))
    out._backward = lambda g: a._accum(g.T)
    return out


# ---------------------------------------------------------------------------
# persistence

_MAGIC = b"VAHN"
_VERSION = 1
_ACT_RELU = 0


def save_params(params: NetworkParams, path) -> None:
    """Versioned little-endian binary dump; round-trips bit-exactly."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<III", _VERSION, _ACT_RELU, params.n_shared))
        fh.write(struct.pack("<I", len(params.dims)))
        fh.write(struct.pack(f"<{len(params.dims)}I", *params.dims))
        fh.write(struct.pack("<d", params.d_floor))
        for arr in params.arrays():
            fh.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())


def load_params(path) -> NetworkParams:
    """Inverse of :func:`save_params`; validates magic, version, and length."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != _MAGIC:
        raise ValueError("not a network weight file")
    off = 4
    version, act, n_shared = struct.unpack_from("<III", raw, off)
    off += 12
    if version != _VERSION:
        raise ValueError(f"unsupported weight file version {version}")
    if act != _ACT_RELU:
        raise ValueError("unsupported activation tag")
    (ndims,) = struct.unpack_from("<I", raw, off)
    off += 4
    dims = struct.unpack_from(f"<{ndims}I", raw, off)
    off += 4 * ndims
    (d_floor,) = struct.unpack_from("<d", raw, off)
    off += 8

    def read_layers(pairs):
        nonlocal off
        out = []
        for fan_in, fan_out in pairs:
            nw = fan_out * fan_in * 8
            if off + nw + fan_out * 8 > len(raw):
                raise ValueError("truncated weight file")
            w = np.frombuffer(raw, "<f8", count=fan_out * fan_in, offset=off).reshape(fan_out, fan_in).copy()
            off += nw
            b = np.frombuffer(raw, "<f8", count=fan_out, offset=off).copy()
            off += fan_out * 8
            out.append((w, b))
        return out

    shared_pairs = [(dims[i], dims[i + 1]) for i in range(n_shared)]
    shared = read_layers(shared_pairs)
    policy = read_layers(_branch_dims(dims, n_shared, 2))
    value = read_layers(_branch_dims(dims, n_shared, 1))
    if off != len(raw):
        raise ValueError("trailing bytes in weight file")
    return NetworkParams(shared, policy, value, n_shared, tuple(dims), d_floor)
