"""Small dense-network engine with hand-written backprop.

Everything is float64. A :class:`DenseNet` is a stack of affine layers, each
followed by an elementwise (or row-wise, for softmax) activation. ``forward``
caches what ``backward`` needs and ``backward`` consumes that cache, so one
forward pairs with exactly one backward.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

ACTIVATIONS = ("identity", "relu", "tanh", "softmax", "sigmoid", "softplus")
_ACT_CODE = {name: i for i, name in enumerate(ACTIVATIONS)}

SNAPSHOT_MAGIC = b"BDRL"
SNAPSHOT_VERSION = 1


class ShapeError(ValueError):
    """Input does not have the dimensions a network or model expects."""


def make_rng(seed) -> np.random.Generator:
    """Seeded generator (PCG64). ``seed`` may be an int or a tuple of ints."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def child_rng(seed: int, *keys: int) -> np.random.Generator:
    """Independent stream for ``(seed, *keys)``, stable across runs."""
    return make_rng([int(seed), *[int(k) for k in keys]])


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax(x):
    shifted = x - x.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(x):
    shifted = x - x.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _activate(name, a):
    if name == "identity":
        return a
    if name == "relu":
        return np.maximum(a, 0.0)
    if name == "tanh":
        return np.tanh(a)
    if name == "softmax":
        return softmax(a)
    if name == "sigmoid":
        return sigmoid(a)
    if name == "softplus":
        return softplus(a)
    raise ValueError(f"unknown activation {name!r}")


def _activation_backward(name, a, h, g):
    # a: pre-activation, h: activation output, g: dL/dh
    if name == "identity":
        return g
    if name == "relu":
        return g * (a > 0)
    if name == "tanh":
        return g * (1.0 - h * h)
    if name == "softmax":
        return h * (g - (g * h).sum(axis=-1, keepdims=True))
    if name == "sigmoid":
        return g * h * (1.0 - h)
    if name == "softplus":
        return g * sigmoid(a)
    raise ValueError(f"unknown activation {name!r}")


@dataclass
class Layer:
    weight: np.ndarray  # (in, out)
    bias: np.ndarray  # (out,)
    activation: str = "identity"

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        self.bias = np.asarray(self.bias, dtype=np.float64)
        if self.weight.ndim != 2 or self.bias.shape != (self.weight.shape[1],):
            raise ShapeError(
                f"layer weight {self.weight.shape} and bias {self.bias.shape} do not agree"
            )
        if self.activation not in _ACT_CODE:
            raise ValueError(f"unknown activation {self.activation!r}")

    @property
    def in_dim(self) -> int:
        return self.weight.shape[0]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[1]


@dataclass
class ParamGrads:
    """Gradients aligned with ``DenseNet.params()`` plus the input gradient."""

    params: list
    input: np.ndarray

    def __iter__(self):
        return iter(self.params)


class DenseNet:
    """Feed-forward stack of dense layers.

    Parameters
    ----------
    sizes : sequence of int
        ``[input_dim, hidden_1, ..., output_dim]``.
    activations : sequence of str
        One activation per layer (``len(sizes) - 1`` entries).
    rng : numpy Generator, optional
        Source for Glorot-uniform weight init. Without one, weights start at zero.
    """

    def __init__(self, sizes: Sequence[int], activations: Sequence[str], rng=None):
        sizes = [int(s) for s in sizes]
        if len(sizes) < 2 or len(activations) != len(sizes) - 1:
            raise ValueError("need len(activations) == len(sizes) - 1 >= 1")
        if any(s < 1 for s in sizes):
            raise ValueError(f"layer sizes must be positive, got {sizes}")
        layers = []
        for fan_in, fan_out, act in zip(sizes[:-1], sizes[1:], activations):
            if rng is None:
                w = np.zeros((fan_in, fan_out))
            else:
                limit = np.sqrt(6.0 / (fan_in + fan_out))
                w = rng.uniform(-limit, limit, size=(fan_in, fan_out))
            layers.append(Layer(w, np.zeros(fan_out), act))
        self.layers = layers
        self._cache = None

    @classmethod
    def from_layers(cls, layers: Sequence[Layer]) -> "DenseNet":
        layers = list(layers)
        for prev, nxt in zip(layers[:-1], layers[1:]):
            if prev.out_dim != nxt.in_dim:
                raise ShapeError(f"layer dims do not chain: {prev.out_dim} -> {nxt.in_dim}")
        net = cls.__new__(cls)
        net.layers = layers
        net._cache = None
        return net

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def sizes(self) -> list:
        return [self.input_dim] + [layer.out_dim for layer in self.layers]

    def params(self) -> list:
        out = []
        for layer in self.layers:
            out.append(layer.weight)
            out.append(layer.bias)
        return out

    @property
    def n_params(self) -> int:
        return sum(p.size for p in self.params())

    def copy(self) -> "DenseNet":
        return DenseNet.from_layers(
            [Layer(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers]
        )

    def forward(self, x, cache: bool = True) -> np.ndarray:
        """Evaluate the net on ``x`` of shape ``(input_dim,)`` or ``(batch, input_dim)``."""
        x = np.asarray(x, dtype=np.float64)
        if x.ndim not in (1, 2) or x.shape[-1] != self.input_dim:
            raise ShapeError(f"expected input with last dim {self.input_dim}, got {x.shape}")
        squeeze = x.ndim == 1
        h = x[None, :] if squeeze else x
        trace = []
        for layer in self.layers:
            a = h @ layer.weight + layer.bias
            out = _activate(layer.activation, a)
            if cache:
                trace.append((h, a, out))
            h = out
        if cache:
            self._cache = (trace, squeeze)
        return h[0] if squeeze else h

    def backward(self, output_grad) -> ParamGrads:
        """Backpropagate ``dL/d(output)`` through the cached forward pass.

        Returns gradients for every weight and bias (same order as
        :meth:`params`) and the gradient with respect to the network input.
        The cache is released afterwards.
        """
        if self._cache is None:
            raise RuntimeError("backward() called without a cached forward pass")
        trace, squeeze = self._cache
        self._cache = None
        g = np.asarray(output_grad, dtype=np.float64)
        if squeeze:
            g = g[None, :]
        if g.shape != trace[-1][2].shape:
            raise ShapeError(f"output_grad shape {g.shape} != output shape {trace[-1][2].shape}")
        grads = [None] * (2 * len(self.layers))
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            h_in, a, out = trace[i]
            ga = _activation_backward(layer.activation, a, out, g)
            grads[2 * i] = h_in.T @ ga
            grads[2 * i + 1] = ga.sum(axis=0)
            g = ga @ layer.weight.T
        return ParamGrads(grads, g[0] if squeeze else g)

    def zero_(self):
        for p in self.params():
            p[...] = 0.0


def forward_layers(layers, h, first_pre=None):
    """Run ``layers`` on ``h`` and return ``(output, trace)``.

    ``first_pre`` replaces the first layer's affine map when the caller can
    compute it more cheaply (for example with one-hot inputs); ``h`` is then
    ignored for that layer.
    """
    trace = []
    for i, layer in enumerate(layers):
        if i == 0 and first_pre is not None:
            a, h = first_pre, None
        else:
            a = h @ layer.weight + layer.bias
        out = _activate(layer.activation, a)
        trace.append((h, a, out))
        h = out
    return h, trace


def backward_layers(layers, trace, g):
    """Backprop ``g`` through a trace from :func:`forward_layers`.

    Returns per-layer ``(dW, db)`` (``dW`` is None for a first layer fed via
    ``first_pre``) and the gradient at the first layer's pre-activation.
    """
    grads = [None] * len(layers)
    ga = None
    for i in range(len(layers) - 1, -1, -1):
        layer = layers[i]
        h_in, a, out = trace[i]
        ga = _activation_backward(layer.activation, a, out, g)
        grads[i] = (None if h_in is None else h_in.T @ ga, ga.sum(axis=0))
        if i > 0:
            g = ga @ layer.weight.T
    return grads, ga


def check_finite(arrays, what="gradient"):
    for i, a in enumerate(arrays):
        if not np.all(np.isfinite(a)):
            raise FloatingPointError(f"non-finite {what} in parameter block {i}")


class SGD:
    kind = "sgd"

    def __init__(self, learning_rate: float = 0.01):
        if learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        self.learning_rate = float(learning_rate)
        self.step_count = 0

    def step(self, params, grads):
        grads = list(grads)
        if len(grads) != len(params):
            raise ShapeError(f"{len(grads)} gradient blocks for {len(params)} parameters")
        check_finite(grads)
        for p, g in zip(params, grads):
            p -= self.learning_rate * g
        self.step_count += 1


class Adam:
    """Adam with bias correction. Moments are created lazily on first step."""

    kind = "adam"

    def __init__(self, learning_rate: float = 1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        if learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        self.learning_rate = float(learning_rate)
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = None
        self.v = None

    def step(self, params, grads):
        grads = list(grads)
        if len(grads) != len(params):
            raise ShapeError(f"{len(grads)} gradient blocks for {len(params)} parameters")
        for p, g in zip(params, grads):
            if p.shape != g.shape:
                raise ShapeError(f"gradient shape {g.shape} != parameter shape {p.shape}")
        check_finite(grads)
        if self.m is None:
            self.m = [np.zeros_like(p) for p in params]
            self.v = [np.zeros_like(p) for p in params]
            self._work = [np.empty_like(p) for p in params]
        elif len(self.m) != len(params) or any(
            m.shape != p.shape for m, p in zip(self.m, params)
        ):
            raise ShapeError("parameter list changed shape between Adam steps")
        self.step_count += 1
        t = self.step_count
        step_size = self.learning_rate / (1.0 - self.beta1**t)
        inv_sqrt_c2 = 1.0 / np.sqrt(1.0 - self.beta2**t)
        flush = t % 256 == 0
        for p, g, m, v, tmp in zip(params, grads, self.m, self.v, self._work):
            m *= self.beta1
            np.multiply(g, 1.0 - self.beta1, out=tmp)
            m += tmp
            v *= self.beta2
            np.multiply(g, g, out=tmp)
            tmp *= 1.0 - self.beta2
            v += tmp
            if flush:
                # decayed moments drift into subnormal range, which is very slow
                m[np.abs(m) < 1e-150] = 0.0
                v[v < 1e-150] = 0.0
            np.sqrt(v, out=tmp)
            tmp *= inv_sqrt_c2
            tmp += self.eps
            np.divide(m, tmp, out=tmp)
            tmp *= step_size
            p -= tmp


def make_optimizer(kind: str, learning_rate: float):
    if kind == "sgd":
        return SGD(learning_rate)
    if kind == "adam":
        return Adam(learning_rate)
    raise ValueError(f"unknown optimizer {kind!r}")


def apply_update(net: DenseNet, grads, opt) -> None:
    params = grads.params if isinstance(grads, ParamGrads) else list(grads)
    opt.step(net.params(), params)


def _param_list(target):
    if isinstance(target, DenseNet):
        return target.params()
    out = []
    for t in target:
        out.extend(t.params() if isinstance(t, DenseNet) else [t])
    return out


def finite_diff_check(
    loss_fn: Callable[[], tuple],
    net,
    epsilon: float = 1e-5,
    floor: float = 1e-6,
) -> float:
    """Worst relative error between analytic and central-difference gradients.

    ``loss_fn()`` evaluates the loss at the current parameter values and
    returns ``(loss, grads)``, with ``grads`` aligned to the parameters of
    ``net`` (a DenseNet, or a sequence of nets/arrays). Parameters are
    perturbed in place and restored.

    The relative error per entry is ``|a - n| / max(|a|, |n|, floor)``.
    """
    if not 0.0 < epsilon <= 1e-2:
        raise ValueError("epsilon must lie in (0, 1e-2]")
    params = _param_list(net)
    _, analytic = loss_fn()
    analytic = analytic.params if isinstance(analytic, ParamGrads) else list(analytic)
    if len(analytic) != len(params):
        raise ShapeError(f"{len(analytic)} gradient blocks for {len(params)} parameters")
    analytic = [np.array(g, dtype=np.float64, copy=True) for g in analytic]

    worst = 0.0
    flat_index = 0
    for p, a in zip(params, analytic):
        flat = p.reshape(-1)
        a_flat = a.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + epsilon
            plus = float(loss_fn()[0])
            flat[j] = orig - epsilon
            minus = float(loss_fn()[0])
            flat[j] = orig
            if not (np.isfinite(plus) and np.isfinite(minus)):
                raise FloatingPointError(f"loss not finite when perturbing parameter {flat_index + j}")
            numeric = (plus - minus) / (2.0 * epsilon)
            err = abs(a_flat[j] - numeric) / max(abs(a_flat[j]), abs(numeric), floor)
            worst = max(worst, err)
        flat_index += flat.size
    return worst


def save_snapshot(path, net: DenseNet) -> None:
    """Write ``net`` as: magic, u32 version, u32 layer count, then per layer
    u32 in, u32 out, u32 activation code, weights (row-major) and bias, all
    little-endian float64."""
    with open(path, "wb") as fh:
        fh.write(SNAPSHOT_MAGIC)
        fh.write(struct.pack("<II", SNAPSHOT_VERSION, len(net.layers)))
        for layer in net.layers:
            fh.write(struct.pack("<III", layer.in_dim, layer.out_dim, _ACT_CODE[layer.activation]))
            fh.write(np.ascontiguousarray(layer.weight, dtype="<f8").tobytes())
            fh.write(np.ascontiguousarray(layer.bias, dtype="<f8").tobytes())


def load_snapshot(path) -> DenseNet:
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != SNAPSHOT_MAGIC:
        raise ValueError(f"{path}: not a parameter snapshot (bad magic)")
    version, n_layers = struct.unpack_from("<II", blob, 4)
    if version != SNAPSHOT_VERSION:
        raise ValueError(f"{path}: unsupported snapshot version {version}")
    offset = 12
    layers = []
    for _ in range(n_layers):
        n_in, n_out, code = struct.unpack_from("<III", blob, offset)
        offset += 12
        w = np.frombuffer(blob, dtype="<f8", count=n_in * n_out, offset=offset)
        offset += 8 * n_in * n_out
        b = np.frombuffer(blob, dtype="<f8", count=n_out, offset=offset)
        offset += 8 * n_out
        layers.append(Layer(w.reshape(n_in, n_out).astype(np.float64), b.astype(np.float64), ACTIVATIONS[code]))
    if offset != len(blob):
        raise ValueError(f"{path}: {len(blob) - offset} trailing bytes")
    return DenseNet.from_layers(layers)
