"""Dense feed-forward networks with a hand-written backward pass.

Only what the method needs: stacks of fully connected layers, four
activations, three losses and Adam.  Weights are stored as ``(out, in)``
matrices so a layer computes ``x @ W.T + b``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import ConfigurationError, DataError, TrainingDivergedError, UsageError

ACTIVATIONS = ("relu", "sigmoid", "softmax", "identity")
CLAMP = 1e-12
CHECKPOINT_VERSION = 1


def _activate(kind: str, a: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return np.maximum(a, 0.0)
    if kind == "sigmoid":
        # tanh form does not overflow for large |a|
        return 0.5 * (1.0 + np.tanh(0.5 * a))
    if kind == "softmax":
        e = np.exp(a - a.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)
    return a


def _activation_backward(kind: str, pre: np.ndarray, out: np.ndarray, grad: np.ndarray) -> np.ndarray:
    if kind == "relu":
        return grad * (pre > 0)
    if kind == "sigmoid":
        return grad * out * (1.0 - out)
    if kind == "softmax":
        return out * (grad - (grad * out).sum(axis=1, keepdims=True))
    return grad


@dataclass
class Dense:
    weight: np.ndarray
    bias: np.ndarray
    activation: str = "identity"

    @property
    def in_dim(self) -> int:
        return self.weight.shape[1]

    @property
    def out_dim(self) -> int:
        return self.weight.shape[0]


@dataclass
class Trace:
    """Intermediate values of one recorded forward pass."""

    inputs: list[np.ndarray]
    pre: list[np.ndarray]
    outputs: list[np.ndarray]

    @property
    def output(self) -> np.ndarray:
        return self.outputs[-1]


@dataclass
class GradientTape:
    """Per-parameter gradients laid out like ``DenseNet.parameters()``."""

    grads: list[np.ndarray]
    loss: float = 0.0

    @classmethod
    def zeros_like(cls, net: "DenseNet") -> "GradientTape":
        return cls([np.zeros_like(p) for p in net.parameters()])

    def __add__(self, other: "GradientTape") -> "GradientTape":
        if len(self.grads) != len(other.grads) or any(
            a.shape != b.shape for a, b in zip(self.grads, other.grads)
        ):
            raise ConfigurationError("cannot add gradient tapes of different shapes")
        return GradientTape([a + b for a, b in zip(self.grads, other.grads)], self.loss + other.loss)

    def scaled(self, factor: float) -> "GradientTape":
        return GradientTape([factor * g for g in self.grads], factor * self.loss)

    def clear(self) -> None:
        for g in self.grads:
            g.fill(0.0)
        self.loss = 0.0

    def is_finite(self) -> bool:
        return all(np.isfinite(g).all() for g in self.grads)


class DenseNet:
    """An ordered stack of :class:`Dense` layers."""

    def __init__(self, layers: Sequence[Dense]):
        layers = list(layers)
        if not layers:
            raise ConfigurationError("a network needs at least one layer")
        for i, layer in enumerate(layers):
            if layer.activation not in ACTIVATIONS:
                raise ConfigurationError(f"unknown activation {layer.activation!r}")
            if layer.bias.shape != (layer.out_dim,):
                raise ConfigurationError(f"layer {i}: bias shape {layer.bias.shape} != ({layer.out_dim},)")
            if layer.activation == "softmax" and i != len(layers) - 1:
                raise ConfigurationError("softmax is only allowed as the final activation")
            if i and layers[i - 1].out_dim != layer.in_dim:
                raise ConfigurationError(
                    f"layer {i} expects {layer.in_dim} inputs but layer {i - 1} yields {layers[i - 1].out_dim}"
                )
            if not (np.isfinite(layer.weight).all() and np.isfinite(layer.bias).all()):
                raise DataError(f"layer {i} has non-finite parameters")
        self.layers = layers
        self.last_trace: Trace | None = None

    @classmethod
    def build(cls, sizes: Sequence[int], activations: Sequence[str], rng: np.random.Generator) -> "DenseNet":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) init for weights and biases.

        ``sizes`` lists every width including input and output, so
        ``len(activations) == len(sizes) - 1``.
        """
        if len(activations) != len(sizes) - 1:
            raise ConfigurationError("need one activation per layer")
        if any(int(s) < 1 for s in sizes):
            raise ConfigurationError(f"layer sizes must be positive, got {list(sizes)}")
        layers = []
        for fan_in, fan_out, act in zip(sizes[:-1], sizes[1:], activations):
            bound = 1.0 / np.sqrt(fan_in)
            w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
            b = rng.uniform(-bound, bound, size=fan_out)
            layers.append(Dense(w, b, act))
        return cls(layers)

    @property
    def input_dim(self) -> int:
        return self.layers[0].in_dim

    @property
    def output_dim(self) -> int:
        return self.layers[-1].out_dim

    @property
    def sizes(self) -> list[int]:
        return [self.input_dim] + [layer.out_dim for layer in self.layers]

    def parameters(self) -> list[np.ndarray]:
        params = []
        for layer in self.layers:
            params += [layer.weight, layer.bias]
        return params

    def named_parameters(self) -> dict[str, np.ndarray]:
        named = {}
        for i, layer in enumerate(self.layers):
            named[f"layer{i}.weight"] = layer.weight
            named[f"layer{i}.bias"] = layer.bias
        return named

    def copy(self) -> "DenseNet":
        return DenseNet([Dense(l.weight.copy(), l.bias.copy(), l.activation) for l in self.layers])

    def _check_input(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.input_dim:
            raise ConfigurationError(f"expected input of shape (n, {self.input_dim}), got {x.shape}")
        if not np.isfinite(x).all():
            raise DataError("network input contains non-finite values")
        return x

    def forward(self, x: np.ndarray) -> np.ndarray:
        h = self._check_input(x)
        for layer in self.layers:
            h = _activate(layer.activation, h @ layer.weight.T + layer.bias)
        return h

    __call__ = forward

    def trace(self, x: np.ndarray) -> Trace:
        """Forward pass that keeps what :meth:`backward` needs."""
        h = self._check_input(x)
        tr = Trace([], [], [])
        for layer in self.layers:
            a = h @ layer.weight.T + layer.bias
            tr.inputs.append(h)
            tr.pre.append(a)
            h = _activate(layer.activation, a)
            tr.outputs.append(h)
        return tr

    def record(self, x: np.ndarray) -> np.ndarray:
        self.last_trace = self.trace(x)
        return self.last_trace.output

    def backward(self, trace: Trace, grad_out: np.ndarray) -> tuple[GradientTape, np.ndarray]:
        """Backpropagate ``dL/d(output)``; returns parameter grads and ``dL/d(input)``."""
        if grad_out.shape != trace.output.shape:
            raise ConfigurationError(f"gradient shape {grad_out.shape} != output shape {trace.output.shape}")
        grads: list[np.ndarray] = [None] * (2 * len(self.layers))  # type: ignore[list-item]
        g = grad_out
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            g = _activation_backward(layer.activation, trace.pre[i], trace.outputs[i], g)
            grads[2 * i] = g.T @ trace.inputs[i]
            grads[2 * i + 1] = g.sum(axis=0)
            g = g @ layer.weight
        return GradientTape(grads), g


# ---------------------------------------------------------------- losses


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ConfigurationError(f"shape mismatch: {a.shape} vs {b.shape}")


def cross_entropy(pred: np.ndarray, one_hot: np.ndarray) -> float:
    """Mean over rows of ``-sum_c y_c log p_c``."""
    _check_same_shape(pred, one_hot)
    return float(-(one_hot * np.log(np.maximum(pred, CLAMP))).sum(axis=1).mean())


def cross_entropy_grad(pred: np.ndarray, one_hot: np.ndarray) -> np.ndarray:
    _check_same_shape(pred, one_hot)
    safe = np.maximum(pred, CLAMP)
    return np.where(pred > CLAMP, -one_hot / safe, 0.0) / pred.shape[0]


def bce(pred: np.ndarray, target: np.ndarray) -> float:
    _check_same_shape(pred, target)
    p = np.clip(pred, CLAMP, 1.0 - CLAMP)
    return float(np.mean(-target * np.log(p) - (1.0 - target) * np.log(1.0 - p)))


def bce_grad(pred: np.ndarray, target: np.ndarray) -> np.ndarray:
    _check_same_shape(pred, target)
    p = np.clip(pred, CLAMP, 1.0 - CLAMP)
    g = (-target / p + (1.0 - target) / (1.0 - p)) / pred.size
    return np.where((pred > CLAMP) & (pred < 1.0 - CLAMP), g, 0.0)


def mse(a: np.ndarray, b: np.ndarray) -> float:
    """Mean squared difference, no 1/2 factor."""
    _check_same_shape(a, b)
    return float(np.mean((a - b) ** 2))


def mse_grad(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Gradient of :func:`mse` with respect to ``a``."""
    _check_same_shape(a, b)
    return 2.0 * (a - b) / a.size


LOSSES = {
    "cross_entropy": (cross_entropy, cross_entropy_grad),
    "bce": (bce, bce_grad),
    "mse": (mse, mse_grad),
}


def forward(net: DenseNet, batch: np.ndarray) -> np.ndarray:
    return net.forward(batch)


def backward(net: DenseNet, loss_kind: str, targets: np.ndarray) -> GradientTape:
    """Gradient of a mean loss over the last batch passed to ``net.record``."""
    if net.last_trace is None:
        raise UsageError("backward called before a recorded forward pass")
    if loss_kind not in LOSSES:
        raise ConfigurationError(f"unknown loss {loss_kind!r}; choose from {sorted(LOSSES)}")
    value, grad = LOSSES[loss_kind]
    pred = net.last_trace.output
    targets = np.asarray(targets, dtype=float).reshape(pred.shape)
    tape, _ = net.backward(net.last_trace, grad(pred, targets))
    tape.loss = value(pred, targets)
    return tape


# ------------------------------------------------------------- optimizer


@dataclass
class Adam:
    """Adam over the concatenated parameters of one or more networks."""

    nets: list[DenseNet]
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)

    def __post_init__(self):
        if isinstance(self.nets, DenseNet):
            self.nets = [self.nets]
        if not self.learning_rate >= 0:
            raise ConfigurationError(f"learning rate must be non-negative, got {self.learning_rate}")
        params = self.params
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]

    @property
    def params(self) -> list[np.ndarray]:
        return [p for net in self.nets for p in net.parameters()]

    def step(self, tapes: Sequence[GradientTape] | GradientTape) -> None:
        if isinstance(tapes, GradientTape):
            tapes = [tapes]
        if len(tapes) != len(self.nets):
            raise ConfigurationError(f"got {len(tapes)} tapes for {len(self.nets)} networks")
        grads = [g for tape in tapes for g in tape.grads]
        params = self.params
        for i, (p, g) in enumerate(zip(params, grads)):
            if g.shape != p.shape:
                raise ConfigurationError(f"gradient {i} has shape {g.shape}, parameter has {p.shape}")
            if not np.isfinite(g).all():
                raise TrainingDivergedError(
                    f"non-finite gradient in parameter {i} (shape {p.shape}) at step {self.step_count + 1}"
                )
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1**t
        c2 = 1.0 - self.beta2**t
        for p, g, m, v in zip(params, grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            p -= self.learning_rate * (m / c1) / (np.sqrt(v / c2) + self.epsilon)


def optimizer_step(net: DenseNet, tape: GradientTape, opt: Adam) -> DenseNet:
    if opt.nets != [net]:
        raise ConfigurationError("optimizer was built for a different network")
    opt.step(tape)
    return net


# ------------------------------------------------------------ checkpoints


def save_checkpoint(path: str | Path, nets: dict[str, DenseNet], meta: dict | None = None) -> None:
    """Write networks to an ``.npz`` archive.

    Layout: one float64 array per tensor named ``<net>/layer<i>.weight`` or
    ``<net>/layer<i>.bias`` plus a ``__meta__`` JSON string holding the
    format version, each network's activations, and ``meta``.
    """
    arrays = {}
    header = {"format": "tabncd-dense", "version": CHECKPOINT_VERSION, "nets": {}, "meta": meta or {}}
    for name, net in nets.items():
        if "/" in name:
            raise ConfigurationError(f"network name {name!r} may not contain '/'")
        header["nets"][name] = [layer.activation for layer in net.layers]
        for pname, p in net.named_parameters().items():
            arrays[f"{name}/{pname}"] = p
    arrays["__meta__"] = np.array(json.dumps(header, sort_keys=True))
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path: str | Path) -> tuple[dict[str, DenseNet], dict]:
    if not Path(path).is_file():
        raise DataError(f"checkpoint {path} does not exist")
    with np.load(path, allow_pickle=False) as data:
        header = json.loads(str(data["__meta__"]))
        if header.get("format") != "tabncd-dense" or header.get("version") != CHECKPOINT_VERSION:
            raise ConfigurationError(f"{path}: unsupported checkpoint format")
        nets = {}
        for name, acts in header["nets"].items():
            layers = [
                Dense(data[f"{name}/layer{i}.weight"].copy(), data[f"{name}/layer{i}.bias"].copy(), act)
                for i, act in enumerate(acts)
            ]
            nets[name] = DenseNet(layers)
    return nets, header["meta"]
