"""Small dense networks with hand-written reverse-mode gradients.

A :class:`DenseNet` keeps every weight and bias in one flat parameter
vector.  The layout is fixed: for each layer ``l`` in order, the weight
matrix ``W_l`` (shape ``(out, in)``, row-major) followed by the bias
``b_l`` (shape ``(out,)``).  ``weights`` and ``biases`` are views into that
vector, so an SGD step on the flat vector updates the network in place.

Hidden layers use ``tanh``.  The head is either ``"linear"`` (critic,
scalar output) or ``"softmax"`` (actor, action probabilities).
Inputs are divided elementwise by ``input_scale`` before the first layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

HEADS = ("linear", "softmax")
CHECKPOINT_MAGIC = "wassrl-densenet-v1"


@dataclass
class DenseNet:
    layer_sizes: tuple[int, ...]
    params: np.ndarray
    head: str = "linear"
    input_scale: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise ValueError(f"invalid layer sizes {self.layer_sizes}")
        if self.head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}, got {self.head!r}")
        if self.head == "linear" and self.layer_sizes[-1] != 1:
            raise ValueError("a linear-head critic must have a single output")
        self.params = np.asarray(self.params, dtype=float)
        if self.params.shape != (param_count(self.layer_sizes),):
            raise ValueError(
                f"expected {param_count(self.layer_sizes)} parameters, got shape {self.params.shape}"
            )
        if self.input_scale is None:
            self.input_scale = np.ones(self.layer_sizes[0])
        self.input_scale = np.asarray(self.input_scale, dtype=float)
        if self.input_scale.shape != (self.layer_sizes[0],) or np.any(self.input_scale <= 0):
            raise ValueError("input_scale must be a positive vector matching the input width")
        self._bind_views()

    def _bind_views(self):
        self.weights: list[np.ndarray] = []
        self.biases: list[np.ndarray] = []
        offset = 0
        for n_in, n_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            w = self.params[offset:offset + n_in * n_out].reshape(n_out, n_in)
            offset += n_in * n_out
            b = self.params[offset:offset + n_out]
            offset += n_out
            self.weights.append(w)
            self.biases.append(b)

    @classmethod
    def initialize(cls, layer_sizes, head="linear", rng=None, seed=None, input_scale=None):
        """Uniform fan-in initialization: each layer ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
        if rng is None:
            rng = np.random.default_rng(seed)
        layer_sizes = tuple(int(s) for s in layer_sizes)
        chunks = []
        for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]):
            bound = 1.0 / math.sqrt(n_in)
            chunks.append(rng.uniform(-bound, bound, size=n_in * n_out))
            chunks.append(rng.uniform(-bound, bound, size=n_out))
        return cls(layer_sizes, np.concatenate(chunks), head=head, input_scale=input_scale)

    @classmethod
    def zeros(cls, layer_sizes, head="linear", input_scale=None):
        return cls(layer_sizes, np.zeros(param_count(layer_sizes)), head=head, input_scale=input_scale)

    def copy(self) -> "DenseNet":
        return DenseNet(self.layer_sizes, self.params.copy(), self.head, self.input_scale.copy())

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    # -- core passes ---------------------------------------------------

    def _forward(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape != (self.input_dim,):
            raise ValueError(f"input has shape {x.shape}, network expects ({self.input_dim},)")
        h = x / self.input_scale
        acts = [h]
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            a = w @ h + b
            h = a if i == last else np.tanh(a)
            acts.append(h)
        return acts

    def _backward(self, acts, dout, want_params=True, want_input=False):
        grads = [] if want_params else None
        g = dout
        last = len(self.weights) - 1
        for i in range(last, -1, -1):
            if i != last:
                g = g * (1.0 - acts[i + 1] ** 2)
            if want_params:
                grads.append(g)
                grads.append(np.outer(g, acts[i]).ravel())
            if i > 0 or want_input:
                g = self.weights[i].T @ g
        flat = None
        if want_params:
            grads.reverse()
            flat = np.concatenate(grads)
        dx = g / self.input_scale if want_input else None
        return flat, dx

    def logits(self, x) -> np.ndarray:
        return self._forward(x)[-1]


def param_count(layer_sizes) -> int:
    return sum(n_in * n_out + n_out for n_in, n_out in zip(layer_sizes[:-1], layer_sizes[1:]))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = np.exp(logits - np.max(logits))
    return z / z.sum()


def _require_head(net: DenseNet, head: str):
    if net.head != head:
        raise ValueError(f"expected a {head}-head network, got {net.head!r}")


def critic_forward(net: DenseNet, x) -> float:
    _require_head(net, "linear")
    return float(net._forward(x)[-1][0])


def critic_grad_params(net: DenseNet, x) -> np.ndarray:
    """Gradient of the scalar critic output with respect to the flat parameters."""
    _require_head(net, "linear")
    acts = net._forward(x)
    return net._backward(acts, np.ones(1))[0]


def critic_grad_input(net: DenseNet, x) -> np.ndarray:
    _require_head(net, "linear")
    acts = net._forward(x)
    return net._backward(acts, np.ones(1), want_params=False, want_input=True)[1]


def critic_value_and_grad_input(net: DenseNet, x) -> tuple[float, np.ndarray]:
    """Value and input gradient from a single forward pass."""
    _require_head(net, "linear")
    acts = net._forward(x)
    return float(acts[-1][0]), net._backward(acts, np.ones(1), want_params=False, want_input=True)[1]


def critic_value_and_grad_params(net: DenseNet, x) -> tuple[float, np.ndarray]:
    _require_head(net, "linear")
    acts = net._forward(x)
    return float(acts[-1][0]), net._backward(acts, np.ones(1))[0]


def policy_forward(net: DenseNet, x) -> np.ndarray:
    _require_head(net, "softmax")
    return softmax(net._forward(x)[-1])


def policy_log_grad(net: DenseNet, x, a: int) -> np.ndarray:
    """Gradient of ``log pi(a|x)`` with respect to the flat actor parameters.

    For softmax logits ``l``, d log pi(a) / dl = onehot(a) - pi.
    """
    _require_head(net, "softmax")
    acts = net._forward(x)
    probs = softmax(acts[-1])
    if not 0 <= a < probs.size:
        raise ValueError(f"action {a} outside [0, {probs.size})")
    dl = -probs
    dl[a] += 1.0
    return net._backward(acts, dl)[0]


def policy_log_grad_input(net: DenseNet, x, a: int) -> np.ndarray:
    """Gradient of ``log pi(a|x)`` with respect to the observation."""
    _require_head(net, "softmax")
    acts = net._forward(x)
    probs = softmax(acts[-1])
    if not 0 <= a < probs.size:
        raise ValueError(f"action {a} outside [0, {probs.size})")
    dl = -probs
    dl[a] += 1.0
    return net._backward(acts, dl, want_params=False, want_input=True)[1]


def sgd_step(params: np.ndarray, grad: np.ndarray, rate: float) -> np.ndarray:
    params = np.asarray(params, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if params.shape != grad.shape:
        raise ValueError(f"shape mismatch: params {params.shape} vs grad {grad.shape}")
    if not rate > 0:
        raise ValueError(f"rate must be positive, got {rate}")
    return params - rate * grad


# -- checkpoints -----------------------------------------------------------
#
# Text layout, one item per line:
#   wassrl-densenet-v1
#   head <linear|softmax>
#   layers <n0> <n1> ... <nL>
#   input_scale <s0> ... <s_{n0-1}>
#   params <P>
#   <P lines, one parameter each, repr() precision>


def save_checkpoint(net: DenseNet, path) -> Path:
    path = Path(path)
    lines = [
        CHECKPOINT_MAGIC,
        f"head {net.head}",
        "layers " + " ".join(str(s) for s in net.layer_sizes),
        "input_scale " + " ".join(repr(float(s)) for s in net.input_scale),
        f"params {net.params.size}",
    ]
    lines.extend(repr(float(v)) for v in net.params)
    path.write_text("\n".join(lines) + "\n")
    return path


def load_checkpoint(path) -> DenseNet:
    path = Path(path)
    try:
        lines = path.read_text().splitlines()
    except OSError as exc:
        raise ValueError(f"cannot read checkpoint {path}: {exc}") from exc
    try:
        if lines[0] != CHECKPOINT_MAGIC:
            raise ValueError("bad magic line")
        head = lines[1].split()[1]
        layers = tuple(int(t) for t in lines[2].split()[1:])
        scale = np.array([float(t) for t in lines[3].split()[1:]])
        count = int(lines[4].split()[1])
        params = np.array([float(t) for t in lines[5:5 + count]])
        if params.size != count:
            raise ValueError(f"expected {count} parameters, found {params.size}")
        return DenseNet(layers, params, head=head, input_scale=scale)
    except (IndexError, ValueError) as exc:
        raise ValueError(f"malformed checkpoint {path}: {exc}") from exc
