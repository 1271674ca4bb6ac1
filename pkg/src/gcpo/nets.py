"""Dense-network numerics: forward evaluation, reverse-mode gradients, Adam.

Everything is float64 and built on plain numpy arrays. Networks are passive
parameter containers; forward evaluation allocates no shared state, so rollout
workers may call it concurrently. Backward passes and Adam updates mutate
parameters and must be serialized by the caller.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("tanh", "softsign", "identity")


class DimensionMismatchError(ValueError):
    """Input shape is inconsistent with the network layout."""


class MissingForwardCacheError(RuntimeError):
    """Backward pass requested without a matching forward cache."""


class NonFiniteGradientError(FloatingPointError):
    """A gradient component is NaN or infinite; carries the offending index."""

    def __init__(self, array_index, flat_index):
        self.array_index = array_index
        self.flat_index = flat_index
        super().__init__(
            f"non-finite gradient in array {array_index} at flat offset {flat_index}"
        )


def _act(name, x):
    if name == "tanh":
        return np.tanh(x)
    if name == "softsign":
        return x / (1.0 + np.abs(x))
    return x


def _act_deriv_from_output(name, a):
    # Derivatives expressed in terms of the activation output, so the forward
    # cache only needs post-activation values.
    if name == "tanh":
        return 1.0 - a * a
    if name == "softsign":
        d = 1.0 - np.abs(a)
        return d * d
    return np.ones_like(a)


class DenseNet:
    """Fully connected network; ``weights[i]`` maps layer i to i+1, shape (out, in)."""

    def __init__(self, layer_sizes, weights, biases, activations):
        layer_sizes = [int(s) for s in layer_sizes]
        if len(layer_sizes) < 2:
            raise ValueError("need at least an input and an output layer")
        if any(s <= 0 for s in layer_sizes):
            raise ValueError("layer sizes must be positive")
        n_layers = len(layer_sizes) - 1
        if not (len(weights) == len(biases) == len(activations) == n_layers):
            raise ValueError("weights/biases/activations must have one entry per layer")
        for i in range(n_layers):
            if weights[i].shape != (layer_sizes[i + 1], layer_sizes[i]):
                raise DimensionMismatchError(
                    f"weight {i} has shape {weights[i].shape}, expected "
                    f"({layer_sizes[i + 1]}, {layer_sizes[i]})"
                )
            if biases[i].shape != (layer_sizes[i + 1],):
                raise DimensionMismatchError(f"bias {i} has shape {biases[i].shape}")
            if activations[i] not in ACTIVATIONS:
                raise ValueError(f"unknown activation {activations[i]!r}")
        if activations[-1] != "identity":
            raise ValueError("final layer activation must be identity")
        self.layer_sizes = layer_sizes
        self.weights = [np.asarray(w, dtype=np.float64) for w in weights]
        self.biases = [np.asarray(b, dtype=np.float64) for b in biases]
        self.activations = list(activations)

    @property
    def in_dim(self):
        return self.layer_sizes[0]

    @property
    def out_dim(self):
        return self.layer_sizes[-1]

    def params(self):
        """Flat parameter list [W0, b0, W1, b1, ...] (live references)."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out.append(w)
            out.append(b)
        return out

    def set_params(self, params):
        n = len(self.weights)
        if len(params) != 2 * n:
            raise DimensionMismatchError("parameter list length mismatch")
        for i in range(n):
            w, b = params[2 * i], params[2 * i + 1]
            if w.shape != self.weights[i].shape or b.shape != self.biases[i].shape:
                raise DimensionMismatchError(f"parameter {i} shape mismatch")
            self.weights[i] = np.asarray(w, dtype=np.float64)
            self.biases[i] = np.asarray(b, dtype=np.float64)

    def copy(self):
        return DenseNet(
            list(self.layer_sizes),
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            list(self.activations),
        )


def make_dense_net(layer_sizes, rng, hidden_activation="tanh", final_scale=1.0):
    """Uniform +-sqrt(6/(fan_in+fan_out)) weights, zero biases.

    ``final_scale`` multiplies the last layer's init (0.0 gives an exactly-zero
    output head, used for value networks).
    """
    n_layers = len(layer_sizes) - 1
    weights, biases, acts = [], [], []
    for i in range(n_layers):
        fan_in, fan_out = layer_sizes[i], layer_sizes[i + 1]
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        w = rng.uniform(-bound, bound, size=(fan_out, fan_in))
        if i == n_layers - 1:
            w *= final_scale
        weights.append(w)
        biases.append(np.zeros(fan_out))
        acts.append("identity" if i == n_layers - 1 else hidden_activation)
    return DenseNet(layer_sizes, weights, biases, acts)


def net_forward(net, x):
    """Evaluate the network on a vector (n_in,) or batch (B, n_in)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != net.in_dim:
        raise DimensionMismatchError(
            f"input has trailing dim {x.shape[-1]}, net expects {net.in_dim}"
        )
    a = x
    for w, b, act in zip(net.weights, net.biases, net.activations):
        a = _act(act, a @ w.T + b)
    return a


def net_forward_cached(net, x):
    """Forward pass retaining per-layer activations for a later backward pass."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != net.in_dim:
        raise DimensionMismatchError(
            f"input has trailing dim {x.shape[-1]}, net expects {net.in_dim}"
        )
    cache = [x]
    a = x
    for w, b, act in zip(net.weights, net.biases, net.activations):
        a = _act(act, a @ w.T + b)
        cache.append(a)
    return a, cache


def net_backward(net, cache, output_gradient):
    """Reverse-mode pass for d(output . output_gradient)/d(params, input).

    ``cache`` comes from :func:`net_forward_cached` on the same input. For a
    batch, gradients are summed over the batch rows. Returns
    ``(param_grads, input_grad)`` with ``param_grads`` ordered like
    ``net.params()``.
    """
    if cache is None or len(cache) != len(net.weights) + 1:
        raise MissingForwardCacheError("forward cache missing or inconsistent")
    g = np.asarray(output_gradient, dtype=np.float64)
    if g.shape != cache[-1].shape:
        raise DimensionMismatchError(
            f"output gradient shape {g.shape} does not match output {cache[-1].shape}"
        )
    batched = g.ndim == 2
    w_grads = [None] * len(net.weights)
    b_grads = [None] * len(net.biases)
    upstream = g
    for i in reversed(range(len(net.weights))):
        delta = upstream * _act_deriv_from_output(net.activations[i], cache[i + 1])
        prev = cache[i]
        if batched:
            w_grads[i] = delta.T @ prev
            b_grads[i] = delta.sum(axis=0)
        else:
            w_grads[i] = np.outer(delta, prev)
            b_grads[i] = delta
        upstream = delta @ net.weights[i]
    param_grads = []
    for wg, bg in zip(w_grads, b_grads):
        param_grads.append(wg)
        param_grads.append(bg)
    return param_grads, upstream


@dataclass
class AdamState:
    """Bias-corrected Adam moments, shape-congruent with a parameter list."""

    learning_rate: float = 3e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon_stability: float = 1e-8
    step_count: int = 0
    first_moment: list = field(default_factory=list)
    second_moment: list = field(default_factory=list)

    @classmethod
    def for_params(cls, params, learning_rate=3e-4, beta1=0.9, beta2=0.999,
                   epsilon_stability=1e-8):
        return cls(
            learning_rate=learning_rate,
            beta1=beta1,
            beta2=beta2,
            epsilon_stability=epsilon_stability,
            step_count=0,
            first_moment=[np.zeros_like(p) for p in params],
            second_moment=[np.zeros_like(p) for p in params],
        )

    def copy(self):
        return AdamState(
            self.learning_rate, self.beta1, self.beta2, self.epsilon_stability,
            self.step_count,
            [m.copy() for m in self.first_moment],
            [v.copy() for v in self.second_moment],
        )


def adam_step(params, grads, state):
    """One Adam update; returns the new parameter list, mutates ``state``.

    Raises :class:`NonFiniteGradientError` (before touching any state) if a
    gradient component is not finite.
    """
    if len(params) != len(grads) or len(params) != len(state.first_moment):
        raise DimensionMismatchError("params/grads/state lengths disagree")
    for i, g in enumerate(grads):
        if g.shape != params[i].shape:
            raise DimensionMismatchError(f"grad {i} shape {g.shape} != param shape")
        if not np.all(np.isfinite(g)):
            bad = int(np.flatnonzero(~np.isfinite(np.ravel(g)))[0])
            raise NonFiniteGradientError(i, bad)
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1 ** t
    corr2 = 1.0 - b2 ** t
    out = []
    for i, (p, g) in enumerate(zip(params, grads)):
        m = state.first_moment[i]
        v = state.second_moment[i]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / corr1
        v_hat = v / corr2
        out.append(p - state.learning_rate * m_hat / (np.sqrt(v_hat) + state.epsilon_stability))
    return out


# Text serialization: one record per net, floats via repr() so reads round-trip
# bit-exactly. Layout (documented order): magic+version line, layer sizes,
# activations, then for each layer a row-major weight line and a bias line.

NET_MAGIC = "densenet-v1"


def net_to_lines(net):
    lines = [NET_MAGIC,
             "sizes " + " ".join(str(s) for s in net.layer_sizes),
             "acts " + " ".join(net.activations)]
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        lines.append(f"W{i} " + " ".join(repr(float(v)) for v in w.ravel()))
        lines.append(f"b{i} " + " ".join(repr(float(v)) for v in b))
    return lines


def net_from_lines(lines):
    if not lines or lines[0].strip() != NET_MAGIC:
        raise ValueError(f"bad network record header (expected {NET_MAGIC!r})")
    sizes = [int(t) for t in lines[1].split()[1:]]
    acts = lines[2].split()[1:]
    weights, biases = [], []
    idx = 3
    for i in range(len(sizes) - 1):
        wvals = np.array([float(t) for t in lines[idx].split()[1:]])
        weights.append(wvals.reshape(sizes[i + 1], sizes[i]))
        bvals = np.array([float(t) for t in lines[idx + 1].split()[1:]])
        biases.append(bvals)
        idx += 2
    return DenseNet(sizes, weights, biases, acts)
