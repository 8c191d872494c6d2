"""Minimal dense-network substrate: parameter blocks, ReLU MLPs, Adam.

Everything here is plain numpy.  Forward passes return a context holding the
intermediates the matching backward pass needs; gradients accumulate into the
owning ParamStore so several graph branches can share one block.
"""

import numpy as np

ADAM_EPS = 1e-9
WEIGHT_DECAY = 1e-5


class DimensionError(ValueError):
    """Raised when an input width does not match the layer it feeds."""


class ParamStore:
    """Named parameter blocks with per-block gradient and trainable flag."""

    def __init__(self):
        self.values = {}
        self.grads = {}
        self.trainable = {}

    def add(self, name, value, trainable=True):
        if name in self.values:
            raise ValueError(f"duplicate parameter block {name!r}")
        self.values[name] = value
        self.grads[name] = np.zeros_like(value)
        self.trainable[name] = trainable
        return value

    def zero_grad(self):
        for g in self.grads.values():
            g[:] = 0

    def accumulate(self, name, grad):
        self.grads[name] += grad

    def names(self):
        return list(self.values)

    def n_params(self):
        return sum(v.size for v in self.values.values())


def linear_init(rng, fan_in, fan_out, zero=False, dtype=np.float32):
    """Kaiming-uniform weight, zero bias.  zero=True zeroes the weight too,
    which makes the layer's output (and everything downstream of it) exactly
    null until the optimizer moves it."""
    if zero:
        w = np.zeros((fan_in, fan_out), dtype=dtype)
    else:
        bound = np.sqrt(6.0 / fan_in)
        w = rng.uniform(-bound, bound, size=(fan_in, fan_out)).astype(dtype)
    b = np.zeros(fan_out, dtype=dtype)
    return w, b


class MLP:
    """Fully connected ReLU stack.  Hidden layers ReLU, last layer linear
    unless head="tanh", in which case the output is tanh scaled by
    head_scale (used for the bounded offset head)."""

    def __init__(self, store, prefix, sizes, rng, head=None, head_scale=1.0,
                 zero_final=False, dtype=np.float32):
        self.store = store
        self.prefix = prefix
        self.sizes = list(sizes)
        self.head = head
        self.head_scale = head_scale
        self.n_layers = len(sizes) - 1
        for i in range(self.n_layers):
            zero = zero_final and i == self.n_layers - 1
            w, b = linear_init(rng, sizes[i], sizes[i + 1], zero=zero,
                              dtype=dtype)
            store.add(f"{prefix}.w{i}", w)
            store.add(f"{prefix}.b{i}", b)

    def layer(self, i):
        return (self.store.values[f"{self.prefix}.w{i}"],
                self.store.values[f"{self.prefix}.b{i}"])

    def forward(self, x, want_ctx=False):
        if x.shape[-1] != self.sizes[0]:
            raise DimensionError(
                f"{self.prefix}: input width {x.shape[-1]}, "
                f"expected {self.sizes[0]}")
        acts = [x]
        h = x
        for i in range(self.n_layers):
            w, b = self.layer(i)
            z = h @ w + b
            if i < self.n_layers - 1:
                h = np.maximum(z, 0)
            elif self.head == "tanh":
                h = np.tanh(z) * self.head_scale
            else:
                h = z
            acts.append(h)
        if not want_ctx:
            return h
        return h, {"acts": acts}

    def backward(self, ctx, upstream):
        """Accumulates parameter grads into the store, returns grad wrt the
        input.  ReLU's subgradient at 0 is taken as 0."""
        acts = ctx["acts"]
        g = upstream
        for i in range(self.n_layers - 1, -1, -1):
            w, _ = self.layer(i)
            out = acts[i + 1]
            if i == self.n_layers - 1 and self.head == "tanh":
                # out = s*tanh(z)  ->  d/dz = s*(1 - tanh(z)^2) = s - out^2/s
                g = g * (self.head_scale - out * out / self.head_scale)
            elif i < self.n_layers - 1:
                g = g * (out > 0)
            h_in = acts[i]
            self.store.accumulate(f"{self.prefix}.w{i}",
                                  h_in.reshape(-1, h_in.shape[-1]).T
                                  @ g.reshape(-1, g.shape[-1]))
            self.store.accumulate(f"{self.prefix}.b{i}",
                                  g.reshape(-1, g.shape[-1]).sum(axis=0))
            g = g @ w.T
        return g


class AdamState:
    """First/second moment buffers plus shared step counter."""

    def __init__(self, store, lr=1e-3, beta1=0.9, beta2=0.99,
                 eps=ADAM_EPS, weight_decay=WEIGHT_DECAY):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in store.values.items()}
        self.v = {k: np.zeros_like(v) for k, v in store.values.items()}


def adam_step(state, store, lr=None):
    """One update over every trainable block.  eps sits outside the square
    root, and weight decay is decoupled (applied to the value directly, not
    folded into the gradient)."""
    state.t += 1
    lr = state.lr if lr is None else lr
    c1 = 1 - state.beta1**state.t
    c2 = 1 - state.beta2**state.t
    for name, value in store.values.items():
        if not store.trainable[name]:
            continue
        g = store.grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        value -= lr * update
        if state.weight_decay:
            value -= lr * state.weight_decay * value
