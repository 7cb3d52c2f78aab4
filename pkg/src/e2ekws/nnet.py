"""Minimal numpy neural-network core.

Every layer works on batches of sequences shaped ``(batch, time, features)``
and also exposes a single-frame ``step`` for streaming inference. Parameters
live in a flat array owned by the model; layers only hold views into it.

The rank-1 SVDF layer keeps, per node, the last ``memory`` outputs of its
feature filter. A new frame costs one feature-filter product per node; the
time filter is then applied across the remembered values.
"""

from __future__ import annotations

import numpy as np

from .errors import InvalidArgumentError, PreconditionError

ACTIVATIONS = ("relu", "identity", "softmax")


def relu(x):
    return np.maximum(x, 0)


def softmax(z, axis=-1):
    z = np.asarray(z, dtype=np.float64)
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def _activate(z, activation):
    if activation == "relu":
        return relu(z)
    if activation == "identity":
        return z
    if activation == "softmax":
        return softmax(z).astype(z.dtype)
    raise InvalidArgumentError(f"unknown activation {activation!r}")


def _activation_grad(dy, z, y, activation):
    if activation == "relu":
        return dy * (z > 0)
    if activation == "identity":
        return dy
    # intermediate softmax: full Jacobian-vector product
    return y * (dy - np.sum(dy * y, axis=-1, keepdims=True))


def _check_dim(x, dim, what="input"):
    if x.shape[-1] != dim:
        raise InvalidArgumentError(f"{what} has dimension {x.shape[-1]}, expected {dim}")


class Layer:
    kind = "layer"
    input_dim: int
    output_dim: int
    stateful = False

    def param_shapes(self):
        raise NotImplementedError

    def bind(self, views):
        for name, _ in self.param_shapes():
            setattr(self, name, views[name])

    def num_params(self):
        return sum(int(np.prod(s)) for _, s in self.param_shapes())

    def macs(self):
        raise NotImplementedError

    def new_state(self):
        return None


class SvdfState:
    """Per-layer memory of past feature-filter outputs, one row per node.

    ``buffer`` is a ring: column ``head`` holds the oldest entry.
    """

    def __init__(self, num_nodes, memory):
        self.buffer = np.zeros((num_nodes, memory), dtype=np.float64)
        self.head = 0
        self.fill_count = 0

    def reset(self):
        self.buffer[:] = 0.0
        self.head = 0
        self.fill_count = 0

    def push(self, values):
        self.buffer[:, self.head] = values
        self.head = (self.head + 1) % self.buffer.shape[1]
        self.fill_count += 1

    def ordered(self):
        """Buffer with columns ordered oldest to newest."""
        return np.roll(self.buffer, -self.head, axis=1)


def reset_state(state):
    if isinstance(state, SvdfState):
        state.reset()
    elif isinstance(state, (list, tuple)):
        for s in state:
            if s is not None:
                reset_state(s)


class SvdfLayer(Layer):
    kind = "svdf"
    stateful = True

    def __init__(self, input_dim, num_nodes, memory, activation="relu", bias=True):
        if min(input_dim, num_nodes, memory) < 1:
            raise InvalidArgumentError("SVDF needs N, T, F >= 1")
        if activation not in ("relu", "identity"):
            raise InvalidArgumentError(f"SVDF activation must be relu or identity, got {activation!r}")
        self.input_dim = int(input_dim)
        self.num_nodes = self.output_dim = int(num_nodes)
        self.memory = int(memory)
        self.activation = activation
        self.use_bias = bool(bias)

    def param_shapes(self):
        shapes = [("beta", (self.num_nodes, self.input_dim)),
                  ("alpha", (self.num_nodes, self.memory))]
        if self.use_bias:
            shapes.append(("bias", (self.num_nodes,)))
        return shapes

    def init_params(self, rng):
        f, n, t = self.input_dim, self.num_nodes, self.memory
        lim = np.sqrt(6.0 / (f + n))
        self.beta[:] = rng.uniform(-lim, lim, self.beta.shape)
        self.alpha[:] = rng.uniform(-np.sqrt(3.0 / t), np.sqrt(3.0 / t), self.alpha.shape)
        if self.use_bias:
            self.bias[:] = 0.0

    def macs(self):
        return self.num_nodes * (self.input_dim + self.memory)

    def new_state(self):
        return SvdfState(self.num_nodes, self.memory)

    def step(self, state, x):
        x = np.asarray(x)
        _check_dim(x, self.input_dim)
        if state.buffer.shape != (self.num_nodes, self.memory):
            raise InvalidArgumentError("state does not belong to this layer")
        state.push(self.beta.astype(np.float64) @ x.astype(np.float64))
        z = np.einsum("nt,nt->n", state.ordered(), self.alpha.astype(np.float64))
        if self.use_bias:
            z = z + self.bias
        return _activate(z, self.activation).astype(self.beta.dtype)

    def forward(self, x):
        _check_dim(x, self.input_dim)
        t = self.memory
        p = x @ self.beta.T                                     # (B, L, N)
        length = p.shape[1]
        padded = np.concatenate([np.zeros(p.shape[:1] + (t - 1,) + p.shape[2:], p.dtype), p], axis=1)
        z = np.zeros_like(p)
        for i in range(t):
            z += padded[:, i:i + length] * self.alpha[:, i]
        if self.use_bias:
            z += self.bias
        y = _activate(z, self.activation)
        return y, (x, padded, z)

    def backward(self, dy, cache, need_dx=True, truncate=None):
        x, padded, z = cache
        t = self.memory
        length = z.shape[1]
        dz = _activation_grad(dy, z, None, self.activation)
        windows = np.lib.stride_tricks.sliding_window_view(padded, t, axis=1)  # (B, L, N, T)
        grads = {"alpha": (windows * dz[..., None]).sum(axis=(0, 1))}
        dpadded = np.zeros_like(padded)
        steps = np.arange(length)
        for i in range(t):
            contrib = dz * self.alpha[:, i]
            if truncate:
                # drop gradient reaching frames from an earlier chunk
                keep = (steps % truncate) >= (t - 1 - i)
                contrib = contrib * keep[None, :, None]
            dpadded[:, i:i + length] += contrib
        dp = dpadded[:, t - 1:]
        grads["beta"] = dp.reshape(-1, dp.shape[-1]).T @ x.reshape(-1, x.shape[-1])
        if self.use_bias:
            grads["bias"] = dz.sum(axis=(0, 1))
        dx = dp @ self.beta if need_dx else None
        return dx, grads


def svdf_forward_batch(layer: SvdfLayer, inputs):
    """Direct evaluation of the rank-1 SVDF sum at every time step.

    Frames before the start of ``inputs`` count as zero vectors. Output at step
    t mixes the feature-filter responses of frames t-T+1 .. t, weighted by
    alpha[:, 0] (oldest) .. alpha[:, T-1] (current). Float64 throughout; this
    is the reference the streaming and vectorised paths are checked against.
    """
    xs = np.asarray(inputs, dtype=np.float64)
    if xs.ndim != 2:
        raise InvalidArgumentError("inputs must be (time, features)")
    _check_dim(xs, layer.input_dim)
    alpha = layer.alpha.astype(np.float64)
    beta = layer.beta.astype(np.float64)
    n_nodes, memory = alpha.shape
    bias = layer.bias.astype(np.float64) if layer.use_bias else np.zeros(n_nodes)
    out = np.zeros((xs.shape[0], n_nodes))
    for t in range(xs.shape[0]):
        acc = np.zeros(n_nodes)
        for i in range(memory):
            src = t - memory + 1 + i
            if src >= 0:
                acc += alpha[:, i] * (beta * xs[src]).sum(axis=1)
        out[t] = acc + bias
    if layer.activation == "relu":
        out = np.maximum(out, 0.0)
    return out


def svdf_forward_stream(layer: SvdfLayer, state: SvdfState, x):
    return layer.step(state, x)


class DenseLayer(Layer):
    kind = "dense"

    def __init__(self, input_dim, output_dim, activation="identity", bias=True):
        if min(input_dim, output_dim) < 1:
            raise InvalidArgumentError("dense layer dimensions must be >= 1")
        if activation not in ACTIVATIONS:
            raise InvalidArgumentError(f"unknown activation {activation!r}")
        self.input_dim = int(input_dim)
        self.output_dim = int(output_dim)
        self.activation = activation
        self.use_bias = bool(bias)

    def param_shapes(self):
        shapes = [("weights", (self.output_dim, self.input_dim))]
        if self.use_bias:
            shapes.append(("bias", (self.output_dim,)))
        return shapes

    def init_params(self, rng):
        lim = np.sqrt(6.0 / (self.input_dim + self.output_dim))
        self.weights[:] = rng.uniform(-lim, lim, self.weights.shape)
        if self.use_bias:
            self.bias[:] = 0.0

    def macs(self):
        return self.input_dim * self.output_dim

    def logits(self, x):
        z = x @ self.weights.T
        if self.use_bias:
            z = z + self.bias
        return z

    def step(self, state, x):
        _check_dim(np.asarray(x), self.input_dim)
        return _activate(self.logits(x), self.activation)

    def forward(self, x):
        _check_dim(x, self.input_dim)
        z = self.logits(x)
        y = _activate(z, self.activation)
        return y, (x, z, y)

    def backward(self, dy, cache, need_dx=True, truncate=None, dz=None):
        x, z, y = cache
        if dz is None:
            dz = _activation_grad(dy, z, y, self.activation)
        grads = {"weights": dz.reshape(-1, dz.shape[-1]).T @ x.reshape(-1, x.shape[-1])}
        if self.use_bias:
            grads["bias"] = dz.sum(axis=(0, 1))
        dx = dz @ self.weights if need_dx else None
        return dx, grads


class Conv1DLayer(Layer):
    """Valid (unpadded) convolution over a stacked (time, freq) input grid.

    The flat stacked input of ``frames * features`` values is viewed as a
    grid; trailing rows or columns that do not fill a whole stride step are
    dropped. Output is flattened as (time, freq, filter).
    """

    kind = "conv"

    def __init__(self, input_dim, features, filters, kernel=(8, 8), stride=(8, 8),
                 activation="relu", bias=True):
        if input_dim % features:
            raise InvalidArgumentError("conv input is not a whole number of frames")
        self.input_dim = int(input_dim)
        self.features = int(features)
        self.frames = self.input_dim // self.features
        self.filters = int(filters)
        self.kernel = tuple(int(k) for k in kernel)
        self.stride = tuple(int(s) for s in stride)
        if self.frames < self.kernel[0] or self.features < self.kernel[1]:
            raise InvalidArgumentError(
                f"input grid {self.frames}x{self.features} smaller than kernel {self.kernel}")
        self.out_time = (self.frames - self.kernel[0]) // self.stride[0] + 1
        self.out_freq = (self.features - self.kernel[1]) // self.stride[1] + 1
        self.output_dim = self.out_time * self.out_freq * self.filters
        self.activation = activation
        self.use_bias = bool(bias)

    def param_shapes(self):
        shapes = [("weights", (self.filters, self.kernel[0] * self.kernel[1]))]
        if self.use_bias:
            shapes.append(("bias", (self.filters,)))
        return shapes

    def init_params(self, rng):
        fan_in = self.kernel[0] * self.kernel[1]
        lim = np.sqrt(6.0 / (fan_in + self.filters))
        self.weights[:] = rng.uniform(-lim, lim, self.weights.shape)
        if self.use_bias:
            self.bias[:] = 0.0

    def macs(self):
        return self.out_time * self.out_freq * self.filters * self.kernel[0] * self.kernel[1]

    def _patches(self, x):
        lead = x.shape[:-1]
        grid = x.reshape(lead + (self.frames, self.features))
        win = np.lib.stride_tricks.sliding_window_view(grid, self.kernel, axis=(-2, -1))
        win = win[..., ::self.stride[0], ::self.stride[1], :, :][..., :self.out_time, :self.out_freq, :, :]
        return win.reshape(lead + (self.out_time, self.out_freq, -1))

    def _apply(self, x):
        z = self._patches(x) @ self.weights.T
        if self.use_bias:
            z = z + self.bias
        return z

    def step(self, state, x):
        x = np.asarray(x)
        _check_dim(x, self.input_dim)
        return _activate(self._apply(x), self.activation).reshape(-1)

    def forward(self, x):
        _check_dim(x, self.input_dim)
        z = self._apply(x)
        y = _activate(z, self.activation)
        return y.reshape(x.shape[:-1] + (self.output_dim,)), (x, z)

    def backward(self, dy, cache, need_dx=True, truncate=None):
        x, z = cache
        dz = _activation_grad(dy.reshape(z.shape), z, None, self.activation)
        patches = self._patches(x)
        grads = {"weights": dz.reshape(-1, self.filters).T @ patches.reshape(-1, patches.shape[-1])}
        if self.use_bias:
            grads["bias"] = dz.sum(axis=tuple(range(dz.ndim - 1)))
        if not need_dx:
            return None, grads
        dpatch = (dz @ self.weights).reshape(
            z.shape[:-1] + (self.kernel[0], self.kernel[1]))
        lead = x.shape[:-1]
        dgrid = np.zeros(lead + (self.frames, self.features), dtype=dz.dtype)
        st, sf = self.stride
        nt, nf = self.out_time, self.out_freq
        for a in range(self.kernel[0]):
            for b in range(self.kernel[1]):
                dgrid[..., a:a + st * (nt - 1) + 1:st, b:b + sf * (nf - 1) + 1:sf] += dpatch[..., a, b]
        return dgrid.reshape(x.shape), grads


def conv1d_forward(layer: Conv1DLayer, grid):
    """Apply a conv layer to one (time, freq) grid; returns (time, freq, filter)."""
    grid = np.asarray(grid)
    if grid.ndim != 2 or grid.shape[1] != layer.features:
        raise InvalidArgumentError("grid must be (time, features)")
    if grid.shape[0] < layer.kernel[0] or grid.shape[1] < layer.kernel[1]:
        raise InvalidArgumentError("grid smaller than the filter")
    if grid.shape[0] != layer.frames:
        raise InvalidArgumentError(f"layer expects {layer.frames} frames, got {grid.shape[0]}")
    out = layer.step(None, grid.reshape(-1))
    return out.reshape(layer.out_time, layer.out_freq, layer.filters)


# --- whole-network passes --------------------------------------------------

class ForwardCache:
    def __init__(self, caches, outputs, intermediate_probs=None):
        self.caches = caches
        self.outputs = outputs
        self.intermediate_probs = intermediate_probs

    @property
    def probs(self):
        return self.outputs[-1]


def network_forward(layers, x):
    """Run ``layers`` over a (batch, time, dim) array.

    Returns the per-layer activations and a cache for :func:`network_backward`.
    The final layer must be a softmax dense layer; its output is a float64
    probability array.
    """
    x = np.asarray(x)
    if x.ndim == 1:
        x = x[None, None, :]
    elif x.ndim == 2:
        x = x[None]
    _check_dim(x, layers[0].input_dim)
    caches, outputs = [], []
    h = x
    for layer in layers:
        h, cache = layer.forward(h)
        caches.append(cache)
        outputs.append(h)
    outputs[-1] = softmax(caches[-1][1])
    return ForwardCache(caches, outputs)


def ce_output_grad(probs, labels, mask=None):
    """d(mean frame CE)/d(logits) = (y - onehot(c)) / n_frames."""
    labels = np.asarray(labels)
    if mask is None:
        mask = np.ones(labels.shape, dtype=bool)
    n = max(int(mask.sum()), 1)
    d = probs.copy()
    b, t = np.nonzero(mask)
    d[b, t, labels[b, t]] -= 1.0
    d *= mask[..., None]
    return d / n


def network_backward(layers, cache, labels, mask=None, trainable=None, truncate=None):
    """Gradients of mean per-frame cross-entropy w.r.t. every layer's params.

    ``trainable`` is an optional per-layer flag list; backpropagation stops
    below the lowest trainable layer, and frozen layers report zero gradients.
    """
    if cache is None or not isinstance(cache, ForwardCache):
        raise PreconditionError("network_backward needs the cache of a forward pass")
    n = len(layers)
    if trainable is None:
        trainable = [True] * n
    lowest = next((i for i, t in enumerate(trainable) if t), n)
    grads = [None] * n
    dz = ce_output_grad(cache.probs, labels, mask)
    final = layers[-1]
    dz = dz.astype(final.weights.dtype)
    dh, grads[-1] = final.backward(None, cache.caches[-1], need_dx=n - 1 > lowest, dz=dz)
    for i in range(n - 2, -1, -1):
        if i < lowest:
            break
        dh, grads[i] = layers[i].backward(dh, cache.caches[i], need_dx=i > lowest,
                                          truncate=truncate)
    for i, layer in enumerate(layers):
        if grads[i] is None or not trainable[i]:
            grads[i] = {name: np.zeros(shape) for name, shape in layer.param_shapes()}
    return grads


def network_step(layers, states, x):
    """Streaming inference of one stacked input through every layer."""
    h = np.asarray(x)
    _check_dim(h, layers[0].input_dim)
    outs = []
    for layer, state in zip(layers, states):
        h = layer.step(state, h)
        outs.append(h)
    return outs
