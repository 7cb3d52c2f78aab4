"""Model configurations, construction, size/compute accounting and model files."""

from __future__ import annotations

import hashlib
import json
import struct
import zlib
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import nnet
from .errors import ConfigError, InvalidArgumentError, ModelFormatError, UnsupportedVersionError
from .frontend import N_MELS, ContextConfig

LAYER_KINDS = ("svdf", "bottleneck", "dense", "conv", "softmax")


@dataclass(frozen=True)
class LayerSpec:
    kind: str
    size: int
    memory: int = 0
    activation: str = ""
    kernel: tuple = ()
    stride: tuple = ()
    bias: bool = True

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ConfigError(f"unknown layer kind {self.kind!r}")
        if self.size < 1:
            raise ConfigError(f"{self.kind} layer size must be >= 1")
        if self.kind == "svdf" and self.memory < 1:
            raise ConfigError("svdf layer needs memory >= 1")

    def to_dict(self):
        d = {"kind": self.kind, "size": self.size, "bias": self.bias}
        if self.kind == "svdf":
            d["memory"] = self.memory
            d["activation"] = self.activation or "relu"
        elif self.kind == "dense":
            d["activation"] = self.activation or "relu"
        elif self.kind == "conv":
            d["kernel"] = list(self.kernel)
            d["stride"] = list(self.stride)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for key in ("kernel", "stride"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def svdf(nodes, memory, activation="relu", bias=True):
    return LayerSpec("svdf", nodes, memory=memory, activation=activation, bias=bias)


def bottleneck(size, bias=True):
    return LayerSpec("bottleneck", size, bias=bias)


def dense(size, activation="relu", bias=True):
    return LayerSpec("dense", size, activation=activation, bias=bias)


def conv(filters, kernel=(8, 8), stride=(8, 8), bias=True):
    return LayerSpec("conv", filters, kernel=tuple(kernel), stride=tuple(stride), bias=bias)


def softmax(classes, bias=True):
    return LayerSpec("softmax", classes, bias=bias)


@dataclass(frozen=True)
class ModelConfig:
    name: str
    context: ContextConfig
    layers: tuple
    encoder_boundary: int = 0
    intermediate_softmax: bool = False
    input_offset: float = 0.0
    input_scale: float = 1.0
    features: int = N_MELS

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        if not self.layers or self.layers[-1].kind != "softmax":
            raise ConfigError("the last layer must be a softmax")
        if not 0 <= self.encoder_boundary <= len(self.layers) - 1:
            raise ConfigError("encoder_boundary must fall inside the layer list")
        if self.intermediate_softmax:
            if self.encoder_boundary < 1 or self.layers[self.encoder_boundary - 1].kind != "softmax":
                raise ConfigError("intermediate softmax must be the last encoder layer")
        inner = [s for s in self.layers[:-1] if s.kind == "softmax"]
        if len(inner) > int(self.intermediate_softmax):
            raise ConfigError("softmax layers are only allowed last or as the encoder head")
        if any(s.kind == "conv" for s in self.layers[1:]):
            raise ConfigError("a conv layer may only be the first layer")

    @property
    def input_dim(self):
        return self.features * self.context.width

    @property
    def num_classes(self):
        return self.layers[-1].size

    def encoder_config(self):
        """The encoder section alone, ending with its softmax head."""
        if not self.intermediate_softmax:
            raise ConfigError("config has no intermediate softmax to train an encoder against")
        return replace(self, name=self.name + "_encoder",
                       layers=self.layers[:self.encoder_boundary],
                       encoder_boundary=0, intermediate_softmax=False)

    def to_dict(self):
        return {
            "name": self.name,
            "context": {"left": self.context.left, "right": self.context.right,
                        "stride": self.context.stride},
            "layers": [s.to_dict() for s in self.layers],
            "encoder_boundary": self.encoder_boundary,
            "intermediate_softmax": self.intermediate_softmax,
            "input_offset": float(self.input_offset),
            "input_scale": float(self.input_scale),
            "features": self.features,
        }

    def to_text(self):
        """Canonical text form: sorted-key JSON."""
        return json.dumps(self.to_dict(), sort_keys=True, indent=1)

    @classmethod
    def from_dict(cls, d):
        try:
            return cls(
                name=d["name"],
                context=ContextConfig(**d["context"]),
                layers=tuple(LayerSpec.from_dict(s) for s in d["layers"]),
                encoder_boundary=int(d.get("encoder_boundary", 0)),
                intermediate_softmax=bool(d.get("intermediate_softmax", False)),
                input_offset=float(d.get("input_offset", 0.0)),
                input_scale=float(d.get("input_scale", 1.0)),
                features=int(d.get("features", N_MELS)),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed model config: {exc}") from exc

    @classmethod
    def from_text(cls, text):
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"model config is not valid JSON: {exc}") from exc


def e2e_config(name, nodes, bottleneck_size, memory=8, big_layers=4, small_nodes=32,
               small_memory=32, small_layers=3, intermediate_softmax=False,
               encoder_classes=9, context=ContextConfig(1, 1, 2), bias=True):
    layers = []
    for k in range(big_layers):
        layers.append(svdf(nodes, memory, bias=bias))
        if k < big_layers - 1:
            layers.append(bottleneck(bottleneck_size, bias=bias))
    if intermediate_softmax:
        layers.append(softmax(encoder_classes, bias=bias))
    boundary = len(layers)
    for _ in range(small_layers):
        layers.append(svdf(small_nodes, small_memory, bias=bias))
    layers.append(softmax(2, bias=bias))
    return ModelConfig(name, context, tuple(layers), encoder_boundary=boundary,
                       intermediate_softmax=intermediate_softmax)


def baseline_config(name="Baseline_1850K", filters=92, hidden=512, hidden_layers=3,
                    classes=9, kernel=(8, 8), context=ContextConfig(30, 10, 3), bias=True):
    layers = [conv(filters, kernel, kernel, bias=bias)]
    layers += [dense(hidden, "relu", bias=bias) for _ in range(hidden_layers)]
    layers.append(softmax(classes, bias=bias))
    return ModelConfig(name, context, tuple(layers))


_E2E_SIZES = {"E2E_700K": (1280, 64), "E2E_318K": (576, 64), "E2E_40K": (96, 32)}


def builtin_config(name, intermediate_softmax=False) -> ModelConfig:
    if name in _E2E_SIZES:
        nodes, bn = _E2E_SIZES[name]
        return e2e_config(name, nodes, bn, intermediate_softmax=intermediate_softmax)
    if name == "Baseline_1850K":
        return baseline_config()
    raise InvalidArgumentError(
        f"unknown config {name!r}; choose from {sorted(_E2E_SIZES) + ['Baseline_1850K']}")


BUILTIN_NAMES = ("E2E_700K", "E2E_318K", "E2E_40K", "Baseline_1850K")


def build_layers(config: ModelConfig):
    layers, dim = [], config.input_dim
    for spec in config.layers:
        if spec.kind == "svdf":
            layer = nnet.SvdfLayer(dim, spec.size, spec.memory, spec.activation or "relu", spec.bias)
        elif spec.kind == "bottleneck":
            layer = nnet.DenseLayer(dim, spec.size, "identity", spec.bias)
        elif spec.kind == "dense":
            layer = nnet.DenseLayer(dim, spec.size, spec.activation or "relu", spec.bias)
        elif spec.kind == "softmax":
            layer = nnet.DenseLayer(dim, spec.size, "softmax", spec.bias)
        else:
            layer = nnet.Conv1DLayer(dim, config.features, spec.size, spec.kernel, spec.stride,
                                     "relu", spec.bias)
        layers.append(layer)
        dim = layer.output_dim
    return layers


def count_params(config: ModelConfig) -> int:
    return sum(layer.num_params() for layer in build_layers(config))


def count_biases(config: ModelConfig) -> int:
    return sum(int(np.prod(s)) for layer in build_layers(config)
               for name, s in layer.param_shapes() if name == "bias")


def count_macs(config: ModelConfig, convention="per_inference") -> int:
    """Multiply-accumulates of one forward pass.

    ``per_10ms_frame`` amortizes one inference over the ``stride`` front-end
    frames it spans. Softmax normalization and bias adds are not counted.
    """
    per_inference = sum(layer.macs() for layer in build_layers(config))
    if convention == "per_inference":
        return per_inference
    if convention == "per_10ms_frame":
        return per_inference // config.context.stride
    raise InvalidArgumentError(f"unknown MAC convention {convention!r}")


@dataclass(frozen=True)
class ReceptiveField:
    steps: int
    stride: int
    left_context: int
    hop_ms: int = 10

    @property
    def ms(self):
        """History reached through SVDF memories, in milliseconds."""
        return self.steps * self.stride * self.hop_ms

    @property
    def frames(self):
        """Oldest front-end frame reached, counting the stacked left context."""
        return self.steps * self.stride + self.left_context


def receptive_field(config: ModelConfig) -> ReceptiveField:
    steps = sum(s.memory - 1 for s in config.layers if s.kind == "svdf")
    return ReceptiveField(steps, config.context.stride, config.context.left)


@dataclass(frozen=True)
class ParamEntry:
    layer: int
    role: str
    offset: int
    shape: tuple

    @property
    def size(self):
        return int(np.prod(self.shape))


class Model:
    """A linear stack of layers over one flat parameter vector.

    ``frozen`` is a per-parameter flag; the optimizer never writes to frozen
    entries. Inputs are normalized with the config's offset/scale before the
    first layer.
    """

    def __init__(self, config: ModelConfig, dtype=np.float32, seed=None):
        self.config = config
        self.dtype = np.dtype(dtype)
        self.layers = build_layers(config)
        self.index = []
        offset = 0
        for li, layer in enumerate(self.layers):
            for role, shape in layer.param_shapes():
                self.index.append(ParamEntry(li, role, offset, tuple(shape)))
                offset += int(np.prod(shape))
        self.params = np.zeros(offset, dtype=self.dtype)
        self.frozen = np.zeros(offset, dtype=bool)
        self._bind()
        if seed is not None:
            self.init_params(seed)

    def _bind(self):
        for li, layer in enumerate(self.layers):
            views = {e.role: self.params[e.offset:e.offset + e.size].reshape(e.shape)
                     for e in self.index if e.layer == li}
            layer.bind(views)

    @property
    def num_params(self):
        return self.params.size

    def init_params(self, seed):
        rng = np.random.default_rng(seed)
        for layer in self.layers:
            layer.init_params(rng)

    def layer_slice(self, start, stop=None):
        """Slice of the flat store covering layers [start, stop)."""
        stop = len(self.layers) if stop is None else stop
        entries = [e for e in self.index if start <= e.layer < stop]
        if not entries:
            return slice(0, 0)
        return slice(entries[0].offset, entries[-1].offset + entries[-1].size)

    def encoder_mask(self):
        mask = np.zeros(self.num_params, dtype=bool)
        mask[self.layer_slice(0, self.config.encoder_boundary)] = True
        return mask

    def freeze_encoder(self, frozen=True):
        self.frozen[self.layer_slice(0, self.config.encoder_boundary)] = frozen

    def layer_frozen(self):
        out = []
        for li in range(len(self.layers)):
            sl = self.layer_slice(li, li + 1)
            out.append(bool(self.frozen[sl].all()) if sl.stop > sl.start else True)
        return out

    def copy_layers_from(self, other: "Model", n_layers):
        """Copy the parameters of the first ``n_layers`` layers of ``other``."""
        for a, b in zip(self.layers[:n_layers], other.layers[:n_layers]):
            if a.param_shapes() != b.param_shapes() or a.kind != b.kind:
                raise ConfigError("layer geometry differs; cannot copy parameters")
        src = other.layer_slice(0, n_layers)
        self.params[self.layer_slice(0, n_layers)] = other.params[src]

    def copy(self):
        m = Model(self.config, self.dtype)
        m.params[:] = self.params
        m.frozen[:] = self.frozen
        return m

    def astype(self, dtype):
        m = Model(self.config, dtype)
        m.params[:] = self.params
        m.frozen[:] = self.frozen
        return m

    def with_config(self, config):
        """Same parameters under a config that differs only in metadata."""
        m = Model(config, self.dtype)
        if m.num_params != self.num_params:
            raise ConfigError("config changes the parameter layout")
        m.params[:] = self.params
        m.frozen[:] = self.frozen
        return m

    def checksum(self, sl=None):
        data = self.params if sl is None else self.params[sl]
        return hashlib.sha256(np.ascontiguousarray(data).tobytes()).hexdigest()

    # inference ---------------------------------------------------------

    def normalize(self, x):
        x = np.asarray(x, dtype=self.dtype)
        if self.config.input_offset != 0.0 or self.config.input_scale != 1.0:
            x = (x - self.dtype.type(self.config.input_offset)) * self.dtype.type(self.config.input_scale)
        return x

    def forward(self, x):
        """Batch forward over (batch, time, dim) or (time, dim) input."""
        return nnet.network_forward(self.layers, self.normalize(x))

    def predict_proba(self, seq):
        """Output probabilities for one (time, dim) sequence from a zero state."""
        return self.forward(np.asarray(seq)[None]).probs[0]

    def flat_grad(self, layer_grads):
        g = np.zeros(self.num_params, dtype=np.float64)
        for e in self.index:
            g[e.offset:e.offset + e.size] = np.asarray(layer_grads[e.layer][e.role]).reshape(-1)
        return g

    def gradient(self, x, labels, mask=None, truncate=None):
        """(mean frame CE, flat gradient) for a padded batch."""
        cache = self.forward(x)
        loss = batch_ce(cache.probs, labels, mask)
        grads = nnet.network_backward(self.layers, cache, labels, mask,
                                      trainable=[not f for f in self.layer_frozen()],
                                      truncate=truncate)
        return loss, self.flat_grad(grads), cache

    def new_states(self):
        return [layer.new_state() for layer in self.layers]

    def step(self, states, x):
        """Streaming inference of one stacked input; returns final probabilities."""
        outs = nnet.network_step(self.layers, states, self.normalize(x))
        return np.asarray(outs[-1], dtype=np.float64)


def batch_ce(probs, labels, mask=None, floor=1e-12):
    labels = np.asarray(labels)
    if mask is None:
        mask = np.ones(labels.shape, dtype=bool)
    picked = np.take_along_axis(probs, labels[..., None], axis=-1)[..., 0]
    losses = -np.log(np.maximum(picked, floor))
    return float((losses * mask).sum() / max(int(mask.sum()), 1))


# --- model files -----------------------------------------------------------

MAGIC = b"E2EKWS"
FORMAT_VERSION = 1
_HEADER = struct.Struct("<6sHI")


def model_to_bytes(model: Model) -> bytes:
    cfg = model.config.to_text().encode("utf-8")
    frozen = np.packbits(model.frozen.astype(np.uint8), bitorder="little").tobytes()
    body = b"".join([
        _HEADER.pack(MAGIC, FORMAT_VERSION, len(cfg)),
        cfg,
        struct.pack("<Q", model.num_params),
        frozen,
        np.ascontiguousarray(model.params, dtype="<f4").tobytes(),
    ])
    return body + struct.pack("<I", zlib.crc32(body))


def model_from_bytes(data: bytes) -> Model:
    if len(data) < _HEADER.size:
        raise ModelFormatError("file shorter than header", len(data))
    magic, version, cfg_len = _HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise ModelFormatError("bad magic", 0)
    if version != FORMAT_VERSION:
        raise UnsupportedVersionError(f"model format version {version} is not supported")
    pos = _HEADER.size
    if len(data) < pos + cfg_len + 8:
        raise ModelFormatError("truncated config block", len(data))
    try:
        config = ModelConfig.from_text(data[pos:pos + cfg_len].decode("utf-8"))
    except (UnicodeDecodeError, ConfigError) as exc:
        raise ModelFormatError(f"unreadable config: {exc}", pos) from exc
    pos += cfg_len
    (n_params,) = struct.unpack_from("<Q", data, pos)
    pos += 8
    n_frozen = (n_params + 7) // 8
    end = pos + n_frozen + 4 * n_params
    if len(data) < end + 4:
        raise ModelFormatError("truncated parameter block", len(data))
    if len(data) > end + 4:
        raise ModelFormatError("trailing bytes after checksum", end + 4)
    (crc,) = struct.unpack_from("<I", data, end)
    if crc != zlib.crc32(data[:end]):
        raise ModelFormatError("checksum mismatch", end)
    model = Model(config)
    if model.num_params != n_params:
        raise ModelFormatError("parameter count disagrees with config", pos - 8)
    bits = np.frombuffer(data, dtype=np.uint8, count=n_frozen, offset=pos)
    model.frozen[:] = np.unpackbits(bits, bitorder="little")[:n_params].astype(bool)
    model.params[:] = np.frombuffer(data, dtype="<f4", count=n_params, offset=pos + n_frozen)
    return model


def save_model(model: Model, path):
    Path(path).write_bytes(model_to_bytes(model))


def load_model(path) -> Model:
    return model_from_bytes(Path(path).read_bytes())
