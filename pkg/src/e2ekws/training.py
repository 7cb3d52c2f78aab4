"""Frame-level cross-entropy training with deterministic SGD.

Two recipes are supported:

``one_stage``
    Train the whole stack at once. If the encoder section was initialized
    from a pretrained model, ``adaptation_rate`` scales its gradients
    (0 keeps it fixed, 1 trains it like every other layer).
``two_stage``
    Pretrain an encoder (ending in its own softmax) on subword targets, then
    stack the decoder on top and train only the decoder, with the encoder
    frozen.
"""

from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigError, InvalidArgumentError, TrainingDivergedError
from .topology import Model, ModelConfig, batch_ce, save_model

log = logging.getLogger(__name__)

RECIPES = ("one_stage", "two_stage")


@dataclass
class TrainConfig:
    learning_rate: float = 0.02
    momentum: float = 0.9
    batch_size: int = 8
    epochs: int = 10
    seed: int = 0
    recipe: str = "one_stage"
    adaptation_rate: float = 1.0
    encoder_init: str | None = None
    freeze_encoder: bool = False
    clip_norm: float = 5.0
    truncate: int | None = None
    target_loss: float | None = None
    checkpoint_every: int = 0
    checkpoint_path: str | None = None

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise InvalidArgumentError("learning_rate must be >= 0")
        if not 0.0 <= self.adaptation_rate <= 1.0:
            raise InvalidArgumentError("adaptation_rate must lie in [0, 1]")
        if self.recipe not in RECIPES:
            raise InvalidArgumentError(f"recipe must be one of {RECIPES}")
        if self.batch_size < 1 or self.epochs < 0:
            raise InvalidArgumentError("batch_size must be >= 1 and epochs >= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise InvalidArgumentError("momentum must lie in [0, 1)")

    def to_text(self):
        return json.dumps(asdict(self), sort_keys=True, indent=1)

    @classmethod
    def from_text(cls, text):
        try:
            return cls(**json.loads(text))
        except (TypeError, json.JSONDecodeError) as exc:
            raise ConfigError(f"bad training config: {exc}") from exc


@dataclass
class TrainReport:
    epoch_losses: list = field(default_factory=list)
    final_loss: float = float("nan")
    checksum: str = ""
    wall_time: float = 0.0
    steps: int = 0


def ce_loss(output, c, floor=1e-12):
    """-log output[c] for one probability vector."""
    output = np.asarray(output, dtype=np.float64)
    if not 0 <= int(c) < output.shape[-1]:
        raise InvalidArgumentError(f"class {c} out of range for {output.shape[-1]} outputs")
    if abs(output.sum() - 1.0) > 1e-6:
        raise InvalidArgumentError("output is not a probability distribution")
    return float(-np.log(max(output[int(c)], floor)))


class SGD:
    """Plain SGD with classical momentum over a model's flat parameter store."""

    def __init__(self, model: Model, cfg: TrainConfig):
        self.model = model
        self.cfg = cfg
        self.velocity = np.zeros(model.num_params, dtype=np.float64)
        self.scale = np.ones(model.num_params, dtype=np.float64)
        if cfg.recipe == "one_stage" and cfg.adaptation_rate != 1.0:
            self.scale[model.encoder_mask()] = cfg.adaptation_rate

    def effective_grad(self, grad):
        g = np.asarray(grad, dtype=np.float64) * self.scale
        g[self.model.frozen] = 0.0
        if not np.all(np.isfinite(g)):
            raise TrainingDivergedError("non-finite gradient")
        if self.cfg.clip_norm:
            norm = float(np.sqrt(np.dot(g, g)))
            if norm > self.cfg.clip_norm:
                g *= self.cfg.clip_norm / norm
        return g

    def step(self, grad):
        g = self.effective_grad(grad)
        self.velocity *= self.cfg.momentum
        self.velocity += g
        live = ~self.model.frozen
        p = self.model.params
        p[live] = (p[live] - self.cfg.learning_rate * self.velocity[live]).astype(p.dtype)


def sgd_step(model: Model, grad, cfg: TrainConfig, optimizer: SGD | None = None):
    """One update; pass the same ``optimizer`` across calls to keep momentum."""
    (optimizer or SGD(model, cfg)).step(grad)


def pad_batch(seqs, dtype):
    lengths = [len(s) for s in seqs]
    t = max(lengths)
    dim = seqs[0].inputs.shape[1]
    x = np.zeros((len(seqs), t, dim), dtype=dtype)
    y = np.zeros((len(seqs), t), dtype=np.int64)
    mask = np.zeros((len(seqs), t), dtype=bool)
    for b, s in enumerate(seqs):
        x[b, :len(s)] = s.inputs
        y[b, :len(s)] = s.labels
        mask[b, :len(s)] = True
    return x, y, mask


def _check_dataset(model, dataset):
    if not dataset:
        raise InvalidArgumentError("training set is empty")
    for s in dataset:
        if s.inputs.ndim != 2 or s.inputs.shape[1] != model.config.input_dim:
            raise ConfigError(f"{s.id}: input dim {s.inputs.shape[-1]} != model {model.config.input_dim}")
        if len(s) == 0:
            raise InvalidArgumentError(f"{s.id}: empty sequence")
        if s.labels.min() < 0 or s.labels.max() >= model.config.num_classes:
            raise ConfigError(f"{s.id}: labels outside [0, {model.config.num_classes})")


def evaluate_loss(model: Model, dataset, batch_size=32):
    """Mean per-frame CE over a dataset, each sequence from a zero state."""
    total, frames = 0.0, 0
    for start in range(0, len(dataset), batch_size):
        x, y, mask = pad_batch(dataset[start:start + batch_size], model.dtype)
        n = int(mask.sum())
        total += batch_ce(model.forward(x).probs, y, mask) * n
        frames += n
    return total / max(frames, 1)


def train(model: Model, dataset, cfg: TrainConfig, on_epoch=None) -> TrainReport:
    """Fit ``model`` in place; returns the per-epoch loss history.

    Each sequence starts from zeroed SVDF memories. Sequence order is
    reshuffled every epoch from ``cfg.seed``.
    """
    _check_dataset(model, dataset)
    if cfg.recipe == "two_stage" or cfg.freeze_encoder:
        model.freeze_encoder(True)
    rng = np.random.default_rng(cfg.seed)
    opt = SGD(model, cfg)
    report = TrainReport()
    t0 = time.perf_counter()
    for epoch in range(cfg.epochs):
        order = rng.permutation(len(dataset))
        total, frames = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            batch = [dataset[i] for i in order[start:start + cfg.batch_size]]
            x, y, mask = pad_batch(batch, model.dtype)
            # overflow shows up as a non-finite loss or gradient, reported below
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grad, _ = model.gradient(x, y, mask, truncate=cfg.truncate)
            if not np.isfinite(loss):
                report.wall_time = time.perf_counter() - t0
                raise TrainingDivergedError(f"non-finite loss at epoch {epoch}", report)
            try:
                opt.step(grad)
            except TrainingDivergedError as exc:
                report.wall_time = time.perf_counter() - t0
                raise TrainingDivergedError(f"{exc} at epoch {epoch}", report) from None
            n = int(mask.sum())
            total += loss * n
            frames += n
            report.steps += 1
        epoch_loss = total / frames
        report.epoch_losses.append(epoch_loss)
        log.info("epoch %d loss %.5f", epoch, epoch_loss)
        if on_epoch is not None:
            on_epoch(epoch, epoch_loss, model)
        if cfg.checkpoint_every and cfg.checkpoint_path and (epoch + 1) % cfg.checkpoint_every == 0:
            save_model(model, cfg.checkpoint_path)
        if cfg.target_loss is not None and epoch_loss < cfg.target_loss:
            break
    report.final_loss = evaluate_loss(model, dataset)
    if not np.isfinite(report.final_loss):
        raise TrainingDivergedError("non-finite final loss", report)
    report.checksum = model.checksum()
    report.wall_time = time.perf_counter() - t0
    return report


def train_one_stage(config: ModelConfig, dataset, cfg: TrainConfig, encoder: Model | None = None,
                    dtype=np.float32):
    """End-to-end training, optionally starting the encoder from ``encoder``."""
    model = Model(config, dtype, seed=cfg.seed)
    if encoder is not None:
        model.copy_layers_from(encoder, config.encoder_boundary)
    report = train(model, dataset, cfg)
    return model, report


def train_two_stage(config: ModelConfig, encoder_data, decoder_data, encoder_cfg: TrainConfig,
                    decoder_cfg: TrainConfig, dtype=np.float32):
    """Encoder pretraining on subword targets, then decoder-only training.

    ``config`` is the composed topology with its intermediate softmax. Returns
    the composed model (encoder frozen) and both stage reports.
    """
    if not config.intermediate_softmax:
        raise ConfigError("two-stage training needs a config with an intermediate softmax")
    enc_cfg = config.encoder_config()
    encoder = Model(enc_cfg, dtype, seed=encoder_cfg.seed)
    enc_report = train(encoder, encoder_data, replace_recipe(encoder_cfg, "one_stage"))
    model = Model(config, dtype, seed=decoder_cfg.seed)
    model.copy_layers_from(encoder, config.encoder_boundary)
    dec_report = train(model, decoder_data, replace_recipe(decoder_cfg, "two_stage"))
    return model, (enc_report, dec_report)


def replace_recipe(cfg: TrainConfig, recipe):
    d = asdict(cfg)
    d["recipe"] = recipe
    if recipe == "one_stage":
        d["adaptation_rate"] = 1.0
    return TrainConfig(**d)
