"""scikit-learn style wrappers around training and scoring.

``X`` is always a list of per-utterance log-mel arrays of shape
``(n_frames, 40)`` (what :class:`~e2ekws.frontend.LogMelFrontend` produces);
``y`` is the matching list of :class:`~e2ekws.labeling.AlignedUtterance`
alignments, from which frame targets are derived.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted

from .errors import InvalidArgumentError
from .frontend import context_centers, stack_context
from .labeling import OK_GOOGLE, labeled_sequence
from .scoring import DEFAULT_SUPPRESSION_MS, ScoringRule, detect_events, inference_times
from .topology import Model, ModelConfig, builtin_config
from .training import TrainConfig, evaluate_loss, train, train_two_stage


def _check_frames(X):
    if isinstance(X, np.ndarray) and X.ndim == 2:
        X = [X]
    return [check_array(x, dtype=np.float32, ensure_min_samples=1) for x in X]


def normalization(frames):
    """Global (offset, scale) that maps the pooled log-mel values to zero mean, unit std."""
    pooled = np.concatenate([f.reshape(-1) for f in frames]).astype(np.float64)
    std = pooled.std()
    return float(pooled.mean()), float(1.0 / std) if std > 0 else 1.0


def build_sequences(frames, alignments, config: ModelConfig, spec=OK_GOOGLE, target="e2e",
                    extra_positives=0):
    """Stacked, labeled training sequences; utterances too short to stack are skipped."""
    seqs = []
    for f, utt in zip(frames, alignments):
        if len(f) != utt.num_frames:
            raise InvalidArgumentError(
                f"{utt.id}: {len(f)} frames but alignment covers {utt.num_frames}")
        stacked = stack_context(f, config.context)
        if len(stacked):
            seqs.append(labeled_sequence(utt, stacked, spec, config.context, target,
                                         extra_positives))
    return seqs


class _SequenceModel(BaseEstimator):
    """Shared fit/score plumbing; subclasses choose the config and targets."""

    def _resolve_config(self):
        raise NotImplementedError

    def _rule(self):
        raise NotImplementedError

    def _train_cfg(self, epochs, recipe="one_stage"):
        return TrainConfig(learning_rate=self.learning_rate, momentum=self.momentum,
                           batch_size=self.batch_size, epochs=epochs, seed=self.random_state,
                           recipe=recipe, target_loss=self.target_loss)

    def _sequences(self, frames, alignments, config, target):
        return build_sequences(frames, alignments, config, self.keyword_spec, target,
                               self.extra_positives)

    def _check_fitted(self):
        check_is_fitted(self, "model_")

    def predict_proba(self, X):
        """Per-inference class probabilities for each utterance."""
        self._check_fitted()
        ctx = self.model_.config.context
        return [self.model_.predict_proba(stack_context(f, ctx)) for f in _check_frames(X)]

    def decision_function(self, X):
        """Per-inference keyword score streams."""
        rule = self._rule()
        return [np.clip(rule.batch(p), 0.0, 1.0) if len(p) else np.zeros(0)
                for p in self.predict_proba(X)]

    def score_times(self, n_frames):
        ctx = self.model_.config.context
        return inference_times(context_centers(n_frames, ctx), ctx)

    def detect(self, X, threshold=None, suppression_ms=DEFAULT_SUPPRESSION_MS):
        threshold = self.threshold if threshold is None else threshold
        frames = _check_frames(X)
        out = []
        for f, s in zip(frames, self.decision_function(frames)):
            out.append(detect_events(self.score_times(len(f)), s, threshold, suppression_ms))
        return out

    def predict(self, X):
        """1 where the utterance fires at least once at ``threshold``."""
        return np.array([int(bool(ev)) for ev in self.detect(X)])

    def frame_loss(self, X, y):
        """Mean per-frame cross-entropy against targets derived from ``y``."""
        self._check_fitted()
        seqs = self._sequences(_check_frames(X), y, self.model_.config, self._target)
        return evaluate_loss(self.model_, seqs)


class SvdfKeywordSpotter(_SequenceModel):
    """End-to-end SVDF keyword spotter emitting one keyword score per inference.

    Parameters
    ----------
    config : str or ModelConfig
        A builtin name (``E2E_40K`` ...) or an explicit topology. For the
        two-stage recipe a builtin name gets its intermediate softmax added.
    recipe : {"one_stage", "two_stage"}
    encoder_epochs : int
        Stage-one epochs of the two-stage recipe.
    extra_positives : int
        Minimum length of the positive run from the final component's start.
    """

    _target = "e2e"

    def __init__(self, config="E2E_40K", recipe="one_stage", epochs=20, encoder_epochs=10,
                 learning_rate=0.02, momentum=0.9, batch_size=8, extra_positives=0,
                 target_loss=None, threshold=0.5, keyword_spec=OK_GOOGLE, random_state=0):
        self.config = config
        self.recipe = recipe
        self.epochs = epochs
        self.encoder_epochs = encoder_epochs
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.batch_size = batch_size
        self.extra_positives = extra_positives
        self.target_loss = target_loss
        self.threshold = threshold
        self.keyword_spec = keyword_spec
        self.random_state = random_state

    def _resolve_config(self):
        if isinstance(self.config, ModelConfig):
            return self.config
        return builtin_config(self.config, intermediate_softmax=self.recipe == "two_stage")

    def _rule(self):
        return ScoringRule("e2e")

    def fit(self, X, y):
        frames = _check_frames(X)
        offset, scale = normalization(frames)
        config = dataclasses.replace(self._resolve_config(), input_offset=offset, input_scale=scale)
        if config.num_classes != 2:
            raise InvalidArgumentError("end-to-end model must end in a 2-way softmax")
        e2e = self._sequences(frames, y, config, "e2e")
        if self.recipe == "two_stage":
            enc = self._sequences(frames, y, config, "encoder")
            self.model_, self.reports_ = train_two_stage(
                config, enc, e2e, self._train_cfg(self.encoder_epochs), self._train_cfg(self.epochs))
        else:
            self.model_ = Model(config, seed=self.random_state)
            self.reports_ = (train(self.model_, e2e, self._train_cfg(self.epochs)),)
        return self


class BaselineKeywordSpotter(_SequenceModel):
    """Convolutional subword classifier scored by smoothed posteriors."""

    _target = "encoder"

    def __init__(self, config="Baseline_1850K", epochs=20, learning_rate=0.02, momentum=0.9,
                 batch_size=8, smooth_window=100, max_window=100, target_loss=None,
                 threshold=0.5, keyword_spec=OK_GOOGLE, random_state=0, extra_positives=0):
        self.config = config
        self.epochs = epochs
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.batch_size = batch_size
        self.smooth_window = smooth_window
        self.max_window = max_window
        self.target_loss = target_loss
        self.threshold = threshold
        self.keyword_spec = keyword_spec
        self.random_state = random_state
        self.extra_positives = extra_positives

    def _resolve_config(self):
        if isinstance(self.config, ModelConfig):
            return self.config
        return builtin_config(self.config)

    def _rule(self):
        return ScoringRule("smoothed", tuple(self.keyword_spec.keyword_classes()),
                           self.smooth_window, self.max_window)

    def fit(self, X, y):
        frames = _check_frames(X)
        offset, scale = normalization(frames)
        config = dataclasses.replace(self._resolve_config(), input_offset=offset, input_scale=scale)
        if config.num_classes != self.keyword_spec.num_classes:
            raise InvalidArgumentError(
                f"model has {config.num_classes} outputs, keyword spec {self.keyword_spec.num_classes} classes")
        seqs = self._sequences(frames, y, config, "encoder")
        self.model_ = Model(config, seed=self.random_state)
        self.reports_ = (train(self.model_, seqs, self._train_cfg(self.epochs)),)
        return self
