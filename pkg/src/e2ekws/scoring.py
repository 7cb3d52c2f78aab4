"""Keyword scores and detection events from per-inference network outputs."""

from __future__ import annotations

import itertools
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError
from .frontend import ContextConfig, MelConfig, StreamingFrontend, StreamingStacker

DEFAULT_SUPPRESSION_MS = 1000


@dataclass(frozen=True)
class ScorePoint:
    timestamp_ms: int
    score: float


@dataclass(frozen=True)
class DetectionEvent:
    trigger_timestamp_ms: int
    peak_score: float
    threshold: float

    def to_json(self):
        return {"trigger_timestamp_ms": int(self.trigger_timestamp_ms),
                "peak_score": float(self.peak_score), "threshold": float(self.threshold)}


def e2e_score(output):
    """Positive-class probability of a two-way softmax output."""
    output = np.asarray(output, dtype=np.float64)
    if output.shape[-1] != 2:
        raise InvalidArgumentError("end-to-end output must have 2 classes")
    return output[..., 1] if output.ndim > 1 else float(output[1])


# --- smoothed-posterior scoring ---------------------------------------------

def smooth_posteriors(posteriors, window=100):
    """Running mean over the last ``window`` rows (fewer at stream start)."""
    p = np.asarray(posteriors, dtype=np.float64)
    csum = np.cumsum(np.vstack([np.zeros((1, p.shape[1])), p]), axis=0)
    idx = np.arange(1, len(p) + 1)
    lo = np.maximum(idx - window, 0)
    return (csum[idx] - csum[lo]) / (idx - lo)[:, None]


def _ordered_max_product(window, classes):
    """max over j1 <= ... <= jK of prod_k window[j_k, classes[k]], per window row set.

    ``window`` has shape (..., W, C); the maximum is taken over the W axis.
    """
    best = np.maximum.accumulate(window[..., classes[0]], axis=-1)
    for c in classes[1:]:
        best = np.maximum.accumulate(best * window[..., c], axis=-1)
    return best[..., -1]


def baseline_scores(posteriors, keyword_classes, smooth_window=100, max_window=100):
    """Smoothed-posterior keyword score at every step of a posterior stream.

    At step t the score is the K-th root of the largest product of smoothed
    posteriors of the K keyword classes, taken in order at non-decreasing
    times within the last ``max_window`` steps.
    """
    p = np.asarray(posteriors, dtype=np.float64)
    if p.ndim != 2:
        raise InvalidArgumentError("posteriors must be (time, classes)")
    classes = list(keyword_classes)
    if not classes or max(classes) >= p.shape[1] or min(classes) < 0:
        raise InvalidArgumentError("keyword classes out of range")
    if len(p) == 0:
        return np.zeros(0)
    sm = smooth_posteriors(p, smooth_window)
    padded = np.vstack([np.zeros((max_window - 1, p.shape[1])), sm])
    windows = np.lib.stride_tricks.sliding_window_view(padded, max_window, axis=0)
    windows = np.moveaxis(windows, -1, 1)            # (T, W, C)
    out = np.empty(len(p))
    block = 4096
    for start in range(0, len(p), block):
        out[start:start + block] = _ordered_max_product(windows[start:start + block], classes)
    return out ** (1.0 / len(classes))


def baseline_score_bruteforce(posteriors, keyword_classes, smooth_window=100, max_window=100):
    """Score at the last step by enumerating every ordered index tuple."""
    p = np.asarray(posteriors, dtype=np.float64)
    t = len(p) - 1
    sm = np.array([p[max(0, j - smooth_window + 1):j + 1].mean(axis=0) for j in range(len(p))])
    start = max(0, t - max_window + 1)
    best = 0.0
    k = len(keyword_classes)
    for idx in itertools.combinations_with_replacement(range(start, t + 1), k):
        prod = 1.0
        for j, c in zip(idx, keyword_classes):
            prod *= sm[j, c]
        best = max(best, prod)
    return best ** (1.0 / k)


class SmootherState:
    """Streaming state of the smoothed-posterior scorer."""

    def __init__(self, num_classes=9, smooth_window=100, max_window=100):
        self.num_classes = num_classes
        self.smooth_window = smooth_window
        self.max_window = max_window
        self.reset()

    def reset(self):
        self.buffer = deque(maxlen=self.smooth_window)
        self.sums = np.zeros(self.num_classes)
        self.smoothed = deque(maxlen=self.max_window)

    def push(self, posteriors):
        p = np.asarray(posteriors, dtype=np.float64)
        if p.shape != (self.num_classes,):
            raise InvalidArgumentError(f"expected {self.num_classes} posteriors, got {p.shape}")
        self.buffer.append(p)
        # recomputed, not updated, so long streams accumulate no drift
        self.sums = np.sum(self.buffer, axis=0)
        self.smoothed.append(self.sums / len(self.buffer))


def baseline_score(state: SmootherState, posteriors, keyword_classes):
    state.push(posteriors)
    window = np.array(state.smoothed)
    return float(_ordered_max_product(window, list(keyword_classes)) ** (1.0 / len(keyword_classes)))


# --- events ----------------------------------------------------------------

def detect_events(timestamps, scores, threshold, suppression_ms=DEFAULT_SUPPRESSION_MS):
    """Fire on the first score >= threshold, then ignore ``suppression_ms``."""
    times = np.asarray(timestamps)
    scores = np.asarray(scores)
    events = []
    hot = np.flatnonzero(scores >= threshold)
    pos = 0
    while pos < hot.size:
        i = hot[pos]
        events.append(DetectionEvent(int(times[i]), float(scores[i]), float(threshold)))
        pos = np.searchsorted(times[hot], times[i] + suppression_ms, side="left")
    return events


def count_events(timestamps, scores, thresholds, suppression_ms=DEFAULT_SUPPRESSION_MS):
    """Event count of :func:`detect_events` for each threshold."""
    times = np.asarray(timestamps)
    scores = np.asarray(scores)
    counts = np.zeros(len(thresholds), dtype=np.int64)
    for k, thr in enumerate(thresholds):
        hot_t = times[scores >= thr]
        if hot_t.size == 0:
            # thresholds ascend, so no higher threshold fires either
            break
        n, pos = 0, 0
        while pos < hot_t.size:
            n += 1
            pos = np.searchsorted(hot_t, hot_t[pos] + suppression_ms, side="left")
        counts[k] = n
    return counts


def first_event_times(timestamps, scores, thresholds):
    """Time of the first score >= threshold per threshold (-1 if none)."""
    times = np.asarray(timestamps)
    scores = np.asarray(scores)
    # running max lets one searchsorted answer every threshold
    runmax = np.maximum.accumulate(scores) if scores.size else scores
    idx = np.searchsorted(runmax, thresholds, side="left")
    out = np.full(len(thresholds), -1, dtype=np.int64)
    ok = idx < scores.size
    out[ok] = times[idx[ok]]
    return out


# --- model-driven scoring --------------------------------------------------

@dataclass(frozen=True)
class ScoringRule:
    """How model outputs become a keyword score."""

    kind: str = "e2e"                      # "e2e" or "smoothed"
    keyword_classes: tuple = ()
    smooth_window: int = 100
    max_window: int = 100

    def __post_init__(self):
        if self.kind not in ("e2e", "smoothed"):
            raise InvalidArgumentError(f"unknown scoring rule {self.kind!r}")
        if self.kind == "smoothed" and not self.keyword_classes:
            raise InvalidArgumentError("smoothed scoring needs keyword classes")

    def batch(self, probs):
        if self.kind == "e2e":
            return e2e_score(probs)
        return baseline_scores(probs, self.keyword_classes, self.smooth_window, self.max_window)


def inference_times(centers, ctx: ContextConfig, mel: MelConfig = MelConfig()):
    """Time at which each inference can run: end of its newest context frame."""
    return (np.asarray(centers) + ctx.right) * mel.hop_ms + mel.window_ms


def score_frames(model, frames, rule: ScoringRule, mel: MelConfig = MelConfig()):
    """(timestamps_ms, scores) over a whole utterance's log-mel frames."""
    from .frontend import context_centers, stack_context

    ctx = model.config.context
    stacked = stack_context(frames, ctx)
    centers = context_centers(len(frames), ctx)
    if len(stacked) == 0:
        return np.zeros(0, np.int64), np.zeros(0)
    probs = model.predict_proba(stacked)
    return inference_times(centers, ctx, mel), np.clip(rule.batch(probs), 0.0, 1.0)


class StreamingDetector:
    """PCM chunks in; score points and detection events out.

    Owns its front-end buffer, SVDF memories and smoother; shares the model
    read-only. Not safe for concurrent use.
    """

    def __init__(self, model, rule: ScoringRule = ScoringRule(), threshold=0.5,
                 suppression_ms=DEFAULT_SUPPRESSION_MS, mel: MelConfig = MelConfig()):
        if not 0.0 < threshold < 1.0:
            raise InvalidArgumentError("threshold must lie in (0, 1)")
        self.model = model
        self.rule = rule
        self.threshold = threshold
        self.suppression_ms = suppression_ms
        self.mel = mel
        self.frontend = StreamingFrontend(mel)
        self.stacker = StreamingStacker(model.config.context)
        self.reset()

    def reset(self):
        self.frontend.reset()
        self.stacker.reset()
        self.states = self.model.new_states()
        self.smoother = SmootherState(self.model.config.num_classes, self.rule.smooth_window,
                                      self.rule.max_window)
        self._quiet_until = None

    def process(self, chunk):
        frames = self.frontend.push(chunk)
        centers, rows = self.stacker.push(frames)
        points, events = [], []
        ctx = self.model.config.context
        for c, row in zip(centers, rows):
            probs = self.model.step(self.states, row)
            if self.rule.kind == "e2e":
                score = e2e_score(probs)
            else:
                score = baseline_score(self.smoother, probs, self.rule.keyword_classes)
            score = min(max(score, 0.0), 1.0)
            ts = int(inference_times(c, ctx, self.mel))
            points.append(ScorePoint(ts, score))
            if score >= self.threshold and (self._quiet_until is None or ts >= self._quiet_until):
                events.append(DetectionEvent(ts, score, self.threshold))
                self._quiet_until = ts + self.suppression_ms
        return points, events


def detect_stream(model, pcm_chunks, threshold, suppression_ms=DEFAULT_SUPPRESSION_MS,
                  rule: ScoringRule = ScoringRule()):
    """Run a fresh streaming detector over an iterable of PCM chunks."""
    det = StreamingDetector(model, rule, threshold, suppression_ms)
    if isinstance(pcm_chunks, np.ndarray):
        pcm_chunks = [pcm_chunks]
    points, events = [], []
    for chunk in pcm_chunks:
        p, e = det.process(chunk)
        points.extend(p)
        events.extend(e)
    return events, points
