"""False-reject / false-accept evaluation over scored utterances.

Scoring (running models over audio) and evaluation (sweeping thresholds) are
kept apart: :func:`score_utterances` produces :class:`ScoredUtterance`
records once, and every ROC or operating-point query is a pure function of
those records.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, NoOperatingPointError
from .frontend import MelConfig, log_mel_frames, read_wav
from .labeling import resolve_path
from .scoring import DEFAULT_SUPPRESSION_MS, ScoringRule, count_events, detect_events, score_frames
from .topology import model_from_bytes, model_to_bytes

HIT_WINDOW_MS = (-100, 750)


def default_thresholds(n=1001):
    """``n`` evenly spaced thresholds strictly inside (0, 1)."""
    return np.arange(1, n + 1) / (n + 1)


@dataclass
class ScoredUtterance:
    id: str
    is_keyword: bool
    times: np.ndarray
    scores: np.ndarray
    duration_s: float
    keyword_end_ms: int | None = None

    def to_json(self):
        return {"id": self.id, "is_keyword": self.is_keyword, "duration_s": self.duration_s,
                "keyword_end_ms": self.keyword_end_ms, "times": self.times.tolist(),
                "scores": [round(float(s), 7) for s in self.scores]}

    @classmethod
    def from_json(cls, d):
        return cls(d["id"], bool(d["is_keyword"]), np.asarray(d["times"], dtype=np.int64),
                   np.asarray(d["scores"], dtype=np.float64), float(d["duration_s"]),
                   d.get("keyword_end_ms"))


@dataclass(frozen=True)
class RocPoint:
    threshold: float
    fa_per_hour: float
    fr_rate: float


def utterance_frames(utt, manifest_path=None, mel=MelConfig()):
    """Log-mel frames and duration of a synthetic or manifest utterance."""
    if hasattr(utt, "render"):
        pcm = utt.render()
        return log_mel_frames(pcm, mel), len(pcm) / mel.sample_rate
    if utt.feature_path is not None:
        path = resolve_path(manifest_path or ".", utt.feature_path)
        frames = (np.load(path) if str(path).endswith(".npy")
                  else np.fromfile(path, dtype="<f4").reshape(-1, mel.n_mels))
        duration = utt.extra.get("duration_ms", (len(frames) - 1) * mel.hop_ms + mel.window_ms) / 1000
        return frames, duration
    pcm = read_wav(str(resolve_path(manifest_path or ".", utt.audio_path)))
    return log_mel_frames(pcm, mel), len(pcm) / mel.sample_rate


def _score_one(utt, detectors, manifest_path, mel):
    frames, duration = utterance_frames(utt, manifest_path, mel)
    is_kw = bool(utt.is_keyword)
    out = {}
    for name, (model, rule) in detectors.items():
        times, scores = score_frames(model, frames, rule, mel)
        out[name] = ScoredUtterance(utt.id, is_kw, times, scores, duration, utt.keyword_end_ms)
    return out


_WORKER = {}


def _init_worker(blobs, manifest_path, mel):
    _WORKER["detectors"] = {name: (model_from_bytes(b), rule) for name, (b, rule) in blobs.items()}
    _WORKER["args"] = (manifest_path, mel)


def _worker_score(utt):
    return _score_one(utt, _WORKER["detectors"], *_WORKER["args"])


def score_utterances(utterances, detectors, manifest_path=None, mel=MelConfig(), jobs=1):
    """Score every utterance with every detector, extracting features once.

    ``detectors`` maps a name to ``(model, ScoringRule)``. Returns a dict of
    name to list of :class:`ScoredUtterance`, in input order whatever ``jobs``.
    """
    utterances = list(utterances)
    if jobs > 1 and len(utterances) > 1:
        blobs = {name: (model_to_bytes(m), rule) for name, (m, rule) in detectors.items()}
        with ProcessPoolExecutor(jobs, initializer=_init_worker,
                                 initargs=(blobs, manifest_path, mel)) as pool:
            rows = list(pool.map(_worker_score, utterances,
                                 chunksize=max(1, len(utterances) // (4 * jobs))))
    else:
        rows = [_score_one(u, detectors, manifest_path, mel) for u in utterances]
    return {name: [r[name] for r in rows] for name in detectors}


def _split(scored):
    pos = [s for s in scored if s.is_keyword]
    neg = [s for s in scored if not s.is_keyword]
    return pos, neg


def window_max(s: ScoredUtterance, hit_window=HIT_WINDOW_MS):
    lo, hi = s.keyword_end_ms + hit_window[0], s.keyword_end_ms + hit_window[1]
    sel = (s.times >= lo) & (s.times <= hi)
    return float(s.scores[sel].max()) if sel.any() else 0.0


def roc_curve(scored, thresholds=None, suppression_ms=DEFAULT_SUPPRESSION_MS,
              hit_window=HIT_WINDOW_MS):
    """ROC points over ascending thresholds.

    A positive counts as detected at threshold th when some score inside
    ``hit_window`` (ms relative to keyword end) reaches th. False accepts are
    detection events on negatives only, divided by negative audio hours.
    """
    thresholds = default_thresholds() if thresholds is None else np.asarray(thresholds, float)
    if thresholds.ndim != 1 or np.any(np.diff(thresholds) < 0):
        raise InvalidArgumentError("thresholds must be sorted ascending")
    pos, neg = _split(scored)
    if not pos:
        raise InvalidArgumentError("evaluation set has no positive utterances")
    hours = sum(s.duration_s for s in neg) / 3600.0
    peaks = np.array([window_max(s, hit_window) for s in pos])
    fr = (peaks[None, :] < thresholds[:, None]).mean(axis=1)
    events = np.zeros(len(thresholds), dtype=np.int64)
    for s in neg:
        events += count_events(s.times, s.scores, thresholds, suppression_ms)
    fa = events / hours if hours > 0 else np.where(events > 0, np.inf, 0.0)
    return [RocPoint(float(t), float(a), float(r)) for t, a, r in zip(thresholds, fa, fr)]


def fr_at_fa(roc, target_fa_per_hour=0.1, negative_hours=None, allow_low_resolution=False):
    """(threshold, FR) at the smallest threshold whose FA/h is within target.

    ``negative_hours`` guards against targets the data cannot resolve: at
    least ``1 / target`` hours of negatives are required unless
    ``allow_low_resolution`` is set.
    """
    if negative_hours is not None and not allow_low_resolution:
        if negative_hours * target_fa_per_hour < 1.0 - 1e-9:
            raise InvalidArgumentError(
                f"{negative_hours:.2f} h of negatives cannot resolve {target_fa_per_hour} FA/h")
    for p in roc:
        if p.fa_per_hour <= target_fa_per_hour:
            return p.threshold, p.fr_rate
    raise NoOperatingPointError(f"FA/h never drops to {target_fa_per_hour}")


def interpolate_fr(roc, fa_per_hour):
    """FR at an arbitrary FA/h by linear interpolation between ROC points."""
    fa = np.array([p.fa_per_hour for p in roc])[::-1]
    fr = np.array([p.fr_rate for p in roc])[::-1]
    return float(np.interp(fa_per_hour, fa, fr))


def latency_report(scored, threshold, suppression_ms=DEFAULT_SUPPRESSION_MS,
                   hit_window=HIT_WINDOW_MS):
    """Event timing on positives at one operating point.

    For every positive that fires, records its events relative to keyword
    end. ``in_window_fraction`` is the share of firing positives whose events
    all fall inside ``hit_window``.
    """
    pos, _ = _split(scored)
    offsets, firing, inside = [], 0, 0
    for s in pos:
        ev = detect_events(s.times, s.scores, threshold, suppression_ms)
        if not ev:
            continue
        firing += 1
        rel = [e.trigger_timestamp_ms - s.keyword_end_ms for e in ev]
        offsets.append(rel[0])
        if all(hit_window[0] <= r <= hit_window[1] for r in rel):
            inside += 1
    offsets = np.asarray(offsets, dtype=float)
    return {
        "threshold": float(threshold),
        "positives": len(pos),
        "firing": firing,
        "in_window_fraction": inside / firing if firing else float("nan"),
        "median_latency_ms": float(np.median(offsets)) if offsets.size else float("nan"),
        "mean_latency_ms": float(offsets.mean()) if offsets.size else float("nan"),
    }


def check_roc_monotone(roc):
    fr = np.array([p.fr_rate for p in roc])
    fa = np.array([p.fa_per_hour for p in roc])
    return bool(np.all(np.diff(fr) >= 0) and np.all(np.diff(fa) <= 0))


def roc_to_json(roc, **extra):
    d = {"threshold": [p.threshold for p in roc], "fa_per_hour": [p.fa_per_hour for p in roc],
         "fr_rate": [p.fr_rate for p in roc]}
    d.update(extra)
    return d


def roc_to_csv(roc, name=""):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "threshold", "fa_per_hour", "fr_rate"])
    for p in roc:
        w.writerow([name, f"{p.threshold:.6f}", f"{p.fa_per_hour:.6g}", f"{p.fr_rate:.6g}"])
    return buf.getvalue()


def save_scores(path, scored):
    with open(path, "w") as fh:
        for s in scored:
            fh.write(json.dumps(s.to_json()) + "\n")


def load_scores(path):
    with open(path) as fh:
        return [ScoredUtterance.from_json(json.loads(line)) for line in fh if line.strip()]


def evaluate(model, rule: ScoringRule, utterances, target_fa_per_hour=0.1, thresholds=None,
             suppression_ms=DEFAULT_SUPPRESSION_MS, manifest_path=None, jobs=1):
    """Score, sweep and summarize one detector in a single call."""
    scored = score_utterances(utterances, {"m": (model, rule)}, manifest_path, jobs=jobs)["m"]
    roc = roc_curve(scored, thresholds, suppression_ms)
    hours = sum(s.duration_s for s in scored if not s.is_keyword) / 3600.0
    thr, fr = fr_at_fa(roc, target_fa_per_hour, hours, allow_low_resolution=True)
    return {"roc": roc, "threshold": thr, "fr_rate": fr, "negative_hours": hours, "scored": scored}
