"""Per-frame training targets from force-aligned utterances.

Two label flavours are produced from the same alignment:

* binary end-to-end targets, positive only on the final keyword component
  (plus an optional fixed run of extra positives from its first frame);
* subword class ids for encoder pretraining and the baseline model.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError, InvalidArgumentError
from .frontend import ContextConfig, context_centers

BACKGROUND = 0


@dataclass(frozen=True)
class Segment:
    label: str
    start_frame: int
    end_frame: int  # inclusive

    @property
    def length(self):
        return self.end_frame - self.start_frame + 1


@dataclass(frozen=True)
class AlignedUtterance:
    id: str
    num_frames: int
    segments: tuple = ()
    is_keyword: bool = False
    audio_path: str | None = None
    feature_path: str | None = None
    keyword_end_ms: int | None = None
    extra: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        prev_end = -1
        for seg in self.segments:
            if seg.start_frame > seg.end_frame:
                raise DataError(f"{self.id}: segment {seg} ends before it starts")
            if seg.start_frame <= prev_end:
                raise DataError(f"{self.id}: segments overlap or are out of order")
            if seg.start_frame < 0 or seg.end_frame >= self.num_frames:
                raise DataError(f"{self.id}: segment {seg} outside {self.num_frames} frames")
            prev_end = seg.end_frame


@dataclass(frozen=True)
class KeywordSpec:
    components: tuple
    class_map: dict

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        if not self.components:
            raise InvalidArgumentError("keyword needs at least one component")

    @property
    def last_component(self):
        return self.components[-1]

    @property
    def num_classes(self):
        return max(self.class_map.values(), default=0) + 1

    def class_of(self, label):
        return self.class_map.get(label, BACKGROUND)

    def keyword_classes(self, skip=("<silence>",)):
        """Class ids of the keyword components in order, for posterior decoding."""
        return [self.class_of(c) for c in self.components if c not in skip]


# "k" and "h" share a class so one model serves "ok" and "hey" variants.
OK_GOOGLE = KeywordSpec(
    components=("ou", "k", "eI", "<silence>", "g", "u", "g", "@", "l"),
    class_map={"ou": 1, "k": 2, "h": 2, "eI": 3, "<silence>": 4,
               "g": 5, "u": 6, "@": 7, "l": 8},
)


@dataclass
class LabeledSequence:
    inputs: np.ndarray
    labels: np.ndarray
    id: str = ""

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if len(self.inputs) != len(self.labels):
            raise DataError(f"{self.id}: {len(self.inputs)} inputs but {len(self.labels)} labels")

    def __len__(self):
        return len(self.labels)


def final_component_segment(utt: AlignedUtterance, spec: KeywordSpec):
    hits = [s for s in utt.segments if s.label == spec.last_component]
    return hits[-1] if hits else None


def generate_e2e_labels(utt: AlignedUtterance, spec: KeywordSpec, extra_positives=0):
    """Binary targets: 1 over the final component, 0 everywhere else.

    The positive run starts at the final component's first frame and lasts
    ``max(extra_positives, segment length)`` frames, clipped to the utterance.
    """
    if extra_positives < 0:
        raise InvalidArgumentError("extra_positives must be >= 0")
    labels = np.zeros(utt.num_frames, dtype=np.int64)
    if not utt.is_keyword:
        return labels
    seg = final_component_segment(utt, spec)
    if seg is None:
        raise DataError(f"{utt.id}: keyword utterance has no {spec.last_component!r} segment")
    stop = min(seg.start_frame + max(extra_positives, seg.length), utt.num_frames)
    labels[seg.start_frame:stop] = 1
    return labels


def generate_encoder_labels(utt: AlignedUtterance, spec: KeywordSpec):
    labels = np.full(utt.num_frames, BACKGROUND, dtype=np.int64)
    for seg in utt.segments:
        labels[seg.start_frame:seg.end_frame + 1] = spec.class_of(seg.label)
    return labels


def align_labels_to_stride(labels, ctx: ContextConfig, pad=False):
    """Per-frame labels sampled at the strided inference centers."""
    labels = np.asarray(labels)
    return labels[context_centers(len(labels), ctx, pad)]


def labeled_sequence(utt, stacked, spec, ctx, target="e2e", extra_positives=0, pad=False):
    if target == "e2e":
        frame_labels = generate_e2e_labels(utt, spec, extra_positives)
    elif target == "encoder":
        frame_labels = generate_encoder_labels(utt, spec)
    else:
        raise InvalidArgumentError(f"unknown label target {target!r}")
    return LabeledSequence(stacked, align_labels_to_stride(frame_labels, ctx, pad), utt.id)


# --- manifests -------------------------------------------------------------

def utterance_to_json(utt: AlignedUtterance) -> dict:
    d = {"id": utt.id, "is_keyword": utt.is_keyword, "num_frames": utt.num_frames,
         "segments": [{"label": s.label, "start_frame": s.start_frame,
                       "end_frame": s.end_frame} for s in utt.segments]}
    if utt.audio_path is not None:
        d["audio_path"] = utt.audio_path
    if utt.feature_path is not None:
        d["feature_path"] = utt.feature_path
    if utt.keyword_end_ms is not None:
        d["keyword_end_ms"] = utt.keyword_end_ms
    d.update(utt.extra)
    return d


_KNOWN = {"id", "is_keyword", "num_frames", "segments", "audio_path", "feature_path",
          "keyword_end_ms"}


def utterance_from_json(d: dict) -> AlignedUtterance:
    try:
        segments = tuple(Segment(s["label"], int(s["start_frame"]), int(s["end_frame"]))
                         for s in d.get("segments", ()))
        num_frames = d.get("num_frames")
        if num_frames is None:
            num_frames = max((s.end_frame + 1 for s in segments), default=0)
        return AlignedUtterance(
            id=str(d["id"]), num_frames=int(num_frames), segments=segments,
            is_keyword=bool(d["is_keyword"]), audio_path=d.get("audio_path"),
            feature_path=d.get("feature_path"), keyword_end_ms=d.get("keyword_end_ms"),
            extra={k: v for k, v in d.items() if k not in _KNOWN})
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"bad manifest entry: {exc}") from exc


def write_manifest(path, utterances):
    with open(path, "w") as fh:
        for utt in utterances:
            fh.write(json.dumps(utterance_to_json(utt), sort_keys=True) + "\n")


def read_manifest(path):
    out = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                out.append(utterance_from_json(json.loads(line)))
            except json.JSONDecodeError as exc:
                raise DataError(f"{path}:{lineno}: {exc}") from exc
    return out


def resolve_path(manifest_path, p):
    p = Path(p)
    return p if p.is_absolute() else Path(manifest_path).parent / p
