"""Seeded synthetic keyword corpus with exact alignments.

Every phonetic component is rendered as a stable two-tone pattern (a crude
formant pair) lasting 80-200 ms, embedded in white noise. Positives contain
the keyword components in order; negatives contain noise plus phrases built
from the same inventory in any order except the keyword's own.

Audio is rendered on demand from a per-utterance seed, so a 10 hour negative
set costs nothing until it is scored.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError
from .frontend import MelConfig, num_frames, write_wav
from .labeling import OK_GOOGLE, AlignedUtterance, KeywordSpec, Segment, write_manifest

SILENCE = "<silence>"

# (low, high) tone frequencies in Hz per component
TONES = {
    "ou": (300, 2300), "k": (1000, 3600), "eI": (450, 1800), "g": (600, 2900),
    "u": (800, 1400), "@": (450, 2900), "l": (300, 1400), "h": (1000, 2300),
    "a": (800, 1800), "s": (600, 3600), "n": (450, 1400), "i": (300, 2900),
    "m": (600, 1800), "t": (1000, 1400), "o": (800, 2900), "e": (450, 3600),
}
FILLERS = ("a", "s", "n", "i", "m", "t", "o", "e")


@dataclass(frozen=True)
class SynthUtterance:
    id: str
    seed: int
    n_samples: int
    plan: tuple            # (label, start_sample, end_sample)
    is_keyword: bool
    gain: float
    pitch: float
    noise_level: float
    sample_rate: int = 16000

    @property
    def duration_s(self):
        return self.n_samples / self.sample_rate

    @property
    def keyword_end_ms(self):
        if not self.is_keyword:
            return None
        kw = [p for p in self.plan if p[0] != "_gap"]
        return int(round(kw[-1][2] * 1000 / self.sample_rate))

    def render(self) -> np.ndarray:
        rng = np.random.default_rng(self.seed)
        pcm = rng.standard_normal(self.n_samples) * self.noise_level
        sr = self.sample_rate
        for label, start, end in self.plan:
            if label not in TONES:
                continue
            n = end - start
            t = np.arange(n) / sr
            ramp = min(int(0.01 * sr), n // 2)
            env = np.ones(n)
            if ramp:
                env[:ramp] = np.linspace(0.0, 1.0, ramp)
                env[n - ramp:] = np.linspace(1.0, 0.0, ramp)
            lo, hi = TONES[label]
            jitter = rng.uniform(0.98, 1.02, 2)
            phase = rng.uniform(0, 2 * np.pi, 2)
            tone = (np.sin(2 * np.pi * lo * self.pitch * jitter[0] * t + phase[0])
                    + 0.7 * np.sin(2 * np.pi * hi * self.pitch * jitter[1] * t + phase[1]))
            pcm[start:end] += self.gain * env * tone
        return np.clip(pcm, -1.0, 1.0)

    def alignment(self, mel: MelConfig = MelConfig()) -> AlignedUtterance:
        """Frames are assigned to the component covering their window center."""
        frames = num_frames(self.n_samples, mel)
        hop, half = mel.hop_samples, mel.window_samples // 2
        segments = []
        for label, start, end in self.plan:
            if label == "_gap":
                continue
            first = max(0, -(-(start - half) // hop))
            last = min(frames - 1, -(-(end - half) // hop) - 1)
            if last >= first:
                segments.append(Segment(label, first, last))
        return AlignedUtterance(self.id, frames, tuple(segments), self.is_keyword,
                                keyword_end_ms=self.keyword_end_ms)


@dataclass
class SyntheticSet:
    positives: list = field(default_factory=list)
    negatives: list = field(default_factory=list)
    spec: KeywordSpec = OK_GOOGLE

    @property
    def negative_hours(self):
        return sum(u.duration_s for u in self.negatives) / 3600.0

    @property
    def utterances(self):
        return self.positives + self.negatives

    def write(self, out_dir, manifest_name="manifest.jsonl"):
        """Write WAVs plus a JSONL manifest; returns the manifest path."""
        out = Path(out_dir)
        (out / "audio").mkdir(parents=True, exist_ok=True)
        entries = []
        for u in self.utterances:
            rel = f"audio/{u.id}.wav"
            write_wav(str(out / rel), u.render())
            a = u.alignment()
            entries.append(AlignedUtterance(a.id, a.num_frames, a.segments, a.is_keyword,
                                            audio_path=rel, keyword_end_ms=a.keyword_end_ms,
                                            extra={"duration_ms": int(round(u.duration_s * 1000))}))
        path = out / manifest_name
        write_manifest(path, entries)
        return path


def _ms(rng, lo, hi, sr):
    return int(rng.uniform(lo, hi) * sr / 1000)


def _place(rng, labels, cursor, sr, plan):
    for label in labels:
        dur = _ms(rng, 80, 200, sr)
        plan.append((label, cursor, cursor + dur))
        cursor += dur
    return cursor


def _contains(seq, sub):
    n = len(sub)
    return any(tuple(seq[i:i + n]) == tuple(sub) for i in range(len(seq) - n + 1))


def _confusable_phrase(rng, spec, near_miss=0.0):
    """A non-keyword phrase: a reordering of the keyword components, a keyword
    prefix that stops before the final component, or a random sequence drawn
    from the whole inventory. With probability ``near_miss`` the phrase is
    instead the keyword with its final component dropped or swapped."""
    comps = list(spec.components)
    inventory = sorted(set(comps) | set(FILLERS))
    if near_miss and rng.random() < near_miss:
        others = [c for c in inventory if c != comps[-1]]
        if rng.random() < 0.5:
            return comps[:-1]
        return comps[:-1] + [others[rng.integers(len(others))]]
    while True:
        kind = rng.integers(3)
        if kind == 0:
            phrase = [comps[i] for i in rng.permutation(len(comps))]
        elif kind == 1 and len(comps) > 1:
            phrase = comps[:rng.integers(1, len(comps))]
        else:
            phrase = [inventory[i] for i in rng.integers(len(inventory), size=rng.integers(2, 10))]
        if not _contains(phrase, comps):
            return phrase


def make_positive(uid, seed, spec=OK_GOOGLE, noise_level=0.01, sr=16000):
    rng = np.random.default_rng(seed)
    plan = []
    cursor = _ms(rng, 200, 2500, sr)
    cursor = _place(rng, spec.components, cursor, sr, plan)
    n = cursor + _ms(rng, 300, 800, sr)
    return SynthUtterance(uid, int(rng.integers(2**63)), n, tuple(plan), True,
                          gain=float(rng.uniform(0.05, 0.15)), pitch=float(rng.uniform(0.95, 1.05)),
                          noise_level=noise_level, sample_rate=sr)


def make_negative(uid, seed, spec=OK_GOOGLE, noise_level=0.01, seconds=3.0, sr=16000,
                  near_miss=0.0):
    rng = np.random.default_rng(seed)
    total = int(seconds * sr)
    plan = []
    cursor = _ms(rng, 100, 600, sr)
    said = []
    while True:
        phrase = _confusable_phrase(rng, spec, near_miss)
        # a short gap between phrases must not splice the keyword together
        if _contains(said + phrase, spec.components):
            continue
        trial = []
        end = _place(rng, phrase, cursor, sr, trial)
        if end > total:
            break
        plan.extend(trial)
        said = (said + phrase)[-len(spec.components):]
        cursor = end + _ms(rng, 100, 600, sr)
    return SynthUtterance(uid, int(rng.integers(2**63)), total, tuple(plan), False,
                          gain=float(rng.uniform(0.05, 0.15)), pitch=float(rng.uniform(0.95, 1.05)),
                          noise_level=noise_level, sample_rate=sr)


def gen_synthetic_dataset(seed, n_pos, n_neg, spec: KeywordSpec = OK_GOOGLE, noise_level=0.01,
                          neg_seconds=3.0, prefix="", near_miss=0.0) -> SyntheticSet:
    """Deterministic corpus of ``n_pos`` keyword and ``n_neg`` non-keyword clips.

    ``near_miss`` raises the share of truncated-keyword phrases in the
    negatives; useful for training sets, left at 0 for evaluation suites.
    """
    if n_pos < 0 or n_neg < 0 or n_pos + n_neg == 0:
        raise InvalidArgumentError("need a positive number of utterances")
    seeds = np.random.SeedSequence(seed).generate_state(n_pos + n_neg, dtype=np.uint64)
    positives = [make_positive(f"{prefix}pos{k:05d}", int(seeds[k]), spec, noise_level)
                 for k in range(n_pos)]
    negatives = [make_negative(f"{prefix}neg{k:05d}", int(seeds[n_pos + k]), spec, noise_level,
                               neg_seconds, near_miss=near_miss) for k in range(n_neg)]
    return SyntheticSet(positives, negatives, spec)
