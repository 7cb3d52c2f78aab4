"""Log-mel front-end: PCM audio in, 40-dim log filter-bank frames out.

Frames are computed over 30 ms Hann windows every 10 ms at 16 kHz, and can be
stacked with left/right context and subsampled with a stride to form network
inputs.
"""

from __future__ import annotations

import io
import wave
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.fft
from scipy.signal import get_window
from sklearn.base import BaseEstimator, TransformerMixin

from .errors import DataError, InvalidArgumentError

N_MELS = 40
SAMPLE_RATE = 16000


@dataclass(frozen=True)
class MelConfig:
    sample_rate: int = SAMPLE_RATE
    window_ms: int = 30
    hop_ms: int = 10
    n_fft: int = 512
    n_mels: int = N_MELS
    fmin: float = 125.0
    fmax: float = 7500.0
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.sample_rate != SAMPLE_RATE:
            raise InvalidArgumentError(
                f"only {SAMPLE_RATE} Hz audio is supported, got {self.sample_rate}")
        if self.window_samples > self.n_fft:
            raise InvalidArgumentError("window longer than FFT size")
        if not 0 <= self.fmin < self.fmax <= self.sample_rate / 2:
            raise InvalidArgumentError("need 0 <= fmin < fmax <= Nyquist")

    @property
    def window_samples(self):
        return self.sample_rate * self.window_ms // 1000

    @property
    def hop_samples(self):
        return self.sample_rate * self.hop_ms // 1000


@dataclass(frozen=True)
class FeatureFrame:
    values: np.ndarray
    timestamp_ms: int

    def __post_init__(self):
        if self.values.shape != (N_MELS,):
            raise InvalidArgumentError(f"frame must have {N_MELS} values")
        if not np.all(np.isfinite(self.values)):
            raise InvalidArgumentError("frame values must be finite")


@dataclass(frozen=True)
class ContextConfig:
    left: int = 0
    right: int = 0
    stride: int = 1

    def __post_init__(self):
        if self.left < 0 or self.right < 0:
            raise InvalidArgumentError("context sizes must be >= 0")
        if self.stride < 1:
            raise InvalidArgumentError("stride must be >= 1")

    @property
    def width(self):
        return self.left + 1 + self.right


@dataclass(frozen=True)
class StackedInput:
    values: np.ndarray
    center_timestamp_ms: int


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def mel_filterbank(config: MelConfig = MelConfig()) -> np.ndarray:
    """Triangular HTK-mel filters, shape (n_mels, n_fft // 2 + 1).

    Triangles are evaluated at the exact FFT bin frequencies rather than
    snapped to bins, so every filter has non-zero support at 512 points.
    """
    edges = mel_to_hz(np.linspace(hz_to_mel(config.fmin), hz_to_mel(config.fmax),
                                  config.n_mels + 2))
    freqs = np.arange(config.n_fft // 2 + 1) * config.sample_rate / config.n_fft
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lower) / (center - lower)
    falling = (upper - freqs) / (upper - center)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    fb.setflags(write=False)
    return fb


@lru_cache(maxsize=8)
def _analysis_window(n):
    w = get_window("hann", n, fftbins=True).astype(np.float64)
    w.setflags(write=False)
    return w


def _log_mel_block(windows, config):
    # windows: (n, window_samples) float64
    spec = scipy.fft.rfft(windows * _analysis_window(config.window_samples),
                          n=config.n_fft, axis=-1)
    power = spec.real ** 2 + spec.imag ** 2
    energies = power @ mel_filterbank(config).T
    return np.log(np.maximum(energies, config.log_floor)).astype(np.float32)


def _check_pcm(pcm):
    pcm = np.asarray(pcm, dtype=np.float64)
    if pcm.ndim != 1:
        raise InvalidArgumentError("PCM must be one-dimensional (mono)")
    if not np.all(np.isfinite(pcm)):
        raise InvalidArgumentError("PCM contains non-finite samples")
    return pcm


def compute_log_mel(pcm_window, config: MelConfig = MelConfig(), timestamp_ms=0) -> FeatureFrame:
    """Log-mel energies of exactly one analysis window."""
    pcm = _check_pcm(pcm_window)
    if pcm.shape[0] != config.window_samples:
        raise InvalidArgumentError(
            f"window must hold {config.window_samples} samples, got {pcm.shape[0]}")
    return FeatureFrame(_log_mel_block(pcm[None, :], config)[0], int(timestamp_ms))


def num_frames(n_samples, config: MelConfig = MelConfig()):
    if n_samples < config.window_samples:
        return 0
    return (n_samples - config.window_samples) // config.hop_samples + 1


def log_mel_frames(pcm, config: MelConfig = MelConfig(), block=4096) -> np.ndarray:
    """Array form of :func:`stream_frames`: shape (n_frames, n_mels), float32."""
    pcm = _check_pcm(pcm)
    n = num_frames(pcm.shape[0], config)
    out = np.empty((n, config.n_mels), dtype=np.float32)
    if n == 0:
        return out
    windows = np.lib.stride_tricks.sliding_window_view(pcm, config.window_samples)
    windows = windows[::config.hop_samples][:n]
    for start in range(0, n, block):
        out[start:start + block] = _log_mel_block(windows[start:start + block], config)
    return out


class StreamingFrontend:
    """Incremental log-mel extraction over arbitrarily chunked PCM.

    Holds the tail of the sample stream that has not yet completed a window.
    Not safe for concurrent use.
    """

    def __init__(self, config: MelConfig = MelConfig()):
        self.config = config
        self.reset()

    def reset(self):
        self._pending = np.zeros(0, dtype=np.float64)
        self._next_frame = 0

    @property
    def frames_emitted(self):
        return self._next_frame

    def push(self, chunk) -> np.ndarray:
        chunk = _check_pcm(chunk)
        buf = np.concatenate([self._pending, chunk])
        n = num_frames(buf.shape[0], self.config)
        frames = log_mel_frames(buf, self.config) if n else np.empty((0, self.config.n_mels), np.float32)
        self._pending = buf[n * self.config.hop_samples:]
        self._next_frame += n
        return frames

    def timestamps(self, first, count):
        return (np.arange(first, first + count) * self.config.hop_ms).astype(np.int64)


def stream_frames(pcm_chunks, config: MelConfig = MelConfig()):
    """Yield one FeatureFrame per 10 ms hop from an iterable of PCM chunks.

    A single array is treated as one chunk. Streams shorter than one window
    yield nothing.
    """
    if isinstance(pcm_chunks, np.ndarray):
        pcm_chunks = [pcm_chunks]
    fe = StreamingFrontend(config)
    for chunk in pcm_chunks:
        first = fe.frames_emitted
        frames = fe.push(chunk)
        for k, values in enumerate(frames):
            yield FeatureFrame(values, (first + k) * config.hop_ms)


def context_centers(n_frames, ctx: ContextConfig, pad=False):
    """Center frame indices of the inferences produced over ``n_frames``.

    Without padding only fully-supported centers are emitted, starting at
    ``ctx.left``. With padding, centers start at 0 and run to the last frame,
    with edge frames replicated.
    """
    if pad:
        return np.arange(0, n_frames, ctx.stride)
    last = n_frames - 1 - ctx.right
    if last < ctx.left:
        return np.zeros(0, dtype=np.int64)
    return np.arange(ctx.left, last + 1, ctx.stride)


def stack_context(frames, ctx: ContextConfig, pad=False) -> np.ndarray:
    """Array form of :func:`window_context`: (n_inferences, n_mels * width)."""
    frames = np.asarray(frames)
    if frames.ndim != 2:
        raise InvalidArgumentError("frames must be a 2-D (time, mel) array")
    n, dim = frames.shape
    centers = context_centers(n, ctx, pad)
    if centers.size == 0:
        return np.zeros((0, dim * ctx.width), dtype=frames.dtype)
    offsets = np.arange(-ctx.left, ctx.right + 1)
    idx = np.clip(centers[:, None] + offsets[None, :], 0, n - 1)
    return frames[idx].reshape(centers.size, dim * ctx.width)


def window_context(frames, ctx: ContextConfig, pad=False):
    """Stack frames with context, oldest first, one StackedInput per stride."""
    frames = list(frames)
    if not frames:
        return []
    arr = np.stack([f.values for f in frames])
    stacked = stack_context(arr, ctx, pad)
    centers = context_centers(len(frames), ctx, pad)
    return [StackedInput(row, frames[c].timestamp_ms) for row, c in zip(stacked, centers)]


class StreamingStacker:
    """Emits stacked inputs as soon as their right context has arrived."""

    def __init__(self, ctx: ContextConfig):
        self.ctx = ctx
        self.reset()

    def reset(self):
        self._history = []
        self._seen = 0
        self._next_center = self.ctx.left

    def push(self, frames):
        """Feed new frames; returns (center_indices, stacked_rows)."""
        frames = np.asarray(frames)
        self._history.extend(frames)
        self._seen += len(frames)
        centers, rows = [], []
        while self._next_center + self.ctx.right < self._seen:
            c = self._next_center
            base = self._seen - len(self._history)
            lo, hi = c - self.ctx.left - base, c + self.ctx.right + 1 - base
            rows.append(np.concatenate(self._history[lo:hi]))
            centers.append(c)
            self._next_center += self.ctx.stride
        keep = self.ctx.left + self.ctx.right + self.ctx.stride
        if len(self._history) > keep:
            del self._history[:len(self._history) - keep]
        dim = frames.shape[1] if frames.ndim == 2 else N_MELS
        return (np.asarray(centers, dtype=np.int64),
                np.stack(rows) if rows else np.zeros((0, dim * self.ctx.width), np.float32))


class LogMelFrontend(BaseEstimator, TransformerMixin):
    """Stateless transformer: 1-D PCM array -> (n_frames, 40) log-mel array."""

    def __init__(self, n_fft=512, fmin=125.0, fmax=7500.0, log_floor=1e-10):
        self.n_fft = n_fft
        self.fmin = fmin
        self.fmax = fmax
        self.log_floor = log_floor

    def _config(self):
        return MelConfig(n_fft=self.n_fft, fmin=self.fmin, fmax=self.fmax,
                         log_floor=self.log_floor)

    def fit(self, X=None, y=None):
        self._config()
        return self

    def transform(self, X):
        if isinstance(X, np.ndarray) and X.ndim == 1:
            return log_mel_frames(X, self._config())
        return [log_mel_frames(x, self._config()) for x in X]


class ContextStacker(BaseEstimator, TransformerMixin):
    """Stateless transformer: (n_frames, d) array -> strided context stacks."""

    def __init__(self, left=1, right=1, stride=2, pad=False):
        self.left = left
        self.right = right
        self.stride = stride
        self.pad = pad

    def fit(self, X=None, y=None):
        ContextConfig(self.left, self.right, self.stride)
        return self

    def transform(self, X):
        ctx = ContextConfig(self.left, self.right, self.stride)
        if isinstance(X, np.ndarray) and X.ndim == 2:
            return stack_context(X, ctx, self.pad)
        return [stack_context(x, ctx, self.pad) for x in X]


# --- audio I/O -------------------------------------------------------------

def read_wav(path_or_file) -> np.ndarray:
    """Read a PCM16 mono 16 kHz WAV into float64 samples in [-1, 1)."""
    try:
        with wave.open(path_or_file, "rb") as w:
            if w.getnchannels() != 1:
                raise DataError("WAV must be mono")
            if w.getsampwidth() != 2:
                raise DataError("WAV must be 16-bit PCM")
            if w.getframerate() != SAMPLE_RATE:
                raise DataError(f"WAV must be {SAMPLE_RATE} Hz, got {w.getframerate()}")
            raw = w.readframes(w.getnframes())
    except (wave.Error, EOFError) as exc:
        raise DataError(f"unreadable WAV: {exc}") from exc
    return pcm16_to_float(raw)


def write_wav(path_or_file, pcm):
    with wave.open(path_or_file, "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(SAMPLE_RATE)
        w.writeframes(float_to_pcm16(pcm))


def pcm16_to_float(raw: bytes) -> np.ndarray:
    if len(raw) % 2:
        raise DataError("odd byte count in PCM16 stream")
    return np.frombuffer(raw, dtype="<i2").astype(np.float64) / 32768.0


def float_to_pcm16(pcm) -> bytes:
    pcm = np.clip(np.asarray(pcm, dtype=np.float64), -1.0, 1.0 - 1.0 / 32768)
    return np.round(pcm * 32768.0).astype("<i2").tobytes()


def frames_to_bytes(frames) -> bytes:
    """Little-endian float32 records, n_mels values per record."""
    return np.ascontiguousarray(frames, dtype="<f4").tobytes()


def frames_to_csv(frames, timestamps=None) -> str:
    buf = io.StringIO()
    for k, row in enumerate(np.asarray(frames)):
        ts = k * 10 if timestamps is None else int(timestamps[k])
        buf.write(str(ts) + "," + ",".join(f"{v:.6g}" for v in row) + "\n")
    return buf.getvalue()
