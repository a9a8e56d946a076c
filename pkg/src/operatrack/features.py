"""Streaming MFCC front-end shared by the music tracker and the lyrics acoustic model.

Frames are Hann-windowed, zero-padded to ``n_fft``, mapped to a triangular mel
filterbank (HTK mel scale), log-compressed with a floor and decorrelated with an
orthonormal DCT-II. The first frame needs one full window of samples; there is
no padding at the start of a stream, so offline extraction and any chunking of
the same signal produce the same frames.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
import scipy.fft
from scipy.io import wavfile

from .errors import ConfigError, InputFormatError

logger = logging.getLogger(__name__)

FEATURE_MAGIC = b"OFFEAT1"
_HEADER = struct.Struct("<IIdd")


@dataclass(frozen=True)
class FeatureConfig:
    sample_rate: int
    window: float
    hop: float
    n_mfcc_computed: int
    n_mfcc_discarded_leading: int
    n_mels: int
    n_fft: int
    fmin: float = 0.0
    fmax: float | None = None  # None -> Nyquist
    log_floor: float = 1e-10

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ConfigError(f"sample_rate must be positive, got {self.sample_rate}")
        if not (0 < self.hop <= self.window):
            raise ConfigError(f"need 0 < hop <= window, got hop={self.hop} window={self.window}")
        if self.output_dim <= 0:
            raise ConfigError("n_mfcc_computed must exceed n_mfcc_discarded_leading")
        if self.n_mfcc_computed > self.n_mels:
            raise ConfigError("cannot compute more cepstral coefficients than mel bands")
        if self.n_fft < self.window_samples:
            raise ConfigError(f"n_fft={self.n_fft} shorter than window ({self.window_samples} samples)")

    @property
    def output_dim(self) -> int:
        return self.n_mfcc_computed - self.n_mfcc_discarded_leading

    @property
    def window_samples(self) -> int:
        return int(round(self.window * self.sample_rate))

    @property
    def hop_samples(self) -> int:
        return int(round(self.hop * self.sample_rate))

    @property
    def nyquist(self) -> float:
        return self.sample_rate / 2.0

    def n_frames(self, n_samples: int) -> int:
        if n_samples < self.window_samples:
            return 0
        return (n_samples - self.window_samples) // self.hop_samples + 1


# 120 coefficients computed, first 20 dropped -> 100-dim music features.
MUSIC_PRESET = FeatureConfig(
    sample_rate=44100, window=0.020, hop=0.010,
    n_mfcc_computed=120, n_mfcc_discarded_leading=20, n_mels=128, n_fft=4096,
)
LYRICS_PRESET = FeatureConfig(
    sample_rate=16000, window=0.020, hop=0.010,
    n_mfcc_computed=80, n_mfcc_discarded_leading=0, n_mels=80, n_fft=1024,
)
PRESETS = {"music": MUSIC_PRESET, "lyrics": LYRICS_PRESET}


@dataclass
class FrameSequence:
    """Time-indexed matrix of per-frame vectors; row i sits at ``t0 + i * frame_hop``."""

    frames: np.ndarray
    frame_hop: float
    t0: float = 0.0

    def __post_init__(self):
        self.frames = np.asarray(self.frames)
        if self.frames.ndim != 2:
            raise InputFormatError(f"frames must be a 2-D matrix, got shape {self.frames.shape}")
        if self.frame_hop <= 0:
            raise InputFormatError(f"frame_hop must be positive, got {self.frame_hop}")

    def __len__(self) -> int:
        return self.frames.shape[0]

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]

    @property
    def duration(self) -> float:
        return self.n_frames * self.frame_hop

    def time_of(self, index):
        return self.t0 + np.asarray(index) * self.frame_hop

    def index_at(self, t: float) -> int:
        i = int(round((t - self.t0) / self.frame_hop))
        return min(max(i, 0), self.n_frames - 1)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=float) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=float) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def mel_filterbank(config: FeatureConfig) -> np.ndarray:
    """Triangular filters, shape ``(n_mels, n_fft // 2 + 1)``, unit peak height."""
    fmax = config.nyquist if config.fmax is None else config.fmax
    edges = mel_to_hz(np.linspace(hz_to_mel(config.fmin), hz_to_mel(fmax), config.n_mels + 2))
    freqs = np.arange(config.n_fft // 2 + 1) * config.sample_rate / config.n_fft
    lower, center, upper = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lower) / (center - lower)
    falling = (upper - freqs) / (upper - center)
    fb = np.maximum(0.0, np.minimum(rising, falling))
    empty = np.flatnonzero(fb.sum(axis=1) == 0)
    if empty.size:
        raise ConfigError(
            f"{empty.size} empty mel filters (first at band {empty[0]}); increase n_fft or reduce n_mels"
        )
    fb.setflags(write=False)
    return fb


@lru_cache(maxsize=8)
def _hann(n: int) -> np.ndarray:
    # periodic Hann
    w = 0.5 - 0.5 * np.cos(2.0 * np.pi * np.arange(n) / n)
    w.setflags(write=False)
    return w


def mfcc_from_windows(windows: np.ndarray, config: FeatureConfig) -> np.ndarray:
    """Map a ``(n, window_samples)`` block of raw sample windows to ``(n, output_dim)`` features."""
    if windows.shape[0] == 0:
        return np.zeros((0, config.output_dim))
    spec = scipy.fft.rfft(windows * _hann(config.window_samples), n=config.n_fft, axis=1)
    power = spec.real ** 2 + spec.imag ** 2
    mel = power @ mel_filterbank(config).T
    logmel = np.log(np.maximum(mel, config.log_floor))
    cep = scipy.fft.dct(logmel, type=2, norm="ortho", axis=1)
    return cep[:, config.n_mfcc_discarded_leading:config.n_mfcc_computed]


def _check_samples(samples) -> np.ndarray:
    x = np.asarray(samples, dtype=np.float64)
    if x.ndim != 1:
        raise InputFormatError(f"expected mono PCM samples, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InputFormatError("audio contains NaN or Inf samples")
    return x


@dataclass
class ExtractorState:
    """Samples not yet consumed by a complete frame, plus the running frame count."""

    carry: np.ndarray = field(default_factory=lambda: np.zeros(0))
    frames_emitted: int = 0


def stream_mfcc(chunk, config: FeatureConfig, carry: ExtractorState | None = None,
                sample_rate: int | None = None) -> tuple[np.ndarray, ExtractorState]:
    """Consume one PCM chunk and return the newly completed frames and the new carry."""
    if sample_rate is not None and sample_rate != config.sample_rate:
        raise ConfigError(f"chunk sample rate {sample_rate} Hz != configured {config.sample_rate} Hz")
    x = _check_samples(chunk)
    carry = carry or ExtractorState()
    buf = np.concatenate([carry.carry, x]) if carry.carry.size else x
    n = config.n_frames(buf.size)
    if n == 0:
        return np.zeros((0, config.output_dim)), ExtractorState(buf.copy(), carry.frames_emitted)
    hop = config.hop_samples
    windows = np.lib.stride_tricks.sliding_window_view(buf, config.window_samples)[::hop][:n]
    frames = mfcc_from_windows(windows, config)
    return frames, ExtractorState(buf[n * hop:].copy(), carry.frames_emitted + n)


class MfccExtractor:
    """Stateful wrapper around :func:`stream_mfcc` for one audio stream."""

    def __init__(self, config: FeatureConfig):
        self.config = config
        self.state = ExtractorState()

    def push(self, chunk, sample_rate: int | None = None) -> np.ndarray:
        frames, self.state = stream_mfcc(chunk, self.config, self.state, sample_rate)
        return frames

    def time_of(self, frame_index: int) -> float:
        return self.config.window / 2.0 + frame_index * self.config.hop


def extract(samples, config: FeatureConfig) -> FrameSequence:
    """Offline extraction over a whole signal."""
    frames, _ = stream_mfcc(samples, config)
    return FrameSequence(frames, config.hop, t0=config.window / 2.0)


def load_audio(path) -> tuple[np.ndarray, int]:
    """Decode a WAV file to float mono in [-1, 1]; multichannel input is mean-downmixed."""
    path = Path(path)
    try:
        rate, data = wavfile.read(path)
    except FileNotFoundError:
        raise
    except Exception as exc:  # scipy raises ValueError / struct.error for junk
        raise InputFormatError(f"{path}: cannot decode audio ({exc})") from exc
    if data.dtype == np.uint8:
        x = (data.astype(np.float64) - 128.0) / 128.0
    elif np.issubdtype(data.dtype, np.integer):
        x = data.astype(np.float64) / float(-np.iinfo(data.dtype).min)
    else:
        x = data.astype(np.float64)
    if x.ndim == 2:
        x = x.mean(axis=1)
    if x.size == 0:
        raise InputFormatError(f"{path}: zero-length audio")
    return x, int(rate)


def precompute_reference_features(audio_file, config: FeatureConfig = MUSIC_PRESET) -> FrameSequence:
    samples, rate = load_audio(audio_file)
    if rate != config.sample_rate:
        raise ConfigError(f"{audio_file}: sample rate {rate} Hz, expected {config.sample_rate} Hz")
    if samples.size < config.window_samples:
        raise InputFormatError(f"{audio_file}: shorter than one analysis window")
    return extract(samples, config)


def write_feature_cache(seq: FrameSequence, path) -> None:
    frames = np.ascontiguousarray(seq.frames, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC)
        fh.write(_HEADER.pack(seq.n_frames, seq.dim, float(seq.frame_hop), float(seq.t0)))
        fh.write(frames.tobytes())


def read_feature_cache(path) -> FrameSequence:
    path = Path(path)
    raw = path.read_bytes()
    if path.suffix.lower() == ".csv":
        return read_feature_csv(path)
    if not raw.startswith(FEATURE_MAGIC):
        raise InputFormatError(f"{path}: bad magic, not a feature cache")
    off = len(FEATURE_MAGIC)
    if len(raw) < off + _HEADER.size:
        raise InputFormatError(f"{path}: truncated header")
    n, dim, hop, t0 = _HEADER.unpack_from(raw, off)
    body = raw[off + _HEADER.size:]
    if len(body) != n * dim * 4:
        raise InputFormatError(f"{path}: expected {n}x{dim} float32 payload, got {len(body)} bytes")
    frames = np.frombuffer(body, dtype="<f4").reshape(n, dim).astype(np.float64)
    return FrameSequence(frames, hop, t0)


def write_feature_csv(seq: FrameSequence, path) -> None:
    np.savetxt(path, seq.frames, delimiter=",", fmt="%.9g")


def read_feature_csv(path, frame_hop: float = 0.01, t0: float = 0.0) -> FrameSequence:
    try:
        frames = np.loadtxt(path, delimiter=",", ndmin=2)
    except ValueError as exc:
        raise InputFormatError(f"{path}: {exc}") from exc
    return FrameSequence(frames, frame_hop, t0)
