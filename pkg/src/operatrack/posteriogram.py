"""Phoneme posteriograms: data model, storage, sources and the blank-masked distance.

The acoustic model itself is not part of this package. Posteriograms reach the
lyrics tracker through a :class:`PosteriogramSource`, either replayed from a
file or generated from a phoneme script.
"""

from __future__ import annotations

import struct
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, InputFormatError
from .features import FrameSequence
from .oltw import CosineDistance

POSTERIOGRAM_MAGIC = b"OFPOST1"
_HEADER = struct.Struct("<IIdIII")
ROW_SUM_TOL = 1e-4
POSTERIOGRAM_HOP = 0.04
MODEL_DELAY_FRAMES = 28

# 57 phoneme symbols (X-SAMPA style) covering EN/DE/FR/ES/IT.
PHONEMES = (
    "a", "e", "i", "o", "u", "y", "E", "O", "@", "2", "9", "A", "I", "U", "Y", "V",
    "{", "6", "a~", "o~", "e~", "9~",
    "p", "b", "t", "d", "k", "g", "f", "v", "s", "z", "S", "Z", "x", "h",
    "m", "n", "N", "J", "l", "L", "r", "R", "j", "w", "T", "D",
    "tS", "dZ", "ts", "dz", "C", "H", "G", "?", "rr",
)


@dataclass(frozen=True)
class PhonemeVocabulary:
    phonemes: tuple = PHONEMES
    space_index: int = 57
    instrumental_index: int = 58
    blank_index: int = 59

    def __post_init__(self):
        specials = {self.space_index, self.instrumental_index, self.blank_index}
        if len(specials) != 3 or any(not 0 <= i < self.total_classes for i in specials):
            raise ConfigError("special token indices must be distinct and inside the class range")
        if len(set(self.phonemes)) != len(self.phonemes):
            raise ConfigError("duplicate phoneme symbols")

    @property
    def total_classes(self) -> int:
        return len(self.phonemes) + 3

    @property
    def symbols(self) -> list[str]:
        """Class label for every output index."""
        out = [None] * self.total_classes
        out[self.space_index] = "<space>"
        out[self.instrumental_index] = "<instrumental>"
        out[self.blank_index] = "<blank>"
        it = iter(self.phonemes)
        return [s if s is not None else next(it) for s in out]

    def index(self, symbol: str) -> int:
        aliases = {"space": "<space>", " ": "<space>", "instrumental": "<instrumental>",
                   "blank": "<blank>"}
        symbol = aliases.get(symbol, symbol)
        try:
            return self.symbols.index(symbol)
        except ValueError:
            raise ConfigError(f"unknown phoneme symbol {symbol!r}") from None

    @property
    def non_blank_mask(self) -> np.ndarray:
        mask = np.ones(self.total_classes, dtype=bool)
        mask[self.blank_index] = False
        return mask


DEFAULT_VOCABULARY = PhonemeVocabulary()


def lyrics_distance(vocab: PhonemeVocabulary = DEFAULT_VOCABULARY, scale: float = 1.0) -> CosineDistance:
    """Cosine distance over the non-blank classes (no renormalisation after masking)."""
    return CosineDistance(mask=vocab.non_blank_mask, scale=scale)


def posteriogram_distance(a, b, vocab: PhonemeVocabulary = DEFAULT_VOCABULARY) -> float:
    a, b = np.asarray(a), np.asarray(b)
    n = vocab.total_classes
    if a.shape != (n,) or b.shape != (n,):
        raise InputFormatError(f"posteriogram rows must have length {n}, got {a.shape} and {b.shape}")
    return lyrics_distance(vocab)(a, b)


def _validate_rows(rows: np.ndarray, vocab: PhonemeVocabulary, tol: float = ROW_SUM_TOL) -> None:
    if rows.ndim != 2 or rows.shape[1] != vocab.total_classes:
        raise InputFormatError(
            f"vocabulary mismatch: posteriogram has dim {rows.shape[-1]}, vocabulary has {vocab.total_classes} classes"
        )
    bad = np.flatnonzero((rows < -tol).any(axis=1) | (rows > 1 + tol).any(axis=1))
    if bad.size:
        raise InputFormatError(f"row {bad[0]}: probabilities outside [0, 1]")
    sums = rows.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > tol)
    if bad.size:
        raise InputFormatError(f"row {bad[0]}: sums to {sums[bad[0]]:.6f}, expected 1")


@dataclass
class Posteriogram:
    seq: FrameSequence
    vocab: PhonemeVocabulary = DEFAULT_VOCABULARY
    model_delay: int = MODEL_DELAY_FRAMES  # metadata only, never applied as an offset

    def __post_init__(self):
        _validate_rows(self.seq.frames, self.vocab)

    @classmethod
    def from_rows(cls, rows, hop: float = POSTERIOGRAM_HOP, t0: float = 0.0,
                  vocab: PhonemeVocabulary = DEFAULT_VOCABULARY) -> "Posteriogram":
        return cls(FrameSequence(np.asarray(rows, dtype=np.float64), hop, t0), vocab)

    @property
    def rows(self) -> np.ndarray:
        return self.seq.frames

    @property
    def n_rows(self) -> int:
        return self.seq.n_frames

    @property
    def hop(self) -> float:
        return self.seq.frame_hop


def script_labels(script, n_rows: int, hop: float, vocab: PhonemeVocabulary) -> np.ndarray:
    """Class index per row for a ``[(symbol, seconds), ...]`` script, sampled at row centres."""
    ends = np.cumsum([float(dur) for _, dur in script])
    idx = np.array([vocab.index(sym) for sym, _ in script], dtype=int)
    centres = (np.arange(n_rows) + 0.5) * hop
    seg = np.minimum(np.searchsorted(ends, centres, side="right"), len(script) - 1)
    return idx[seg]


def soften(labels: np.ndarray, noise: float, rng: np.random.Generator, n_classes: int) -> np.ndarray:
    """One-hot rows plus uniform noise of the given level, renormalised to sum 1."""
    rows = np.zeros((labels.size, n_classes))
    rows[np.arange(labels.size), labels] = 1.0
    if noise > 0:
        rows += noise * rng.random(rows.shape)
        rows /= rows.sum(axis=1, keepdims=True)
    return rows


def synth_posteriogram(script, noise: float = 0.0, seed: int = 0,
                       vocab: PhonemeVocabulary = DEFAULT_VOCABULARY,
                       hop: float = POSTERIOGRAM_HOP) -> Posteriogram:
    """Piecewise-constant posteriogram from a phoneme script; deterministic given ``seed``."""
    if not script:
        raise ConfigError("empty script")
    for sym, dur in script:
        if dur <= 0:
            raise ConfigError(f"non-positive duration {dur} for {sym!r}")
    total = sum(float(d) for _, d in script)
    n = int(round(total / hop))
    labels = script_labels(script, n, hop, vocab)
    rows = soften(labels, noise, np.random.default_rng(seed), vocab.total_classes)
    return Posteriogram.from_rows(rows, hop, 0.0, vocab)


def vocab_sidecar(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".vocab.txt")


def save_posteriogram(p: Posteriogram, path) -> None:
    v = p.vocab
    with open(path, "wb") as fh:
        fh.write(POSTERIOGRAM_MAGIC)
        fh.write(_HEADER.pack(p.n_rows, v.total_classes, float(p.hop),
                              v.blank_index, v.space_index, v.instrumental_index))
        fh.write(np.ascontiguousarray(p.rows, dtype="<f4").tobytes())
    vocab_sidecar(path).write_text("\n".join(v.symbols) + "\n", encoding="utf-8")


def load_posteriogram(path) -> Posteriogram:
    path = Path(path)
    raw = path.read_bytes()
    if not raw.startswith(POSTERIOGRAM_MAGIC):
        raise InputFormatError(f"{path}: bad magic, not a posteriogram file")
    off = len(POSTERIOGRAM_MAGIC)
    if len(raw) < off + _HEADER.size:
        raise InputFormatError(f"{path}: truncated header")
    n, dim, hop, blank, space, instr = _HEADER.unpack_from(raw, off)
    vocab = DEFAULT_VOCABULARY
    sidecar = vocab_sidecar(path)
    if sidecar.exists():
        symbols = sidecar.read_text(encoding="utf-8").split("\n")[:dim]
        phonemes = tuple(s for i, s in enumerate(symbols) if i not in (blank, space, instr))
        if len(symbols) == dim and dim > 3:
            vocab = PhonemeVocabulary(phonemes, space, instr, blank)
    if dim != vocab.total_classes:
        raise InputFormatError(f"{path}: vocabulary mismatch, header dim {dim} != {vocab.total_classes}")
    if (blank, space, instr) != (vocab.blank_index, vocab.space_index, vocab.instrumental_index):
        vocab = PhonemeVocabulary(vocab.phonemes, space, instr, blank)
    body = raw[off + _HEADER.size:]
    if len(body) != n * dim * 4:
        raise InputFormatError(f"{path}: expected {n}x{dim} float32 payload, got {len(body)} bytes")
    rows = np.frombuffer(body, dtype="<f4").reshape(n, dim).astype(np.float64)
    try:
        return Posteriogram.from_rows(rows, hop, 0.0, vocab)
    except InputFormatError as exc:
        raise InputFormatError(f"{path}: {exc}") from None


class PosteriogramSource(ABC):
    """Streaming producer of posteriogram rows, one per ``hop`` seconds of audio.

    Callers push audio (or advance the clock) and pull the rows completed so
    far, each as ``(row_index, time, row)`` in time order.
    """

    hop: float = POSTERIOGRAM_HOP

    @abstractmethod
    def push(self, chunk, sample_rate: int) -> None: ...

    @abstractmethod
    def advance_to(self, t: float) -> None: ...

    @abstractmethod
    def pull(self) -> list: ...


@dataclass
class ReplayPosteriogramSource(PosteriogramSource):
    """Replays a precomputed posteriogram as audio time advances.

    Row ``k`` becomes available once the clock reaches its time plus
    ``latency`` seconds (0 by default).
    """

    posteriogram: Posteriogram
    latency: float = 0.0
    clock: float = 0.0
    _next: int = field(default=0, repr=False)

    @property
    def hop(self) -> float:
        return self.posteriogram.hop

    def push(self, chunk, sample_rate: int) -> None:
        self.advance_to(self.clock + len(chunk) / float(sample_rate))

    def advance_to(self, t: float) -> None:
        self.clock = max(self.clock, t)

    def pull(self) -> list:
        seq = self.posteriogram.seq
        last = int(np.floor((self.clock - self.latency - seq.t0) / seq.frame_hop + 1e-9))
        last = min(last, seq.n_frames - 1)
        out = [(k, float(seq.time_of(k)), seq.frames[k]) for k in range(self._next, last + 1)]
        self._next = max(self._next, last + 1)
        return out

    @property
    def exhausted(self) -> bool:
        return self._next >= self.posteriogram.n_rows


class ScriptedPosteriogramSource(ReplayPosteriogramSource):
    """Synthetic stand-in for the acoustic model, driven by a phoneme script."""

    def __init__(self, script, noise: float = 0.0, seed: int = 0,
                 vocab: PhonemeVocabulary = DEFAULT_VOCABULARY, latency: float = 0.0):
        super().__init__(synth_posteriogram(script, noise, seed, vocab), latency)
