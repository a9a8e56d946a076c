"""Music / speech / applause probabilities and the tracking gate.

Two detectors share one interface: a DSP heuristic working on 1 s windows
every 0.1 s, and a replay detector reading precomputed probabilities. The gate
halts tracking on sustained applause or silence and resumes on sustained music
or voice, with a minimum dwell time between transitions.
"""

from __future__ import annotations

import csv
import logging
from collections import deque
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

import numpy as np
import scipy.fft

from .errors import ConfigError, InputFormatError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class DetectorOutput:
    t: float
    p_music: float
    p_speech: float
    p_applause: float


@dataclass(frozen=True)
class DetectorConfig:
    sample_rate: int = 16000
    window: float = 1.0
    hop: float = 0.1
    frame: float = 0.02
    frame_hop: float = 0.01
    silence_db: float = -45.0

    @property
    def window_samples(self) -> int:
        return int(round(self.window * self.sample_rate))

    @property
    def hop_samples(self) -> int:
        return int(round(self.hop * self.sample_rate))


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-np.clip(x, -50.0, 50.0)))


def _frame_powers(x, config: DetectorConfig):
    n = int(round(config.frame * config.sample_rate))
    h = int(round(config.frame_hop * config.sample_rate))
    frames = np.lib.stride_tricks.sliding_window_view(x, n)[::h]
    win = np.hanning(n)
    spec = np.abs(scipy.fft.rfft(frames * win, axis=1)) ** 2
    return frames, spec


def heuristic_scores(window, config: DetectorConfig = DetectorConfig()) -> dict:
    """Intermediate measurements behind :func:`classify_frame` (useful for tuning)."""
    x = np.asarray(window, dtype=np.float64)
    if x.ndim != 1 or x.size < config.window_samples:
        raise InputFormatError(f"detector window needs {config.window_samples} samples, got {x.size}")
    if not np.all(np.isfinite(x)):
        raise InputFormatError("detector window contains NaN or Inf")
    x = x[-config.window_samples:]
    rms_db = 10.0 * np.log10(np.mean(x ** 2) + 1e-20)
    frames, spec = _frame_powers(x, config)
    spec = spec + 1e-20
    # spectral flatness per frame, averaged
    flatness = float(np.mean(np.exp(np.mean(np.log(spec), axis=1)) / np.mean(spec, axis=1)))
    # energy envelope at the frame rate and its syllable-rate (2-8 Hz) modulation
    env = np.sqrt(np.mean(frames ** 2, axis=1))
    depth = float(np.std(env) / (np.mean(env) + 1e-12))
    mod = np.abs(scipy.fft.rfft(env - env.mean(), n=256)) ** 2
    freqs = np.fft.rfftfreq(256, d=config.frame_hop)
    band = mod[(freqs >= 2.0) & (freqs <= 8.0)].sum()
    total = mod[(freqs >= 0.5) & (freqs <= 25.0)].sum() + 1e-20
    modfrac = float(band / total)
    # onset density: frame energy rising >= 6 dB above the recent minimum, on a loud frame
    edb = 20.0 * np.log10(env + 1e-10)
    recent_min = np.minimum.reduce([np.roll(edb, k) for k in (1, 2, 3)])
    rise = (edb - recent_min)[3:]
    loud_frames = edb[3:] > edb.max() - 30.0
    onset = (rise >= 6.0) & loud_frames
    onsets = float(np.count_nonzero(onset[1:] & ~onset[:-1]) / config.window)
    return {"rms_db": rms_db, "flatness": flatness, "depth": depth, "modfrac": modfrac, "onsets": onsets}


def classify_frame(window, config: DetectorConfig = DetectorConfig(), t: float = 0.0) -> DetectorOutput:
    """Heuristic probabilities for one 1 s window.

    * music: tonal spectrum (low flatness) without dense irregular onsets
    * speech: deep energy modulation concentrated at 2-8 Hz
    * applause: noise-like spectrum with dense onsets

    All scores are gated by loudness so silence scores near zero.
    """
    s = heuristic_scores(window, config)
    loud = _sigmoid((s["rms_db"] - config.silence_db) / 3.0)
    tonal = _sigmoid(12.0 * (0.3 - s["flatness"]))
    noisy = _sigmoid(12.0 * (s["flatness"] - 0.3))
    dense = _sigmoid((s["onsets"] - 5.0) / 1.5)
    modulated = _sigmoid(10.0 * (s["modfrac"] - 0.45)) * _sigmoid(8.0 * (s["depth"] - 0.4))
    p_speech = loud * modulated
    p_music = loud * tonal * (1.0 - dense) * (1.0 - 0.7 * modulated)
    p_applause = loud * noisy * dense
    return DetectorOutput(float(t), float(p_music), float(p_speech), float(p_applause))


class HeuristicDetector:
    """Streaming wrapper: one output per ``hop`` once a full window is buffered.

    Each output is stamped with the end time of its window.
    """

    def __init__(self, config: DetectorConfig = DetectorConfig()):
        self.config = config
        self._buf = np.zeros(0)
        self._consumed = 0  # samples dropped from the front of _buf

    def push(self, chunk, sample_rate: int | None = None) -> list[DetectorOutput]:
        if sample_rate is not None and sample_rate != self.config.sample_rate:
            raise ConfigError(f"detector expects {self.config.sample_rate} Hz, got {sample_rate} Hz")
        self._buf = np.concatenate([self._buf, np.asarray(chunk, dtype=np.float64)])
        W, H = self.config.window_samples, self.config.hop_samples
        out = []
        while self._buf.size >= W:
            end = self._consumed + W
            out.append(classify_frame(self._buf[:W], self.config, end / self.config.sample_rate))
            self._buf = self._buf[H:]
            self._consumed += H
        return out


def save_detector_trace(outputs, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["t_s", "p_music", "p_speech", "p_applause"])
        for o in outputs:
            w.writerow([repr(o.t), repr(o.p_music), repr(o.p_speech), repr(o.p_applause)])


def load_detector_trace(path) -> list[DetectorOutput]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{path}: no such file")
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0] == "t_s":
                continue
            try:
                vals = [float(v) for v in row[:4]]
            except ValueError:
                raise InputFormatError(f"{path}:{lineno}: expected 't_s,p_music,p_speech,p_applause'") from None
            if len(vals) != 4 or not all(0.0 <= v <= 1.0 for v in vals[1:]):
                raise InputFormatError(f"{path}:{lineno}: malformed detector row {row}")
            if out and vals[0] <= out[-1].t:
                raise InputFormatError(f"{path}:{lineno}: times not increasing")
            out.append(DetectorOutput(*vals))
    return out


class ReplayDetector:
    """Hands out precomputed outputs as the stream clock advances."""

    def __init__(self, outputs):
        self.outputs = list(outputs)
        self._next = 0

    def until(self, t: float) -> list[DetectorOutput]:
        start = self._next
        while self._next < len(self.outputs) and self.outputs[self._next].t <= t + 1e-9:
            self._next += 1
        return self.outputs[start:self._next]


class GateState(str, Enum):
    ACTIVE = "active"
    HALTED = "halted"


@dataclass(frozen=True)
class GateConfig:
    on_threshold: float = 0.6
    off_threshold: float = 0.5
    dwell: float = 1.0
    silence_threshold: float = 0.2
    hop: float = 0.1

    @property
    def dwell_count(self) -> int:
        return max(1, int(round(self.dwell / self.hop)))


@dataclass(frozen=True)
class TrackingGate:
    state: GateState = GateState.ACTIVE
    since: float = float("-inf")
    config: GateConfig = GateConfig()

    @property
    def halted(self) -> bool:
        return self.state is GateState.HALTED


def update_gate(gate: TrackingGate, outputs) -> TrackingGate:
    """Apply the hysteresis rules to the most recent ``dwell`` of outputs.

    Halt when median applause exceeds ``on_threshold`` or all three medians are
    below ``silence_threshold``; resume when median music or speech exceeds
    ``off_threshold`` (and the halt condition no longer holds). No transition
    happens within ``dwell`` of the previous one or before a full dwell of
    history exists.
    """
    cfg = gate.config
    recent = list(outputs)[-cfg.dwell_count:]
    if len(recent) < cfg.dwell_count:
        return gate
    now = recent[-1].t
    if now - gate.since < cfg.dwell - 1e-9:
        return gate
    music = float(np.median([o.p_music for o in recent]))
    speech = float(np.median([o.p_speech for o in recent]))
    applause = float(np.median([o.p_applause for o in recent]))
    silent = max(music, speech, applause) < cfg.silence_threshold
    halt = applause > cfg.on_threshold or silent
    if gate.state is GateState.ACTIVE and halt:
        return replace(gate, state=GateState.HALTED, since=now)
    if gate.state is GateState.HALTED and not halt and max(music, speech) > cfg.off_threshold:
        return replace(gate, state=GateState.ACTIVE, since=now)
    return gate


class GateController:
    """Keeps the dwell-length history and the current gate; logs transitions."""

    def __init__(self, config: GateConfig = GateConfig()):
        self.gate = TrackingGate(config=config)
        self.history: deque = deque(maxlen=config.dwell_count)
        self.transitions: list[tuple[float, GateState]] = []

    @property
    def halted(self) -> bool:
        return self.gate.halted

    def update(self, output: DetectorOutput) -> TrackingGate:
        self.history.append(output)
        new = update_gate(self.gate, self.history)
        if new.state is not self.gate.state:
            logger.info("gate %s -> %s at %.2fs", self.gate.state.value, new.state.value, output.t)
            self.transitions.append((output.t, new.state))
        self.gate = new
        return new
