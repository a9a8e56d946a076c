"""Synthetic reference/target pairs with a known time warp.

Features are synthesised directly in feature space as smooth random
trajectories; the target samples the reference trajectory through the warp and
adds noise. Posteriograms come from a random phoneme script over the voice
parts (the instrumental token elsewhere). Applause and pauses are spliced into
the target, where the ground truth stays flat.

Scenario JSON schema::

    {
      "seed": 0,
      "bar_duration": 2.0,            # seconds per bar in the reference
      "feature_dim": 100,
      "frame_hop": 0.01,
      "smoothness": 3.0,              # trajectory correlation, in frames
      "feature_noise": 0.3,           # std of target feature noise (music parts)
      "voice_feature_noise": 0.3,
      "voice_features": "aligned",    # or "decorrelated"
      "posteriogram_noise": 0.3,      # target posteriogram softening
      "reference_posteriogram_noise": 0.1,
      "parts": [{"title": "Ouverture", "kind": "music", "duration": 40.0, "slope": 1.0}, ...],
      "warp": [[0, 0], [40, 38], ...],   # optional (t_ref, t_perf) knots; overrides part slopes
      "events": [{"kind": "applause", "t_perf": 10.0, "duration": 3.0}]
    }
"""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter1d

from .detectors import DetectorOutput
from .errors import ConfigError
from .features import FrameSequence
from .posteriogram import (DEFAULT_VOCABULARY, POSTERIOGRAM_HOP, Posteriogram, script_labels,
                           soften)
from .segmentation import BarAnnotation, Dominance, PartSegment, classify_parts

SLOPE_MIN, SLOPE_MAX = 0.5, 2.0


class WarpMap:
    """Piecewise-linear map from performance time to reference time.

    ``knots`` are ``(t_ref, t_perf)`` pairs. Outside inserted events (where
    ``t_ref`` stays flat) every segment has slope ``dt_ref / dt_perf`` within
    ``[0.5, 2.0]``. Beyond the last knot the final slope is extended.
    """

    def __init__(self, knots, flat_spans=()):
        k = np.asarray(knots, dtype=float)
        if k.ndim != 2 or k.shape[1] != 2 or len(k) < 2:
            raise ConfigError("warp needs at least two (t_ref, t_perf) knots")
        if k[0, 0] != 0.0 or k[0, 1] != 0.0:
            raise ConfigError("first warp knot must be (0, 0)")
        self.ref = k[:, 0].copy()
        self.perf = k[:, 1].copy()
        self.flat_spans = [tuple(map(float, s)) for s in flat_spans]
        dp, dr = np.diff(self.perf), np.diff(self.ref)
        if np.any(dp <= 0):
            raise ConfigError("warp performance times must strictly increase")
        if np.any(dr < 0):
            raise ConfigError("warp reference times must not decrease")
        for j in np.flatnonzero(dr > 0):
            s = dr[j] / dp[j]
            if not SLOPE_MIN - 1e-9 <= s <= SLOPE_MAX + 1e-9:
                raise ConfigError(f"infeasible warp: slope {s:.3f} outside [{SLOPE_MIN}, {SLOPE_MAX}]")
        for j in np.flatnonzero(dr == 0):
            if not any(abs(a - self.perf[j]) < 1e-9 and abs(b - self.perf[j + 1]) < 1e-9
                       for a, b in self.flat_spans):
                raise ConfigError(f"flat warp segment at {self.perf[j]}s that is not an inserted event")
        nz = np.flatnonzero(dr > 0)
        self._tail_slope = dr[nz[-1]] / dp[nz[-1]] if nz.size else 1.0

    @classmethod
    def constant(cls, slope: float, ref_duration: float) -> "WarpMap":
        return cls([(0.0, 0.0), (ref_duration, ref_duration / slope)])

    @classmethod
    def from_slopes(cls, ref_durations, slopes) -> "WarpMap":
        knots, r, p = [(0.0, 0.0)], 0.0, 0.0
        for dur, s in zip(ref_durations, slopes):
            r, p = r + dur, p + dur / s
            knots.append((r, p))
        return cls(knots)

    @property
    def knots(self) -> list[tuple[float, float]]:
        return list(zip(self.ref.tolist(), self.perf.tolist()))

    @property
    def perf_end(self) -> float:
        return float(self.perf[-1])

    @property
    def ref_end(self) -> float:
        return float(self.ref[-1])

    def to_ref(self, t_perf):
        t = np.asarray(t_perf, dtype=float)
        out = np.interp(t, self.perf, self.ref)
        beyond = t > self.perf[-1]
        if np.any(beyond):
            out = np.where(beyond, self.ref[-1] + (t - self.perf[-1]) * self._tail_slope, out)
        return out if out.ndim else float(out)

    __call__ = to_ref

    def to_perf(self, t_ref):
        """Inverse map; on a flat span the latest performance time is returned."""
        t = np.atleast_1d(np.asarray(t_ref, dtype=float))
        i = np.clip(np.searchsorted(self.ref, t, side="right") - 1, 0, len(self.ref) - 1)
        out = np.empty_like(t)
        for n, (tt, j) in enumerate(zip(t, i)):
            if j >= len(self.ref) - 1:
                out[n] = self.perf[-1] + (tt - self.ref[-1]) / self._tail_slope
            elif tt == self.ref[j]:
                out[n] = self.perf[j]
            else:
                w = (tt - self.ref[j]) / (self.ref[j + 1] - self.ref[j])
                out[n] = self.perf[j] + w * (self.perf[j + 1] - self.perf[j])
        return out if np.ndim(t_ref) else float(out[0])

    def slope_at(self, t_perf: float) -> float:
        j = int(np.clip(np.searchsorted(self.perf, t_perf, side="right") - 1, 0, len(self.perf) - 2))
        return float((self.ref[j + 1] - self.ref[j]) / (self.perf[j + 1] - self.perf[j]))

    def is_flat(self, t_perf) -> np.ndarray:
        t = np.asarray(t_perf, dtype=float)
        flat = np.zeros(t.shape, dtype=bool)
        for a, b in self.flat_spans:
            flat |= (t >= a) & (t < b)
        return flat

    def splice(self, t_perf: float, duration: float) -> "WarpMap":
        """Insert a pause of ``duration`` seconds at performance time ``t_perf``."""
        r = float(self.to_ref(t_perf))
        before = [(a, b) for a, b in self.knots if b < t_perf]
        after = [(a, b + duration) for a, b in self.knots if b > t_perf]
        knots = before + [(r, t_perf), (r, t_perf + duration)] + after
        spans = [(a, b) if b <= t_perf else (a + duration, b + duration) for a, b in self.flat_spans]
        return WarpMap(knots, spans + [(t_perf, t_perf + duration)])

    def save_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["t_perf_s", "t_ref_s"])
            for r, p in self.knots:
                w.writerow([repr(p), repr(r)])

    @classmethod
    def load_csv(cls, path) -> "WarpMap":
        knots = []
        with open(path, newline="", encoding="utf-8") as fh:
            for row in csv.reader(fh):
                if row and row[0] != "t_perf_s":
                    knots.append((float(row[1]), float(row[0])))
        flat = [(knots[i][1], knots[i + 1][1]) for i in range(len(knots) - 1)
                if knots[i][0] == knots[i + 1][0]]
        return cls(knots, flat)


@dataclass
class PartPlan:
    title: str
    kind: str = "music"
    duration: float = 30.0
    slope: float = 1.0


@dataclass
class Event:
    kind: str  # "applause" | "pause"
    t_perf: float
    duration: float


@dataclass
class Scenario:
    parts: list
    seed: int = 0
    bar_duration: float = 2.0
    feature_dim: int = 100
    frame_hop: float = 0.01
    smoothness: float = 3.0
    feature_noise: float = 0.3
    voice_feature_noise: float = 0.3
    voice_features: str = "aligned"
    posteriogram_noise: float = 0.3
    reference_posteriogram_noise: float = 0.1
    warp: list | None = None
    events: list = field(default_factory=list)

    def __post_init__(self):
        self.parts = [p if isinstance(p, PartPlan) else PartPlan(**p) for p in self.parts]
        self.events = [e if isinstance(e, Event) else Event(**e) for e in self.events]
        if not self.parts:
            raise ConfigError("scenario has no parts")
        for p in self.parts:
            if p.kind not in ("music", "voice"):
                raise ConfigError(f"part {p.title!r}: kind must be 'music' or 'voice'")
            bars = p.duration / self.bar_duration
            if p.duration <= 0 or abs(bars - round(bars)) > 1e-9:
                raise ConfigError(f"part {p.title!r}: duration must be a positive multiple of {self.bar_duration}s")
        if self.voice_features not in ("aligned", "decorrelated"):
            raise ConfigError("voice_features must be 'aligned' or 'decorrelated'")
        spans = sorted((e.t_perf, e.t_perf + e.duration) for e in self.events)
        for e in self.events:
            if e.kind not in ("applause", "pause") or e.duration <= 0:
                raise ConfigError(f"bad event {e}")
        for (a0, a1), (b0, b1) in zip(spans, spans[1:]):
            if b0 < a1:
                raise ConfigError("scenario events overlap")

    @property
    def ref_duration(self) -> float:
        return float(sum(p.duration for p in self.parts))

    def base_warp(self) -> WarpMap:
        if self.warp is not None:
            return WarpMap(self.warp)
        return WarpMap.from_slopes([p.duration for p in self.parts], [p.slope for p in self.parts])

    def ground_truth(self) -> WarpMap:
        truth = self.base_warp()
        for e in sorted(self.events, key=lambda e: e.t_perf):
            truth = truth.splice(e.t_perf, e.duration)
        return truth

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        return cls(**d)

    @classmethod
    def load(cls, path) -> "Scenario":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ReferenceBundle:
    features: FrameSequence
    posteriogram: Posteriogram
    annotations: list
    parts: list
    detector_trace: list
    duration: float


@dataclass
class TargetBundle:
    features: FrameSequence
    posteriogram: Posteriogram
    detector_trace: list
    annotations: list  # true performance time of every bar
    duration: float


def smooth_trajectory(n: int, dim: int, smoothness: float, rng: np.random.Generator) -> np.ndarray:
    x = rng.standard_normal((n, dim))
    if smoothness > 0:
        x = gaussian_filter1d(x, smoothness, axis=0, mode="nearest")
    x -= x.mean(axis=0)
    x /= x.std(axis=0) + 1e-12
    return x


def _sample_frames(frames: np.ndarray, idx: np.ndarray) -> np.ndarray:
    """Linear interpolation of rows at fractional indices (snapped when ~integral)."""
    idx = np.clip(idx, 0, frames.shape[0] - 1)
    near = np.round(idx)
    idx = np.where(np.abs(idx - near) < 1e-9, near, idx)
    lo = np.floor(idx).astype(int)
    hi = np.minimum(lo + 1, frames.shape[0] - 1)
    w = (idx - lo)[:, None]
    return frames[lo] * (1.0 - w) + frames[hi] * w


def _phoneme_script(scenario: Scenario, rng: np.random.Generator):
    vocab = DEFAULT_VOCABULARY
    script = []
    for p in scenario.parts:
        if p.kind == "music":
            script.append(("<instrumental>", p.duration))
            continue
        left = p.duration
        while left > 1e-9:
            if rng.random() < 0.12:
                sym, dur = "<space>", rng.uniform(0.08, 0.2)
            else:
                sym, dur = vocab.phonemes[rng.integers(len(vocab.phonemes))], rng.uniform(0.06, 0.25)
            dur = min(dur, left)
            script.append((sym, dur))
            left -= dur
    return script


def _detector_value(kind: str, rng: np.random.Generator) -> tuple[float, float, float]:
    j = lambda: rng.uniform(-0.05, 0.05)  # noqa: E731
    if kind == "music":
        return 0.85 + j(), 0.1 + j(), 0.05 + j() / 2
    if kind == "voice":
        music = 0.7 if rng.random() < 0.3 else 0.3
        return music + j(), 0.85 + j(), 0.05 + j() / 2
    if kind == "applause":
        return 0.05 + j() / 2, 0.1 + j(), 0.9 + j()
    return 0.03, 0.03, 0.03  # pause / silence


def generate_pair(scenario: Scenario):
    """Build ``(reference, target, ground_truth)``; bit-deterministic given the seed."""
    rng = np.random.default_rng(scenario.seed)
    hop, dim = scenario.frame_hop, scenario.feature_dim
    truth = scenario.ground_truth()
    ref_dur = scenario.ref_duration
    vocab = DEFAULT_VOCABULARY

    # reference part layout and bars
    bounds = np.concatenate([[0.0], np.cumsum([p.duration for p in scenario.parts])])
    n_bars = int(round(ref_dur / scenario.bar_duration))
    annotations = [BarAnnotation(b + 1, b * scenario.bar_duration) for b in range(n_bars)]
    parts, bar = [], 1
    for k, p in enumerate(scenario.parts):
        nb = int(round(p.duration / scenario.bar_duration))
        parts.append(PartSegment(f"P{k + 1:02d}", p.title, bar, bar + nb - 1, float(bounds[k]), float(bounds[k + 1])))
        bar += nb

    def part_kind(t_ref):
        k = np.clip(np.searchsorted(bounds, t_ref, side="right") - 1, 0, len(scenario.parts) - 1)
        return np.array([scenario.parts[i].kind for i in np.atleast_1d(k)])

    # reference features and posteriogram
    n_ref = int(round(ref_dur / hop))
    ref_feats = smooth_trajectory(n_ref, dim, scenario.smoothness, rng)
    script = _phoneme_script(scenario, rng)
    n_post = int(round(ref_dur / POSTERIOGRAM_HOP))
    ref_labels = script_labels(script, n_post, POSTERIOGRAM_HOP, vocab)
    ref_post = soften(ref_labels, scenario.reference_posteriogram_noise, rng, vocab.total_classes)

    # reference detector trace (0.1 s)
    det_t = np.arange(int(round(ref_dur / 0.1))) * 0.1
    ref_trace = [DetectorOutput(float(t), *_detector_value(k, rng)) for t, k in zip(det_t, part_kind(det_t))]
    parts = classify_parts(parts, ref_trace)

    # target timeline
    perf_dur = float(truth.to_perf(ref_dur))
    event_kind = {}
    for e in scenario.events:
        event_kind[(e.t_perf, e.t_perf + e.duration)] = e.kind

    def events_at(t):
        out = np.full(np.shape(t), "", dtype=object)
        for (a, b), kind in event_kind.items():
            out[(t >= a) & (t < b)] = kind
        return out

    n_tgt = int(np.floor(perf_dur / hop + 1e-9))
    t_tgt = np.arange(n_tgt) * hop
    t_ref = np.minimum(truth.to_ref(t_tgt), ref_dur - hop)
    tgt_feats = _sample_frames(ref_feats, t_ref / hop)
    kinds = part_kind(t_ref)
    noise = np.where(kinds == "voice", scenario.voice_feature_noise, scenario.feature_noise)[:, None]
    tgt_feats = tgt_feats + noise * rng.standard_normal(tgt_feats.shape)
    if scenario.voice_features == "decorrelated":
        voice = kinds == "voice"
        tgt_feats[voice] = smooth_trajectory(n_tgt, dim, scenario.smoothness, rng)[voice]
    ev = events_at(t_tgt)
    tgt_feats[ev == "applause"] = rng.standard_normal((int(np.sum(ev == "applause")), dim))
    tgt_feats[ev == "pause"] = 0.0

    n_tpost = int(np.floor(perf_dur / POSTERIOGRAM_HOP + 1e-9))
    centres = (np.arange(n_tpost) + 0.5) * POSTERIOGRAM_HOP
    ref_centres = np.minimum(truth.to_ref(centres), ref_dur - 1e-9)
    lab_idx = np.clip(np.floor(ref_centres / POSTERIOGRAM_HOP + 1e-9).astype(int), 0, n_post - 1)
    tgt_labels = ref_labels[lab_idx]
    tgt_labels[events_at(centres) != ""] = vocab.instrumental_index
    tgt_post = soften(tgt_labels, scenario.posteriogram_noise, rng, vocab.total_classes)

    det_tp = np.arange(int(np.floor(perf_dur / 0.1 + 1e-9))) * 0.1
    det_kinds = part_kind(np.minimum(truth.to_ref(det_tp), ref_dur - 1e-9)).astype(object)
    ev = events_at(det_tp)
    det_kinds[ev != ""] = ev[ev != ""]
    tgt_trace = [DetectorOutput(float(t), *_detector_value(k, rng)) for t, k in zip(det_tp, det_kinds)]

    tgt_ann = [BarAnnotation(a.bar_index, float(truth.to_perf(a.ref_time))) for a in annotations]

    reference = ReferenceBundle(
        FrameSequence(ref_feats, hop), Posteriogram.from_rows(ref_post), annotations, parts, ref_trace, ref_dur,
    )
    target = TargetBundle(
        FrameSequence(tgt_feats, hop), Posteriogram.from_rows(tgt_post), tgt_trace, tgt_ann, perf_dur,
    )
    return reference, target, truth


def warp_eval(events, truth: WarpMap) -> np.ndarray:
    """Per-event absolute error ``|t_ref - truth(t_perf)|`` in ms, halted events skipped."""
    ev = [e for e in events if _gate_of(e) != "halted"]
    if not ev:
        return np.zeros(0)
    t_perf = np.array([_get(e, "t_perf_s") for e in ev])
    t_ref = np.array([_get(e, "t_ref_s") for e in ev])
    return np.abs(t_ref - truth.to_ref(t_perf)) * 1000.0


def _get(e, key):
    return e[key] if isinstance(e, dict) else getattr(e, key)


def _gate_of(e):
    return _get(e, "gate")


def tone_pair(duration: float = 20.0, slope: float = 1.0, seed: int = 0, sample_rate: int = 44100):
    """Audio-domain pair: a random sequence of tone chords and the same sequence
    played ``slope`` times faster. Returns ``(reference, target, warp)``."""
    rng = np.random.default_rng(seed)
    notes, t = [], 0.0
    while t < duration - 1e-9:
        d = min(rng.uniform(0.2, 0.5), duration - t)
        notes.append((d, 110.0 * 2 ** (rng.integers(0, 36, size=3) / 12.0)))
        t += d

    def render(stretch):
        chunks = []
        for d, freqs in notes:
            n = int(round(d / stretch * sample_rate))
            tt = np.arange(n) / sample_rate
            env = np.minimum(1.0, np.minimum(tt / 0.01, (n - np.arange(n)) / (0.01 * sample_rate)))
            chunks.append(env * sum(np.sin(2 * np.pi * f * tt) for f in freqs) / 3.0)
        return 0.3 * np.concatenate(chunks)

    return render(1.0), render(slope), WarpMap.constant(slope, duration)


def load_scenario(path) -> Scenario:
    return Scenario.load(Path(path))
