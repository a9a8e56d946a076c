"""Part structure of the reference: bar annotations, parts and their dominance.

A part is voice-dominant when the fraction of detector frames judged as voice,
divided by the fraction judged as music, exceeds a threshold (1.0 by default).
"""

from __future__ import annotations

import bisect
import csv
import math
from dataclasses import dataclass, replace
from enum import Enum
from pathlib import Path

import numpy as np

from .errors import ConfigError, InputFormatError

INF_RATIO = math.inf


class Dominance(str, Enum):
    VOICE = "voice"
    MUSIC = "music"


@dataclass(frozen=True)
class BarAnnotation:
    bar_index: int
    ref_time: float


@dataclass(frozen=True)
class PartSegment:
    part_id: str
    title: str
    start_bar: int
    end_bar: int
    ref_start: float
    ref_end: float
    ratio: float | None = None
    dominance: Dominance | None = None

    @property
    def is_voice(self) -> bool:
        return self.dominance is Dominance.VOICE


def _rows(path):
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"{path}: no such file")
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
                continue
            yield lineno, [c.strip() for c in row]


def _is_header(row) -> bool:
    try:
        float(row[0])
        return False
    except ValueError:
        return True


def validate_annotations(anns) -> list[BarAnnotation]:
    anns = list(anns)
    for prev, cur in zip(anns, anns[1:]):
        if cur.bar_index == prev.bar_index:
            raise InputFormatError(f"duplicate bar {cur.bar_index}")
        if cur.bar_index < prev.bar_index:
            raise InputFormatError(f"bar indices not increasing at bar {cur.bar_index}")
        if cur.ref_time <= prev.ref_time:
            raise InputFormatError(f"times not increasing at bar {cur.bar_index} ({cur.ref_time} <= {prev.ref_time})")
    return anns


def load_annotations(path) -> list[BarAnnotation]:
    """Read ``bar_index,time_s`` rows (header optional) and check both columns increase."""
    anns, seen = [], {}
    for lineno, row in _rows(path):
        if _is_header(row) and not anns:
            continue
        try:
            bar, t = int(row[0]), float(row[1])
        except (ValueError, IndexError):
            raise InputFormatError(f"{path}:{lineno}: expected 'bar_index,time_s', got {row}") from None
        if bar in seen:
            raise InputFormatError(f"{path}:{lineno}: duplicate bar {bar} (first on line {seen[bar]})")
        if anns and (bar < anns[-1].bar_index or t <= anns[-1].ref_time):
            raise InputFormatError(f"{path}:{lineno}: bar {bar} at {t}s is out of order")
        seen[bar] = lineno
        anns.append(BarAnnotation(bar, t))
    if not anns:
        raise InputFormatError(f"{path}: no annotations")
    return anns


def save_annotations(anns, path, time_column: str = "ref_time_s") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["bar_index", time_column])
        for a in anns:
            w.writerow([a.bar_index, repr(float(a.ref_time))])


def load_part_rows(path) -> list[tuple[str, str, int, int]]:
    out = []
    for lineno, row in _rows(path):
        if row[0] == "part_id":
            continue
        try:
            out.append((row[0], row[1], int(row[2]), int(row[3])))
        except (ValueError, IndexError):
            raise InputFormatError(f"{path}:{lineno}: expected 'part_id,title,start_bar,end_bar', got {row}") from None
    if not out:
        raise InputFormatError(f"{path}: no parts")
    return out


def build_parts(annotations, part_rows, ref_end: float | None = None) -> list[PartSegment]:
    """Attach reference time bounds to parts; they must tile the annotated bars.

    A part ends where the bar after its last bar begins. For the final part
    that bar may not be annotated, in which case ``ref_end`` (the end of the
    reference) is used, falling back to the time of its last bar.
    """
    times = {a.bar_index: a.ref_time for a in annotations}
    bars = sorted(times)
    parts = []
    expected = bars[0]
    for k, (pid, title, sb, eb) in enumerate(part_rows):
        if sb > eb:
            raise InputFormatError(f"part {pid}: start_bar {sb} > end_bar {eb}")
        if sb != expected:
            raise InputFormatError(f"part {pid}: starts at bar {sb}, expected {expected} (gap or overlap)")
        if sb not in times or eb not in times:
            raise InputFormatError(f"part {pid}: bars {sb}-{eb} not annotated")
        if eb + 1 in times:
            end = times[eb + 1]
        elif k == len(part_rows) - 1:
            end = ref_end if ref_end is not None else times[eb]
        else:
            raise InputFormatError(f"part {pid}: bar {eb + 1} not annotated")
        parts.append(PartSegment(pid, title, sb, eb, times[sb], end))
        expected = eb + 1
    uncovered = [b for b in bars if b >= expected]
    # one trailing annotation may mark the end of the final part
    if len(uncovered) > 1:
        raise InputFormatError(f"bars {uncovered[0]}-{uncovered[-1]} are not covered by any part")
    return parts


def voice_music_ratio(part: PartSegment, trace, threshold: float = 0.5) -> float:
    """Fraction of voice frames over fraction of music frames inside the part.

    A frame counts as voice (music) when its ``p_speech`` (``p_music``) exceeds
    ``threshold``. No music frame at all gives ``INF_RATIO``.
    """
    sel = [o for o in trace if part.ref_start <= o.t < part.ref_end]
    if not sel:
        raise InputFormatError(f"part {part.part_id}: detector trace has no frame in [{part.ref_start}, {part.ref_end})")
    n = len(sel)
    voice = sum(o.p_speech > threshold for o in sel) / n
    music = sum(o.p_music > threshold for o in sel) / n
    if music == 0:
        return INF_RATIO
    return voice / music


def classify_parts(parts, traces=None, threshold: float = 1.0, frame_threshold: float = 0.5) -> list[PartSegment]:
    """Set ``dominance`` (voice iff ratio > threshold). Ratios are computed from
    ``traces`` when given, otherwise the parts must already carry one."""
    out = []
    for p in parts:
        ratio = voice_music_ratio(p, traces, frame_threshold) if traces is not None else p.ratio
        if ratio is None:
            raise ConfigError(f"part {p.part_id} has no ratio and no detector trace was given")
        dom = Dominance.VOICE if ratio > threshold else Dominance.MUSIC
        out.append(replace(p, ratio=ratio, dominance=dom))
    return out


class PartIndex:
    """Lookup of parts by reference time (half-open spans) or bar."""

    def __init__(self, parts, annotations=None):
        self.parts = list(parts)
        if not self.parts:
            raise ConfigError("empty part list")
        self._starts = [p.ref_start for p in self.parts]
        self._bar_starts = [p.start_bar for p in self.parts]
        self.annotations = list(annotations) if annotations is not None else None
        if self.annotations:
            self._ann_times = np.array([a.ref_time for a in self.annotations])
            self._ann_bars = np.array([a.bar_index for a in self.annotations])

    @property
    def start(self) -> float:
        return self.parts[0].ref_start

    @property
    def end(self) -> float:
        return self.parts[-1].ref_end

    def part_at(self, ref_time: float) -> PartSegment:
        if not self.start <= ref_time < self.end:
            raise ValueError(f"time {ref_time}s outside annotated range [{self.start}, {self.end})")
        return self.parts[bisect.bisect_right(self._starts, ref_time) - 1]

    def find(self, ref_time: float) -> PartSegment | None:
        try:
            return self.part_at(ref_time)
        except ValueError:
            return None

    def part_for_bar(self, bar: int) -> PartSegment:
        i = bisect.bisect_right(self._bar_starts, bar) - 1
        if i < 0 or bar > self.parts[i].end_bar:
            raise ValueError(f"bar {bar} outside annotated parts")
        return self.parts[i]

    def bar_at(self, ref_time: float) -> int | None:
        """Index of the last annotated bar starting at or before ``ref_time``."""
        if not self.annotations:
            return None
        i = int(np.searchsorted(self._ann_times, ref_time, side="right")) - 1
        return int(self._ann_bars[i]) if i >= 0 else None


def part_at(parts, ref_time: float = None, bar: int = None) -> PartSegment:
    index = parts if isinstance(parts, PartIndex) else PartIndex(parts)
    if bar is not None:
        return index.part_for_bar(bar)
    return index.part_at(ref_time)


PART_TABLE_HEADER = ["part_id", "title", "start_bar", "end_bar", "ref_start_s", "ref_end_s", "ratio", "dominance"]


def _fmt_ratio(r) -> str:
    if r is None:
        return ""
    return "inf" if math.isinf(r) else repr(float(r))


def save_part_table(parts, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(PART_TABLE_HEADER)
        for p in parts:
            w.writerow([p.part_id, p.title, p.start_bar, p.end_bar, repr(float(p.ref_start)),
                        repr(float(p.ref_end)), _fmt_ratio(p.ratio), p.dominance.value if p.dominance else ""])


def load_part_table(path) -> list[PartSegment]:
    parts = []
    for lineno, row in _rows(path):
        if row[0] == "part_id":
            continue
        try:
            ratio = float(row[6]) if row[6] else None
            dom = Dominance(row[7]) if row[7] else None
            parts.append(PartSegment(row[0], row[1], int(row[2]), int(row[3]),
                                     float(row[4]), float(row[5]), ratio, dom))
        except (ValueError, IndexError):
            raise InputFormatError(f"{path}:{lineno}: malformed part table row {row}") from None
    if not parts:
        raise InputFormatError(f"{path}: empty part table")
    return parts
