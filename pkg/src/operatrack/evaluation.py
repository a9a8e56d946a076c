"""Bar-level alignment accuracy: mean error and share of bars within 1, 2 and 5 s.

A bar counts as detected at the first (interpolated) moment the reported
reference time reaches the bar's reference time; its error is the distance to
the bar's true time in the performance. Halted events are ignored.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import InputFormatError

THRESHOLDS_S = (1.0, 2.0, 5.0)


@dataclass(frozen=True)
class EvalReport:
    mean_error_ms: float
    pct_le_1s: float
    pct_le_2s: float
    pct_le_5s: float
    n_bars_evaluated: int
    n_bars_skipped: int
    bars: tuple = field(default=(), repr=False, compare=False)

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("bars")
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _field(e, key):
    return e[key] if isinstance(e, dict) else getattr(e, key)


def _active(events):
    ev = [e for e in events if _field(e, "gate") != "halted"]
    t = np.array([_field(e, "t_perf_s") for e in ev], dtype=float)
    r = np.array([_field(e, "t_ref_s") for e in ev], dtype=float)
    return t, r


def detection_times(events, ref_times) -> np.ndarray:
    """Interpolated performance time at which each reference time is first reached (NaN if never)."""
    t, r = _active(events)
    ref_times = np.asarray(ref_times, dtype=float)
    out = np.full(ref_times.shape, np.nan)
    if t.size == 0:
        return out
    reach = np.maximum.accumulate(r)
    idx = np.searchsorted(reach, ref_times, side="left")
    for n, (R, i) in enumerate(zip(ref_times, idx)):
        if i >= t.size:
            continue
        if i == 0:
            out[n] = t[0]
        else:
            # all earlier events report less than R, so r[i - 1] < R <= r[i]
            w = (R - r[i - 1]) / (r[i] - r[i - 1])
            out[n] = t[i - 1] + w * (t[i] - t[i - 1])
    return out


def per_bar_errors(events, target_truth, ref_annotations) -> dict:
    """``{bar: error_ms or None}``; None marks a bar the tracker never reached."""
    perf = {a.bar_index: a.ref_time for a in target_truth}
    ref = {a.bar_index: a.ref_time for a in ref_annotations}
    if set(perf) != set(ref):
        raise InputFormatError("target and reference annotations cover different bars")
    bars = sorted(ref)
    det = detection_times(events, [ref[b] for b in bars])
    return {b: (None if np.isnan(d) else abs(d - perf[b]) * 1000.0) for b, d in zip(bars, det)}


def report_from_errors(errors: dict) -> EvalReport:
    vals = np.array([e for e in errors.values() if e is not None], dtype=float)
    skipped = sum(e is None for e in errors.values())
    if vals.size == 0:
        return EvalReport(float("nan"), 0.0, 0.0, 0.0, 0, skipped, tuple(sorted(errors)))
    pct = [100.0 * np.mean(vals <= 1000.0 * th) for th in THRESHOLDS_S]
    return EvalReport(float(vals.mean()), *map(float, pct), int(vals.size), skipped, tuple(sorted(errors)))


def evaluate(events, target_truth, ref_annotations) -> EvalReport:
    return report_from_errors(per_bar_errors(events, target_truth, ref_annotations))


METRICS = ("mean_error_ms", "pct_le_1s", "pct_le_2s", "pct_le_5s")


def compare_reports(a: EvalReport, b: EvalReport) -> dict:
    """Per-metric ``a - b`` and whether ``a`` is strictly better on all four metrics."""
    if a.bars and b.bars and a.bars != b.bars:
        raise InputFormatError("reports cover different bar sets")
    if not a.bars and (a.n_bars_evaluated + a.n_bars_skipped != b.n_bars_evaluated + b.n_bars_skipped):
        raise InputFormatError("reports cover different numbers of bars")
    deltas = {m: getattr(a, m) - getattr(b, m) for m in METRICS}
    better = deltas["mean_error_ms"] < 0 and all(deltas[m] > 0 for m in METRICS[1:])
    signs = {m: ("better" if (d < 0 if m == "mean_error_ms" else d > 0) else "same" if d == 0 else "worse")
             for m, d in deltas.items()}
    return {"deltas": deltas, "signs": signs, "strictly_better": better}


def format_table(rows) -> str:
    """Aligned text table with columns Tracker, Mean, <=1s, <=2s, <=5s, Bars."""
    lines = [f"{'Tracker':<12}{'Mean':>10}{'<=1s':>9}{'<=2s':>9}{'<=5s':>9}{'Bars':>8}"]
    for label, r in rows:
        lines.append(f"{label:<12}{r.mean_error_ms:>8.0f}ms{r.pct_le_1s:>8.1f}%{r.pct_le_2s:>8.1f}%"
                     f"{r.pct_le_5s:>8.1f}%{r.n_bars_evaluated:>8d}")
    return "\n".join(lines)
