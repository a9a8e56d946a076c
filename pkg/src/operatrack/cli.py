"""Command-line interface: prepare-reference, track, evaluate, bench-synth.

Runs are described by one JSON config; relative paths resolve against the
config file's directory and CLI flags override config values::

    {
      "reference_dir": "prepared",
      "reference": {"scenario": "scenario.json"}
                 | {"audio": "ref.wav", "posteriogram": "ref.ofpost",
                    "detector_trace": "ref_det.csv", "annotations": "bars.csv", "parts": "parts.csv"},
      "target":    {"scenario": "scenario.json"}
                 | {"audio": "perf.wav" | "features": "perf.offeat",
                    "posteriogram": "perf.ofpost", "detector_trace": "perf_det.csv"},
      "tracker": {"c_music": 4000, "c_lyrics": 1000, "dominance_threshold": 1.0,
                  "use_lyrics": true, "reseed_music_on_handback": false},
      "gate": {"enabled": true, "on_threshold": 0.6, "off_threshold": 0.5,
               "dwell": 1.0, "silence_threshold": 0.2},
      "seed": 0
    }

Exit codes: 0 ok, 2 configuration error, 3 input-format error, 4 tracking lost (``--strict``).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

from . import features as feat
from .combiner import CombinerConfig
from .detectors import (DetectorConfig, GateConfig, HeuristicDetector, load_detector_trace,
                        save_detector_trace)
from .errors import ConfigError, InputFormatError, OperatrackError, TrackingLost
from .evaluation import compare_reports, evaluate, format_table
from .pipeline import TrackConfig, frames_from_audio, iter_events, music_only, track_bundle
from .posteriogram import ReplayPosteriogramSource, load_posteriogram, save_posteriogram
from .segmentation import (PartIndex, build_parts, classify_parts, load_annotations, load_part_rows,
                           load_part_table, save_annotations, save_part_table)
from .synth import Scenario, generate_pair

logger = logging.getLogger("operatrack")

FEATURES_FILE = "features.offeat"
POSTERIOGRAM_FILE = "posteriogram.ofpost"
DETECTOR_FILE = "detector_trace.csv"
PARTS_FILE = "parts_table.csv"
ANNOTATIONS_FILE = "annotations.csv"
MANIFEST_FILE = "manifest.json"


@dataclass
class RunConfig:
    base_dir: Path = Path(".")
    reference_dir: Path = Path("prepared")
    reference: dict = field(default_factory=dict)
    target: dict = field(default_factory=dict)
    tracker: dict = field(default_factory=dict)
    gate: dict = field(default_factory=dict)
    seed: int | None = None
    realtime: bool = False

    _TRACKER_KEYS = {"c_music", "c_lyrics", "dominance_threshold", "use_lyrics", "reseed_music_on_handback",
                     "distance_scale"}
    _GATE_KEYS = {"enabled", "on_threshold", "off_threshold", "dwell", "silence_threshold"}

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        return cls.from_dict(raw, path.parent)

    @classmethod
    def from_dict(cls, raw: dict, base_dir=Path(".")) -> "RunConfig":
        base_dir = Path(base_dir)
        unknown = set(raw) - {"reference_dir", "reference", "target", "tracker", "gate", "seed", "realtime"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(base_dir=base_dir,
                  reference_dir=base_dir / raw.get("reference_dir", "prepared"),
                  reference=dict(raw.get("reference", {})), target=dict(raw.get("target", {})),
                  tracker=dict(raw.get("tracker", {})), gate=dict(raw.get("gate", {})),
                  seed=raw.get("seed"), realtime=bool(raw.get("realtime", False)))
        cfg.validate()
        return cfg

    def validate(self) -> None:
        bad = set(self.tracker) - self._TRACKER_KEYS
        if bad:
            raise ConfigError(f"unknown tracker keys: {sorted(bad)}")
        bad = set(self.gate) - self._GATE_KEYS
        if bad:
            raise ConfigError(f"unknown gate keys: {sorted(bad)}")
        for key in ("c_music", "c_lyrics"):
            c = self.tracker.get(key, 2)
            if not isinstance(c, int) or c < 2 or c % 2:
                raise ConfigError(f"tracker.{key} must be an even integer >= 2, got {c!r}")
        if self.tracker.get("dominance_threshold", 1.0) < 0:
            raise ConfigError("tracker.dominance_threshold must be >= 0")
        g = self.gate
        for key in ("on_threshold", "off_threshold", "silence_threshold"):
            if not 0.0 <= g.get(key, 0.5) <= 1.0:
                raise ConfigError(f"gate.{key} must lie in [0, 1]")
        if g.get("dwell", 1.0) <= 0:
            raise ConfigError("gate.dwell must be positive")

    def path(self, section: dict, key: str, required: bool = True) -> Path | None:
        value = section.get(key)
        if value is None:
            if required:
                raise ConfigError(f"missing config entry '{key}'")
            return None
        p = self.base_dir / value
        if not p.exists():
            raise ConfigError(f"{key}: file not found: {p}")
        return p

    def scenario(self, section: dict) -> Scenario | None:
        p = self.path(section, "scenario", required=False)
        if p is None:
            return None
        try:
            sc = Scenario.load(p)
        except (TypeError, json.JSONDecodeError) as exc:
            raise ConfigError(f"{p}: invalid scenario ({exc})") from None
        if self.seed is not None:
            sc = replace(sc, seed=self.seed)
        return sc

    def track_config(self) -> TrackConfig:
        t = self.tracker
        comb = CombinerConfig(c_music=t.get("c_music", 4000), c_lyrics=t.get("c_lyrics", 1000),
                              use_lyrics=t.get("use_lyrics", True),
                              reseed_music_on_handback=t.get("reseed_music_on_handback", False))
        g = {k: v for k, v in self.gate.items() if k != "enabled"}
        return TrackConfig(comb, GateConfig(**g), self.gate.get("enabled", True),
                           t.get("distance_scale", 1.0), self.realtime)


def _digest(cfg: RunConfig) -> str:
    h = hashlib.sha256()
    h.update(json.dumps({"reference": cfg.reference, "tracker": cfg.tracker, "seed": cfg.seed},
                        sort_keys=True).encode())
    for key in sorted(cfg.reference):
        p = cfg.base_dir / cfg.reference[key]
        if p.is_file():
            h.update(p.read_bytes())
    return h.hexdigest()


def cmd_prepare_reference(cfg: RunConfig, out_dir: Path | None = None) -> Path:
    out = Path(out_dir) if out_dir is not None else cfg.reference_dir
    digest = _digest(cfg)
    manifest = out / MANIFEST_FILE
    names = [FEATURES_FILE, POSTERIOGRAM_FILE, DETECTOR_FILE, PARTS_FILE, ANNOTATIONS_FILE]
    if manifest.exists() and all((out / n).exists() for n in names):
        if json.loads(manifest.read_text()).get("digest") == digest:
            logger.info("reference bundle in %s is up to date", out)
            return out
    threshold = cfg.tracker.get("dominance_threshold", 1.0)
    scenario = cfg.scenario(cfg.reference)
    if scenario is not None:
        ref, _, _ = generate_pair(scenario)
        features, post, trace, anns = ref.features, ref.posteriogram, ref.detector_trace, ref.annotations
        parts = classify_parts(ref.parts, trace, threshold)
        ref_end = ref.duration
    else:
        audio = cfg.path(cfg.reference, "audio")
        parts_path = cfg.path(cfg.reference, "parts")
        ann_path = cfg.path(cfg.reference, "annotations")
        post = load_posteriogram(cfg.path(cfg.reference, "posteriogram"))
        samples, rate = feat.load_audio(audio)
        if rate != feat.MUSIC_PRESET.sample_rate:
            raise ConfigError(f"{audio}: sample rate {rate} Hz, music features need "
                              f"{feat.MUSIC_PRESET.sample_rate} Hz")
        features = feat.extract(samples, feat.MUSIC_PRESET)
        trace_path = cfg.path(cfg.reference, "detector_trace", required=False)
        if trace_path is not None:
            trace = load_detector_trace(trace_path)
        else:
            trace = HeuristicDetector(DetectorConfig(sample_rate=rate)).push(samples)
        anns = load_annotations(ann_path)
        ref_end = len(samples) / rate
        parts = classify_parts(build_parts(anns, load_part_rows(parts_path), ref_end), trace, threshold)
    out.mkdir(parents=True, exist_ok=True)
    feat.write_feature_cache(features, out / FEATURES_FILE)
    save_posteriogram(post, out / POSTERIOGRAM_FILE)
    save_detector_trace(trace, out / DETECTOR_FILE)
    save_part_table(parts, out / PARTS_FILE)
    save_annotations(anns, out / ANNOTATIONS_FILE)
    manifest.write_text(json.dumps({"digest": digest, "files": names}, indent=2) + "\n")
    return out


def load_prepared(ref_dir: Path):
    ref_dir = Path(ref_dir)
    for n in (FEATURES_FILE, PARTS_FILE, ANNOTATIONS_FILE):
        if not (ref_dir / n).exists():
            raise ConfigError(f"prepared reference incomplete: {ref_dir / n} missing (run prepare-reference)")
    features = feat.read_feature_cache(ref_dir / FEATURES_FILE)
    post = load_posteriogram(ref_dir / POSTERIOGRAM_FILE) if (ref_dir / POSTERIOGRAM_FILE).exists() else None
    anns = load_annotations(ref_dir / ANNOTATIONS_FILE)
    parts = load_part_table(ref_dir / PARTS_FILE)
    return features, post, PartIndex(parts, anns), anns


def _write_line(fh, record: str) -> None:
    fh.write(record + "\n")
    fh.flush()


def cmd_track(cfg: RunConfig, out=None, strict: bool = False, truth_dir: Path | None = None) -> int:
    ref_feats, ref_post, parts, _ = load_prepared(cfg.reference_dir)
    tcfg = cfg.track_config()
    scenario = cfg.scenario(cfg.target)
    if scenario is not None:
        _, target, truth = generate_pair(scenario)
        frames, post, trace = target.features, target.posteriogram, target.detector_trace
        if truth_dir is not None:
            truth_dir = Path(truth_dir)
            truth_dir.mkdir(parents=True, exist_ok=True)
            save_annotations(target.annotations, truth_dir / "target_bars.csv", "time_s")
            truth.save_csv(truth_dir / "truth_warp.csv")
    else:
        if "features" in cfg.target:
            frames = feat.read_feature_cache(cfg.path(cfg.target, "features"))
        else:
            samples, rate = feat.load_audio(cfg.path(cfg.target, "audio"))
            if rate != feat.MUSIC_PRESET.sample_rate:
                raise ConfigError(f"target sample rate {rate} Hz, expected {feat.MUSIC_PRESET.sample_rate} Hz")
            frames = frames_from_audio(samples, feat.MUSIC_PRESET)
        p = cfg.path(cfg.target, "posteriogram", required=False)
        post = load_posteriogram(p) if p is not None else None
        p = cfg.path(cfg.target, "detector_trace", required=False)
        trace = load_detector_trace(p) if p is not None else None
    if post is None or ref_post is None:
        tcfg = music_only(tcfg)
    source = ReplayPosteriogramSource(post) if tcfg.combiner.use_lyrics else None
    fh = open(out, "w", encoding="utf-8") if out else sys.stdout
    try:
        events = iter_events(ref_feats, parts, frames, ref_post, source, trace, tcfg)
        last_t = 0.0
        try:
            for ev in events:
                last_t = ev.t_perf_s
                _write_line(fh, ev.to_json())
        except TrackingLost as exc:
            _write_line(fh, json.dumps({"event": "tracking_lost", "t_perf_s": last_t, "detail": str(exc)}))
            logger.error("tracking lost: %s", exc)
            if strict:
                return TrackingLost.exit_code
    finally:
        if fh is not sys.stdout:
            fh.close()
    return 0


def read_events(path) -> list[dict]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError:
                raise InputFormatError(f"{path}:{lineno}: not valid JSON") from None
            if "t_ref_s" in rec:
                out.append(rec)
    return out


def cmd_evaluate(events_path, truth_path, ref_annotations_path, label: str = "tracker"):
    report = evaluate(read_events(events_path), load_annotations(truth_path), load_annotations(ref_annotations_path))
    return report, format_table([(label, report)])


def cmd_bench_synth(scenario: Scenario, trackers=("music", "ml"), config: TrackConfig = TrackConfig()):
    ref, tgt, _ = generate_pair(scenario)
    reports = {}
    for name in trackers:
        if name not in ("music", "ml"):
            raise ConfigError(f"unknown tracker {name!r} (music|ml)")
        cfg = music_only(config) if name == "music" else config
        reports[name] = evaluate(track_bundle(ref, tgt, cfg), tgt.annotations, ref.annotations)
    table = format_table(list(reports.items()))
    comparison = compare_reports(reports["ml"], reports["music"]) if len(reports) == 2 else None
    return reports, table, comparison


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="operatrack", description=__doc__.split("\n")[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare-reference", help="precompute reference features, posteriogram, parts")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (default: reference_dir from config)")

    p = sub.add_parser("track", help="stream alignment events as JSON lines")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="JSONL output file (default: stdout)")
    p.add_argument("--realtime", action="store_true", help="pace the replay to wall-clock time")
    p.add_argument("--strict", action="store_true", help="exit with code 4 if tracking is lost")
    p.add_argument("--truth-out", help="for synthetic targets: directory for ground-truth files")

    p = sub.add_parser("evaluate", help="score an event log against bar annotations")
    p.add_argument("--events", required=True)
    p.add_argument("--truth", required=True, help="CSV bar_index,time_s of the target performance")
    p.add_argument("--ref-annotations", required=True, help="CSV bar_index,ref_time_s of the reference")
    p.add_argument("--out", help="write the report as JSON here")
    p.add_argument("--label", default="tracker")

    p = sub.add_parser("bench-synth", help="compare music-only and M&L trackers on a synthetic scenario")
    p.add_argument("--scenario", required=True)
    p.add_argument("--trackers", default="music,ml")
    p.add_argument("--config", help="optional run config for tracker/gate parameters")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="write reports and comparison as JSON here")
    return ap


def _load_scenario(path, seed):
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"scenario file not found: {p}")
    try:
        sc = Scenario.load(p)
    except (TypeError, json.JSONDecodeError) as exc:
        raise ConfigError(f"{p}: invalid scenario ({exc})") from None
    return replace(sc, seed=seed) if seed is not None else sc


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        if args.command == "prepare-reference":
            cfg = RunConfig.load(args.config)
            if args.seed is not None:
                cfg.seed = args.seed
            out = cmd_prepare_reference(cfg, args.out)
            print(out)
        elif args.command == "track":
            cfg = RunConfig.load(args.config)
            if args.seed is not None:
                cfg.seed = args.seed
            cfg.realtime = cfg.realtime or args.realtime
            return cmd_track(cfg, args.out, args.strict, args.truth_out)
        elif args.command == "evaluate":
            report, table = cmd_evaluate(args.events, args.truth, args.ref_annotations, args.label)
            print(table)
            if args.out:
                Path(args.out).write_text(report.to_json() + "\n")
        elif args.command == "bench-synth":
            tcfg = RunConfig.load(args.config).track_config() if args.config else TrackConfig()
            reports, table, comparison = cmd_bench_synth(_load_scenario(args.scenario, args.seed),
                                                         tuple(args.trackers.split(",")), tcfg)
            print(table)
            if comparison is not None:
                verdict = "strictly better" if comparison["strictly_better"] else "not strictly better"
                print(f"ml vs music: {verdict}; " + ", ".join(f"{m} {s}" for m, s in comparison["signs"].items()))
            if args.out:
                doc = {"reports": {k: r.to_dict() for k, r in reports.items()}, "comparison": comparison}
                Path(args.out).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return ConfigError.exit_code
    except InputFormatError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return InputFormatError.exit_code
    except OperatrackError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
