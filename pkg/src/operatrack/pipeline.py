"""Replay loop: feeds music frames, posteriogram rows and detector outputs to the
combiner in timestamp order and yields alignment events as they are produced.

Sources are pulled on demand in one thread, so nothing is buffered beyond the
current frame; ``realtime`` paces the loop to wall-clock time.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, replace

import numpy as np

from .combiner import CombinedTracker, CombinerConfig
from .detectors import GateConfig, GateController, ReplayDetector
from .features import FrameSequence, MfccExtractor
from .oltw import CosineDistance
from .posteriogram import Posteriogram, ReplayPosteriogramSource, lyrics_distance
from .segmentation import PartIndex
from .synth import ReferenceBundle, Scenario, TargetBundle, generate_pair

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrackConfig:
    combiner: CombinerConfig = CombinerConfig()
    gate: GateConfig = GateConfig()
    use_gate: bool = True
    distance_scale: float = 1.0
    realtime: bool = False


def iter_events(reference_features: FrameSequence, parts: PartIndex, target_frames,
                reference_posteriogram: Posteriogram | None = None, lyrics_source=None,
                detector_outputs=None, config: TrackConfig = TrackConfig(),
                music_distance=None, lyrics_dist=None, tracker_out: list | None = None):
    """Yield :class:`AlignmentEvent` records for a stream of target music frames.

    ``target_frames`` is a FrameSequence or an iterable of ``(t, frame)``.
    """
    if music_distance is None:
        music_distance = CosineDistance(scale=config.distance_scale)
    if lyrics_dist is None and reference_posteriogram is not None:
        lyrics_dist = lyrics_distance(reference_posteriogram.vocab, config.distance_scale)
    tracker = CombinedTracker(reference_features, parts, reference_posteriogram, config.combiner,
                              music_distance, lyrics_dist)
    if tracker_out is not None:
        tracker_out.append(tracker)
    gate = GateController(config.gate) if config.use_gate and detector_outputs is not None else None
    detector = ReplayDetector(detector_outputs) if gate is not None else None
    if isinstance(target_frames, FrameSequence):
        seq = target_frames
        target_frames = ((seq.t0 + m * seq.frame_hop, seq.frames[m]) for m in range(seq.n_frames))
    wall0 = time.monotonic()
    for t, frame in target_frames:
        if config.realtime:
            delay = t - (time.monotonic() - wall0)
            if delay > 0:
                time.sleep(delay)
        if gate is not None:
            for out in detector.until(t):
                gate.update(out)
            tracker.halted = gate.halted
        if tracker.halted:
            ev = tracker.frozen_event(t)
        else:
            ev = tracker.on_music_frame(frame, t)
        if ev is not None:
            yield ev
        if lyrics_source is not None:
            lyrics_source.advance_to(t)
            for _, _, row in lyrics_source.pull():
                ev = tracker.on_lyrics_frame(row, t)
                if ev is not None:
                    yield ev


def track_bundle(reference: ReferenceBundle, target: TargetBundle, config: TrackConfig = TrackConfig(),
                 target_posteriogram: Posteriogram | None = None, tracker_out: list | None = None):
    """Run the full pipeline over a synthetic (or prepared) reference/target pair."""
    parts = PartIndex(reference.parts, reference.annotations)
    post = target_posteriogram if target_posteriogram is not None else target.posteriogram
    source = ReplayPosteriogramSource(post) if config.combiner.use_lyrics else None
    return list(iter_events(reference.features, parts, target.features, reference.posteriogram, source,
                            target.detector_trace, config, tracker_out=tracker_out))


def run_scenario(scenario: Scenario, config: TrackConfig = TrackConfig()):
    reference, target, truth = generate_pair(scenario)
    return track_bundle(reference, target, config), reference, target, truth


def music_only(config: TrackConfig) -> TrackConfig:
    return replace(config, combiner=replace(config.combiner, use_lyrics=False))


def frames_from_audio(samples, feature_config, chunk: int = 4410):
    """Stream MFCC frames from PCM in fixed-size chunks, as ``(t, frame)``."""
    ex = MfccExtractor(feature_config)
    k = 0
    for start in range(0, len(samples), chunk):
        for f in ex.push(samples[start:start + chunk]):
            yield ex.time_of(k), np.asarray(f)
            k += 1
