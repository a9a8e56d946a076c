"""Music-and-lyrics tracker combination.

The music tracker runs on every active music frame. When its position crosses
from a music-dominant into a voice-dominant part, a lyrics tracker is seeded at
that position (+inf everywhere, 0 at the mapped posteriogram frame) and takes
over the reported position. When the lyrics position reaches a music-dominant
part the lyrics tracker is dropped and the music tracker leads again.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from enum import Enum

from .errors import TrackingLost
from .features import FrameSequence
from .oltw import CosineDistance, ScorePosition, TrackerState
from .posteriogram import Posteriogram, lyrics_distance
from .segmentation import PartIndex

logger = logging.getLogger(__name__)


class Leader(str, Enum):
    MUSIC = "music"
    LYRICS = "lyrics"


@dataclass(frozen=True)
class AlignmentEvent:
    t_perf_s: float
    t_ref_s: float
    ref_frame: int  # on the music-frame grid, whichever tracker leads
    bar: int | None
    part_id: str | None
    leader: str
    gate: str
    norm_cost: float

    def to_json(self) -> str:
        return json.dumps(asdict(self), separators=(",", ":"))

    @classmethod
    def from_dict(cls, d: dict) -> "AlignmentEvent":
        return cls(**{k: d[k] for k in cls.__dataclass_fields__})


def music_to_lyrics(music_frame: int, ratio: int = 4) -> int:
    """Nearest posteriogram frame, ties toward the lower index."""
    return (2 * int(music_frame) + ratio - 1) // (2 * ratio)


def lyrics_to_music(lyrics_frame: int, ratio: int = 4) -> int:
    return int(lyrics_frame) * ratio


def map_time(index: int, ratio: int = 4, to_lyrics: bool = True, n_frames: int | None = None) -> int:
    out = music_to_lyrics(index, ratio) if to_lyrics else lyrics_to_music(index, ratio)
    if n_frames is not None and not 0 <= out < n_frames:
        clamped = min(max(out, 0), n_frames - 1)
        logger.warning("mapped frame %d outside [0, %d); clamped to %d", out, n_frames, clamped)
        out = clamped
    return out


@dataclass(frozen=True)
class CombinerConfig:
    c_music: int = 4000
    c_lyrics: int = 1000
    use_lyrics: bool = True
    reseed_music_on_handback: bool = False


class CombinedTracker:
    """Single logical actor owning both tracker states; feed it in timestamp order."""

    def __init__(self, music_ref: FrameSequence, parts: PartIndex, lyrics_ref: Posteriogram | None = None,
                 config: CombinerConfig = CombinerConfig(), music_distance=None, lyrics_dist=None,
                 start_pos: int = 0):
        self.config = config
        self.parts = parts
        self.music = TrackerState(music_ref, start_pos, config.c_music, music_distance or CosineDistance())
        self.hop_ratio = 1
        self._lyrics_engine = None
        if config.use_lyrics and lyrics_ref is not None:
            ratio = lyrics_ref.hop / music_ref.frame_hop
            self.hop_ratio = int(round(ratio))
            if abs(ratio - self.hop_ratio) > 1e-6:
                raise ValueError(f"posteriogram hop must be an integer multiple of the music hop, got {ratio}")
            self._lyrics_engine = TrackerState(lyrics_ref.seq, 0, config.c_lyrics,
                                               lyrics_dist or lyrics_distance(lyrics_ref.vocab))
        self.leader = Leader.MUSIC
        self.halted = False
        self.last_position: ScorePosition = self.music.position()
        self.last_event_t = float("-inf")
        self._music_in_voice = False
        self.transitions: list[tuple[float, Leader]] = []

    @property
    def lyrics(self) -> TrackerState | None:
        return self._lyrics_engine if self.leader is Leader.LYRICS else None

    def _emit(self, t: float, pos: ScorePosition, ref_frame: int, gate: str = "active"):
        self.last_position = pos
        if t <= self.last_event_t:
            return None
        self.last_event_t = t
        part = self.parts.find(pos.ref_time)
        return AlignmentEvent(
            float(t), float(pos.ref_time), int(ref_frame), self.parts.bar_at(pos.ref_time),
            part.part_id if part else None, self.leader.value, gate, float(pos.normalized_cost),
        )

    def _switch(self, t: float, leader: Leader) -> None:
        logger.info("leader %s -> %s at %.2fs", self.leader.value, leader.value, t)
        self.leader = leader
        self.transitions.append((t, leader))

    def _is_voice(self, ref_time: float) -> bool:
        part = self.parts.find(ref_time)
        return part is not None and part.is_voice

    def on_music_frame(self, frame, t: float) -> AlignmentEvent | None:
        if self.halted:
            return None
        pos = self.music.step(frame)
        event = None
        if self.leader is Leader.MUSIC:
            event = self._emit(t, pos, pos.ref_frame)
        in_voice = self._is_voice(pos.ref_time)
        if (self.leader is Leader.MUSIC and in_voice and not self._music_in_voice
                and self._lyrics_engine is not None):
            q = map_time(pos.ref_frame, self.hop_ratio, True, self._lyrics_engine.n_frames)
            self._lyrics_engine.reset(q)
            self._switch(t, Leader.LYRICS)
        self._music_in_voice = in_voice
        return event

    def on_lyrics_frame(self, row, t: float) -> AlignmentEvent | None:
        if self.halted or self.leader is not Leader.LYRICS:
            return None
        try:
            pos = self._lyrics_engine.step(row)
        except TrackingLost as exc:
            logger.warning("lyrics tracker lost (%s); music tracker leads", exc)
            self._switch(t, Leader.MUSIC)
            return None
        event = self._emit(t, pos, lyrics_to_music(pos.ref_frame, self.hop_ratio))
        if not self._is_voice(pos.ref_time):
            self._switch(t, Leader.MUSIC)
            if self.config.reseed_music_on_handback:
                m = map_time(pos.ref_frame, self.hop_ratio, False, self.music.n_frames)
                self.music.reset(m)
        return event

    def frozen_event(self, t: float) -> AlignmentEvent | None:
        """Status record while the gate is halted: last position, no tracker step."""
        pos = self.last_position
        frame = pos.ref_frame
        if self.leader is Leader.LYRICS and self._lyrics_engine is not None:
            frame = lyrics_to_music(self._lyrics_engine.sp, self.hop_ratio)
        return self._emit(t, pos, frame, gate="halted")
