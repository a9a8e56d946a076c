import json
import logging
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, strategies as st

from operatrack.combiner import (AlignmentEvent, CombinedTracker, CombinerConfig, Leader, lyrics_to_music,
                                 map_time, music_to_lyrics)
from operatrack.pipeline import TrackConfig, music_only, track_bundle
from operatrack.segmentation import PartIndex
from operatrack.synth import Scenario, generate_pair


@pytest.mark.parametrize("m,q", [(400, 100), (402, 100), (401, 100), (403, 101), (0, 0), (2, 0), (6, 1)])
def test_music_to_lyrics(m, q):
    assert music_to_lyrics(m) == q


def test_lyrics_to_music():
    assert lyrics_to_music(100) == 400
    assert map_time(100, to_lyrics=False) == 400


@given(st.integers(0, 10**6))
def test_mapping_roundtrip(q):
    assert music_to_lyrics(lyrics_to_music(q)) == q


def test_map_time_clamps(caplog):
    with caplog.at_level(logging.WARNING):
        assert map_time(4000, n_frames=500) == 499
    assert "clamped" in caplog.text


def test_event_json_roundtrip():
    e = AlignmentEvent(1.5, 1.4, 140, 1, "P01", "music", "active", 0.1)
    assert AlignmentEvent.from_dict(json.loads(e.to_json())) == e


def voice_scenario(**kw):
    base = dict(parts=[{"title": "A", "kind": "music", "duration": 20.0},
                       {"title": "B", "kind": "voice", "duration": 10.0},
                       {"title": "C", "kind": "music", "duration": 20.0}],
                seed=3, feature_noise=0.0, voice_feature_noise=0.0, posteriogram_noise=0.0)
    base.update(kw)
    return Scenario(**base)


def make_tracker(ref, config=CombinerConfig(c_music=400, c_lyrics=100)):
    return CombinedTracker(ref.features, PartIndex(ref.parts, ref.annotations), ref.posteriogram, config)


def test_music_part_only_music_leads():
    ref, tgt, _ = generate_pair(voice_scenario())
    tr = make_tracker(ref)
    for m in range(1500):
        e = tr.on_music_frame(tgt.features.frames[m], m * 0.01)
        assert e.leader == "music"
    assert tr.transitions == []


def test_crossing_seeds_lyrics_once():
    ref, tgt, _ = generate_pair(voice_scenario())
    tr = make_tracker(ref)
    frames = tgt.features.frames
    m = 0
    while tr.leader is Leader.MUSIC:
        tr.on_music_frame(frames[m], m * 0.01)
        m += 1
    assert len(tr.transitions) == 1
    lyr = tr.lyrics
    finite = np.flatnonzero(np.isfinite(lyr.D))
    assert finite.size == 1 and lyr.D[finite[0]] == 0.0
    assert lyr.lo + finite[0] == music_to_lyrics(tr.music.sp)
    assert abs(tr.music.sp - 2000) <= 1
    # further music frames while lyrics leads emit nothing and do not re-seed
    for k in range(m, m + 50):
        assert tr.on_music_frame(frames[k], k * 0.01) is None
    assert len(tr.transitions) == 1


def test_lyrics_hands_back_at_boundary():
    ref, tgt, _ = generate_pair(voice_scenario())
    events = track_bundle(ref, tgt, TrackConfig(CombinerConfig(c_music=400, c_lyrics=100)))
    leaders = [e.leader for e in events]
    changes = [(a, b) for a, b in zip(leaders, leaders[1:]) if a != b]
    assert changes == [("music", "lyrics"), ("lyrics", "music")]
    lyr = [e for e in events if e.leader == "lyrics"]
    # lyrics positions follow the diagonal within one posteriogram frame
    assert max(abs(e.t_ref_s - e.t_perf_s) for e in lyr) <= 0.04 + 1e-9
    back = next(i for i, e in enumerate(events) if i and events[i - 1].leader == "lyrics" and e.leader == "music")
    assert events[back - 1].t_ref_s >= 30.0 - 0.04
    assert all(e1.t_perf_s < e2.t_perf_s for e1, e2 in zip(events, events[1:]))


def test_halted_no_step():
    ref, tgt, _ = generate_pair(voice_scenario())
    tr = make_tracker(ref)
    tr.on_music_frame(tgt.features.frames[0], 0.0)
    sp, it = tr.music.sp, tr.music.iteration
    tr.halted = True
    assert tr.on_music_frame(tgt.features.frames[1], 0.01) is None
    assert tr.on_lyrics_frame(tgt.posteriogram.rows[0], 0.01) is None
    assert (tr.music.sp, tr.music.iteration) == (sp, it)
    frozen = tr.frozen_event(0.02)
    assert frozen.gate == "halted" and frozen.ref_frame == sp


def test_all_music_reduction():
    sc = Scenario(parts=[{"title": "A", "duration": 30.0, "slope": 1.1},
                         {"title": "B", "duration": 30.0, "slope": 0.9}], seed=1, feature_noise=0.5)
    ref, tgt, _ = generate_pair(sc)
    cfg = TrackConfig(CombinerConfig(c_music=400))
    a = track_bundle(ref, tgt, cfg)
    b = track_bundle(ref, tgt, music_only(cfg))
    assert [e.to_json() for e in a] == [e.to_json() for e in b]


def test_reseed_option_moves_music_tracker():
    ref, tgt, _ = generate_pair(voice_scenario(voice_features="decorrelated"))
    out = []
    track_bundle(ref, tgt, TrackConfig(CombinerConfig(c_music=400, c_lyrics=100,
                                                      reseed_music_on_handback=True)), tracker_out=out)
    tr = out[0]
    assert [l for _, l in tr.transitions] == [Leader.LYRICS, Leader.MUSIC]
    assert abs(tr.music.sp - 5000) <= 2
