import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from operatrack.errors import ConfigError, InputFormatError
from operatrack.oltw import TrackerState
from operatrack.posteriogram import (DEFAULT_VOCABULARY, MODEL_DELAY_FRAMES, PHONEMES, Posteriogram,
                                     ReplayPosteriogramSource, ScriptedPosteriogramSource,
                                     lyrics_distance, load_posteriogram, posteriogram_distance,
                                     save_posteriogram, synth_posteriogram)

V = DEFAULT_VOCABULARY


def onehot(symbol):
    row = np.zeros(V.total_classes)
    row[V.index(symbol)] = 1.0
    return row


def test_vocabulary_layout():
    assert len(PHONEMES) == 57
    assert V.total_classes == 60
    assert (V.space_index, V.instrumental_index, V.blank_index) == (57, 58, 59)
    assert V.symbols[59] == "<blank>" and V.index("blank") == 59
    assert V.non_blank_mask.sum() == 59
    with pytest.raises(ConfigError):
        V.index("qq")


def test_distance_examples():
    assert posteriogram_distance(onehot("a"), onehot("a")) == pytest.approx(0.0, abs=1e-12)
    assert posteriogram_distance(onehot("a"), onehot("space")) == pytest.approx(1.0)
    a = 0.2 * onehot("a") + 0.1 * onehot("t") + 0.7 * onehot("blank")
    b = 0.6 * onehot("a") + 0.3 * onehot("t") + 0.1 * onehot("blank")
    assert posteriogram_distance(a, b) == pytest.approx(0.0, abs=1e-12)


def test_distance_rejects_wrong_length():
    with pytest.raises(InputFormatError):
        posteriogram_distance(np.ones(59) / 59, onehot("a"))


def test_synth_script_rows():
    p = synth_posteriogram([("a", 0.4), ("b", 0.4)])
    assert p.n_rows == 20 and p.hop == 0.04
    np.testing.assert_array_equal(p.rows[:10], np.tile(onehot("a"), (10, 1)))
    np.testing.assert_array_equal(p.rows[10:], np.tile(onehot("b"), (10, 1)))
    assert p.model_delay == MODEL_DELAY_FRAMES


@settings(max_examples=25, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(list(PHONEMES) + ["space", "instrumental"]),
                          st.floats(0.04, 1.0)), min_size=1, max_size=6),
       st.floats(0.0, 2.0), st.integers(0, 2**31 - 1))
def test_synth_rows_normalised_and_deterministic(script, noise, seed):
    a = synth_posteriogram(script, noise, seed)
    b = synth_posteriogram(script, noise, seed)
    np.testing.assert_allclose(a.rows.sum(axis=1), 1.0, atol=1e-6)
    np.testing.assert_array_equal(a.rows, b.rows)


def test_save_load_roundtrip(tmp_path):
    p = synth_posteriogram([("a", 0.4), ("space", 0.2), ("o", 0.4)], noise=0.3, seed=1)
    save_posteriogram(p, tmp_path / "p.ofpost")
    assert (tmp_path / "p.ofpost.vocab.txt").read_text().splitlines()[57] == "<space>"
    back = load_posteriogram(tmp_path / "p.ofpost")
    assert back.vocab == V and back.hop == pytest.approx(0.04)
    np.testing.assert_allclose(back.rows, p.rows, atol=1e-6)


def test_bad_row_sum_names_row():
    rows = np.tile(onehot("a"), (5, 1))
    rows[3] *= 1.5
    with pytest.raises(InputFormatError, match="row 3"):
        Posteriogram.from_rows(rows)


def test_header_dim_mismatch(tmp_path):
    p = synth_posteriogram([("a", 0.4)])
    save_posteriogram(p, tmp_path / "p.ofpost")
    (tmp_path / "p.ofpost.vocab.txt").unlink()
    raw = bytearray((tmp_path / "p.ofpost").read_bytes())
    raw[11:15] = (61).to_bytes(4, "little")
    (tmp_path / "p.ofpost").write_bytes(bytes(raw))
    with pytest.raises(InputFormatError, match="vocabulary mismatch"):
        load_posteriogram(tmp_path / "p.ofpost")
    with pytest.raises(InputFormatError, match="vocabulary mismatch"):
        Posteriogram.from_rows(np.ones((2, 61)) / 61)


def test_replay_source_cadence():
    p = synth_posteriogram([("a", 0.4)])
    src = ReplayPosteriogramSource(p)
    src.advance_to(0.0)
    assert [k for k, _, _ in src.pull()] == [0]
    src.advance_to(0.079)
    assert [k for k, _, _ in src.pull()] == [1]
    src.advance_to(0.2)
    assert [k for k, _, _ in src.pull()] == [2, 3, 4, 5]
    src.push(np.zeros(16000), 16000)
    assert [k for k, _, _ in src.pull()] == [6, 7, 8, 9]
    assert src.exhausted and src.pull() == []


def test_scripted_source_with_latency():
    src = ScriptedPosteriogramSource([("a", 0.2)], latency=0.08)
    src.advance_to(0.07)
    assert src.pull() == []
    src.advance_to(0.12)
    assert [k for k, _, _ in src.pull()] == [0, 1]


def test_blank_mass_does_not_move_tracker():
    rng = np.random.default_rng(0)
    script = [(PHONEMES[i], 0.12) for i in rng.integers(0, 57, 40)]
    ref = synth_posteriogram(script, 0.1, 1)
    tgt = synth_posteriogram(script, 0.4, 2)
    blanked = tgt.rows.copy()
    blanked[:, 59] += 5.0 * rng.random(len(blanked))
    blanked /= blanked.sum(axis=1, keepdims=True)
    a = TrackerState(ref.seq, 0, 40, lyrics_distance())
    b = TrackerState(ref.seq, 0, 40, lyrics_distance())
    pa = [a.step(r).ref_frame for r in tgt.rows]
    pb = [b.step(r).ref_frame for r in blanked]
    assert pa == pb
