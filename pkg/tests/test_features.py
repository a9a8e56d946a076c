import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.io import wavfile

from operatrack import features as feat
from operatrack.errors import ConfigError, InputFormatError
from operatrack.features import LYRICS_PRESET, MUSIC_PRESET, FeatureConfig

from oracles import htk_mel_filters, mfcc_oracle


def test_presets_dimensions():
    assert MUSIC_PRESET.output_dim == 100
    assert LYRICS_PRESET.output_dim == 80
    assert MUSIC_PRESET.window_samples == 882 and MUSIC_PRESET.hop_samples == 441
    assert LYRICS_PRESET.window_samples == 320 and LYRICS_PRESET.hop_samples == 160


def test_sine_matches_direct_dft_oracle():
    sr = LYRICS_PRESET.sample_rate
    x = 0.5 * np.sin(2 * np.pi * 440.0 * np.arange(sr) / sr)
    seq = feat.extract(x, LYRICS_PRESET)
    # the oracle is slow; check a spread of frames
    picks = [0, 1, 37, 50, 98]
    ref = mfcc_oracle(x, sr, 320, 160, 1024, 80, 80)
    assert seq.n_frames == ref.shape[0] == 99
    np.testing.assert_allclose(seq.frames[picks], ref[picks], atol=1e-6, rtol=0)


def test_filterbank_matches_loop_oracle():
    fb = feat.mel_filterbank(LYRICS_PRESET)
    np.testing.assert_allclose(fb, htk_mel_filters(16000, 1024, 80), atol=1e-12)
    assert np.allclose(fb.max(axis=1), fb.max(axis=1).clip(max=1.0))


def test_empty_filters_rejected():
    cfg = FeatureConfig(16000, 0.02, 0.01, 80, 0, 80, n_fft=320)
    with pytest.raises(ConfigError, match="empty mel filters"):
        feat.mel_filterbank(cfg)


def test_silence_music_preset():
    seq = feat.extract(np.zeros(44100), MUSIC_PRESET)
    assert seq.n_frames == 99
    assert seq.dim == 100
    assert np.all(np.isfinite(seq.frames))
    assert np.all(seq.frames == seq.frames[0])


def test_frame_times():
    seq = feat.extract(np.zeros(44100), MUSIC_PRESET)
    assert seq.t0 == pytest.approx(0.01)
    assert seq.time_of(10) == pytest.approx(0.11)
    assert seq.index_at(0.11) == 10


def test_sixty_seconds_frame_count():
    n = MUSIC_PRESET.n_frames(60 * 44100)
    assert abs(n - 6000) <= 2


@settings(max_examples=25, deadline=None)
@given(st.lists(st.integers(1, 3000), min_size=1, max_size=8), st.integers(0, 2**31 - 1))
def test_streaming_equals_offline(chunks, seed):
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(sum(chunks) + LYRICS_PRESET.window_samples)
    offline = feat.extract(x, LYRICS_PRESET).frames
    ex = feat.MfccExtractor(LYRICS_PRESET)
    out, pos = [], 0
    for c in chunks + [LYRICS_PRESET.window_samples]:
        out.append(ex.push(x[pos:pos + c]))
        pos += c
    streamed = np.concatenate(out)
    assert streamed.shape == offline.shape
    np.testing.assert_allclose(streamed, offline, atol=1e-6)
    assert ex.state.carry.size < LYRICS_PRESET.window_samples


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 5000))
def test_frame_count_law(n):
    cfg = LYRICS_PRESET
    frames, state = feat.stream_mfcc(np.zeros(n), cfg)
    expected = 0 if n < 320 else (n - 320) // 160 + 1
    assert frames.shape == (expected, 80)
    assert state.frames_emitted == expected


def test_amplitude_scaling_moves_only_c0():
    # log-mel shifts by a constant under gain; the orthonormal DCT puts that in c0 only
    rng = np.random.default_rng(3)
    x = rng.standard_normal(16000)
    a = feat.extract(x, LYRICS_PRESET).frames
    b = feat.extract(3.0 * x, LYRICS_PRESET).frames
    np.testing.assert_allclose(b[:, 1:], a[:, 1:], atol=1e-8)
    shift = 2 * np.log(3.0) * np.sqrt(80)
    np.testing.assert_allclose(b[:, 0] - a[:, 0], shift, atol=1e-8)


def test_sample_rate_mismatch():
    with pytest.raises(ConfigError):
        feat.stream_mfcc(np.zeros(100), MUSIC_PRESET, sample_rate=48000)


def test_nan_input():
    x = np.zeros(2000)
    x[5] = np.nan
    with pytest.raises(InputFormatError):
        feat.extract(x, LYRICS_PRESET)


@pytest.mark.parametrize("kwargs", [
    dict(hop=0.03),
    dict(n_mfcc_discarded_leading=80),
    dict(n_fft=256),
    dict(sample_rate=0),
])
def test_invalid_config(kwargs):
    base = dict(sample_rate=16000, window=0.02, hop=0.01, n_mfcc_computed=80,
                n_mfcc_discarded_leading=0, n_mels=80, n_fft=1024)
    base.update(kwargs)
    with pytest.raises(ConfigError):
        FeatureConfig(**base)


def _tone(sr, seconds, f):
    t = np.arange(int(sr * seconds)) / sr
    return 0.3 * np.sin(2 * np.pi * f * t)


def test_stereo_downmix(tmp_path):
    sr = 44100
    left, right = _tone(sr, 0.5, 440), _tone(sr, 0.5, 660)
    stereo = (np.stack([left, right], axis=1) * 32767).astype(np.int16)
    wavfile.write(tmp_path / "s.wav", sr, stereo)
    seq = feat.precompute_reference_features(tmp_path / "s.wav", MUSIC_PRESET)
    mono = (stereo[:, 0].astype(float) + stereo[:, 1]) / 2 / 32768.0
    np.testing.assert_allclose(seq.frames, feat.extract(mono, MUSIC_PRESET).frames, atol=1e-9)


def test_zero_length_and_junk_audio(tmp_path):
    wavfile.write(tmp_path / "empty.wav", 44100, np.zeros(0, dtype=np.int16))
    with pytest.raises(InputFormatError, match="zero-length"):
        feat.load_audio(tmp_path / "empty.wav")
    (tmp_path / "junk.wav").write_bytes(b"not a wav file at all")
    with pytest.raises(InputFormatError):
        feat.load_audio(tmp_path / "junk.wav")


def test_reference_rate_mismatch(tmp_path):
    wavfile.write(tmp_path / "a.wav", 22050, np.zeros(22050, dtype=np.int16))
    with pytest.raises(ConfigError):
        feat.precompute_reference_features(tmp_path / "a.wav", MUSIC_PRESET)


def test_cache_roundtrip_and_determinism(tmp_path):
    x = _tone(44100, 1.0, 330)
    seq = feat.extract(x, MUSIC_PRESET)
    feat.write_feature_cache(seq, tmp_path / "a.offeat")
    feat.write_feature_cache(feat.extract(x, MUSIC_PRESET), tmp_path / "b.offeat")
    assert (tmp_path / "a.offeat").read_bytes() == (tmp_path / "b.offeat").read_bytes()
    back = feat.read_feature_cache(tmp_path / "a.offeat")
    assert back.frame_hop == seq.frame_hop and back.t0 == seq.t0
    np.testing.assert_allclose(back.frames, seq.frames, rtol=1e-6, atol=1e-5)


def test_cache_rejects_corruption(tmp_path):
    seq = feat.FrameSequence(np.ones((3, 4)), 0.01)
    feat.write_feature_cache(seq, tmp_path / "a.offeat")
    raw = (tmp_path / "a.offeat").read_bytes()
    (tmp_path / "t.offeat").write_bytes(raw[:-4])
    with pytest.raises(InputFormatError):
        feat.read_feature_cache(tmp_path / "t.offeat")
    (tmp_path / "m.offeat").write_bytes(b"XXXXXXX" + raw[7:])
    with pytest.raises(InputFormatError, match="magic"):
        feat.read_feature_cache(tmp_path / "m.offeat")


def test_csv_roundtrip(tmp_path):
    seq = feat.FrameSequence(np.arange(12.0).reshape(4, 3), 0.01)
    feat.write_feature_csv(seq, tmp_path / "f.csv")
    back = feat.read_feature_cache(tmp_path / "f.csv")
    np.testing.assert_array_equal(back.frames, seq.frames)
