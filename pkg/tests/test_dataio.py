import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from inear_gait.classify import decision_scores, train_two_class
from inear_gait.dataio import (
    AudioClip, SessionRecord, load_manifest, load_model, read_channel, read_records, read_wav,
    save_model, write_manifest, write_records, write_wav,
)
from inear_gait.errors import (
    FormatError, IncompatibleModelError, ParameterError, SchemaError, UnsupportedFormatError,
)


def _record(**over):
    base = {"subject_id": "S01", "session_id": "a", "ground": "tiles", "footwear": "sneakers",
            "left_path": "l.wav", "right_path": "r.wav"}
    base.update(over)
    return base


# --- AudioClip ---------------------------------------------------------------

def test_clip_rejects_nonfinite_and_bad_rate():
    with pytest.raises(ParameterError):
        AudioClip([0.0, np.nan], 100)
    with pytest.raises(ParameterError):
        AudioClip([0.0], 0)
    with pytest.raises(ParameterError):
        AudioClip([0.0], 44.5)
    with pytest.raises(ParameterError):
        AudioClip([0.0], 100, "middle")


def test_clip_samples_are_immutable():
    clip = AudioClip(np.zeros(4), 4)
    with pytest.raises(ValueError):
        clip.samples[0] = 1.0


# --- WAV ---------------------------------------------------------------------

def test_silence_reads_as_zeros(tmp_path):
    write_wav(tmp_path / "s.wav", AudioClip(np.zeros(48000), 48000))
    (clip,) = read_wav(tmp_path / "s.wav")
    assert clip.sample_rate == 48000
    assert len(clip.samples) == 48000
    assert not clip.samples.any()


def test_full_scale_square_wave(tmp_path):
    x = np.where(np.arange(4800) % 48 < 24, 1.0, -1.0)
    write_wav(tmp_path / "sq.wav", AudioClip(x, 48000))
    y = read_channel(tmp_path / "sq.wav").samples
    assert np.max(np.abs(y - x)) <= 1 / 32768


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1.0, 1.0), min_size=1, max_size=300), st.sampled_from([4000, 48000]))
def test_pcm16_round_trip_within_one_step(tmp_path_factory, values, rate):
    path = tmp_path_factory.mktemp("wav") / "x.wav"
    write_wav(path, AudioClip(values, rate))
    (clip,) = read_wav(path)
    assert clip.sample_rate == rate
    assert np.max(np.abs(clip.samples - np.asarray(values))) <= 1 / 32768


def test_float32_round_trip_is_float32_exact(tmp_path):
    x = np.random.default_rng(0).uniform(-1, 1, 1001)
    write_wav(tmp_path / "f.wav", AudioClip(x, 4000), encoding="float32")
    (clip,) = read_wav(tmp_path / "f.wav")
    np.testing.assert_array_equal(clip.samples, x.astype(np.float32).astype(np.float64))


def test_stereo_channel_zero_is_left(tmp_path):
    left = AudioClip(np.full(10, 0.25), 4000, "left")
    right = AudioClip(np.full(10, -0.5), 4000, "right")
    write_wav(tmp_path / "st.wav", [left, right])
    clips = read_wav(tmp_path / "st.wav")
    assert [c.channel for c in clips] == ["left", "right"]
    assert np.allclose(clips[0].samples, 0.25) and np.allclose(clips[1].samples, -0.5)
    assert np.allclose(read_channel(tmp_path / "st.wav", "right").samples, -0.5)


def test_mono_clip_takes_requested_channel(tmp_path):
    write_wav(tmp_path / "m.wav", AudioClip(np.zeros(5), 4000))
    assert read_channel(tmp_path / "m.wav", "right").channel == "right"


def _wav_bytes(tag, bits, channels=1, n=4, rate=4000):
    block = channels * bits // 8
    fmt = struct.pack("<HHIIHH", tag, channels, rate, rate * block, block, bits)
    data = bytes(n * block)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(data)) + data
    return b"RIFF" + struct.pack("<I", len(body)) + body


def test_unsupported_encodings(tmp_path):
    for tag, bits, channels in [(1, 24, 1), (1, 8, 1), (3, 64, 1), (1, 16, 3)]:
        p = tmp_path / f"u{tag}_{bits}_{channels}.wav"
        p.write_bytes(_wav_bytes(tag, bits, channels))
        with pytest.raises(UnsupportedFormatError):
            read_wav(p)


def test_extensible_pcm16_is_read(tmp_path):
    fmt = struct.pack("<HHIIHH", 0xFFFE, 1, 4000, 8000, 2, 16)
    fmt += struct.pack("<HHI", 22, 16, 4) + struct.pack("<H", 1) + bytes(14)
    data = struct.pack("<2h", 16384, -16384)
    body = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt + b"data" + struct.pack("<I", len(data)) + data
    p = tmp_path / "ext.wav"
    p.write_bytes(b"RIFF" + struct.pack("<I", len(body)) + body)
    np.testing.assert_allclose(read_channel(p).samples, [0.5, -0.5])


def test_malformed_headers(tmp_path):
    p = tmp_path / "bad.wav"
    p.write_bytes(b"RIFX" + bytes(40))
    with pytest.raises(FormatError):
        read_wav(p)
    good = _wav_bytes(1, 16, n=100)
    p.write_bytes(good[:-50])  # truncated data chunk
    with pytest.raises(FormatError):
        read_wav(p)
    p.write_bytes(good[:36])  # no data chunk
    with pytest.raises(FormatError):
        read_wav(p)


def test_write_rejects_mismatched_stereo(tmp_path):
    with pytest.raises(ParameterError):
        write_wav(tmp_path / "x.wav", [AudioClip(np.zeros(3), 10), AudioClip(np.zeros(4), 10, "right")])


# --- manifest ----------------------------------------------------------------

def test_empty_manifest(tmp_path):
    (tmp_path / "m.jsonl").write_text("")
    assert load_manifest(tmp_path / "m.jsonl") == []


def test_manifest_full_corpus_shape(tmp_path):
    grounds = ["tiles", "carpet"]
    foot = ["barefoot", "slippers", "sneakers", "speaking"]
    records = [SessionRecord(f"S{s:02d}", f"{g}-{f}", g, f, "l.wav", "r.wav", 160)
               for s in range(31) for g in grounds for f in foot]
    write_manifest(records, tmp_path / "m.jsonl")
    loaded = load_manifest(tmp_path / "m.jsonl")
    assert len(loaded) == 248
    assert loaded == records


def test_manifest_blank_lines_and_resolution(tmp_path):
    lines = ["", json.dumps(_record()), "   ", json.dumps(_record(session_id="b", step_count=3))]
    (tmp_path / "m.jsonl").write_text("\n".join(lines) + "\n")
    recs = load_manifest(tmp_path / "m.jsonl", resolve=True)
    assert [r.session_id for r in recs] == ["a", "b"]
    assert recs[0].left_path == str(tmp_path / "l.wav")
    assert recs[1].step_count == 3 and recs[0].step_count is None


@pytest.mark.parametrize("bad, fragment", [
    ({"subject_id": None}, "subject_id"),
    ({"ground": "grass"}, "ground"),
    ({"footwear": "boots"}, "footwear"),
    ({"step_count": -1}, "step_count"),
    ({"step_count": True}, "step_count"),
    ({"step_count": 2.5}, "step_count"),
])
def test_manifest_schema_errors_carry_line_number(tmp_path, bad, fragment):
    rec = _record(**bad)
    if rec.get("subject_id") is None:
        del rec["subject_id"]
    (tmp_path / "m.jsonl").write_text(json.dumps(_record(session_id="z")) + "\n" + json.dumps(rec) + "\n")
    with pytest.raises(SchemaError, match=rf"line 2: .*{fragment}"):
        load_manifest(tmp_path / "m.jsonl")


def test_manifest_duplicate_session(tmp_path):
    (tmp_path / "m.jsonl").write_text(json.dumps(_record()) + "\n" + json.dumps(_record()) + "\n")
    with pytest.raises(SchemaError, match="line 2: duplicate"):
        load_manifest(tmp_path / "m.jsonl")


def test_manifest_invalid_json(tmp_path):
    (tmp_path / "m.jsonl").write_text("{not json\n")
    with pytest.raises(SchemaError, match="line 1"):
        load_manifest(tmp_path / "m.jsonl")


# --- models ------------------------------------------------------------------

@pytest.fixture()
def model():
    rng = np.random.default_rng(1)
    X = np.vstack([rng.normal(0, 1, (20, 5)), rng.normal(3, 1, (20, 5))])
    y = np.r_[np.ones(20), -np.ones(20)]
    return train_two_class(X, y, layout="test:5|left", preprocessing={"cutoff": 50.0})


def test_model_round_trip_identical_scores(tmp_path, model):
    save_model(model, tmp_path / "m.json")
    loaded = load_model(tmp_path / "m.json")
    probes = np.random.default_rng(2).normal(1.5, 2, (100, 5))
    assert np.max(np.abs(decision_scores(loaded, probes) - decision_scores(model, probes))) <= 1e-12
    for name in ("kind", "bias", "gamma", "feature_layout", "decision_threshold", "hyperparams", "preprocessing"):
        assert getattr(loaded, name) == getattr(model, name)
    np.testing.assert_array_equal(loaded.support_vectors, model.support_vectors)
    np.testing.assert_array_equal(loaded.dual_coefs, model.dual_coefs)
    np.testing.assert_array_equal(loaded.scaler.mean, model.scaler.mean)


def test_truncated_model_is_incompatible(tmp_path, model):
    save_model(model, tmp_path / "m.json")
    text = (tmp_path / "m.json").read_text()
    (tmp_path / "t.json").write_text(text[: len(text) // 2])
    with pytest.raises(IncompatibleModelError):
        load_model(tmp_path / "t.json")


def test_model_version_mismatch(tmp_path, model):
    save_model(model, tmp_path / "m.json")
    obj = json.loads((tmp_path / "m.json").read_text())
    obj["version"] = 99
    (tmp_path / "v.json").write_text(json.dumps(obj))
    with pytest.raises(IncompatibleModelError, match="version"):
        load_model(tmp_path / "v.json")
    obj["version"], obj["format"] = 1, "something-else"
    (tmp_path / "f.json").write_text(json.dumps(obj))
    with pytest.raises(IncompatibleModelError):
        load_model(tmp_path / "f.json")


def test_model_without_support_vectors_rejected(tmp_path, model):
    from dataclasses import replace
    empty = replace(model, support_vectors=np.zeros((0, 5)), dual_coefs=np.zeros(0))
    with pytest.raises(ParameterError):
        save_model(empty, tmp_path / "e.json")


def test_records_round_trip(tmp_path):
    recs = [{"a": 1, "b": [1.5, 2.0]}, {"a": 2}]
    write_records(recs, tmp_path / "r.jsonl")
    assert read_records(tmp_path / "r.jsonl") == recs
