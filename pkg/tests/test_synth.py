import hashlib
import itertools
from dataclasses import replace

import numpy as np
import pytest

from conftest import rms
from inear_gait.dataio import load_manifest
from inear_gait.dsp import decimate, lowpass, segment_detailed
from inear_gait.errors import ParameterError
from inear_gait.synth import (
    CADENCE_RANGE, DECAY_RANGE, FREQ_RANGE, MODE_SETS, InterferenceSpec, Mode, SubjectProfile,
    band_noise, corpus_walks, gen_corpus, gen_profile, gen_walk, match_steps, perturb_profile,
)


def mode_freqs(profile):
    return [m.freq_hz for m in profile.modes]


def separated(a, b, gap=2.0 - 1e-9):
    """Some mode of one set lies at least ``gap`` Hz from every mode of the other."""
    return any(min(abs(f - g) for g in b) >= gap for f in a) or \
        any(min(abs(g - f) for f in a) >= gap for g in b)


def test_profile_is_deterministic():
    assert gen_profile(17) == gen_profile(17)


@pytest.mark.parametrize("seeds", [range(31), range(1000, 1031), [7 * k for k in range(31)]])
def test_distinct_seeds_give_separated_mode_sets(seeds):
    sets = [mode_freqs(gen_profile(s)) for s in seeds]
    assert len({tuple(s) for s in sets}) == 31
    for a, b in itertools.combinations(sets, 2):
        assert separated(a, b)


def test_every_lattice_set_is_reachable_once():
    seen = {tuple(mode_freqs(gen_profile(s))) for s in range(len(MODE_SETS))}
    assert len(seen) == len(MODE_SETS)


@pytest.mark.parametrize("seed", range(40))
def test_profile_ranges(seed):
    p = gen_profile(seed)
    assert 2 <= len(p.modes) <= 4
    for m in p.modes:
        assert FREQ_RANGE[0] <= m.freq_hz <= FREQ_RANGE[1] and m.freq_hz < 50
        assert DECAY_RANGE[0] <= m.decay <= DECAY_RANGE[1]
    assert CADENCE_RANGE[0] <= p.cadence_hz <= CADENCE_RANGE[1]
    assert 135 <= p.cadence_hz * 90 <= 198


def test_mode_above_50_hz_rejected():
    with pytest.raises(ParameterError):
        SubjectProfile("x", (Mode(55.0, 10.0, 1.0),), 1.9)


def test_truth_count_at_cadence():
    profile = replace(gen_profile(3), cadence_hz=1.9)
    walk = gen_walk(profile, 90.0, 4000, seed=1)
    assert abs(len(walk.truth) - 171) <= 2
    assert np.all(np.diff(walk.truth) > 0)
    np.testing.assert_array_equal(walk.feet, np.arange(len(walk.truth)) % 2)


def test_walk_is_deterministic_and_stereo():
    a = gen_walk(gen_profile(4), 10.0, 4000, seed=2)
    b = gen_walk(gen_profile(4), 10.0, 4000, seed=2)
    np.testing.assert_array_equal(a.left.samples, b.left.samples)
    assert a.left.channel == "left" and a.right.channel == "right"
    assert len(a.left.samples) == 40000
    assert np.max(np.abs(a.left.samples)) <= 0.99


def test_silent_profile():
    walk = gen_walk(gen_profile(5).silent(), 10.0, 4000, seed=0)
    assert not walk.left.samples.any() and not walk.right.samples.any()
    assert len(walk.truth) == 0


def test_short_walk_rejected():
    with pytest.raises(ParameterError):
        gen_walk(gen_profile(1), 4.0)


def test_speech_band_removed_by_lowpass():
    profile = gen_profile(6)
    clean = gen_walk(profile, 90.0, 48000, seed=3)
    noisy = gen_walk(profile, 90.0, 48000, InterferenceSpec.speech(0.0), seed=3)
    a = lowpass(decimate(clean.left)).samples
    b = lowpass(decimate(noisy.left)).samples
    assert rms(b - a) <= 0.01 * rms(a)


def test_interference_snr_is_power_ratio():
    profile = gen_profile(7)
    clean = gen_walk(profile, 20.0, 16000, seed=4, noise_snr_db=None)
    for snr in (0.0, 10.0):
        noisy = gen_walk(profile, 20.0, 16000, InterferenceSpec.music(snr), seed=4, noise_snr_db=None)
        other = noisy.left.samples - clean.left.samples
        measured = 10 * np.log10(np.mean(clean.left.samples ** 2) / np.mean(other ** 2))
        assert measured == pytest.approx(snr, abs=1e-6)


def test_band_noise_stays_in_band():
    rng = np.random.default_rng(0)
    x = band_noise(8000, 8000, (300.0, 3400.0), rng)
    spec = np.abs(np.fft.rfft(x)) ** 2
    f = np.fft.rfftfreq(8000, 1 / 8000)
    assert spec[(f < 300) | (f > 3400)].sum() <= 1e-20 * spec.sum()


def test_interference_band_limits():
    with pytest.raises(ParameterError):
        InterferenceSpec("speech_band", (200.0, 3400.0))
    with pytest.raises(ParameterError):
        InterferenceSpec("music_band", (40.0, 8000.0))
    with pytest.raises(ParameterError):
        InterferenceSpec.parse("noise")


def test_perturbation_zero_spread_reproduces_base():
    base = gen_profile(8)
    same = perturb_profile(base, 0.0, seed=1, subject_id=base.subject_id)
    assert same == base


def test_perturbation_moves_modes_a_little():
    base = gen_profile(9)
    near = perturb_profile(base, 1.0, seed=2, subject_id="N")
    shifts = np.abs(np.subtract(mode_freqs(near), mode_freqs(base)))
    assert shifts.max() > 0 and shifts.max() < 5.0


def test_match_steps():
    assert match_steps([0.0, 1.02, 5.0], [0.0, 1.0, 2.0]) == (2, 1, 1)
    assert match_steps([], [1.0]) == (0, 1, 0)


def tree_digest(root):
    h = hashlib.sha256()
    for p in sorted(root.iterdir()):
        h.update(p.name.encode())
        h.update(p.read_bytes())
    return h.hexdigest()


def test_corpus_shape_and_reproducibility(tmp_path):
    a = gen_corpus(tmp_path / "a", 6, 2, seed=1, duration_s=5.0, rate=4000)
    b = gen_corpus(tmp_path / "b", 6, 2, seed=1, duration_s=5.0, rate=4000)
    records = load_manifest(a)
    assert len(records) == 12
    assert len({r.subject_id for r in records}) == 6
    assert tree_digest(a.parent) == tree_digest(b.parent)
    c = gen_corpus(tmp_path / "c", 6, 2, seed=2, duration_s=5.0, rate=4000)
    assert tree_digest(a.parent) != tree_digest(c.parent)


def test_corpus_needs_two_subjects(tmp_path):
    with pytest.raises(ParameterError):
        gen_corpus(tmp_path / "x", 1)
    assert not (tmp_path / "x").exists()


def test_carpet_damps_strikes():
    walks = dict((r.ground, w) for r, w in corpus_walks(
        2, 2, [("tiles", "sneakers"), ("carpet", "sneakers")], seed=0, duration_s=10.0, rate=4000))
    assert rms(walks["carpet"].left.samples) < rms(walks["tiles"].left.samples)


def test_corpus_sessions_segment_to_truth():
    for record, walk in corpus_walks(4, 8, seed=5, duration_s=30.0):
        for clip in (walk.left, walk.right):
            steps = [s.time_s for s in segment_detailed(clip).steps]
            hits, misses, _ = match_steps(steps, walk.truth)
            assert hits >= 0.95 * len(walk.truth), (record.subject_id, record.session_id, clip.channel)
            assert record.step_count == len(walk.truth)
