"""Synthetic in-ear walking recordings with exact ground truth.

Each foot strike excites a handful of subject-specific damped resonances
below 45 Hz.  Strikes follow a jittered cadence and alternate between the
left and the right foot; the ear on the striking foot's side hears the
strike louder, which gives the two-steps-per-cycle structure the segmenter
relies on.  Optional interference (speech band, music band, a tone) is added
at a power SNR measured over the whole clip.

Random streams are split per purpose (walk, sensor noise, interference) so
that the walk component of a clip does not depend on which interference is
requested.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np
from scipy.fft import irfft, rfft, rfftfreq

from .dataio import AudioClip, SessionRecord, write_manifest, write_wav
from .errors import ParameterError

FREQ_RANGE = (8.0, 45.0)
# Mode frequencies sit on this lattice, so two different mode sets always
# have a mode at least one step away from every mode of the other.
FREQ_STEP_HZ = 2.0
# Upper part of the allowed 5-30 1/s range: the smoothed envelope peak lags
# the strike onset by roughly 0.44 / decay seconds.
DECAY_RANGE = (18.0, 30.0)
CADENCE_RANGE = (1.5, 2.2)
BASE_AMPLITUDE = 0.2
TAIL_S = 0.3

CONDITIONS = (
    ("tiles", "sneakers"), ("carpet", "sneakers"),
    ("tiles", "barefoot"), ("carpet", "barefoot"),
    ("tiles", "slippers"), ("carpet", "slippers"),
    ("tiles", "speaking"), ("carpet", "speaking"),
)
# (amplitude factor, decay factor, jitter factor)
GROUND_EFFECTS = {"tiles": (1.0, 1.0, 1.0), "carpet": (0.6, 1.25, 1.0), "synthetic": (1.0, 1.0, 1.0)}
FOOTWEAR_EFFECTS = {
    "barefoot": (1.0, 0.9, 1.0),
    "sneakers": (0.9, 1.0, 1.0),
    "slippers": (0.85, 1.1, 1.5),
    "speaking": (0.9, 1.0, 1.0),
    "synthetic": (1.0, 1.0, 1.0),
}


@dataclass(frozen=True)
class Mode:
    freq_hz: float
    decay: float
    amplitude: float


@dataclass(frozen=True)
class SubjectProfile:
    """The gait signature of one synthetic subject."""

    subject_id: str
    modes: tuple[Mode, ...]
    cadence_hz: float
    cadence_jitter: float = 0.015
    left_gain: float = 1.0
    right_gain: float = 1.0
    off_side_gain: float = 0.7
    amplitude: float = BASE_AMPLITUDE
    # Per-mode amplitude tilt applied to right-foot strikes.
    right_foot_tilt: tuple[float, ...] = ()

    def __post_init__(self):
        if any(m.freq_hz >= 50.0 for m in self.modes):
            raise ParameterError("mode frequencies must stay below 50 Hz")

    def silent(self) -> "SubjectProfile":
        return replace(self, amplitude=0.0)


@dataclass(frozen=True)
class InterferenceSpec:
    kind: str = "none"
    band: tuple[float, float] = (0.0, 0.0)
    snr_db: float = 0.0

    def __post_init__(self):
        if self.kind not in ("none", "speech_band", "music_band", "tone"):
            raise ParameterError(f"unknown interference kind {self.kind!r}")
        if self.kind == "speech_band" and self.band[0] < 300.0:
            raise ParameterError("speech band must start at or above 300 Hz")
        if self.kind == "music_band" and self.band[0] < 60.0:
            raise ParameterError("music band must start at or above 60 Hz")

    @classmethod
    def speech(cls, snr_db: float = 0.0) -> "InterferenceSpec":
        return cls("speech_band", (300.0, 3400.0), snr_db)

    @classmethod
    def music(cls, snr_db: float = 0.0) -> "InterferenceSpec":
        return cls("music_band", (60.0, 8000.0), snr_db)

    @classmethod
    def tone(cls, freq_hz: float = 440.0, snr_db: float = 0.0) -> "InterferenceSpec":
        return cls("tone", (freq_hz, freq_hz), snr_db)

    @classmethod
    def parse(cls, text: str, snr_db: float = 0.0) -> "InterferenceSpec":
        table = {"none": lambda s: cls(), "speech": cls.speech, "speech_band": cls.speech,
                 "music": cls.music, "music_band": cls.music, "tone": lambda s: cls.tone(440.0, s)}
        if text not in table:
            raise ParameterError(f"unknown interference {text!r}")
        return table[text](snr_db)


@dataclass
class Walk:
    left: AudioClip
    right: AudioClip
    truth: np.ndarray
    feet: np.ndarray = field(default_factory=lambda: np.array([], dtype=int))


def _mode_sets() -> list[tuple[float, ...]]:
    lattice = np.arange(FREQ_RANGE[0], FREQ_RANGE[1], FREQ_STEP_HZ)
    return [tuple(float(f) for f in c) for n in (2, 3, 4)
            for c in itertools.combinations(lattice, n)]


MODE_SETS = _mode_sets()
# Coprime to len(MODE_SETS): the seed -> mode set map is a bijection modulo
# the number of sets, and consecutive seeds land far apart.
_MODE_SET_STRIDE = 2971


def gen_profile(seed: int, subject_id: str | None = None) -> SubjectProfile:
    """Deterministic subject signature from an integer seed.

    Seeds that differ modulo ``len(MODE_SETS)`` get different lattice mode
    sets; everything else (decays, amplitudes, cadence, gains) is drawn from
    a generator seeded with ``seed``.
    """
    rng = np.random.default_rng(seed)
    freqs = MODE_SETS[(seed * _MODE_SET_STRIDE) % len(MODE_SETS)]
    n_modes = len(freqs)
    decays = rng.uniform(*DECAY_RANGE, n_modes)
    amps = rng.uniform(0.3, 1.0, n_modes)
    amps /= amps.max()
    modes = tuple(Mode(float(f), float(d), float(a)) for f, d, a in zip(freqs, decays, amps))
    return SubjectProfile(
        subject_id=subject_id if subject_id is not None else f"S{seed:03d}",
        modes=modes,
        cadence_hz=float(rng.uniform(*CADENCE_RANGE)),
        cadence_jitter=float(rng.uniform(0.01, 0.02)),
        left_gain=1.0,
        right_gain=float(rng.uniform(0.8, 1.2)),
        off_side_gain=float(rng.uniform(0.6, 0.8)),
        right_foot_tilt=tuple(float(t) for t in rng.uniform(0.8, 1.2, n_modes)),
    )


def perturb_profile(base: SubjectProfile, spread_hz: float, seed: int,
                    subject_id: str) -> SubjectProfile:
    """A near neighbour of ``base``: mode frequencies move by N(0, spread_hz).

    Decays, amplitudes, cadence and gains move by a proportional relative
    amount (``spread_hz / 10``), so ``spread_hz = 0`` reproduces ``base``.
    """
    rng = np.random.default_rng(seed)
    rel = spread_hz / 10.0
    n = len(base.modes)
    df = rng.normal(0.0, spread_hz, n)
    dd, da, dt = (np.exp(rng.normal(0.0, rel, n)) for _ in range(3))
    modes = tuple(
        Mode(float(np.clip(m.freq_hz + f, *FREQ_RANGE)), float(np.clip(m.decay * d, *DECAY_RANGE)),
             float(m.amplitude * a))
        for m, f, d, a in zip(base.modes, df, dd, da))
    g = np.exp(rng.normal(0.0, rel, 3))
    return replace(
        base, subject_id=subject_id, modes=modes,
        cadence_hz=float(np.clip(base.cadence_hz * g[0], *CADENCE_RANGE)),
        right_gain=base.right_gain * float(g[1]),
        off_side_gain=float(np.clip(base.off_side_gain * g[2], 0.5, 0.9)),
        right_foot_tilt=tuple(float(t * x) for t, x in zip(base.right_foot_tilt or [1.0] * n, dt)),
    )


def strike_schedule(cadence_hz: float, jitter: float, duration_s: float,
                    rng: np.random.Generator) -> np.ndarray:
    """Strike times ``(k + 0.5) / cadence`` with i.i.d. interval jitter.

    The last strike is at least ``TAIL_S`` before the end of the clip.
    """
    period = 1.0 / cadence_hz
    n_max = int(duration_s * cadence_hz) + 2
    intervals = np.clip(rng.normal(period, jitter, n_max), 0.5 * period, 1.5 * period)
    times = 0.5 * period + np.concatenate([[0.0], np.cumsum(intervals[:-1])])
    return times[times <= duration_s - TAIL_S]


def _render(profile: SubjectProfile, times: np.ndarray, n: int, rate: int,
            rng: np.random.Generator, decay_scale: float) -> tuple[np.ndarray, np.ndarray]:
    left = np.zeros(n)
    right = np.zeros(n)
    tilt = np.asarray(profile.right_foot_tilt or [1.0] * len(profile.modes))
    min_decay = min(m.decay for m in profile.modes) * decay_scale
    span = int(np.ceil(9.2 / min_decay * rate))
    t = np.arange(span) / rate
    envelopes = [np.exp(-mode.decay * decay_scale * t) for mode in profile.modes]
    for k, t0 in enumerate(times):
        gain = profile.amplitude * float(np.exp(rng.normal(0.0, 0.08)))
        wave = np.zeros(span)
        for m, mode in enumerate(profile.modes):
            f = mode.freq_hz * (1.0 + rng.normal(0.0, 0.01))
            a = mode.amplitude * (tilt[m] if k % 2 else 1.0)
            phase = rng.uniform(-0.3, 0.3)
            wave += a * envelopes[m] * np.sin(2 * np.pi * f * t + phase)
        i0 = int(round(t0 * rate))
        seg = wave[:max(0, n - i0)] * gain
        left_foot = k % 2 == 0
        left[i0:i0 + len(seg)] += seg * profile.left_gain * (1.0 if left_foot else profile.off_side_gain)
        right[i0:i0 + len(seg)] += seg * profile.right_gain * (profile.off_side_gain if left_foot else 1.0)
    return left, right


def _band_mask(n: int, rate: int, band: tuple[float, float]) -> np.ndarray:
    freqs = rfftfreq(n, 1.0 / rate)
    return (freqs >= band[0]) & (freqs <= min(band[1], 0.98 * rate / 2.0))


def band_noise(n: int, rate: int, band: tuple[float, float], rng: np.random.Generator,
               flat_random: bool = False) -> np.ndarray:
    """Noise whose spectrum lies exactly inside ``band``.

    Gaussian-magnitude bins by default; ``flat_random`` draws magnitudes
    uniformly (the "uniform random spectrum" used as synthetic music).
    """
    mask = _band_mask(n, rate, band)
    k = int(mask.sum())
    spec = np.zeros(len(mask), dtype=complex)
    mag = rng.uniform(0.0, 1.0, k) if flat_random else np.abs(rng.normal(size=k))
    spec[mask] = mag * np.exp(1j * rng.uniform(0, 2 * np.pi, k))
    return irfft(spec, n)


def interference_signal(spec: InterferenceSpec, n: int, rate: int,
                        rng: np.random.Generator) -> np.ndarray:
    if spec.kind == "none":
        return np.zeros(n)
    if spec.kind == "tone":
        t = np.arange(n) / rate
        return np.sin(2 * np.pi * spec.band[0] * t + rng.uniform(0, 2 * np.pi))
    if spec.kind == "speech_band":
        # Syllable-rate loudness changes on white noise, then band-limited.
        t = np.arange(n) / rate
        x = rng.standard_normal(n) * (1.0 + 0.5 * np.sin(2 * np.pi * 4.0 * t + rng.uniform(0, 2 * np.pi)))
        X = rfft(x)
        X[~_band_mask(n, rate, spec.band)] = 0.0
        return irfft(X, n)
    return band_noise(n, rate, spec.band, rng, flat_random=True)


def _add_at_snr(clean: np.ndarray, other: np.ndarray, snr_db: float) -> np.ndarray:
    p_clean = np.dot(clean, clean) / len(clean)
    p_other = np.dot(other, other) / len(other)
    if p_clean == 0 or p_other == 0:
        return clean.copy()
    return clean + other * np.sqrt(p_clean / (p_other * 10.0 ** (snr_db / 10.0)))


def gen_walk(profile: SubjectProfile, duration_s: float = 90.0, rate: int = 48000,
             interference: InterferenceSpec = InterferenceSpec(), seed: int = 0,
             strike_times: Sequence[float] | None = None, amplitude_scale: float = 1.0,
             decay_scale: float = 1.0, jitter_scale: float = 1.0,
             noise_snr_db: float | None = 30.0) -> Walk:
    """Render a stereo in-ear walk and its exact strike times.

    ``strike_times`` overrides the cadence-driven schedule.  Sensor noise is
    white, at ``noise_snr_db`` below the walk power of each ear; ``None``
    disables it.
    """
    if duration_s < 5.0:
        raise ParameterError(f"duration must be at least 5 s, got {duration_s}")
    walk_rng, noise_rng, intf_rng = (np.random.default_rng(s)
                                     for s in np.random.SeedSequence(seed).spawn(3))
    n = int(round(duration_s * rate))
    if strike_times is None:
        times = strike_schedule(profile.cadence_hz, profile.cadence_jitter * jitter_scale,
                                duration_s, walk_rng)
    else:
        times = np.sort(np.asarray(strike_times, dtype=np.float64))
        if len(times) and (times[0] < 0 or times[-1] >= duration_s):
            raise ParameterError("strike times must lie inside the clip")
    amplitude = profile.amplitude * amplitude_scale
    if amplitude == 0 or not any(m.amplitude for m in profile.modes):
        silent = np.zeros(n)
        return Walk(AudioClip(silent, rate, "left"), AudioClip(silent, rate, "right"),
                    np.array([]), np.array([], dtype=int))
    left, right = _render(replace(profile, amplitude=amplitude), times, n, rate, walk_rng, decay_scale)

    # One interference source reaches both ears; SNR is set per ear.
    other = interference_signal(interference, n, rate, intf_rng) if interference.kind != "none" else None
    out = []
    for clean in (left, right):
        x = clean
        if noise_snr_db is not None:
            x = _add_at_snr(x, noise_rng.standard_normal(n), noise_snr_db)
        if other is not None:
            x = _add_at_snr(x, other, interference.snr_db)
        out.append(x)
    peak = max(np.abs(out[0]).max(), np.abs(out[1]).max())
    if peak > 0.99:
        out = [x * (0.99 / peak) for x in out]
    feet = np.arange(len(times)) % 2
    return Walk(AudioClip(out[0], rate, "left"), AudioClip(out[1], rate, "right"), times, feet)


def _subject_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def corpus_walks(n_subjects: int = 6, sessions_per_subject: int = 2,
                 conditions: Sequence[tuple[str, str]] | None = None, seed: int = 0,
                 duration_s: float = 90.0, rate: int = 48000, identical: bool = False,
                 interference_snr_db: float = 0.0, spread_hz: float | None = None,
                 interference: str = "none") -> Iterator[tuple[SessionRecord, Walk]]:
    """Yield ``(record, walk)`` per session of the corpus :func:`gen_corpus` writes.

    Session ``k`` of every subject is recorded under ``conditions[k % len]``.
    Carpet damps strikes and shortens their ring; "speaking" sessions carry
    speech-band interference.  With ``identical=True`` every subject shares
    the first subject's signature, which makes them indistinguishable.
    ``spread_hz`` instead derives every subject from that shared signature
    with :func:`perturb_profile`, for corpora whose classes overlap.
    ``interference`` (see :meth:`InterferenceSpec.parse`) is added to every
    session other than the speaking ones.
    """
    if n_subjects < 2:
        raise ParameterError("a corpus needs at least two subjects")
    conditions = list(conditions or CONDITIONS)
    # Consecutive profile seeds keep every subject's mode set distinct.
    first = _subject_seed(seed, 0)
    base = gen_profile(first, "S00")
    for i in range(n_subjects):
        sid = f"S{i:02d}"
        if identical:
            profile = replace(base, subject_id=sid)
        elif spread_hz is not None:
            profile = perturb_profile(base, spread_hz, _subject_seed(seed + 3, i), sid)
        else:
            profile = gen_profile(first + i, sid)
        for k in range(sessions_per_subject):
            ground, footwear = conditions[k % len(conditions)]
            ga, gd, gj = GROUND_EFFECTS[ground]
            fa, fd, fj = FOOTWEAR_EFFECTS[footwear]
            # Identical corpora share session effects too, so nothing but noise tells subjects apart.
            sess_key = k if identical else i * 1000 + k
            sess_rng = np.random.default_rng(_subject_seed(seed + 1, sess_key))
            session_profile = replace(profile, cadence_hz=profile.cadence_hz * float(sess_rng.uniform(0.97, 1.03)))
            if footwear == "speaking":
                intf = InterferenceSpec.speech(interference_snr_db)
            else:
                intf = InterferenceSpec.parse(interference, interference_snr_db)
            walk = gen_walk(
                session_profile, duration_s, rate, intf, seed=_subject_seed(seed + 2, i * 1000 + k),
                amplitude_scale=ga * fa * float(sess_rng.uniform(0.9, 1.1)),
                decay_scale=gd * fd, jitter_scale=gj * fj,
            )
            session = f"{ground}-{footwear}-{k}"
            record = SessionRecord(sid, session, ground, footwear, f"{sid}_{session}_L.wav",
                                   f"{sid}_{session}_R.wav", len(walk.truth))
            yield record, walk


def gen_corpus(out_dir, n_subjects: int = 6, sessions_per_subject: int = 2,
               conditions: Sequence[tuple[str, str]] | None = None, seed: int = 0,
               duration_s: float = 90.0, rate: int = 48000, identical: bool = False,
               interference_snr_db: float = 0.0, spread_hz: float | None = None,
               interference: str = "none") -> Path:
    """Write the :func:`corpus_walks` corpus as WAVs plus ``manifest.jsonl``.

    Returns the manifest path.
    """
    if n_subjects < 2:
        raise ParameterError("a corpus needs at least two subjects")
    walks = corpus_walks(n_subjects, sessions_per_subject, conditions, seed, duration_s, rate,
                         identical, interference_snr_db, spread_hz, interference)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = []
    for record, walk in walks:
        write_wav(out_dir / record.left_path, walk.left)
        write_wav(out_dir / record.right_path, walk.right)
        records.append(record)
    manifest = out_dir / "manifest.jsonl"
    write_manifest(records, manifest)
    return manifest


def match_steps(detected: Sequence[float], truth: Sequence[float],
                tolerance_s: float = 0.05) -> tuple[int, int, int]:
    """Greedy one-to-one matching of detected to true times.

    Returns ``(hits, misses, false_alarms)``.
    """
    detected = np.sort(np.asarray(detected, dtype=np.float64))
    truth = np.sort(np.asarray(truth, dtype=np.float64))
    used = np.zeros(len(detected), dtype=bool)
    hits = 0
    for t in truth:
        if len(detected) == 0:
            break
        d = np.abs(detected - t)
        d[used] = np.inf
        j = int(np.argmin(d))
        if d[j] <= tolerance_s:
            used[j] = True
            hits += 1
    return hits, len(truth) - hits, len(detected) - hits
