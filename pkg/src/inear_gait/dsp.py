"""Segmentation of in-ear walking audio into fixed-length gait cycles.

Pipeline::

    raw (48 kHz) -> decimate (4 kHz) -> lowpass (50 Hz) -> envelopes (3 Hz)
        -> detect_steps -> extract_cycles (4000 samples each)

All filters are 4th-order Butterworth sections run forward and backward, so
the effective magnitude response is squared (8th-order rolloff) and the phase
is zero: envelope peaks stay aligned with the strikes that cause them.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal
from scipy.interpolate import CubicSpline

from .dataio import AudioClip
from .errors import InsufficientDataError, ParameterError

PROCESSING_RATE = 4000
CYCLE_LENGTH = 4000
FILTER_ORDER = 4
LOWPASS_CUTOFF = 50.0
ENVELOPE_CUTOFF = 3.0
# Relative to the output Nyquist; high enough that 0.4 x Nyquist passes within 1%.
ANTIALIAS_FRACTION = 0.8
MIN_PEAK_DISTANCE_S = 0.25
PROMINENCE_FRACTION = 0.2
PROMINENCE_PERCENTILE = 95.0
PAIRING_TOLERANCE_S = 0.100
MIN_CYCLE_S = 0.5
MAX_CYCLE_S = 2.0
# Length, in units of rate / cutoff samples, of the specially treated filter edges.
EDGE_SPANS = 8
GUST_MIN_FRACTION = 0.005


@dataclass(frozen=True)
class SegmentConfig:
    """Parameters of :func:`segment`; defaults are the canonical pipeline."""

    rate: int = PROCESSING_RATE
    cutoff: float = LOWPASS_CUTOFF
    env_cutoff: float = ENVELOPE_CUTOFF
    min_distance_s: float = MIN_PEAK_DISTANCE_S
    prominence_fraction: float = PROMINENCE_FRACTION
    pairing_tolerance_s: float = PAIRING_TOLERANCE_S
    min_cycle_s: float = MIN_CYCLE_S
    max_cycle_s: float = MAX_CYCLE_S
    cycle_length: int = CYCLE_LENGTH

    def to_dict(self) -> dict:
        return dict(self.__dict__)


@dataclass(frozen=True)
class EnvelopePair:
    upper: np.ndarray
    lower: np.ndarray
    sample_rate: int


@dataclass(frozen=True)
class StepEvent:
    time_s: float
    upper_peak_idx: int
    lower_peak_idx: int


@dataclass(frozen=True)
class GaitCycle:
    """One two-step cycle resampled to a fixed number of samples."""

    samples: np.ndarray
    duration_s: float
    start_s: float = 0.0
    index: int = 0
    subject_id: str = ""
    session_id: str = ""
    side: str = "left"
    sample_rate: int = field(default=PROCESSING_RATE, compare=False)

    def __post_init__(self):
        x = np.array(self.samples, dtype=np.float64)
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)

    @property
    def key(self) -> tuple[str, str, int]:
        return self.subject_id, self.session_id, self.index


def _butter_sos(cutoff: float, rate: float):
    nyquist = rate / 2.0
    if not 0 < cutoff < nyquist:
        raise ParameterError(f"cutoff {cutoff} Hz must lie in (0, {nyquist}) Hz")
    return signal.butter(FILTER_ORDER, cutoff, btype="low", fs=rate, output="sos")


def zero_phase_lowpass(x: np.ndarray, cutoff: float, rate: float) -> np.ndarray:
    """Forward-backward Butterworth lowpass of a plain array.

    Padding-based edge handling pins the output to the input's endpoint
    values, which lets out-of-band content leak in near the ends.  The
    interior is filtered with mirror padding; the first and last
    ``EDGE_SPANS`` filter time scales are recomputed with Gustafsson's
    initial conditions on short end windows.  Very narrow filters (cutoff
    below ``GUST_MIN_FRACTION`` of the rate) keep plain mirror padding: their
    transfer-function form is too ill-conditioned for that solve.
    """
    sos = _butter_sos(cutoff, rate)
    x = np.asarray(x, dtype=np.float64)
    n = len(x)
    if n < 2:
        return x.copy()
    edge = int(np.ceil(EDGE_SPANS * rate / cutoff))
    if cutoff < GUST_MIN_FRACTION * rate:
        return signal.sosfiltfilt(sos, x, padtype="even", padlen=min(edge, n - 1))
    b, a = signal.butter(FILTER_ORDER, cutoff, btype="low", fs=rate)
    window = 3 * edge
    if n <= window:
        return signal.filtfilt(b, a, x, method="gust")
    y = signal.sosfiltfilt(sos, x, padtype="even", padlen=edge)
    y[:edge] = signal.filtfilt(b, a, x[:window], method="gust")[:edge]
    y[-edge:] = signal.filtfilt(b, a, x[-window:], method="gust")[-edge:]
    return y


def decimate(clip: AudioClip, target_rate: int = PROCESSING_RATE) -> AudioClip:
    """Anti-alias filter and keep every ``rate // target_rate``-th sample."""
    if target_rate <= 0 or clip.sample_rate % target_rate:
        raise ParameterError(
            f"sample rate {clip.sample_rate} is not an integer multiple of {target_rate}")
    factor = clip.sample_rate // target_rate
    if factor == 1:
        return clip
    cutoff = ANTIALIAS_FRACTION * target_rate / 2.0
    y = zero_phase_lowpass(clip.samples, cutoff, clip.sample_rate)
    return clip.with_samples(y[::factor], target_rate)


def lowpass(clip: AudioClip, cutoff: float = LOWPASS_CUTOFF) -> AudioClip:
    """Zero-phase lowpass; raises :class:`ParameterError` if cutoff >= Nyquist."""
    return clip.with_samples(zero_phase_lowpass(clip.samples, cutoff, clip.sample_rate))


def envelopes(clip: AudioClip, cutoff: float = ENVELOPE_CUTOFF) -> EnvelopePair:
    """Upper and lower Hilbert envelopes smoothed by a ``cutoff`` Hz lowpass.

    The analytic magnitude ``|x + iH{x}|`` is split by the sign of ``x``:
    the upper envelope smooths the magnitude during positive excursions, the
    lower envelope smooths it during negative excursions and is mirrored
    below zero.  Both are scaled by 2 so that for a sinusoidal carrier
    (positive half the time) each recovers the carrier's amplitude.  Residual
    filter ringing across zero is clipped, so ``upper >= 0 >= lower``.

    Negating the input swaps the roles exactly: ``upper(-x) == -lower(x)``.
    """
    rate = clip.sample_rate
    x = np.asarray(clip.samples)
    if len(x) < rate:
        raise InsufficientDataError(f"envelopes need at least 1 s of signal, got {len(x) / rate:.3f} s")
    magnitude = np.abs(signal.hilbert(x))
    positive = np.where(x > 0, magnitude, 0.0)
    negative = np.where(x < 0, magnitude, 0.0)
    upper = np.maximum(2.0 * zero_phase_lowpass(positive, cutoff, rate), 0.0)
    lower = np.minimum(-2.0 * zero_phase_lowpass(negative, cutoff, rate), 0.0)
    return EnvelopePair(upper, lower, rate)


def _find_envelope_peaks(env: np.ndarray, rate: int, min_distance_s: float,
                         prominence_fraction: float) -> np.ndarray:
    scale = np.percentile(env, PROMINENCE_PERCENTILE)
    if not scale > 0:
        return np.array([], dtype=int)
    distance = max(1, int(round(min_distance_s * rate)))
    peaks, _ = signal.find_peaks(env, distance=distance, prominence=prominence_fraction * scale)
    return peaks


def detect_steps(env: EnvelopePair, config: SegmentConfig = SegmentConfig()) -> list[StepEvent]:
    """Pair upper and lower envelope peaks into foot strikes.

    Peaks are found independently on ``upper`` and ``-lower`` with a minimum
    spacing and a prominence threshold relative to the envelope's 95th
    percentile, which makes detection invariant to input gain.  Each upper
    peak takes the nearest unused lower peak within the pairing tolerance;
    the step is timed at the midpoint.  Unpaired peaks are dropped.
    """
    rate = env.sample_rate
    up = _find_envelope_peaks(env.upper, rate, config.min_distance_s, config.prominence_fraction)
    lo = _find_envelope_peaks(-env.lower, rate, config.min_distance_s, config.prominence_fraction)
    if len(up) == 0 or len(lo) == 0:
        return []
    tol = config.pairing_tolerance_s * rate
    candidates = []
    for i in up:
        j = int(np.argmin(np.abs(lo - i)))
        d = abs(int(lo[j]) - int(i))
        if d <= tol:
            candidates.append((d, int(i), int(lo[j])))
    # Closest pairs claim their lower peak first; each peak is used once.
    candidates.sort()
    used_up, used_lo, steps = set(), set(), []
    for _, i, j in candidates:
        if i in used_up or j in used_lo:
            continue
        used_up.add(i)
        used_lo.add(j)
        steps.append(StepEvent((i + j) / 2.0 / rate, i, j))
    steps.sort(key=lambda s: s.time_s)
    return steps


def resample_cycle(segment: np.ndarray, length: int = CYCLE_LENGTH) -> np.ndarray:
    """Cubic-spline resampling onto ``length`` points, endpoints kept."""
    segment = np.asarray(segment, dtype=np.float64)
    if len(segment) == length:
        return segment.copy()
    if len(segment) < 4:
        raise InsufficientDataError("cycle too short to interpolate")
    src = np.linspace(0.0, 1.0, len(segment))
    dst = np.linspace(0.0, 1.0, length)
    out = CubicSpline(src, segment)(dst)
    out[0], out[-1] = segment[0], segment[-1]
    return out


def extract_cycles(clip: AudioClip, steps: list[StepEvent],
                   config: SegmentConfig = SegmentConfig(),
                   subject_id: str = "", session_id: str = "") -> list[GaitCycle]:
    """Cut cycles between every other step and resample them.

    Boundaries are steps 0, 2, 4, ...; cycle ``k`` spans boundary ``k`` to
    ``k + 1``.  Cycles shorter than ``min_cycle_s`` or longer than
    ``max_cycle_s`` are dropped without renumbering the survivors.
    """
    if len(steps) < 3:
        raise InsufficientDataError(f"need at least 3 steps to form a cycle, got {len(steps)}")
    rate = clip.sample_rate
    x = clip.samples
    bounds = [s.time_s for s in steps[::2]]
    cycles = []
    for k in range(len(bounds) - 1):
        t0, t1 = bounds[k], bounds[k + 1]
        duration = t1 - t0
        if not config.min_cycle_s <= duration <= config.max_cycle_s:
            continue
        i0, i1 = int(round(t0 * rate)), int(round(t1 * rate))
        i1 = min(i1, len(x) - 1)
        cycles.append(GaitCycle(
            resample_cycle(x[i0:i1 + 1], config.cycle_length), duration, t0, k,
            subject_id, session_id, clip.channel, rate,
        ))
    return cycles


@dataclass
class Segmentation:
    """All intermediates of one :func:`segment_detailed` run."""

    filtered: AudioClip
    envelopes: EnvelopePair
    steps: list[StepEvent]
    cycles: list[GaitCycle]


def segment_detailed(raw: AudioClip, config: SegmentConfig = SegmentConfig(),
                     subject_id: str = "", session_id: str = "") -> Segmentation:
    if raw.sample_rate != config.rate:
        raw = decimate(raw, config.rate)
    filtered = lowpass(raw, config.cutoff)
    env = envelopes(filtered, config.env_cutoff)
    steps = detect_steps(env, config)
    cycles = extract_cycles(filtered, steps, config, subject_id, session_id) if len(steps) >= 3 else []
    return Segmentation(filtered, env, steps, cycles)


def segment(raw: AudioClip, config: SegmentConfig = SegmentConfig(),
            subject_id: str = "", session_id: str = "") -> list[GaitCycle]:
    """Full pipeline from a raw 48 kHz (or 4 kHz) clip to gait cycles.

    Fewer than three detected steps give an empty list rather than an error,
    so a recording with no walking in it simply has no cycles.
    """
    return segment_detailed(raw, config, subject_id, session_id).cycles


def pair_cycles(left: list[GaitCycle], right: list[GaitCycle],
                tolerance_s: float = PAIRING_TOLERANCE_S) -> list[tuple[GaitCycle, GaitCycle]]:
    """Match left and right cycles that start within ``tolerance_s``.

    The ears are segmented independently, so a missed step on one side
    shifts its cycle numbering.  Matched pairs are renumbered consecutively
    on both sides so :func:`inear_gait.features.featurize` sees one index.
    """
    pairs = []
    starts = np.array([c.start_s for c in right])
    used = set()
    for lc in left:
        if len(starts) == 0:
            break
        j = int(np.argmin(np.abs(starts - lc.start_s)))
        if j in used or abs(starts[j] - lc.start_s) > tolerance_s:
            continue
        used.add(j)
        pairs.append((lc, right[j]))
    out = []
    for n, (lc, rc) in enumerate(pairs):
        out.append((_renumber(lc, n), _renumber(rc, n)))
    return out


def _renumber(c: GaitCycle, index: int) -> GaitCycle:
    return GaitCycle(c.samples, c.duration_s, c.start_s, index, c.subject_id,
                     c.session_id, c.side, c.sample_rate)
