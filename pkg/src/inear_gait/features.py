"""Per-cycle acoustic features.

Every block is computed frame by frame on a short-time Fourier transform
and averaged over frames:

=========  ===  ==========================================================
block      len  per-frame value
=========  ===  ==========================================================
mfcc        40  orthonormal DCT-II of the log (dB) mel power, first 40
chroma      12  STFT power folded onto pitch classes, frame max = 1
mel        128  mel-band power
rmse         1  RMS of the (unwindowed) frame samples
tonnetz      6  tonal centroid of the L1-normalized chroma
=========  ===  ==========================================================

Frames are 512 samples with a hop of 128 and a periodic Hann window; the
cycle is reflect-padded by half a frame at each end, giving 32 frames for a
4000-sample cycle.  The mel bank has 128 triangular filters between 0 Hz and
Nyquist on the ``2595 * log10(1 + f / 700)`` scale.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy import signal
from scipy.fft import dct, rfft, rfftfreq

from .dataio import AudioClip
from .dsp import PROCESSING_RATE, GaitCycle
from .errors import LayoutError, PairingError, ParameterError, UndefinedMetricError

FRAME_LENGTH = 512
HOP_LENGTH = 128
N_MELS = 128
N_MFCC = 40
LOG_FLOOR = 1e-10
A4_HZ = 440.0
ZERO_ENERGY_REL = 1e-20

BLOCKS = {"mfcc": N_MFCC, "chroma": 12, "mel": N_MELS, "rmse": 1, "tonnetz": 6}
FEATURE_MODES = {
    "all": ("mfcc", "chroma", "mel", "rmse", "tonnetz"),
    "no-tonnetz": ("mfcc", "chroma", "mel", "rmse"),
    "mfcc": ("mfcc",),
}


def layout_for(mode: str = "all") -> tuple[tuple[str, int], ...]:
    try:
        names = FEATURE_MODES[mode.replace("_", "-")]
    except KeyError:
        raise ParameterError(f"unknown feature mode {mode!r}; choose from {sorted(FEATURE_MODES)}") from None
    return tuple((name, BLOCKS[name]) for name in names)


def layout_tag(layout, side: str) -> str:
    """Compact string form, e.g. ``"mfcc:40,chroma:12|fused"``."""
    return ",".join(f"{n}:{k}" for n, k in layout) + "|" + side


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    layout: tuple[tuple[str, int], ...]
    side: str

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "layout", tuple((str(n), int(k)) for n, k in self.layout))
        expected = sum(k for _, k in self.layout) * (2 if self.side == "fused" else 1)
        if len(v) != expected:
            raise LayoutError(f"{len(v)} values do not fit layout {self.tag}")

    @property
    def tag(self) -> str:
        return layout_tag(self.layout, self.side)

    def block(self, name: str, ear: int = 0) -> np.ndarray:
        """Slice of one block; ``ear=1`` selects the right half of a fused vector."""
        per_ear = sum(k for _, k in self.layout)
        offset = ear * per_ear
        for n, k in self.layout:
            if n == name:
                return self.values[offset:offset + k]
            offset += k
        raise KeyError(name)


# --------------------------------------------------------------------------
# Filterbanks

def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def mel_filterbank(rate: int = PROCESSING_RATE, n_fft: int = FRAME_LENGTH,
                   n_mels: int = N_MELS) -> np.ndarray:
    """Unit-peak triangular filters, shape ``(n_mels, n_fft // 2 + 1)``."""
    freqs = rfftfreq(n_fft, 1.0 / rate)
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(rate / 2.0), n_mels + 2))
    lo, center, hi = edges[:-2, None], edges[1:-1, None], edges[2:, None]
    rising = (freqs - lo) / (center - lo)
    falling = (hi - freqs) / (hi - center)
    bank = np.maximum(0.0, np.minimum(rising, falling))
    bank.setflags(write=False)
    return bank


def mel_band_edges(rate: int = PROCESSING_RATE, n_mels: int = N_MELS) -> np.ndarray:
    """``(n_mels, 3)`` array of (lower, center, upper) Hz per filter."""
    edges = mel_to_hz(np.linspace(0.0, hz_to_mel(rate / 2.0), n_mels + 2))
    return np.stack([edges[:-2], edges[1:-1], edges[2:]], axis=1)


@lru_cache(maxsize=8)
def chroma_map(rate: int = PROCESSING_RATE, n_fft: int = FRAME_LENGTH) -> np.ndarray:
    """0/1 matrix ``(12, n_bins)`` folding FFT bins onto pitch classes (C = 0).

    The DC bin belongs to no class.
    """
    freqs = rfftfreq(n_fft, 1.0 / rate)
    fmap = np.zeros((12, len(freqs)))
    midi = 69.0 + 12.0 * np.log2(freqs[1:] / A4_HZ)
    fmap[np.mod(np.round(midi).astype(int), 12), np.arange(1, len(freqs))] = 1.0
    fmap.setflags(write=False)
    return fmap


def _tonnetz_projection() -> np.ndarray:
    # Fifths, minor thirds, major thirds as (sin, cos) pairs with radii 1, 1, 0.5.
    pc = np.arange(12)
    angles = [7 * np.pi / 6, 3 * np.pi / 2, 2 * np.pi / 3]
    radii = [1.0, 1.0, 0.5]
    rows = []
    for r, a in zip(radii, angles):
        rows.append(r * np.sin(pc * a))
        rows.append(r * np.cos(pc * a))
    return np.array(rows)


TONNETZ_PROJECTION = _tonnetz_projection()


# --------------------------------------------------------------------------
# Framing

def frames(x: np.ndarray, n_fft: int = FRAME_LENGTH, hop: int = HOP_LENGTH) -> np.ndarray:
    """Reflect-padded, centered frames, shape ``(n_frames, n_fft)``."""
    x = np.asarray(x, dtype=np.float64)
    pad = n_fft // 2
    mode = "reflect" if len(x) > pad else "constant"
    padded = np.pad(x, pad, mode=mode)
    n_frames = 1 + (len(padded) - n_fft) // hop
    idx = np.arange(n_fft)[None, :] + hop * np.arange(n_frames)[:, None]
    return padded[idx]


class CycleSpectra:
    """Frame-level spectra of one cycle, shared by all feature blocks."""

    def __init__(self, samples: np.ndarray, rate: int = PROCESSING_RATE):
        self.rate = rate
        self.frames = frames(samples)
        window = signal.get_window("hann", FRAME_LENGTH)
        self.power = np.abs(rfft(self.frames * window, axis=1)) ** 2
        self.mel_power = self.power @ mel_filterbank(rate).T

    def log_mel(self) -> np.ndarray:
        return 10.0 * np.log10(np.maximum(self.mel_power, LOG_FLOOR))

    def mfcc(self) -> np.ndarray:
        coeffs = dct(self.log_mel(), type=2, norm="ortho", axis=1)[:, :N_MFCC]
        return coeffs.mean(axis=0)

    def mel(self) -> np.ndarray:
        return self.mel_power.mean(axis=0)

    def chroma_frames(self) -> np.ndarray:
        c = self.power @ chroma_map(self.rate).T
        peak = c.max(axis=1, keepdims=True)
        return np.divide(c, peak, out=np.zeros_like(c), where=peak > 0)

    def chroma(self) -> np.ndarray:
        return self.chroma_frames().mean(axis=0)

    def rmse(self) -> np.ndarray:
        return np.array([np.sqrt(np.mean(self.frames ** 2, axis=1)).mean()])

    def tonnetz(self) -> np.ndarray:
        c = self.chroma_frames()
        total = c.sum(axis=1, keepdims=True)
        c = np.divide(c, total, out=np.zeros_like(c), where=total > 0)
        return (c @ TONNETZ_PROJECTION.T).mean(axis=0)

    def onset_strength(self) -> np.ndarray:
        diff = np.diff(self.log_mel(), axis=0)
        return np.concatenate([[0.0], np.maximum(diff, 0.0).mean(axis=1)])

    def block(self, name: str) -> np.ndarray:
        return getattr(self, name)()


def _samples(cycle) -> tuple[np.ndarray, int]:
    if isinstance(cycle, GaitCycle):
        return cycle.samples, cycle.sample_rate
    return np.asarray(cycle, dtype=np.float64), PROCESSING_RATE


def mfcc(cycle) -> np.ndarray:
    return CycleSpectra(*_samples(cycle)).mfcc()


def chroma_stft(cycle) -> np.ndarray:
    return CycleSpectra(*_samples(cycle)).chroma()


def mel_spectrogram(cycle) -> np.ndarray:
    return CycleSpectra(*_samples(cycle)).mel()


def rmse(cycle) -> float:
    return float(CycleSpectra(*_samples(cycle)).rmse()[0])


def tonnetz(cycle) -> np.ndarray:
    return CycleSpectra(*_samples(cycle)).tonnetz()


def onset_strength(cycle) -> np.ndarray:
    """Per-frame onset envelope; diagnostic only, not part of any vector."""
    return CycleSpectra(*_samples(cycle)).onset_strength()


def ear_features(cycle, mode: str = "all") -> np.ndarray:
    spectra = CycleSpectra(*_samples(cycle))
    return np.concatenate([spectra.block(name) for name, _ in layout_for(mode)])


def featurize(left: GaitCycle, right: GaitCycle | None = None, mode: str = "all") -> FeatureVector:
    """Feature vector of one cycle, or left-then-right concatenation of a pair."""
    layout = layout_for(mode)
    if right is None:
        return FeatureVector(ear_features(left, mode), layout, left.side)
    if (left.subject_id, left.session_id, left.index) != (right.subject_id, right.session_id, right.index):
        raise PairingError(f"cannot fuse cycle {left.key} with {right.key}")
    if left.side == right.side:
        raise PairingError(f"both cycles are from the {left.side} ear")
    return FeatureVector(np.concatenate([ear_features(left, mode), ear_features(right, mode)]), layout, "fused")


def energy_ratio_below(clip: AudioClip | np.ndarray, cutoff: float, rate: int | None = None) -> float:
    """Fraction of spectral energy strictly below ``cutoff`` Hz, DC excluded."""
    if isinstance(clip, AudioClip):
        x, rate = clip.samples, clip.sample_rate
    else:
        x = np.asarray(clip, dtype=np.float64)
        if rate is None:
            raise ParameterError("rate is required for a plain array")
    if len(x) == 0:
        raise ParameterError("empty clip")
    power = np.abs(rfft(x)) ** 2
    freqs = rfftfreq(len(x), 1.0 / rate)
    with_dc = power.sum()
    power, freqs = power[1:], freqs[1:]
    total = power.sum()
    # Round-off leaves ~1e-16 relative energy outside DC for a constant clip.
    if not total > ZERO_ENERGY_REL * with_dc:
        raise UndefinedMetricError("clip has no energy outside DC")
    return float(power[freqs < cutoff].sum() / total)
