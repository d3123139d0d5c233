"""Audio, manifest, model and report I/O.

File formats
------------
Audio
    RIFF/WAVE, little-endian, 1 or 2 channels, either 16-bit PCM (format
    tag 1) or 32-bit IEEE float (format tag 3).  Channel 0 of a stereo file
    is the left ear.
Manifest
    UTF-8 text, one JSON object per line with the :class:`SessionRecord`
    fields.  Blank lines are ignored.  Relative paths are resolved against
    the manifest's directory.
Model
    A single JSON document ``{"format": "inear-gait-svm", "version": 1, ...}``
    holding the support vectors, dual coefficients, kernel, scaler, feature
    layout and the preprocessing configuration the model was trained with.
    Floats are written with ``repr`` precision so a load/save round trip is
    exact.
Records
    JSON lines, one object per line; used for evaluation reports and
    identification verdicts.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    FormatError,
    IncompatibleModelError,
    ParameterError,
    SchemaError,
    UnsupportedFormatError,
)

CHANNELS = ("left", "right")
GROUNDS = ("tiles", "carpet", "synthetic")
FOOTWEAR = ("barefoot", "slippers", "sneakers", "speaking", "synthetic")

MODEL_FORMAT = "inear-gait-svm"
MODEL_VERSION = 1

_PCM = 1
_IEEE_FLOAT = 3
_EXTENSIBLE = 0xFFFE


@dataclass(frozen=True)
class AudioClip:
    """A mono waveform from one ear.

    ``samples`` is stored as a read-only float64 array of amplitudes in
    [-1, 1].
    """

    samples: np.ndarray
    sample_rate: int
    channel: str = "left"

    def __post_init__(self):
        x = np.array(self.samples, dtype=np.float64)
        if x.ndim != 1:
            raise ParameterError(f"samples must be 1-D, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ParameterError("samples contain non-finite values")
        if int(self.sample_rate) != self.sample_rate or self.sample_rate <= 0:
            raise ParameterError(f"sample_rate must be a positive integer, got {self.sample_rate}")
        if self.channel not in CHANNELS:
            raise ParameterError(f"channel must be one of {CHANNELS}, got {self.channel!r}")
        x.setflags(write=False)
        object.__setattr__(self, "samples", x)
        object.__setattr__(self, "sample_rate", int(self.sample_rate))

    @property
    def duration(self) -> float:
        return len(self.samples) / self.sample_rate

    def with_samples(self, samples, sample_rate=None) -> "AudioClip":
        return AudioClip(samples, sample_rate or self.sample_rate, self.channel)


# --------------------------------------------------------------------------
# WAV

def _parse_chunks(data: bytes):
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise FormatError("not a RIFF/WAVE file")
    chunks = {}
    pos = 12
    while pos + 8 <= len(data):
        cid = data[pos:pos + 4]
        (size,) = struct.unpack("<I", data[pos + 4:pos + 8])
        body = data[pos + 8:pos + 8 + size]
        if len(body) < size:
            raise FormatError(f"chunk {cid!r} truncated ({len(body)} of {size} bytes)")
        chunks.setdefault(cid, body)
        pos += 8 + size + (size & 1)
    if b"fmt " not in chunks:
        raise FormatError("missing fmt chunk")
    if b"data" not in chunks:
        raise FormatError("missing data chunk")
    return chunks


def read_wav(path, channel: str = "left") -> list[AudioClip]:
    """Read a WAV file into one clip per channel.

    Mono files yield a single clip tagged ``channel``; stereo files yield
    ``[left, right]``.

    Raises
    ------
    FormatError
        The RIFF structure or fmt chunk is malformed.
    UnsupportedFormatError
        The encoding is neither 16-bit PCM nor 32-bit float, or the file has
        more than two channels.
    """
    chunks = _parse_chunks(Path(path).read_bytes())
    fmt = chunks[b"fmt "]
    if len(fmt) < 16:
        raise FormatError("fmt chunk too short")
    tag, n_channels, rate, _, block_align, bits = struct.unpack("<HHIIHH", fmt[:16])
    if tag == _EXTENSIBLE:
        if len(fmt) < 40:
            raise FormatError("extensible fmt chunk too short")
        (tag,) = struct.unpack("<H", fmt[24:26])
    if n_channels not in (1, 2):
        raise UnsupportedFormatError(f"{n_channels} channels (only 1 or 2 supported)")
    if rate == 0:
        raise FormatError("sample rate is zero")
    if tag == _PCM and bits == 16:
        dtype, scale = np.dtype("<i2"), 32768.0
    elif tag == _IEEE_FLOAT and bits == 32:
        dtype, scale = np.dtype("<f4"), 1.0
    else:
        raise UnsupportedFormatError(f"format tag {tag} with {bits} bits per sample")
    if block_align != n_channels * dtype.itemsize:
        raise FormatError(f"block align {block_align} inconsistent with encoding")

    raw = chunks[b"data"]
    n_frames = len(raw) // block_align
    frames = np.frombuffer(raw[:n_frames * block_align], dtype=dtype).reshape(n_frames, n_channels)
    frames = frames.astype(np.float64) / scale
    if n_channels == 1:
        return [AudioClip(frames[:, 0], rate, channel)]
    return [AudioClip(frames[:, 0], rate, "left"), AudioClip(frames[:, 1], rate, "right")]


def read_channel(path, channel: str = "left") -> AudioClip:
    """Read one ear from a mono or stereo WAV file."""
    clips = read_wav(path, channel)
    if len(clips) == 1:
        return clips[0]
    return clips[CHANNELS.index(channel)]


def write_wav(path, clips: AudioClip | Sequence[AudioClip], encoding: str = "pcm16") -> None:
    """Write one clip (mono) or a left/right pair (stereo).

    16-bit PCM quantizes ``x`` to ``round(x * 32768)`` clipped to the int16
    range, so a round trip is exact to within one quantization step
    (1/32768).
    """
    if isinstance(clips, AudioClip):
        clips = [clips]
    clips = list(clips)
    if not 1 <= len(clips) <= 2:
        raise ParameterError("write_wav takes one or two clips")
    rate = clips[0].sample_rate
    n = len(clips[0].samples)
    if any(c.sample_rate != rate or len(c.samples) != n for c in clips):
        raise ParameterError("stereo clips must share sample rate and length")
    frames = np.stack([c.samples for c in clips], axis=1)

    if encoding == "pcm16":
        body = np.clip(np.round(frames * 32768.0), -32768, 32767).astype("<i2").tobytes()
        tag, bits = _PCM, 16
    elif encoding == "float32":
        body = frames.astype("<f4").tobytes()
        tag, bits = _IEEE_FLOAT, 32
    else:
        raise ParameterError(f"unknown encoding {encoding!r}")

    n_channels = len(clips)
    block = n_channels * bits // 8
    fmt = struct.pack("<HHIIHH", tag, n_channels, rate, rate * block, block, bits)
    payload = b"WAVE" + b"fmt " + struct.pack("<I", len(fmt)) + fmt
    payload += b"data" + struct.pack("<I", len(body)) + body
    if len(body) & 1:
        payload += b"\x00"
    Path(path).write_bytes(b"RIFF" + struct.pack("<I", len(payload)) + payload)


# --------------------------------------------------------------------------
# Manifest

@dataclass(frozen=True)
class SessionRecord:
    subject_id: str
    session_id: str
    ground: str
    footwear: str
    left_path: str
    right_path: str
    step_count: int | None = None

    def resolve(self, base) -> "SessionRecord":
        """Return a copy with paths made absolute relative to ``base``."""
        base = Path(base)
        return SessionRecord(
            self.subject_id, self.session_id, self.ground, self.footwear,
            str(base / self.left_path), str(base / self.right_path), self.step_count,
        )

    @property
    def condition(self) -> tuple[str, str]:
        return self.ground, self.footwear

    def to_dict(self) -> dict:
        d = {
            "subject_id": self.subject_id,
            "session_id": self.session_id,
            "ground": self.ground,
            "footwear": self.footwear,
            "left_path": self.left_path,
            "right_path": self.right_path,
        }
        if self.step_count is not None:
            d["step_count"] = self.step_count
        return d


_REQUIRED = ("subject_id", "session_id", "ground", "footwear", "left_path", "right_path")


def _record_from_obj(obj, line: int) -> SessionRecord:
    if not isinstance(obj, dict):
        raise SchemaError("record is not an object", line)
    for key in _REQUIRED:
        if key not in obj:
            raise SchemaError(f"missing required field {key!r}", line)
        if not isinstance(obj[key], str) or not obj[key]:
            raise SchemaError(f"field {key!r} must be a non-empty string", line)
    if obj["ground"] not in GROUNDS:
        raise SchemaError(f"ground must be one of {GROUNDS}, got {obj['ground']!r}", line)
    if obj["footwear"] not in FOOTWEAR:
        raise SchemaError(f"footwear must be one of {FOOTWEAR}, got {obj['footwear']!r}", line)
    steps = obj.get("step_count")
    if steps is not None and (isinstance(steps, bool) or not isinstance(steps, int) or steps < 0):
        raise SchemaError(f"step_count must be a non-negative integer, got {steps!r}", line)
    return SessionRecord(*(obj[k] for k in _REQUIRED), step_count=steps)


def load_manifest(path, resolve: bool = False) -> list[SessionRecord]:
    """Load and validate a JSON-lines manifest, preserving line order.

    With ``resolve=True`` relative audio paths are made absolute against the
    manifest's directory.
    """
    path = Path(path)
    records = []
    seen = {}
    with path.open(encoding="utf-8") as fh:
        for lineno, text in enumerate(fh, start=1):
            if not text.strip():
                continue
            try:
                obj = json.loads(text)
            except json.JSONDecodeError as exc:
                raise SchemaError(f"invalid JSON: {exc.msg}", lineno) from None
            rec = _record_from_obj(obj, lineno)
            key = (rec.subject_id, rec.session_id)
            if key in seen:
                raise SchemaError(f"duplicate session {key} (first on line {seen[key]})", lineno)
            seen[key] = lineno
            records.append(rec.resolve(path.parent) if resolve else rec)
    return records


def write_manifest(records: Iterable[SessionRecord], path) -> None:
    lines = [json.dumps(r.to_dict(), sort_keys=False) for r in records]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


# --------------------------------------------------------------------------
# Models

def _model_to_obj(model) -> dict:
    return {
        "format": MODEL_FORMAT,
        "version": MODEL_VERSION,
        "kind": model.kind,
        "kernel": {"name": "rbf", "gamma": model.gamma},
        "bias": model.bias,
        "decision_threshold": model.decision_threshold,
        "dual_coefs": model.dual_coefs.tolist(),
        "support_vectors": model.support_vectors.tolist(),
        "scaler": {"mean": model.scaler.mean.tolist(), "std": model.scaler.std.tolist()},
        "feature_layout": model.feature_layout,
        "hyperparams": model.hyperparams,
        "preprocessing": model.preprocessing,
    }


def save_model(model, path) -> None:
    """Write an :class:`~inear_gait.classify.SvmModel` as versioned JSON."""
    if len(model.dual_coefs) == 0 or len(model.support_vectors) == 0:
        raise ParameterError("refusing to save a model with no support vectors")
    Path(path).write_text(json.dumps(_model_to_obj(model)), encoding="utf-8")


def load_model(path):
    from .classify import Scaler, SvmModel

    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise IncompatibleModelError(f"{path}: not a readable model file ({exc})") from None
    if not isinstance(obj, dict) or obj.get("format") != MODEL_FORMAT:
        raise IncompatibleModelError(f"{path}: not an {MODEL_FORMAT} file")
    if obj.get("version") != MODEL_VERSION:
        raise IncompatibleModelError(
            f"{path}: model version {obj.get('version')!r}, this build reads {MODEL_VERSION}")
    try:
        if obj["kernel"]["name"] != "rbf":
            raise IncompatibleModelError(f"{path}: unsupported kernel {obj['kernel']['name']!r}")
        return SvmModel(
            kind=obj["kind"],
            support_vectors=np.asarray(obj["support_vectors"], dtype=np.float64),
            dual_coefs=np.asarray(obj["dual_coefs"], dtype=np.float64),
            bias=float(obj["bias"]),
            gamma=float(obj["kernel"]["gamma"]),
            scaler=Scaler(np.asarray(obj["scaler"]["mean"], dtype=np.float64),
                          np.asarray(obj["scaler"]["std"], dtype=np.float64)),
            feature_layout=obj["feature_layout"],
            decision_threshold=float(obj["decision_threshold"]),
            hyperparams=obj.get("hyperparams", {}),
            preprocessing=obj.get("preprocessing", {}),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise IncompatibleModelError(f"{path}: malformed model ({exc})") from None


# --------------------------------------------------------------------------
# JSON lines

def write_records(records: Iterable[dict], path=None, stream=None) -> None:
    text = "".join(json.dumps(r) + "\n" for r in records)
    if path is not None:
        Path(path).write_text(text, encoding="utf-8")
    if stream is not None:
        stream.write(text)


def read_records(path) -> list[dict]:
    out = []
    with Path(path).open(encoding="utf-8") as fh:
        for lineno, text in enumerate(fh, start=1):
            if text.strip():
                try:
                    out.append(json.loads(text))
                except json.JSONDecodeError as exc:
                    raise SchemaError(f"invalid JSON: {exc.msg}", lineno) from None
    return out
