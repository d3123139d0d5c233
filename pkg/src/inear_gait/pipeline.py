"""Manifest-to-feature-matrix plumbing shared by the CLI and the evaluator."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataio import SessionRecord, read_channel
from .dsp import CYCLE_LENGTH, PROCESSING_RATE, GaitCycle, SegmentConfig, pair_cycles, segment
from .errors import FormatError, SchemaError
from .features import featurize, layout_for, layout_tag

log = logging.getLogger(__name__)

FUSIONS = ("left", "right", "fused")


@dataclass
class Dataset:
    """Feature rows of a corpus with per-row provenance.

    Row ``i`` is identified by ``(subjects[i], sessions[i], indices[i])``.
    """

    X: np.ndarray
    subjects: np.ndarray
    sessions: np.ndarray
    indices: np.ndarray
    grounds: np.ndarray
    footwear: np.ndarray
    layout: str = ""
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim != 2:
            self.X = self.X.reshape(len(self.subjects), -1)
        if len(self.X) != len(self.subjects):
            raise ValueError("feature rows and provenance differ in length")
        for name in ("subjects", "sessions", "grounds", "footwear"):
            setattr(self, name, np.asarray(getattr(self, name), dtype=str))
        self.indices = np.asarray(self.indices, dtype=int)

    def __len__(self) -> int:
        return len(self.subjects)

    @property
    def subject_ids(self) -> list[str]:
        return sorted(set(self.subjects.tolist()))

    def rows_of(self, subject: str) -> np.ndarray:
        return np.flatnonzero(self.subjects == subject)

    def subset(self, mask) -> "Dataset":
        mask = np.asarray(mask)
        return Dataset(self.X[mask], self.subjects[mask], self.sessions[mask], self.indices[mask],
                       self.grounds[mask], self.footwear[mask], self.layout, dict(self.meta))

    def conditions(self) -> list[tuple[str, str]]:
        return sorted(set(zip(self.grounds.tolist(), self.footwear.tolist())))

    def cycle_ids(self, rows) -> list[tuple[str, str, int]]:
        return [(self.subjects[r], self.sessions[r], int(self.indices[r])) for r in rows]


def session_cycles(record: SessionRecord, config: SegmentConfig = SegmentConfig()
                   ) -> tuple[list[GaitCycle], list[GaitCycle]]:
    left = segment(read_channel(record.left_path, "left"), config, record.subject_id, record.session_id)
    right = segment(read_channel(record.right_path, "right"), config, record.subject_id, record.session_id)
    return left, right


def cycle_features(left: Sequence[GaitCycle], right: Sequence[GaitCycle], mode: str = "all",
                   fusion: str = "fused") -> tuple[np.ndarray, list[GaitCycle]]:
    """Feature rows for one session's cycles; returns ``(X, reference cycles)``."""
    if fusion == "left":
        cycles, rows = list(left), [featurize(c, mode=mode).values for c in left]
    elif fusion == "right":
        cycles, rows = list(right), [featurize(c, mode=mode).values for c in right]
    elif fusion == "fused":
        pairs = pair_cycles(list(left), list(right))
        cycles, rows = [lc for lc, _ in pairs], [featurize(lc, rc, mode).values for lc, rc in pairs]
    else:
        raise ValueError(f"fusion must be one of {FUSIONS}, got {fusion!r}")
    width = sum(k for _, k in layout_for(mode)) * (2 if fusion == "fused" else 1)
    return (np.array(rows) if rows else np.zeros((0, width))), cycles


def build_dataset(records: Sequence[SessionRecord], feature_mode: str = "all", fusion: str = "fused",
                  config: SegmentConfig = SegmentConfig()) -> Dataset:
    """Segment and featurize every session of a (path-resolved) manifest."""
    blocks, subjects, sessions, indices, grounds, footwear = [], [], [], [], [], []
    steps = {}
    for rec in records:
        left, right = session_cycles(rec, config)
        X, cycles = cycle_features(left, right, feature_mode, fusion)
        log.info("%s/%s: %d left, %d right cycles, %d rows", rec.subject_id, rec.session_id,
                 len(left), len(right), len(X))
        steps[f"{rec.subject_id}/{rec.session_id}"] = len(X)
        blocks.append(X)
        for c in cycles:
            subjects.append(rec.subject_id)
            sessions.append(rec.session_id)
            indices.append(c.index)
            grounds.append(rec.ground)
            footwear.append(rec.footwear)
    X = np.vstack(blocks) if blocks else np.zeros((0, 0))
    return Dataset(X, subjects, sessions, indices, grounds, footwear,
                   layout_tag(layout_for(feature_mode), fusion),
                   {"feature_mode": feature_mode, "fusion": fusion, "rows_per_session": steps,
                    "segment": config.to_dict()})


# --------------------------------------------------------------------------
# Files

CYCLES_FORMAT = "inear-gait-cycles"
FEATURES_FORMAT = "inear-gait-features"
FILE_VERSION = 1


def cycle_paths(prefix) -> tuple[Path, Path]:
    """``(blob, index)`` paths for a cycles file prefix (``x`` or ``x.json``)."""
    prefix = Path(prefix)
    if prefix.suffix in (".json", ".f8"):
        prefix = prefix.with_suffix("")
    return prefix.with_name(prefix.name + ".f8"), prefix.with_name(prefix.name + ".json")


def write_cycles(cycles: Sequence[GaitCycle], prefix, steps: dict | None = None,
                 config: SegmentConfig | None = None) -> tuple[Path, Path]:
    """Little-endian float64 records of ``cycle_length`` samples plus a JSON index."""
    blob, index = cycle_paths(prefix)
    blob.parent.mkdir(parents=True, exist_ok=True)
    length = len(cycles[0].samples) if cycles else CYCLE_LENGTH
    data = np.array([c.samples for c in cycles], dtype="<f8").reshape(-1, length)
    blob.write_bytes(data.tobytes())
    doc = {
        "format": CYCLES_FORMAT, "version": FILE_VERSION, "dtype": "<f8",
        "cycle_length": length,
        "sample_rate": cycles[0].sample_rate if cycles else PROCESSING_RATE,
        "blob": blob.name,
        "cycles": [{"record": i, "subject_id": c.subject_id, "session_id": c.session_id,
                    "side": c.side, "index": c.index, "start_s": c.start_s,
                    "duration_s": c.duration_s} for i, c in enumerate(cycles)],
        "steps": steps or {},
        "config": config.to_dict() if config else {},
    }
    index.write_text(json.dumps(doc, indent=1) + "\n", encoding="utf-8")
    return blob, index


def read_cycles(prefix) -> list[GaitCycle]:
    blob, index = cycle_paths(prefix)
    try:
        doc = json.loads(index.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read cycles index {index}: {exc}") from None
    if doc.get("format") != CYCLES_FORMAT:
        raise FormatError(f"{index} is not a cycles index")
    length = int(doc["cycle_length"])
    try:
        raw = (index.parent / doc.get("blob", blob.name)).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read cycles blob: {exc}") from None
    entries = doc["cycles"]
    if len(raw) != len(entries) * length * 8:
        raise FormatError(f"cycles blob holds {len(raw)} bytes, index expects {len(entries) * length * 8}")
    data = np.frombuffer(raw, dtype="<f8").reshape(len(entries), length)
    return [GaitCycle(data[e["record"]].copy(), e["duration_s"], e["start_s"], e["index"],
                      e["subject_id"], e["session_id"], e["side"], doc["sample_rate"])
            for e in entries]


def cycles_dataset(cycles: Sequence[GaitCycle], mode: str = "all", fusion: str = "fused") -> Dataset:
    """Feature rows of loose cycles, grouped by (subject, session)."""
    groups = {}
    for c in cycles:
        groups.setdefault((c.subject_id, c.session_id), {"left": [], "right": []})[c.side].append(c)
    blocks, ids = [], []
    for (sid, sess), sides in sorted(groups.items()):
        X, refs = cycle_features(sides["left"], sides["right"], mode, fusion)
        blocks.append(X)
        ids.extend((sid, sess, c.index) for c in refs)
    width = sum(k for _, k in layout_for(mode)) * (2 if fusion == "fused" else 1)
    X = np.vstack(blocks) if blocks else np.zeros((0, width))
    n = len(ids)
    return Dataset(X, [i[0] for i in ids], [i[1] for i in ids], [i[2] for i in ids],
                   ["unknown"] * n, ["unknown"] * n, layout_tag(layout_for(mode), fusion),
                   {"feature_mode": mode, "fusion": fusion})


def save_dataset(data: Dataset, path) -> None:
    doc = {
        "format": FEATURES_FORMAT, "version": FILE_VERSION, "layout": data.layout,
        "n_features": int(data.X.shape[1]) if data.X.ndim == 2 else 0, "meta": data.meta,
        "rows": [{"subject_id": str(data.subjects[i]), "session_id": str(data.sessions[i]),
                  "index": int(data.indices[i]), "ground": str(data.grounds[i]),
                  "footwear": str(data.footwear[i]), "values": data.X[i].tolist()}
                 for i in range(len(data))],
    }
    Path(path).write_text(json.dumps(doc) + "\n", encoding="utf-8")


def load_dataset(path) -> Dataset:
    try:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise FormatError(f"cannot read feature file {path}: {exc}") from None
    if not isinstance(doc, dict) or doc.get("format") != FEATURES_FORMAT:
        raise FormatError(f"{path} is not a feature file")
    rows = doc["rows"]
    width = int(doc["n_features"])
    for n, r in enumerate(rows, start=1):
        if len(r["values"]) != width:
            raise SchemaError(f"row has {len(r['values'])} values, header says {width}", n)
    X = np.array([r["values"] for r in rows], dtype=np.float64).reshape(len(rows), width)
    return Dataset(X, [r["subject_id"] for r in rows], [r["session_id"] for r in rows],
                   [r["index"] for r in rows], [r.get("ground", "unknown") for r in rows],
                   [r.get("footwear", "unknown") for r in rows], doc["layout"], doc.get("meta", {}))
