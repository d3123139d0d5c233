"""Energy and latency of on-device identification versus offloading.

Stages carry additional power above idle (mW) and a latency (ms); a stage's
energy is ``power_mw * latency_ms / 1000`` mJ.  Over-the-air transmission
stages add latency but are not powered: only the OS buffer-write part of a
transmission draws the radio's TX power.

Stage names in a table:

=====================  =================================================
``mic_recd``           microphone recording (one cycle, 1000 ms)
``lowpass_filt``       filtering
``feat_extr_<f>``      feature extraction, ``f`` in {all, mfcc}
``inference``          on-device classification
``tx_os_<link>_<p>``   buffer write of payload ``p`` in {raw, all, mfcc}
``tx_air_<link>_<p>``  optional measured air time; derived from the
                       payload size and link throughput when absent
=====================  =================================================
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

from .errors import ParameterError, TableError

SCHEMES = ("on_device", "raw_offload", "feature_offload")
FEATURE_MODES = ("all", "mfcc")
_SCHEME_ALIASES = {"on-device": "on_device", "raw": "raw_offload", "raw-offload": "raw_offload",
                   "feature": "feature_offload", "features": "feature_offload",
                   "feature-offload": "feature_offload", "features-offload": "feature_offload"}

BYTES_PER_VALUE = 2
N_CHANNELS = 2
RAW_SAMPLES = 4000
FEATURES_PER_EAR = {"all": 187, "mfcc": 40}
PAYLOAD_BYTES = {
    "raw": N_CHANNELS * RAW_SAMPLES * BYTES_PER_VALUE,
    **{f: N_CHANNELS * n * BYTES_PER_VALUE for f, n in FEATURES_PER_EAR.items()},
}
# Table and payload-derived air times closer than this are considered equal.
AIR_TIME_NOTE_TOL_MS = 0.01


@dataclass(frozen=True)
class StageCost:
    name: str
    power_mw: float
    latency_ms: float
    powered: bool = True

    def __post_init__(self):
        if not (self.power_mw >= 0 and self.latency_ms >= 0):
            raise ParameterError(f"stage {self.name}: power and latency must be non-negative")

    @property
    def energy_mj(self) -> float:
        return self.power_mw * self.latency_ms / 1000.0 if self.powered else 0.0

    def to_dict(self) -> dict:
        return {"name": self.name, "power_mw": self.power_mw, "latency_ms": self.latency_ms,
                "powered": self.powered, "energy_mj": self.energy_mj}


@dataclass(frozen=True)
class LinkConfig:
    name: str
    throughput_bps: float

    def __post_init__(self):
        if not self.throughput_bps > 0:
            raise ParameterError(f"link {self.name}: throughput must be positive")


LINKS = {"wifi": LinkConfig("wifi", 10e6), "bt": LinkConfig("bt", 1e6)}


@dataclass(frozen=True)
class StageTable:
    stages: dict
    links: dict = field(default_factory=lambda: dict(LINKS))

    def get(self, name: str) -> StageCost:
        try:
            return self.stages[name]
        except KeyError:
            raise TableError(f"stage table has no entry {name!r}") from None

    def link(self, name: str) -> LinkConfig:
        try:
            return self.links[name]
        except KeyError:
            raise TableError(f"unknown link {name!r}; table has {sorted(self.links)}") from None

    def updated(self, stages) -> "StageTable":
        merged = dict(self.stages)
        merged.update({s.name: s for s in stages})
        return replace(self, stages=merged)


def _table(rows) -> dict:
    return {name: StageCost(name, p, l) for name, p, l in rows}


DEFAULT_TABLE = StageTable(_table([
    ("mic_recd", 120, 1000),
    ("lowpass_filt", 635, 1.83),
    ("feat_extr_all", 655, 71.98),
    ("feat_extr_mfcc", 651, 23.62),
    ("inference", 644, 0.44),
    ("tx_os_wifi_raw", 334, 9.49),
    ("tx_air_wifi_raw", 334, 12.8),
    ("tx_os_bt_raw", 478, 148.41),
    ("tx_air_bt_raw", 478, 128),
    ("tx_os_wifi_all", 332, 1.81),
    ("tx_air_wifi_all", 332, 0.59),
    ("tx_os_wifi_mfcc", 332, 0.39),
    ("tx_air_wifi_mfcc", 332, 0.26),
    ("tx_os_bt_all", 457, 8.66),
    ("tx_air_bt_all", 457, 5.94),
    ("tx_os_bt_mfcc", 457, 5.74),
    ("tx_air_bt_mfcc", 457, 2.56),
]))


def tx_air_time(payload_bytes: float, throughput_bps: float) -> float:
    """Milliseconds to send ``payload_bytes`` at ``throughput_bps`` bits/s."""
    if payload_bytes < 0:
        raise ParameterError("payload must be non-negative")
    if not throughput_bps > 0:
        raise ParameterError("throughput must be positive")
    return payload_bytes * 8.0 / throughput_bps * 1000.0


@dataclass(frozen=True)
class SchemeEstimate:
    scheme: str
    link: str | None
    feature_mode: str
    breakdown: tuple
    notes: tuple = ()

    @property
    def energy_mj(self) -> float:
        return sum(s.energy_mj for s in self.breakdown)

    @property
    def latency_ms(self) -> float:
        """All stages including recording."""
        return sum(s.latency_ms for s in self.breakdown)

    @property
    def post_acquisition_latency_ms(self) -> float:
        return sum(s.latency_ms for s in self.breakdown if s.name != "mic_recd")

    def to_dict(self) -> dict:
        return {"scheme": self.scheme, "link": self.link, "feature_mode": self.feature_mode,
                "energy_mj": self.energy_mj, "latency_ms": self.latency_ms,
                "post_acquisition_latency_ms": self.post_acquisition_latency_ms,
                "breakdown": [s.to_dict() for s in self.breakdown], "notes": list(self.notes)}


def _normalize(scheme: str) -> str:
    scheme = _SCHEME_ALIASES.get(scheme, scheme)
    if scheme not in SCHEMES:
        raise ParameterError(f"unknown scheme {scheme!r}; choose from {SCHEMES}")
    return scheme


def _transmission(table: StageTable, link_name: str, payload: str) -> tuple[list[StageCost], list[str]]:
    link = table.link(link_name)
    os_stage = table.get(f"tx_os_{link_name}_{payload}")
    derived = tx_air_time(PAYLOAD_BYTES[payload], link.throughput_bps)
    air_name = f"tx_air_{link_name}_{payload}"
    notes = []
    if air_name in table.stages:
        measured = table.stages[air_name]
        air = replace(measured, powered=False)
        if abs(measured.latency_ms - derived) > AIR_TIME_NOTE_TOL_MS:
            notes.append(f"{air_name}: table air time {measured.latency_ms:g} ms differs from "
                         f"{derived:g} ms implied by {PAYLOAD_BYTES[payload]} B at "
                         f"{link.throughput_bps:g} bit/s; table value used")
    else:
        air = StageCost(air_name, os_stage.power_mw, derived, powered=False)
    return [os_stage, air], notes


def estimate(scheme: str, link: str | None = None, feature_mode: str = "all",
             table: StageTable = DEFAULT_TABLE) -> SchemeEstimate:
    """Energy/latency breakdown of one identification under ``scheme``."""
    scheme = _normalize(scheme)
    if feature_mode not in FEATURE_MODES:
        raise ParameterError(f"feature mode must be one of {FEATURE_MODES}")
    stages = [table.get("mic_recd")]
    notes = []
    if scheme in ("on_device", "feature_offload"):
        stages += [table.get("lowpass_filt"), table.get(f"feat_extr_{feature_mode}")]
    if scheme == "on_device":
        stages.append(table.get("inference"))
        link = None
    else:
        if link is None:
            raise ParameterError(f"{scheme} needs a link ({sorted(table.links)})")
        payload = "raw" if scheme == "raw_offload" else feature_mode
        tx, notes = _transmission(table, link, payload)
        stages += tx
    return SchemeEstimate(scheme, link, feature_mode, tuple(stages), tuple(notes))


def all_estimates(table: StageTable = DEFAULT_TABLE) -> list[SchemeEstimate]:
    out = [estimate("on_device", None, f, table) for f in FEATURE_MODES]
    out += [estimate("raw_offload", l, "all", table) for l in ("wifi", "bt")]
    out += [estimate("feature_offload", l, f, table) for f in FEATURE_MODES for l in ("wifi", "bt")]
    return out


def load_stage_table(path, base: StageTable = DEFAULT_TABLE) -> StageTable:
    """Overlay stages from a JSON or CSV file onto ``base``.

    CSV needs the columns ``name, power_mw, latency_ms``.  JSON is either a
    list of such objects or ``{"stages": [...], "links": {name: bps}}``.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise TableError(f"cannot read stage table {path}: {exc}") from None
    links = dict(base.links)
    try:
        if path.suffix.lower() == ".csv":
            rows = list(csv.DictReader(text.splitlines()))
        else:
            doc = json.loads(text)
            rows = doc if isinstance(doc, list) else doc.get("stages", [])
            if isinstance(doc, dict):
                for name, bps in doc.get("links", {}).items():
                    links[name] = LinkConfig(name, float(bps))
        stages = [StageCost(str(r["name"]).strip(), float(r["power_mw"]), float(r["latency_ms"]))
                  for r in rows]
    except (ValueError, KeyError, TypeError, AttributeError) as exc:
        raise TableError(f"malformed stage table {path}: {exc}") from None
    return replace(base.updated(stages), links=links)
