import json

import pytest
from hypothesis import given, settings, strategies as st

from inear_gait.cost import (
    DEFAULT_TABLE, PAYLOAD_BYTES, StageCost, all_estimates, estimate, load_stage_table, tx_air_time,
)
from inear_gait.errors import ParameterError, TableError

TOL_MJ = 0.15

TOTALS = [
    (("on_device", None, "all"), 168.59),
    (("on_device", None, "mfcc"), 136.82),
    (("raw_offload", "wifi", "all"), 123.17),
    (("raw_offload", "bt", "all"), 190.94),
    (("feature_offload", "wifi", "all"), 168.91),
    (("feature_offload", "bt", "all"), 172.27),
    (("feature_offload", "wifi", "mfcc"), 136.67),
    # The stage values sum to 139.16; the reference total is 139.26.
    (("feature_offload", "bt", "mfcc"), 139.26),
]


@pytest.mark.parametrize("args, total", TOTALS)
def test_default_table_totals(args, total):
    assert estimate(*args).energy_mj == pytest.approx(total, abs=TOL_MJ)


def test_on_device_breakdown():
    e = estimate("on_device", feature_mode="all")
    expected = 120 + 635 * 1.83 / 1000 + 655 * 71.98 / 1000 + 644 * 0.44 / 1000
    assert e.energy_mj == pytest.approx(expected, abs=1e-12)
    assert e.post_acquisition_latency_ms == pytest.approx(74.25)
    assert e.latency_ms == pytest.approx(1074.25)
    assert [s.name for s in e.breakdown] == ["mic_recd", "lowpass_filt", "feat_extr_all", "inference"]


def test_air_time_adds_latency_but_no_energy():
    e = estimate("raw_offload", "wifi")
    assert e.energy_mj == pytest.approx(120 + 334 * 9.49 / 1000, abs=1e-12)
    assert e.post_acquisition_latency_ms == pytest.approx(9.49 + 12.8)
    air = [s for s in e.breakdown if s.name.startswith("tx_air")]
    assert len(air) == 1 and not air[0].powered and air[0].energy_mj == 0


def test_bt_raw_latency():
    assert estimate("raw", "bt").post_acquisition_latency_ms == pytest.approx(148.41 + 128)


@pytest.mark.parametrize("payload, bps, ms", [(16000, 10e6, 12.8), (16000, 1e6, 128.0), (0, 1e6, 0.0)])
def test_tx_air_time(payload, bps, ms):
    assert tx_air_time(payload, bps) == pytest.approx(ms)


def test_payload_sizes():
    assert PAYLOAD_BYTES == {"raw": 16000, "all": 748, "mfcc": 160}


@given(st.floats(0, 1e7), st.floats(1e3, 1e9), st.floats(0.1, 10.0))
def test_air_time_linearity(payload, bps, k):
    assert tx_air_time(k * payload, bps) == pytest.approx(k * tx_air_time(payload, bps), rel=1e-12, abs=1e-12)
    assert tx_air_time(payload, k * bps) == pytest.approx(tx_air_time(payload, bps) / k, rel=1e-12, abs=1e-12)


def test_air_time_errors():
    with pytest.raises(ParameterError):
        tx_air_time(100, 0)
    with pytest.raises(ParameterError):
        tx_air_time(-1, 1e6)


def test_table_air_time_mismatches_are_noted():
    noted = {(e.scheme, e.link, e.feature_mode) for e in all_estimates() if e.notes}
    assert noted == {("feature_offload", "bt", "all"), ("feature_offload", "wifi", "mfcc"),
                     ("feature_offload", "bt", "mfcc")}
    mfcc = estimate("features", "bt", "mfcc")
    assert "2.56" in mfcc.notes[0] and "1.28" in mfcc.notes[0]


def test_all_estimates_cover_every_row():
    assert len(all_estimates()) == 8


STAGES = sorted(DEFAULT_TABLE.stages)


@settings(max_examples=60)
@given(st.sampled_from(STAGES), st.floats(0, 2000), st.floats(0, 2000), st.floats(0, 500), st.floats(0, 500))
def test_energy_monotone_in_power_and_latency(name, p1, p2, l1, l2):
    lo_p, hi_p = sorted((p1, p2))
    lo_l, hi_l = sorted((l1, l2))
    lo = DEFAULT_TABLE.updated([StageCost(name, lo_p, lo_l)])
    hi = DEFAULT_TABLE.updated([StageCost(name, hi_p, hi_l)])
    for a, b in zip(all_estimates(lo), all_estimates(hi)):
        assert b.energy_mj >= a.energy_mj - 1e-9
        assert b.latency_ms >= a.latency_ms - 1e-9


def test_argument_errors():
    with pytest.raises(ParameterError):
        estimate("cloud")
    with pytest.raises(ParameterError):
        estimate("raw_offload")
    with pytest.raises(ParameterError):
        estimate("on_device", feature_mode="no-tonnetz")
    with pytest.raises(TableError):
        estimate("raw", "lora")
    with pytest.raises(ParameterError):
        StageCost("x", -1, 1)


def test_missing_stage_is_a_table_error():
    stages = dict(DEFAULT_TABLE.stages)
    del stages["inference"]
    table = type(DEFAULT_TABLE)(stages)
    with pytest.raises(TableError):
        estimate("on_device", table=table)


def test_csv_override(tmp_path):
    path = tmp_path / "stages.csv"
    path.write_text("name,power_mw,latency_ms\ninference,1000,10\n")
    table = load_stage_table(path)
    base = estimate("on_device").energy_mj
    assert estimate("on_device", table=table).energy_mj == pytest.approx(base - 644 * 0.44 / 1000 + 10)


def test_json_override_with_link(tmp_path):
    path = tmp_path / "stages.json"
    path.write_text(json.dumps({"stages": [{"name": "tx_os_bt5_raw", "power_mw": 400, "latency_ms": 20}],
                                "links": {"bt5": 2e6}}))
    e = estimate("raw", "bt5", table=load_stage_table(path))
    assert e.energy_mj == pytest.approx(120 + 8.0)
    assert e.post_acquisition_latency_ms == pytest.approx(20 + 64.0)
    assert not e.notes


@pytest.mark.parametrize("text, suffix", [("name,power\nx,1\n", ".csv"), ("{not json", ".json"),
                                          ('[{"name": "x", "power_mw": "a", "latency_ms": 1}]', ".json")])
def test_malformed_tables(tmp_path, text, suffix):
    path = tmp_path / ("t" + suffix)
    path.write_text(text)
    with pytest.raises(TableError):
        load_stage_table(path)


def test_unreadable_table(tmp_path):
    with pytest.raises(TableError):
        load_stage_table(tmp_path / "missing.csv")


def test_to_dict_round_numbers():
    d = estimate("on_device").to_dict()
    assert d["energy_mj"] == pytest.approx(168.59, abs=0.01)
    assert sum(s["energy_mj"] for s in d["breakdown"]) == pytest.approx(d["energy_mj"])
