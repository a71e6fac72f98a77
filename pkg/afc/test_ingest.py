# afc/test_ingest.py
"""
Tests for SCADA / alarm-log parsing, the alarm codebook and alarm merging.

Run: pytest afc/test_ingest.py -v
"""

import numpy as np
import pytest

from errors import DataError, ParseError, UsageError
from ingest import (
    ROW_SECONDS,
    AlarmCodebook,
    AlarmEvent,
    ScadaTable,
    alarm_frequency,
    build_codebook,
    merge_alarms,
    parse_alarm_log,
    parse_scada,
    write_alarm_log,
    write_scada,
)

T0 = 1_577_836_800  # 2020-01-01T00:00:00Z


def _write(path, text):
    path.write_text(text)
    return str(path)


def _table(n=10, turbine_id="WT01"):
    timestamps = T0 + ROW_SECONDS * np.arange(n, dtype=np.int64)
    return ScadaTable(turbine_id, timestamps, ["p1", "p2"], np.zeros((n, 2)))


def _brute_force_rows(timestamps, event):
    """Rows whose [t, t+600) interval intersects the event interval."""
    rows = []
    for t, ts in enumerate(timestamps):
        if event.duration == 0:
            hit = ts <= event.start_time < ts + ROW_SECONDS
        else:
            hit = ts < event.start_time + event.duration and event.start_time < ts + ROW_SECONDS
        if hit:
            rows.append(t)
    return rows


# ============================================================================
# parse_scada
# ============================================================================

def test_parse_scada_empty_cell_becomes_nan(tmp_path):
    path = _write(tmp_path / "WT01.csv", (
        "timestamp,p1,p2\n"
        f"{T0},1.0,2.0\n"
        f"{T0 + 600},,4.0\n"
        f"{T0 + 1200},5.0,6.0\n"
    ))
    table = parse_scada(path)

    assert table.turbine_id == "WT01"
    assert table.param_ids == ["p1", "p2"]
    assert table.values.shape == (3, 2)
    assert np.isnan(table.values).sum() == 1
    assert np.isnan(table.values[1, 0])


def test_parse_scada_sorts_rows(tmp_path):
    path = _write(tmp_path / "scada.csv", (
        "timestamp,p1\n"
        f"{T0 + 1200},3\n"
        f"{T0},1\n"
        f"{T0 + 600},2\n"
    ))
    table = parse_scada(path, "WT02")

    assert table.turbine_id == "WT02"
    assert list(table.timestamps) == [T0, T0 + 600, T0 + 1200]
    assert list(table.values[:, 0]) == [1.0, 2.0, 3.0]


def test_parse_scada_iso_timestamps(tmp_path):
    path = _write(tmp_path / "scada.csv", (
        "timestamp,p1\n"
        "2020-01-01T00:00:00Z,1\n"
        "2020-01-01 00:10:00,2\n"
    ))
    table = parse_scada(path)
    assert list(table.timestamps) == [T0, T0 + 600]


def test_parse_scada_non_numeric_names_row_and_column(tmp_path):
    path = _write(tmp_path / "scada.csv", (
        "timestamp,p1,p2\n"
        f"{T0},1,2\n"
        f"{T0 + 600},3,abc\n"
    ))
    with pytest.raises(ParseError) as info:
        parse_scada(path)

    assert info.value.row == 2
    assert info.value.column == "p2"
    assert "abc" in str(info.value)


def test_parse_scada_malformed_timestamp(tmp_path):
    path = _write(tmp_path / "scada.csv", (
        "timestamp,p1\n"
        f"{T0},1\n"
        "not-a-time,2\n"
    ))
    with pytest.raises(ParseError) as info:
        parse_scada(path)
    assert info.value.row == 2
    assert info.value.column == "timestamp"


@pytest.mark.parametrize("raw", ["inf", "-inf", "1e400", "nan", "1e300"])
def test_parse_scada_unrepresentable_timestamp(tmp_path, raw):
    path = _write(tmp_path / "scada.csv", f"timestamp,p1\n{T0},1\n{raw},2\n")
    with pytest.raises(ParseError) as info:
        parse_scada(path)
    assert info.value.row == 2
    assert info.value.column == "timestamp"


def test_parse_scada_duplicate_timestamp(tmp_path):
    path = _write(tmp_path / "scada.csv", f"timestamp,p1\n{T0},1\n{T0},2\n")
    with pytest.raises(DataError):
        parse_scada(path)


def test_parse_scada_zero_rows(tmp_path):
    path = _write(tmp_path / "scada.csv", "timestamp,p1\n")
    with pytest.raises(DataError):
        parse_scada(path)


def test_parse_scada_missing_file(tmp_path):
    with pytest.raises(UsageError):
        parse_scada(str(tmp_path / "nope.csv"))


def test_write_scada_reads_back(tmp_path):
    values = np.array([[0.1, np.nan], [1.0 / 3.0, -2.5]])
    table = ScadaTable("WT03", np.array([T0, T0 + 600]), ["a", "b"], values)
    loaded = parse_scada(write_scada(table, str(tmp_path / "WT03.csv")))

    assert loaded.param_ids == ["a", "b"]
    np.testing.assert_array_equal(loaded.timestamps, table.timestamps)
    np.testing.assert_array_equal(loaded.values, values)


# ============================================================================
# parse_alarm_log
# ============================================================================

ALARM_HEADER = "start_time,duration_s,code,description,category\n"


def test_parse_alarm_log_sorted(tmp_path):
    path = _write(tmp_path / "alarms.csv", (
        ALARM_HEADER
        + f"{T0 + 1200},60,507,Pitch fault,Fault\n"
        + f"{T0},0,12,Yaw,\n"
    ))
    events = parse_alarm_log(path)

    assert [e.raw_code for e in events] == [12, 507]
    assert events[0].duration == 0
    assert events[0].category == ""
    assert events[1].description == "Pitch fault"


def test_parse_alarm_log_negative_duration(tmp_path):
    path = _write(tmp_path / "alarms.csv", ALARM_HEADER + f"{T0},-5,12,x,y\n")
    with pytest.raises(DataError):
        parse_alarm_log(path)


def test_parse_alarm_log_malformed_code(tmp_path):
    path = _write(tmp_path / "alarms.csv", ALARM_HEADER + f"{T0},60,twelve,x,y\n")
    with pytest.raises(ParseError) as info:
        parse_alarm_log(path)
    assert info.value.row == 1
    assert info.value.column == "code"


@pytest.mark.parametrize("raw", ["nan", "inf", "-inf", "1e400"])
def test_parse_alarm_log_non_finite_duration(tmp_path, raw):
    path = _write(tmp_path / "alarms.csv", ALARM_HEADER + f"{T0},60,12,x,y\n{T0 + 1200},{raw},7,x,y\n")
    with pytest.raises(ParseError) as info:
        parse_alarm_log(path)
    assert info.value.row == 2
    assert info.value.column == "duration_s"


def test_parse_alarm_log_non_finite_start(tmp_path):
    path = _write(tmp_path / "alarms.csv", ALARM_HEADER + "inf,60,12,x,y\n")
    with pytest.raises(ParseError) as info:
        parse_alarm_log(path)
    assert info.value.row == 1
    assert info.value.column == "start_time"


def test_parse_alarm_log_missing_columns(tmp_path):
    path = _write(tmp_path / "alarms.csv", "start_time,code\n0,1\n")
    with pytest.raises(ParseError):
        parse_alarm_log(path)


def test_parse_alarm_log_missing_file(tmp_path):
    with pytest.raises(UsageError):
        parse_alarm_log(str(tmp_path / "nope.csv"))


def test_write_alarm_log_reads_back(tmp_path):
    events = [AlarmEvent(T0 + 600, 300, 7, "Overspeed", "Fault"), AlarmEvent(T0, 0, 3)]
    loaded = parse_alarm_log(write_alarm_log(events, str(tmp_path / "alarms.csv")))

    assert [(e.start_time, e.duration, e.raw_code) for e in loaded] == [(T0, 0, 3), (T0 + 600, 300, 7)]
    assert loaded[1].description == "Overspeed"


# ============================================================================
# build_codebook
# ============================================================================

def test_codebook_ascending_tags():
    events = [AlarmEvent(T0, 0, code) for code in (901, 12, 507, 12)]
    codebook = build_codebook(events)
    assert codebook.mapping == {12: 1, 507: 2, 901: 3}
    assert codebook.K == 3


def test_codebook_excludes_zero():
    codebook = build_codebook([AlarmEvent(T0, 0, 0), AlarmEvent(T0, 0, 7)])
    assert codebook.mapping == {7: 1}
    assert codebook.K == 1


def test_codebook_only_zero_codes():
    with pytest.raises(DataError):
        build_codebook([AlarmEvent(T0, 0, 0)])


def test_codebook_round_trip():
    codebook = build_codebook([AlarmEvent(T0, 0, c) for c in (3, 40, 500, 6000)])
    for code, tag in codebook.mapping.items():
        assert codebook.untag(codebook.tag(code)) == code
        assert codebook.tag(codebook.untag(tag)) == tag
    assert AlarmCodebook.from_dict(codebook.to_dict()).mapping == codebook.mapping


# ============================================================================
# merge_alarms
# ============================================================================

def test_merge_spanning_event_marks_three_rows():
    table = _table(10)
    codebook = AlarmCodebook({42: 1})
    event = AlarmEvent(int(table.timestamps[4]), 25 * 60, 42)
    merged = merge_alarms(table, [event], codebook)

    assert list(np.flatnonzero(merged.y1)) == [4, 5, 6]
    assert list(merged.y2[[4, 5, 6]]) == [1, 1, 1]


def test_merge_no_events():
    merged = merge_alarms(_table(6), [], AlarmCodebook({1: 1}))
    assert merged.y1.sum() == 0
    assert merged.y2.sum() == 0


def test_merge_equal_start_lowest_tag_wins():
    table = _table(5)
    codebook = AlarmCodebook({10: 2, 20: 5})
    start = int(table.timestamps[2]) + 60
    merged = merge_alarms(table, [AlarmEvent(start, 120, 20), AlarmEvent(start, 120, 10)], codebook)
    assert merged.y2[2] == 2


def test_merge_earliest_start_wins():
    table = _table(5)
    codebook = AlarmCodebook({10: 1, 20: 2})
    events = [
        AlarmEvent(int(table.timestamps[1]) + 30, 1200, 10),
        AlarmEvent(int(table.timestamps[1]), 600, 20),
    ]
    merged = merge_alarms(table, events, codebook)
    assert merged.y2[1] == 2
    assert merged.y2[2] == 1


def test_merge_zero_duration_marks_containing_row():
    table = _table(5)
    merged = merge_alarms(table, [AlarmEvent(int(table.timestamps[3]) + 599, 0, 9)], AlarmCodebook({9: 1}))
    assert list(np.flatnonzero(merged.y1)) == [3]


def test_merge_boundary_is_half_open():
    table = _table(5)
    # Ends exactly where row 2 starts
    merged = merge_alarms(table, [AlarmEvent(int(table.timestamps[1]), 600, 9)], AlarmCodebook({9: 1}))
    assert list(np.flatnonzero(merged.y1)) == [1]


def test_merge_unknown_code():
    with pytest.raises(DataError):
        merge_alarms(_table(3), [AlarmEvent(T0, 60, 99)], AlarmCodebook({1: 1}))


def test_merge_ignores_code_zero():
    merged = merge_alarms(_table(3), [AlarmEvent(T0, 60, 0)], AlarmCodebook({1: 1}))
    assert merged.y1.sum() == 0


def test_merge_matches_brute_force():
    rng = np.random.default_rng(7)
    table = _table(60)
    codebook = AlarmCodebook({c: i for i, c in enumerate((11, 22, 33), 1)})
    events = [
        AlarmEvent(
            T0 + int(rng.integers(0, 60 * ROW_SECONDS)),
            float(rng.choice([0, 1, 300, 600, 1500, 4000])),
            int(rng.choice([11, 22, 33])),
        )
        for _ in range(25)
    ]
    merged = merge_alarms(table, events, codebook)

    assert int(merged.y1.sum()) == int((merged.y2 > 0).sum())
    covered = set()
    for event in events:
        covered.update(_brute_force_rows(table.timestamps, event))
    assert set(np.flatnonzero(merged.y1)) == covered

    # winner per row: earliest start, then lowest tag
    for t in covered:
        candidates = [(e.start_time, codebook.tag(e.raw_code)) for e in events
                      if t in _brute_force_rows(table.timestamps, e)]
        assert merged.y2[t] == min(candidates)[1]


def test_merge_idempotent():
    table = _table(8)
    codebook = AlarmCodebook({5: 1})
    merged = merge_alarms(table, [AlarmEvent(T0 + 1800, 900, 5)], codebook)
    again = merge_alarms(merged, [], codebook)

    np.testing.assert_array_equal(again.y1, merged.y1)
    np.testing.assert_array_equal(again.y2, merged.y2)
    np.testing.assert_array_equal(again.values, merged.values)


def test_alarm_frequency():
    table = _table(10)
    codebook = AlarmCodebook({5: 1, 6: 2})
    events = [AlarmEvent(T0, 1200, 5), AlarmEvent(T0 + 5400, 0, 6)]
    merged = merge_alarms(table, events, codebook)
    assert alarm_frequency(merged) == {1: 2, 2: 1}
