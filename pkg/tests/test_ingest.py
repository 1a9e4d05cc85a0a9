import io

import pytest
from hypothesis import given, strategies as st

from odorcast.ingest import (
    ParseError,
    SensorReading,
    SmellReport,
    parse_sensor_readings,
    parse_smell_reports,
    summarize,
    write_sensor_readings,
    write_smell_reports,
)

REPORT_HEAD = "timestamp,zipcode,rating,description,symptom,comment\n"
READING_HEAD = "timestamp,station_id,channel,value\n"


def test_report_row_maps_fields():
    (r,) = parse_smell_reports((REPORT_HEAD + "1511000000,15213,5,industrial,headache,awful\n").encode())
    assert r == SmellReport(1511000000, "15213", 5, "industrial", "headache", "awful")


def test_header_only_gives_empty_list():
    assert parse_smell_reports(REPORT_HEAD.encode()) == []


@pytest.mark.parametrize(
    "row, fragment",
    [
        ("1511000000,15213,7,,,", "rating 7"),
        ("1511000000,15213,x,,,", "non-integer rating"),
        ("abc,15213,3,,,", "non-numeric timestamp"),
        ("1511000000,15213,3,,", "expected 6 columns"),
        ("1511000000,1521,3,,,", "five digits"),
    ],
)
def test_bad_report_row_names_line(row, fragment):
    data = REPORT_HEAD + "1511000000,15213,3,,,\n" + row + "\n"
    with pytest.raises(ParseError, match="line 3") as err:
        parse_smell_reports(data.encode())
    assert fragment in str(err.value)
    assert err.value.line == 3


def test_crlf_and_quoted_fields():
    data = REPORT_HEAD.replace("\n", "\r\n") + '1511000000,15213,4,"smoky, sulfur",,\r\n'
    (r,) = parse_smell_reports(data.encode())
    assert r.description == "smoky, sulfur"


def test_sensor_value_and_missing():
    data = READING_HEAD + "1511000000,Liberty,H2S,4.2\n1511000000,Liberty,H2S,\n"
    a, b = parse_sensor_readings(data.encode())
    assert a.value == 4.2 and not a.missing
    assert b.value is None and b.missing


@pytest.mark.parametrize("value", ["361", "NaN", "null", "inf"])
def test_sensor_bad_values(value):
    data = READING_HEAD + f"1511000000,Liberty,wind_dir,{value}\n"
    with pytest.raises(ParseError, match="line 2"):
        parse_sensor_readings(data.encode())


def test_wrong_header():
    with pytest.raises(ParseError, match="line 1"):
        parse_sensor_readings(b"ts,station,channel,value\n")


def test_summary_missing_ratio_and_range():
    reports = [SmellReport(100, "15213", 3), SmellReport(400, "15213", 1)]
    readings = [
        SensorReading(50, "A", "H2S", 1.0),
        SensorReading(60, "A", "H2S", None),
        SensorReading(500, "A", "SO2", 2.0),
    ]
    s = summarize(reports, readings)
    assert s.missing_ratio_per_channel == {"H2S": 0.5, "SO2": 0.0}
    assert s.time_range == (50, 500)
    assert (s.report_count, s.reading_count) == (2, 3)


def test_summary_empty():
    with pytest.raises(ValueError, match="empty dataset"):
        summarize([], [])


reports_st = st.builds(
    SmellReport,
    timestamp=st.integers(1, 2**40),
    zipcode=st.from_regex(r"[0-9]{5}", fullmatch=True),
    rating=st.integers(1, 5),
    description=st.text(alphabet=st.characters(blacklist_categories=("Cs",), blacklist_characters="\r\n\x00"), max_size=12),
)

readings_st = st.builds(
    SensorReading,
    timestamp=st.integers(1, 2**40),
    station_id=st.sampled_from(["Liberty", "Parkway"]),
    channel=st.sampled_from(["H2S", "SO2", "wind_dir"]),
    value=st.one_of(st.none(), st.floats(0, 359.5, allow_nan=False)),
)


@given(st.lists(reports_st, max_size=20))
def test_report_round_trip(reports):
    buf = io.StringIO()
    write_smell_reports(reports, buf)
    assert parse_smell_reports(buf.getvalue().encode()) == reports


def test_writer_rejects_nul():
    r = SmellReport(timestamp=1, zipcode="15213", rating=3, description="a\x00b")
    with pytest.raises(ValueError, match="NUL"):
        write_smell_reports([r], io.StringIO())


@given(st.lists(readings_st, max_size=20))
def test_reading_round_trip(readings):
    buf = io.StringIO()
    write_sensor_readings(readings, buf)
    assert parse_sensor_readings(buf.getvalue().encode()) == readings
