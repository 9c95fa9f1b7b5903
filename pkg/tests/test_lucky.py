import datetime as dt

import pytest

from transit_access.lucky import (
    ALTERNATIVE_ROUTE,
    NEW_TRANSFER,
    REDUCED_WAIT,
    detect,
    export_events,
    summarize,
)
from transit_access.router import INFEASIBLE, TimeWindow, profile

from test_router import empty_tables, hms, simple_feed

MON = dt.date(2025, 12, 22)


def feeder_connector_fixture():
    """Feeder reaches the transfer stop at 08:00; the 07:58 connector is
    missable only on schedule (it actually leaves 08:03); the fallback
    connector runs at 08:30."""
    scheduled = simple_feed({
        "F":  [("A", "07:50:00"), ("X", "08:00:00")],
        "C1": [("X", "07:58:00"), ("Y", "08:18:00")],
        "C2": [("X", "08:30:00"), ("Y", "08:50:00")],
    }, route_of={"F": "RF", "C1": "RC", "C2": "RC"})
    actual = simple_feed({
        "F":  [("A", "07:50:00"), ("X", "08:00:00")],
        "C1": [("X", "08:03:00"), ("Y", "08:23:00")],
        "C2": [("X", "08:30:00"), ("Y", "08:50:00")],
    }, route_of={"F": "RF", "C1": "RC", "C2": "RC"})
    tables = empty_tables()
    # built as a return trip (school -> cell) so no morning deadline applies
    tables.school_bus_walk.entries[("s", "A")] = 300
    tables.cell_bus_walk.entries[("c", "Y")] = 0
    window = TimeWindow(hms("07:45:00"), hms("08:15:00"), 1.0)
    return scheduled, actual, tables, window


def run_profiles(scheduled, actual, tables, window, direction="return"):
    sched_prof = profile(scheduled, tables, "c", "s", direction, window, MON)
    actual_prof = profile(actual, tables, "c", "s", direction, window, MON)
    return sched_prof, actual_prof


class TestDetect:
    def test_engineered_new_transfer(self):
        scheduled, actual, tables, window = feeder_connector_fixture()
        sched_prof, actual_prof = run_profiles(scheduled, actual, tables, window)
        # only the 07:45 departure catches the feeder at all
        assert sched_prof.duration_at(hms("07:45:00")) == \
            hms("08:50:00") - hms("07:45:00")
        assert actual_prof.duration_at(hms("07:45:00")) == \
            hms("08:23:00") - hms("07:45:00")
        assert sched_prof.duration_at(hms("07:46:00")) == INFEASIBLE

        events = detect(sched_prof, actual_prof, scheduled, MON,
                        transfer_walk=tables.transfer_walk.entries)
        assert len(events) == 1
        event = events[0]
        assert event.kind == NEW_TRANSFER
        assert event.saved_s == 1620
        assert event.minute == hms("07:45:00")
        assert [r.trip_id for r in event.actual.rides] == ["F", "C1"]
        assert [r.trip_id for r in event.scheduled.rides] == ["F", "C2"]

    def test_zero_delay_no_events(self):
        scheduled, _, tables, window = feeder_connector_fixture()
        sched_prof, same_prof = run_profiles(scheduled, scheduled, tables, window)
        assert detect(sched_prof, same_prof, scheduled, MON) == []

    def test_uniform_shift_no_new_transfer(self):
        scheduled, _, tables, window = feeder_connector_fixture()
        shifted = simple_feed({
            "F":  [("A", "07:55:00"), ("X", "08:05:00")],
            "C1": [("X", "08:03:00"), ("Y", "08:23:00")],
            "C2": [("X", "08:35:00"), ("Y", "08:55:00")],
        }, route_of={"F": "RF", "C1": "RC", "C2": "RC"})
        sched_prof = profile(scheduled, tables, "c", "s", "return", window, MON)
        actual_prof = profile(shifted, tables, "c", "s", "return", window, MON)
        events = detect(sched_prof, actual_prof, scheduled, MON,
                        transfer_walk=tables.transfer_walk.entries)
        assert all(e.kind not in (NEW_TRANSFER, ALTERNATIVE_ROUTE)
                   for e in events)

    def test_reduced_wait_on_same_route(self):
        scheduled = simple_feed({
            "A1": [("X", "07:52:00"), ("Y", "08:12:00")],
            "B1": [("X", "08:10:00"), ("Y", "08:30:00")],
        })
        actual = simple_feed({
            "A1": [("X", "08:02:00"), ("Y", "08:22:00")],
            "B1": [("X", "08:10:00"), ("Y", "08:30:00")],
        })
        tables = empty_tables()
        tables.school_bus_walk.entries[("s", "X")] = 600
        tables.cell_bus_walk.entries[("c", "Y")] = 0
        window = TimeWindow(hms("07:50:00"), hms("08:20:00"), 1.0)
        sched_prof, actual_prof = run_profiles(scheduled, actual, tables, window)
        events = detect(sched_prof, actual_prof, scheduled, MON)
        by_minute = {e.minute: e for e in events}
        event = by_minute[hms("07:50:00")]
        assert event.kind == REDUCED_WAIT
        assert event.saved_s == 480  # wait shrinks from 10 to 2 minutes

    def test_saved_equals_duration_difference(self):
        scheduled, actual, tables, window = feeder_connector_fixture()
        sched_prof, actual_prof = run_profiles(scheduled, actual, tables, window)
        for e in detect(sched_prof, actual_prof, scheduled, MON,
                        transfer_walk=tables.transfer_walk.entries):
            i = sched_prof.minutes.index(e.minute)
            assert e.saved_s == sched_prof.durations[i] - actual_prof.durations[i]
            assert e.saved_s > 0


class TestSummarize:
    def test_empty(self):
        assert summarize([], {"c": "D1"}) == []

    def test_single_district(self):
        scheduled, actual, tables, window = feeder_connector_fixture()
        sched_prof, actual_prof = run_profiles(scheduled, actual, tables, window)
        events = detect(sched_prof, actual_prof, scheduled, MON,
                        transfer_walk=tables.transfer_walk.entries)
        rows = summarize(events, {"c": "Northside"}, {"c": 0.4})
        assert len(rows) == 1
        row = rows[0]
        assert row.district == "Northside"
        assert row.events_by_kind == {NEW_TRANSFER: 1}
        assert row.cells_with_gain == 1
        assert row.max_ogl_gain <= 1.0

    def test_two_districts(self):
        scheduled, actual, tables, window = feeder_connector_fixture()
        sched_prof, actual_prof = run_profiles(scheduled, actual, tables, window)
        events = detect(sched_prof, actual_prof, scheduled, MON,
                        transfer_walk=tables.transfer_walk.entries)
        clone = [e.__class__(**{**e.__dict__, "cell_id": "c2"}) for e in events]
        rows = summarize(list(events) + clone, {"c": "D1", "c2": "D2"})
        assert [r.district for r in rows] == ["D1", "D2"]


class TestExport:
    def test_csv_round_trippable(self, tmp_path):
        import csv
        scheduled, actual, tables, window = feeder_connector_fixture()
        sched_prof, actual_prof = run_profiles(scheduled, actual, tables, window)
        events = detect(sched_prof, actual_prof, scheduled, MON,
                        transfer_walk=tables.transfer_walk.entries)
        path = tmp_path / "events.csv"
        export_events(events, path)
        with open(path) as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 1
        assert rows[0]["kind"] == NEW_TRANSFER
        assert int(rows[0]["saved_s"]) == 1620
        assert "ride[C1]" in rows[0]["actual_legs"]
