import datetime as dt
import random

import pytest

from transit_access.delays import (
    DelayObservation,
    ImputationError,
    ObservedTripTrace,
    delay_stats,
    impute_trace,
    ingest_observations,
    match_to_trips,
    synthesize_actual_feed,
)
from transit_access.gtfs import StopTimeEntry, parse_feed, validate_feed

from conftest import WEEKDAYS, minimal_feed_rows, write_csv, write_gtfs

MON = dt.date(2025, 12, 22)
OBS_HEADER = ["poll_time", "vehicle_id", "route_id", "prev_stop_id",
              "next_stop_id", "prev_departure", "delay_s"]


def sched(*departures):
    """Stop-time entries at the given departure seconds (arr = dep)."""
    return [StopTimeEntry(f"S{i}", i + 1, d, d) for i, d in enumerate(departures)]


def hms(text):
    from transit_access.gtfs import parse_hms
    return parse_hms(text)


class TestIngest:
    def test_duplicate_polls_collapse(self, tmp_path):
        path = write_csv(tmp_path / "obs.csv", OBS_HEADER, [
            ["2025-12-22T08:00:00", "V1", "R1", "A", "B", "07:58:00", "120"],
            ["2025-12-22T08:00:30", "V1", "R1", "A", "B", "07:58:00", "120"],
        ])
        obs = ingest_observations(path)
        assert len(obs) == 1
        assert obs[0].poll_time.second == 30  # latest poll wins

    def test_malformed_row_skipped_with_warning(self, tmp_path, caplog):
        rows = [["2025-12-22T08:00:00", f"V{i}", "R1", "A", "B", "07:58:00", "60"]
                for i in range(10)]
        rows[4][6] = "not-a-number"
        path = write_csv(tmp_path / "obs.csv", OBS_HEADER, rows)
        with caplog.at_level("WARNING"):
            obs = ingest_observations(path)
        assert len(obs) == 9
        assert any("1 malformed" in r.message for r in caplog.records)

    def test_empty_file_warns(self, tmp_path, caplog):
        path = write_csv(tmp_path / "obs.csv", OBS_HEADER, [])
        with caplog.at_level("WARNING"):
            obs = ingest_observations(path)
        assert obs == []
        assert any("no observations" in r.message for r in caplog.records)

    def test_unknown_route_skipped(self, tmp_path, caplog):
        path = write_csv(tmp_path / "obs.csv", OBS_HEADER, [
            ["2025-12-22T08:00:00", "V1", "R9", "A", "B", "07:58:00", "60"],
        ])
        with caplog.at_level("WARNING"):
            obs = ingest_observations(path, known_routes={"R1"})
        assert obs == []
        assert any("unknown route_id" in r.message for r in caplog.records)

    def test_chronological_order(self, tmp_path):
        path = write_csv(tmp_path / "obs.csv", OBS_HEADER, [
            ["2025-12-22T08:05:00", "V1", "R1", "B", "C", "08:03:00", "120"],
            ["2025-12-22T08:00:00", "V1", "R1", "A", "B", "07:58:00", "60"],
        ])
        obs = ingest_observations(path)
        assert [o.prev_stop_id for o in obs] == ["A", "B"]


def two_trip_feed(tmp_path, first="08:00:00", second="08:30:00"):
    rows = minimal_feed_rows()
    rows["trips"].append(["R1", "WK", "T2"])
    rows["stop_times"] = [
        ["T1", first, first, "A", "1"],
        ["T1", "08:10:00", "08:10:00", "B", "2"],
        ["T2", second, second, "A", "1"],
        ["T2", "08:40:00", "08:40:00", "B", "2"],
    ]
    return parse_feed(write_gtfs(tmp_path / "feed", **rows))


def obs(prev_departure, delay_s, stop="A", route="R1", poll="2025-12-22T08:10:00"):
    return DelayObservation(dt.datetime.fromisoformat(poll), "V1", route,
                            stop, "B", hms(prev_departure), delay_s)


class TestMatch:
    def test_exact_match(self, tmp_path):
        feed = two_trip_feed(tmp_path)
        traces, unmatched = match_to_trips([obs("08:04:00", 240)], feed, MON)
        assert unmatched == []
        assert len(traces) == 1
        assert traces[0].trip_id == "T1"
        assert traces[0].observed == {1: hms("08:04:00")}

    def test_nearest_schedule_rule(self, tmp_path):
        feed = two_trip_feed(tmp_path)
        # implied scheduled departure 08:12 sits nearer 08:00 than 08:30
        traces, unmatched = match_to_trips([obs("08:12:00", 0)], feed, MON)
        assert traces[0].trip_id == "T1"

    def test_outside_tolerance_unmatched(self, tmp_path):
        feed = two_trip_feed(tmp_path)
        traces, unmatched = match_to_trips([obs("07:30:00", 0)], feed, MON)
        assert traces == []
        assert len(unmatched) == 1

    def test_tie_breaks_to_earlier_trip(self, tmp_path):
        feed = two_trip_feed(tmp_path)
        traces, _ = match_to_trips([obs("08:15:00", 0)], feed, MON)
        assert traces[0].trip_id == "T1"


class TestImpute:
    def test_reversal_clamp(self):
        # scheduled 08:00/08:05/08:10, observed stop1=08:02 stop3=08:06:
        # forward fill gives 08:07 at stop2, clamped to 08:06.
        scheduled = sched(hms("08:00:00"), hms("08:05:00"), hms("08:10:00"))
        trace = ObservedTripTrace("T1", {1: hms("08:02:00"), 3: hms("08:06:00")})
        assert impute_trace(scheduled, trace) == \
            [hms("08:02:00"), hms("08:06:00"), hms("08:06:00")]

    def test_fully_observed_identity(self):
        scheduled = sched(28800, 29100, 29400)
        trace = ObservedTripTrace("T1", {1: 28900, 2: 29200, 3: 29500})
        assert impute_trace(scheduled, trace) == [28900, 29200, 29500]

    def test_forward_propagation(self):
        scheduled = sched(hms("08:00:00"), hms("08:05:00"), hms("08:10:00"))
        trace = ObservedTripTrace("T1", {1: hms("08:03:00")})
        assert impute_trace(scheduled, trace) == \
            [hms("08:03:00"), hms("08:08:00"), hms("08:13:00")]

    def test_backward_fill_floored_at_schedule(self):
        scheduled = sched(28800, 29100, 29400)
        # first observation at the last stop, 120 s late
        trace = ObservedTripTrace("T1", {3: 29520})
        assert impute_trace(scheduled, trace) == [28920, 29220, 29520]
        # early observation: upstream stops floor at the schedule
        early = ObservedTripTrace("T1", {3: 29300})
        assert impute_trace(scheduled, early) == [28800, 29100, 29300]

    def test_decreasing_observations_raise(self):
        scheduled = sched(28800, 29100, 29400)
        trace = ObservedTripTrace("T1", {1: 29000, 3: 28900})
        with pytest.raises(ImputationError):
            impute_trace(scheduled, trace)

    def test_idempotent_on_complete_trace(self):
        scheduled = sched(28800, 29100, 29400)
        complete = [28950, 29150, 29450]
        trace = ObservedTripTrace("T1", dict(zip((1, 2, 3), complete)))
        once = impute_trace(scheduled, trace)
        again = impute_trace(scheduled, ObservedTripTrace("T1", dict(zip((1, 2, 3), once))))
        assert once == complete == again

    def test_fuzz_non_decreasing(self):
        rng = random.Random(20251222)
        for _ in range(1000):
            n = rng.randint(2, 8)
            deps = [rng.randint(6 * 3600, 8 * 3600)]
            for _ in range(n - 1):
                deps.append(deps[-1] + rng.randint(0, 600))
            scheduled = sched(*deps)
            observed_seqs = sorted(rng.sample(range(1, n + 1),
                                              rng.randint(1, n)))
            base = rng.randint(-300, 900)
            observed = {}
            value = None
            for seq in observed_seqs:
                jitter = rng.randint(-120, 300)
                cand = deps[seq - 1] + base + jitter
                value = cand if value is None else max(value, cand)
                observed[seq] = value  # keep observations non-decreasing
            actual = impute_trace(scheduled, ObservedTripTrace("T", observed))
            assert actual == sorted(actual)
            for seq, v in observed.items():
                assert actual[seq - 1] == v


class TestSynthesize:
    def test_zero_traces_identity(self, tmp_path):
        feed = two_trip_feed(tmp_path)
        actual, report = synthesize_actual_feed(feed, MON, [])
        assert actual.variant == "actual" and actual.day == MON
        assert set(actual.trips) == {"T1", "T2"}
        for tid in actual.trips:
            assert actual.trips[tid].stop_times == feed.trips[tid].stop_times
        assert report.n_observed == 0 and report.dropped == []

    def test_uniform_shift(self, tmp_path):
        feed = two_trip_feed(tmp_path)
        trace = ObservedTripTrace("T1", {1: hms("08:05:00"), 2: hms("08:15:00")})
        actual, report = synthesize_actual_feed(feed, MON, [trace])
        for st, orig in zip(actual.trips["T1"].stop_times,
                            feed.trips["T1"].stop_times):
            assert st.departure_s == orig.departure_s + 300
            assert st.arrival_s == st.departure_s
        assert actual.trips["T2"].stop_times == feed.trips["T2"].stop_times
        assert validate_feed(actual) == []

    def test_dropped_trip_excluded(self, tmp_path, caplog):
        feed = two_trip_feed(tmp_path)
        bad = ObservedTripTrace("T1", {1: hms("08:10:00"), 2: hms("08:05:00")})
        with caplog.at_level("WARNING"):
            actual, report = synthesize_actual_feed(feed, MON, [bad])
        assert report.dropped == ["T1"]
        assert set(actual.trips) == {"T2"}
        assert len(actual.trips) == report.n_active - 1

    def test_route_median_fill(self, tmp_path):
        feed = two_trip_feed(tmp_path)
        trace = ObservedTripTrace("T1", {1: hms("08:04:00"), 2: hms("08:14:00")})
        actual, report = synthesize_actual_feed(feed, MON, [trace],
                                                fill_unobserved="route-median")
        assert report.n_filled == 1
        assert actual.trips["T2"].stop_times[0].departure_s == hms("08:34:00")


class TestDelayStats:
    def test_per_service_mean(self, tmp_path):
        feed = two_trip_feed(tmp_path)
        trace = ObservedTripTrace("T1", {1: hms("08:02:00"), 2: hms("08:14:00")})
        actual, report = synthesize_actual_feed(feed, MON, [trace])
        summaries, silent = delay_stats(feed, {MON: actual},
                                        {MON: report.observed_trip_ids})
        assert len(summaries) == 1
        s = summaries[0]
        assert s.route_id == "R1"
        assert s.service_means == (180.0,)  # mean of 120 and 240
        assert s.median_s == 180.0 and s.n_services == 1
        assert silent == []

    def test_median_and_range_over_days(self):
        import statistics
        means = [100, 200, 300, 250, 150]
        assert statistics.median(means) == 200
        assert (min(means), max(means)) == (100, 300)

    def test_zero_delay_gives_zero_medians(self, tmp_path):
        feed = two_trip_feed(tmp_path)
        actual, _ = synthesize_actual_feed(feed, MON, [])
        summaries, silent = delay_stats(feed, {MON: actual})
        assert all(s.median_s == 0 for s in summaries)

    def test_unobserved_route_listed_separately(self, tmp_path):
        feed = two_trip_feed(tmp_path)
        actual, report = synthesize_actual_feed(feed, MON, [])
        summaries, silent = delay_stats(feed, {MON: actual},
                                        {MON: report.observed_trip_ids})
        assert summaries == [] and silent == ["R1"]
