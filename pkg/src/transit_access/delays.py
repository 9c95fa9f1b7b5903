"""Turn polled vehicle-delay records into per-day actual-operations feeds.

The pipeline is: ingest raw poll rows, match them to scheduled trips, impute
a complete departure sequence per observed trip (clamping any reversal the
raw data would produce), and synthesize an actual feed for the day.  Route
level delay summaries come out of comparing the two feeds.
"""

from __future__ import annotations

import csv
import datetime as dt
import logging
import statistics
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

from .gtfs import (
    StopTimeEntry,
    TimetableFeed,
    Trip,
    active_trips,
    parse_hms,
    validate_feed,
)

log = logging.getLogger(__name__)

OBSERVATION_COLUMNS = ("poll_time", "vehicle_id", "route_id", "prev_stop_id",
                       "next_stop_id", "prev_departure", "delay_s")


class ImputationError(Exception):
    """Observed departures decrease along the trip beyond the allowed slack."""


@dataclass(frozen=True)
class DelayObservation:
    """One polled vehicle record."""

    poll_time: dt.datetime
    vehicle_id: str
    route_id: str
    prev_stop_id: str
    next_stop_id: str
    prev_departure: int  # seconds since service-day midnight
    delay_s: int


@dataclass
class ObservedTripTrace:
    """Partial map of observed departures for one matched trip."""

    trip_id: str
    observed: dict[int, int]  # stop_sequence -> observed departure seconds


@dataclass(frozen=True)
class RouteDelaySummary:
    route_id: str
    category: str
    service_means: tuple[float, ...]  # one mean delay per (trip, day) service
    median_s: float
    min_s: float
    max_s: float

    @property
    def n_services(self) -> int:
        return len(self.service_means)


@dataclass
class SynthesisReport:
    """Counts from building one actual feed."""

    day: dt.date
    n_active: int = 0
    n_observed: int = 0
    n_filled: int = 0
    dropped: list[str] = field(default_factory=list)
    observed_trip_ids: set[str] = field(default_factory=set)


# --------------------------------------------------------------------------
# Ingestion


def ingest_observations(path: str | Path,
                        known_routes: set[str] | None = None) -> list[DelayObservation]:
    """Read a poll file into chronologically sorted, de-duplicated observations.

    Polls repeating the same (vehicle, prev_stop, prev_departure) collapse to
    the latest poll.  Malformed rows and rows for unknown routes are skipped
    with a warning and counted.
    """
    path = Path(path)
    raw: dict[tuple[str, str, int], DelayObservation] = {}
    n_malformed = 0
    n_unknown_route = 0
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            try:
                obs = DelayObservation(
                    poll_time=dt.datetime.fromisoformat(row["poll_time"].strip()),
                    vehicle_id=row["vehicle_id"].strip(),
                    route_id=row["route_id"].strip(),
                    prev_stop_id=row["prev_stop_id"].strip(),
                    next_stop_id=row["next_stop_id"].strip(),
                    prev_departure=parse_hms(row["prev_departure"]),
                    delay_s=int(row["delay_s"]),
                )
            except (KeyError, ValueError, AttributeError, TypeError):
                n_malformed += 1
                continue
            if obs.prev_stop_id == obs.next_stop_id:
                n_malformed += 1
                continue
            if known_routes is not None and obs.route_id not in known_routes:
                n_unknown_route += 1
                continue
            key = (obs.vehicle_id, obs.prev_stop_id, obs.prev_departure)
            kept = raw.get(key)
            if kept is None or obs.poll_time > kept.poll_time:
                raw[key] = obs
    if n_malformed:
        log.warning("%s: skipped %d malformed row(s)", path.name, n_malformed)
    if n_unknown_route:
        log.warning("%s: skipped %d row(s) with unknown route_id", path.name,
                    n_unknown_route)
    out = sorted(raw.values(), key=lambda o: (o.poll_time, o.vehicle_id, o.prev_stop_id))
    if not out:
        log.warning("%s: no observations", path.name)
    return out


# --------------------------------------------------------------------------
# Trip matching


def match_to_trips(observations: Sequence[DelayObservation],
                   feed: TimetableFeed,
                   day: dt.date,
                   tolerance_s: int = 1200,
                   ) -> tuple[list[ObservedTripTrace], list[DelayObservation]]:
    """Assign each observation to the active trip on its route whose scheduled
    departure at prev_stop is nearest to (prev_departure - delay).

    Ties break toward the earlier trip.  Observations with no candidate
    within the tolerance land in the unmatched bucket.
    """
    active = active_trips(feed, day)
    by_route: dict[str, list[Trip]] = {}
    for tid in active:
        trip = feed.trips[tid]
        by_route.setdefault(trip.route_id, []).append(trip)

    traces: dict[str, ObservedTripTrace] = {}
    latest_poll: dict[tuple[str, int], dt.datetime] = {}
    unmatched: list[DelayObservation] = []

    for obs in observations:
        implied = obs.prev_departure - obs.delay_s
        best: tuple[int, int, str, int] | None = None  # (|gap|, sched_dep, trip, seq)
        for trip in by_route.get(obs.route_id, ()):
            for st in trip.stop_times:
                if st.stop_id != obs.prev_stop_id:
                    continue
                gap = abs(st.departure_s - implied)
                cand = (gap, st.departure_s, trip.trip_id, st.stop_sequence)
                if best is None or cand[:2] < best[:2]:
                    best = cand
        if best is None or best[0] > tolerance_s:
            unmatched.append(obs)
            continue
        _, _, trip_id, seq = best
        key = (trip_id, seq)
        if key in latest_poll and obs.poll_time <= latest_poll[key]:
            continue
        latest_poll[key] = obs.poll_time
        traces.setdefault(trip_id, ObservedTripTrace(trip_id, {})).observed[seq] = \
            obs.prev_departure

    if unmatched:
        log.warning("%d observation(s) had no trip within %d s on %s",
                    len(unmatched), tolerance_s, day.isoformat())
    return sorted(traces.values(), key=lambda t: t.trip_id), unmatched


# --------------------------------------------------------------------------
# Imputation


def impute_trace(scheduled: Sequence[StopTimeEntry],
                 trace: ObservedTripTrace,
                 slack_s: int = 0) -> list[int]:
    """Complete a partial trace into one actual departure per scheduled stop.

    Observed departures are preserved verbatim.  A missing departure is the
    previous actual departure plus the scheduled segment duration; when that
    would overtake the next observed departure downstream, it is clamped to
    that value so the sequence cannot reverse.  Stops before the first
    observation take the scheduled time shifted by the first observed delay,
    floored at the schedule and clamped the same way.

    Raises ImputationError if the observed values themselves decrease by more
    than ``slack_s`` (the trip should then be dropped from the actual feed);
    smaller reversals within the slack are lifted to the running maximum.
    """
    if not trace.observed:
        raise ValueError("trace has no observed departures")
    seq_order = [st.stop_sequence for st in scheduled]
    sched_dep = {st.stop_sequence: st.departure_s for st in scheduled}
    unknown = set(trace.observed) - set(seq_order)
    if unknown:
        raise ValueError(f"trace references stop_sequence(s) {sorted(unknown)} "
                         f"not in the scheduled trip")

    observed: dict[int, int] = {}
    running = None
    for seq in seq_order:
        if seq not in trace.observed:
            continue
        value = trace.observed[seq]
        if running is not None and value < running - slack_s:
            raise ImputationError(
                f"trip {trace.trip_id}: observed departures decrease at "
                f"stop_sequence {seq} ({value} < {running} - {slack_s})")
        running = value if running is None else max(running, value)
        observed[seq] = running

    # Nearest observed departure downstream of each position, for clamping.
    next_obs: list[int | None] = [None] * len(seq_order)
    ahead: int | None = None
    for i in range(len(seq_order) - 1, -1, -1):
        next_obs[i] = ahead
        if seq_order[i] in observed:
            ahead = observed[seq_order[i]]

    first_idx = min(i for i, seq in enumerate(seq_order) if seq in observed)
    first_seq = seq_order[first_idx]
    first_delay = observed[first_seq] - sched_dep[first_seq]

    actual: list[int] = []
    for i, seq in enumerate(seq_order):
        if seq in observed:
            actual.append(observed[seq])
            continue
        if i < first_idx:
            value = max(sched_dep[seq], sched_dep[seq] + first_delay)
        else:
            segment = sched_dep[seq] - sched_dep[seq_order[i - 1]]
            value = actual[i - 1] + segment
        if next_obs[i] is not None and value > next_obs[i]:
            value = next_obs[i]
        actual.append(value)
    return actual


# --------------------------------------------------------------------------
# Feed synthesis


def synthesize_actual_feed(feed: TimetableFeed,
                           day: dt.date,
                           traces: Sequence[ObservedTripTrace],
                           fill_unobserved: str = "scheduled",
                           slack_s: int = 0,
                           ) -> tuple[TimetableFeed, SynthesisReport]:
    """Build the actual-operations feed for one day.

    The output contains exactly the trips active on the day.  Observed trips
    carry imputed stop times with arrival set equal to departure (the polled
    source exposes departures only); unobserved trips keep scheduled times,
    or a route-median shift when ``fill_unobserved="route-median"``.  Trips
    whose observations decrease beyond the slack are dropped and reported.
    """
    if fill_unobserved not in ("scheduled", "route-median"):
        raise ValueError(f"unknown fill_unobserved mode {fill_unobserved!r}")
    report = SynthesisReport(day=day)
    active = active_trips(feed, day)
    report.n_active = len(active)

    imputed: dict[str, list[int]] = {}
    for trace in traces:
        if trace.trip_id not in active:
            log.warning("trace for trip %s ignored: not active on %s",
                        trace.trip_id, day.isoformat())
            continue
        sched = feed.trips[trace.trip_id].stop_times
        try:
            imputed[trace.trip_id] = impute_trace(sched, trace, slack_s=slack_s)
        except ImputationError as exc:
            report.dropped.append(trace.trip_id)
            log.warning("dropped trip from actual feed: %s", exc)
    report.observed_trip_ids = set(imputed)
    report.n_observed = len(imputed)

    route_shift: dict[str, int] = {}
    if fill_unobserved == "route-median":
        per_route: dict[str, list[float]] = {}
        for tid, deps in imputed.items():
            trip = feed.trips[tid]
            deltas = [d - st.departure_s for d, st in zip(deps, trip.stop_times)]
            per_route.setdefault(trip.route_id, []).append(statistics.fmean(deltas))
        route_shift = {rid: round(statistics.median(means))
                       for rid, means in per_route.items()}

    new_trips: dict[str, Trip] = {}
    for tid in sorted(active):
        if tid in report.dropped:
            continue
        trip = feed.trips[tid]
        if tid in imputed:
            stop_times = tuple(
                replace(st, arrival_s=dep, departure_s=dep)
                for st, dep in zip(trip.stop_times, imputed[tid]))
            new_trips[tid] = replace(trip, stop_times=stop_times)
        elif trip.route_id in route_shift:
            shift = route_shift[trip.route_id]
            stop_times = tuple(
                replace(st, arrival_s=st.arrival_s + shift,
                        departure_s=st.departure_s + shift)
                for st in trip.stop_times)
            new_trips[tid] = replace(trip, stop_times=stop_times)
            report.n_filled += 1
        else:
            new_trips[tid] = trip

    actual = TimetableFeed(stops=feed.stops, routes=feed.routes, trips=new_trips,
                           calendars=feed.calendars, variant="actual", day=day)
    violations = validate_feed(actual)
    if violations:
        raise ImputationError("synthesized feed is invalid: "
                              + "; ".join(str(v) for v in violations))
    return actual, report


# --------------------------------------------------------------------------
# Delay statistics


def delay_stats(scheduled: TimetableFeed,
                actual_feeds: Mapping[dt.date, TimetableFeed],
                observed_trips: Mapping[dt.date, set[str]] | None = None,
                ) -> tuple[list[RouteDelaySummary], list[str]]:
    """Per-route median/min/max of per-service mean delays across the period.

    A service is one (trip, day); its mean delay averages (actual - scheduled)
    departures over the stops present in both feeds.  When ``observed_trips``
    is given, only those trips count as services; routes with zero services
    are returned separately instead of being summarized.
    """
    per_route: dict[str, list[float]] = {}
    for day in sorted(actual_feeds):
        feed = actual_feeds[day]
        allowed = None if observed_trips is None else observed_trips.get(day, set())
        for tid, trip in feed.trips.items():
            if allowed is not None and tid not in allowed:
                continue
            sched_trip = scheduled.trips.get(tid)
            if sched_trip is None:
                continue
            sched_by_seq = {st.stop_sequence: st.departure_s
                            for st in sched_trip.stop_times}
            deltas = [st.departure_s - sched_by_seq[st.stop_sequence]
                      for st in trip.stop_times if st.stop_sequence in sched_by_seq]
            if deltas:
                per_route.setdefault(trip.route_id, []).append(statistics.fmean(deltas))

    summaries = []
    silent = []
    for rid in sorted(scheduled.routes):
        means = per_route.get(rid)
        if not means:
            silent.append(rid)
            continue
        summaries.append(RouteDelaySummary(
            route_id=rid,
            category=scheduled.routes[rid].category,
            service_means=tuple(means),
            median_s=statistics.median(means),
            min_s=min(means),
            max_s=max(means),
        ))
    return summaries, silent


def write_delay_summary(summaries: Sequence[RouteDelaySummary],
                        path: str | Path) -> None:
    """Write route delay summaries as CSV."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["route_id", "category", "median_s", "min_s", "max_s", "n_services"])
        for s in summaries:
            w.writerow([s.route_id, s.category, f"{s.median_s:.1f}",
                        f"{s.min_s:.1f}", f"{s.max_s:.1f}", s.n_services])
