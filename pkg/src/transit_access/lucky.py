"""Delay-induced accessibility gains: minutes where actual operations beat
the schedule, classified by how the gain arose.

A new_transfer event is the headline case: a delayed connector becomes
boardable from a feeder that would have missed it under the timetable.
Gains from switching routes are alternative_route; everything else (same
legs, shorter wait, or an earlier run of the same routes) is reduced_wait.
"""

from __future__ import annotations

import csv
import datetime as dt
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

from .gtfs import TimetableFeed
from .router import INFEASIBLE, Itinerary, RideLeg, TravelTimeProfile

log = logging.getLogger(__name__)

NEW_TRANSFER = "new_transfer"
ALTERNATIVE_ROUTE = "alternative_route"
REDUCED_WAIT = "reduced_wait"


@dataclass(frozen=True)
class LuckyCatchEvent:
    cell_id: str
    school_id: str
    day: dt.date
    window_start_s: int
    minute: int
    kind: str
    saved_s: int
    scheduled: Itinerary
    actual: Itinerary


def _schedule_infeasible_connection(itinerary: Itinerary,
                                    scheduled_feed: TimetableFeed,
                                    transfer_slack_s: int,
                                    transfer_walk: Mapping[tuple[str, str], int],
                                    ) -> bool:
    """True when a transfer in the itinerary could not be made under the
    scheduled times of the same two trips."""
    rides = itinerary.rides
    for feeder, connector in zip(rides, rides[1:]):
        sched_feeder = scheduled_feed.trips.get(feeder.trip_id)
        sched_conn = scheduled_feed.trips.get(connector.trip_id)
        if sched_feeder is None or sched_conn is None:
            continue
        arr = next((st.arrival_s for st in sched_feeder.stop_times
                    if st.stop_id == feeder.alight_stop), None)
        dep = next((st.departure_s for st in sched_conn.stop_times
                    if st.stop_id == connector.board_stop), None)
        if arr is None or dep is None:
            continue
        if feeder.alight_stop == connector.board_stop:
            needed = arr + transfer_slack_s
        else:
            walk = transfer_walk.get((feeder.alight_stop, connector.board_stop))
            if walk is None:
                walk = transfer_walk.get((connector.board_stop, feeder.alight_stop))
            if walk is None:
                continue
            needed = arr + walk
        if dep < needed:
            return True
    return False


def classify(scheduled_itin: Itinerary, actual_itin: Itinerary,
             scheduled_feed: TimetableFeed, transfer_slack_s: int,
             transfer_walk: Mapping[tuple[str, str], int]) -> str:
    if _schedule_infeasible_connection(actual_itin, scheduled_feed,
                                       transfer_slack_s, transfer_walk):
        return NEW_TRANSFER
    sched_routes = sorted(r.route_id for r in scheduled_itin.rides)
    actual_routes = sorted(r.route_id for r in actual_itin.rides)
    if sched_routes != actual_routes:
        return ALTERNATIVE_ROUTE
    return REDUCED_WAIT


def detect(scheduled_profile: TravelTimeProfile,
           actual_profile: TravelTimeProfile,
           scheduled_feed: TimetableFeed,
           day: dt.date,
           transfer_slack_s: int = 60,
           transfer_walk: Mapping[tuple[str, str], int] | None = None,
           ) -> list[LuckyCatchEvent]:
    """One event per departure minute where the actual duration beats the
    scheduled one.  Both profiles must carry itineraries for the same window.
    """
    if scheduled_profile.minutes != actual_profile.minutes:
        raise ValueError("profiles cover different minutes")
    if scheduled_profile.itineraries is None or actual_profile.itineraries is None:
        raise ValueError("profiles must be computed with itineraries")
    transfer_walk = transfer_walk or {}
    if scheduled_profile.direction == "outbound":
        cell_id, school_id = scheduled_profile.origin, scheduled_profile.dest
    else:
        cell_id, school_id = scheduled_profile.dest, scheduled_profile.origin
    events = []
    for i, minute in enumerate(scheduled_profile.minutes):
        sched_d = scheduled_profile.durations[i]
        actual_d = actual_profile.durations[i]
        if sched_d == INFEASIBLE or actual_d >= sched_d:
            continue
        sched_itin = scheduled_profile.itineraries[i]
        actual_itin = actual_profile.itineraries[i]
        kind = classify(sched_itin, actual_itin, scheduled_feed,
                        transfer_slack_s, transfer_walk)
        events.append(LuckyCatchEvent(
            cell_id=cell_id, school_id=school_id, day=day,
            window_start_s=scheduled_profile.window.start_s, minute=minute,
            kind=kind, saved_s=int(sched_d - actual_d),
            scheduled=sched_itin, actual=actual_itin))
    return events


@dataclass
class DistrictGainSummary:
    district: str
    events_by_kind: dict[str, int]
    cells_with_gain: int
    max_ogl_gain: float


def summarize(events: Sequence[LuckyCatchEvent],
              cell_districts: Mapping[str, str],
              median_ogl: Mapping[str, float] | None = None,
              ) -> list[DistrictGainSummary]:
    """Per-district event counts by kind plus gain attribution.

    ``median_ogl`` (cell -> median OGL) attributes the gain magnitude; cells
    with a positive median count toward cells_with_gain.
    """
    median_ogl = median_ogl or {}
    districts = sorted({cell_districts[e.cell_id] for e in events
                        if e.cell_id in cell_districts})
    out = []
    for district in districts:
        cells = {c for c, d in cell_districts.items() if d == district}
        dist_events = [e for e in events if e.cell_id in cells]
        by_kind: dict[str, int] = {}
        for e in dist_events:
            by_kind[e.kind] = by_kind.get(e.kind, 0) + 1
        gains = [median_ogl.get(c, 0.0) for c in cells]
        positive = [g for g in gains if g > 0]
        out.append(DistrictGainSummary(
            district=district,
            events_by_kind=by_kind,
            cells_with_gain=len(positive),
            max_ogl_gain=max(positive) if positive else 0.0,
        ))
    return out


def export_events(events: Sequence[LuckyCatchEvent], path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["cell_id", "school_id", "day", "window", "dep_minute",
                    "kind", "saved_s", "sched_legs", "actual_legs"])
        for e in sorted(events, key=lambda e: (e.cell_id, e.school_id,
                                               e.day.isoformat(), e.minute)):
            w.writerow([e.cell_id, e.school_id, e.day.isoformat(),
                        e.window_start_s, e.minute, e.kind, e.saved_s,
                        e.scheduled.serialize_legs(), e.actual.serialize_legs()])
