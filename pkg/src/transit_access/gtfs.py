"""Timetable feed model: parsing, validation, per-date service resolution.

Feeds are plain directories of comma-separated text files with header rows
(stops.txt, routes.txt, trips.txt, stop_times.txt, calendar.txt and/or
calendar_dates.txt).  Times are stored as integer seconds since service-day
midnight; values past 24:00:00 are kept as-is so overnight runs sort
correctly without date arithmetic.
"""

from __future__ import annotations

import csv
import datetime as dt
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Mapping

log = logging.getLogger(__name__)

STOP_KINDS = ("bus_stop", "rail_station")
ROUTE_CATEGORIES = ("regular", "local", "rail")

_WEEKDAY_COLS = ("monday", "tuesday", "wednesday", "thursday", "friday",
                 "saturday", "sunday")


class FeedError(Exception):
    """Raised when a feed directory cannot be parsed into a valid feed."""


def parse_hms(text: str) -> int:
    """Parse H:MM:SS or HH:MM:SS into seconds; hours may exceed 24."""
    parts = text.strip().split(":")
    if len(parts) != 3:
        raise ValueError(f"malformed time {text!r}")
    try:
        h, m, s = (int(p) for p in parts)
    except ValueError:
        raise ValueError(f"malformed time {text!r}") from None
    if h < 0 or not (0 <= m < 60) or not (0 <= s < 60):
        raise ValueError(f"malformed time {text!r}")
    return h * 3600 + m * 60 + s


def format_hms(seconds: int) -> str:
    if seconds < 0:
        raise ValueError(f"negative time {seconds}")
    h, rem = divmod(int(seconds), 3600)
    m, s = divmod(rem, 60)
    return f"{h:02d}:{m:02d}:{s:02d}"


def parse_date(text: str) -> dt.date:
    """Parse a GTFS YYYYMMDD date."""
    t = text.strip()
    if len(t) != 8 or not t.isdigit():
        raise ValueError(f"malformed date {text!r}")
    return dt.date(int(t[:4]), int(t[4:6]), int(t[6:8]))


@dataclass(frozen=True)
class Stop:
    stop_id: str
    name: str
    lat: float
    lon: float
    kind: str = "bus_stop"


@dataclass(frozen=True)
class Route:
    route_id: str
    name: str
    category: str = "regular"


@dataclass(frozen=True)
class StopTimeEntry:
    stop_id: str
    stop_sequence: int
    arrival_s: int
    departure_s: int


@dataclass(frozen=True)
class Trip:
    trip_id: str
    route_id: str
    service_id: str
    stop_times: tuple[StopTimeEntry, ...]


@dataclass(frozen=True)
class ServiceCalendar:
    """Weekly mask plus exception dates; (service_id, date) queries are
    deterministic: removals beat additions beat the mask."""

    service_id: str
    weekdays: frozenset[int] = frozenset()  # 0=Monday .. 6=Sunday
    start: dt.date | None = None
    end: dt.date | None = None
    added: frozenset[dt.date] = frozenset()
    removed: frozenset[dt.date] = frozenset()

    def active_on(self, day: dt.date) -> bool:
        if day in self.removed:
            return False
        if day in self.added:
            return True
        if self.start is None or self.end is None:
            return False
        return self.start <= day <= self.end and day.weekday() in self.weekdays

    def date_range(self) -> tuple[dt.date, dt.date] | None:
        dates = set(self.added)
        if self.start is not None and self.end is not None:
            dates.update((self.start, self.end))
        if not dates:
            return None
        return min(dates), max(dates)


@dataclass(frozen=True)
class TimetableFeed:
    """One network variant: scheduled, or actual operations for a given day."""

    stops: Mapping[str, Stop]
    routes: Mapping[str, Route]
    trips: Mapping[str, Trip]
    calendars: Mapping[str, ServiceCalendar]
    variant: str = "scheduled"  # "scheduled" or "actual"
    day: dt.date | None = None  # service day for actual variants

    def variant_tag(self) -> str:
        if self.variant == "scheduled":
            return "scheduled"
        return f"actual:{self.day.isoformat()}"


@dataclass(frozen=True)
class Violation:
    """One broken feed invariant; violations are data, not failures."""

    entity: str
    rule: str
    detail: str

    def __str__(self) -> str:
        return f"{self.entity}: {self.rule} ({self.detail})"


# --------------------------------------------------------------------------
# Parsing


def _read_rows(path: Path, required: Iterable[str]) -> list[tuple[int, dict]]:
    """Read a CSV file, returning (line number, row dict) pairs."""
    if not path.exists():
        raise FeedError(f"missing file: {path.name}")
    rows = []
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise FeedError(f"{path.name}: empty file, expected a header row")
        header = [h.strip() for h in reader.fieldnames]
        missing = [c for c in required if c not in header]
        if missing:
            raise FeedError(f"{path.name}: missing column(s) {', '.join(missing)}")
        for row in reader:
            clean = {(k.strip() if k else k): (v.strip() if isinstance(v, str) else v)
                     for k, v in row.items()}
            rows.append((reader.line_num, clean))
    return rows


def _field(row: dict, name: str, file: str, line: int) -> str:
    value = row.get(name)
    if value is None or value == "":
        raise FeedError(f"{file}:{line}: empty field {name!r}")
    return value


def _float_field(row: dict, name: str, file: str, line: int) -> float:
    raw = _field(row, name, file, line)
    try:
        return float(raw)
    except ValueError:
        raise FeedError(f"{file}:{line}: field {name!r}: not a number: {raw!r}") from None


def _time_field(row: dict, name: str, file: str, line: int) -> int:
    raw = _field(row, name, file, line)
    try:
        return parse_hms(raw)
    except ValueError:
        raise FeedError(f"{file}:{line}: field {name!r}: malformed time {raw!r}") from None


def parse_feed(directory: str | Path) -> TimetableFeed:
    """Parse and validate a feed directory.

    Raises FeedError on the first structural problem (missing file, malformed
    value) with file, line, and field context, or with the full violation
    list when the assembled feed breaks referential or ordering invariants.
    Unknown columns and unknown files are ignored; frequencies.txt is
    rejected because this model is trip-based.
    """
    root = Path(directory)
    if not root.is_dir():
        raise FeedError(f"not a feed directory: {root}")
    if (root / "frequencies.txt").exists():
        raise FeedError("frequencies.txt present: frequencies-based trips are "
                        "not supported, expand them to timetabled trips first")

    stops: dict[str, Stop] = {}
    kind_col_seen = False
    for line, row in _read_rows(root / "stops.txt",
                                ["stop_id", "stop_name", "stop_lat", "stop_lon"]):
        sid = _field(row, "stop_id", "stops.txt", line)
        if sid in stops:
            raise FeedError(f"stops.txt:{line}: duplicate stop_id {sid!r}")
        kind = row.get("ext_stop_kind") or "bus_stop"
        if row.get("ext_stop_kind"):
            kind_col_seen = True
        if kind not in STOP_KINDS:
            raise FeedError(f"stops.txt:{line}: field 'ext_stop_kind': "
                            f"unknown stop kind {kind!r}")
        stops[sid] = Stop(
            stop_id=sid,
            name=_field(row, "stop_name", "stops.txt", line),
            lat=_float_field(row, "stop_lat", "stops.txt", line),
            lon=_float_field(row, "stop_lon", "stops.txt", line),
            kind=kind,
        )
    if stops and not kind_col_seen:
        log.warning("stops.txt: no ext_stop_kind column, defaulting every stop "
                    "to bus_stop (access caps treat stations differently)")

    routes: dict[str, Route] = {}
    for line, row in _read_rows(root / "routes.txt", ["route_id"]):
        rid = _field(row, "route_id", "routes.txt", line)
        if rid in routes:
            raise FeedError(f"routes.txt:{line}: duplicate route_id {rid!r}")
        category = row.get("ext_category") or "regular"
        if category not in ROUTE_CATEGORIES:
            raise FeedError(f"routes.txt:{line}: field 'ext_category': "
                            f"unknown category {category!r}")
        routes[rid] = Route(rid, row.get("route_short_name") or rid, category)

    calendars: dict[str, ServiceCalendar] = {}
    cal_path = root / "calendar.txt"
    dates_path = root / "calendar_dates.txt"
    if not cal_path.exists() and not dates_path.exists():
        raise FeedError("missing file: calendar.txt (or calendar_dates.txt)")
    if cal_path.exists():
        for line, row in _read_rows(cal_path, ["service_id", "start_date", "end_date",
                                               *_WEEKDAY_COLS]):
            sid = _field(row, "service_id", "calendar.txt", line)
            if sid in calendars:
                raise FeedError(f"calendar.txt:{line}: duplicate service_id {sid!r}")
            days = []
            for i, col in enumerate(_WEEKDAY_COLS):
                flag = _field(row, col, "calendar.txt", line)
                if flag not in ("0", "1"):
                    raise FeedError(f"calendar.txt:{line}: field {col!r}: "
                                    f"expected 0 or 1, got {flag!r}")
                if flag == "1":
                    days.append(i)
            try:
                start = parse_date(_field(row, "start_date", "calendar.txt", line))
                end = parse_date(_field(row, "end_date", "calendar.txt", line))
            except ValueError as exc:
                raise FeedError(f"calendar.txt:{line}: {exc}") from None
            calendars[sid] = ServiceCalendar(sid, frozenset(days), start, end)
    if dates_path.exists():
        for line, row in _read_rows(dates_path, ["service_id", "date", "exception_type"]):
            sid = _field(row, "service_id", "calendar_dates.txt", line)
            try:
                day = parse_date(_field(row, "date", "calendar_dates.txt", line))
            except ValueError as exc:
                raise FeedError(f"calendar_dates.txt:{line}: {exc}") from None
            etype = _field(row, "exception_type", "calendar_dates.txt", line)
            if etype not in ("1", "2"):
                raise FeedError(f"calendar_dates.txt:{line}: field 'exception_type': "
                                f"expected 1 or 2, got {etype!r}")
            cal = calendars.get(sid) or ServiceCalendar(sid)
            if etype == "1":
                cal = replace(cal, added=cal.added | {day})
            else:
                cal = replace(cal, removed=cal.removed | {day})
            calendars[sid] = cal

    trip_rows: dict[str, tuple[int, str, str]] = {}
    for line, row in _read_rows(root / "trips.txt", ["route_id", "service_id", "trip_id"]):
        tid = _field(row, "trip_id", "trips.txt", line)
        if tid in trip_rows:
            raise FeedError(f"trips.txt:{line}: duplicate trip_id {tid!r}")
        trip_rows[tid] = (line, _field(row, "route_id", "trips.txt", line),
                          _field(row, "service_id", "trips.txt", line))

    stop_times: dict[str, list[tuple[int, StopTimeEntry]]] = {tid: [] for tid in trip_rows}
    for line, row in _read_rows(root / "stop_times.txt",
                                ["trip_id", "arrival_time", "departure_time",
                                 "stop_id", "stop_sequence"]):
        tid = _field(row, "trip_id", "stop_times.txt", line)
        if tid not in stop_times:
            raise FeedError(f"stop_times.txt:{line}: field 'trip_id': "
                            f"unresolved trip_id {tid!r}")
        seq_raw = _field(row, "stop_sequence", "stop_times.txt", line)
        try:
            seq = int(seq_raw)
        except ValueError:
            raise FeedError(f"stop_times.txt:{line}: field 'stop_sequence': "
                            f"not an integer: {seq_raw!r}") from None
        entry = StopTimeEntry(
            stop_id=_field(row, "stop_id", "stop_times.txt", line),
            stop_sequence=seq,
            arrival_s=_time_field(row, "arrival_time", "stop_times.txt", line),
            departure_s=_time_field(row, "departure_time", "stop_times.txt", line),
        )
        stop_times[tid].append((line, entry))

    trips: dict[str, Trip] = {}
    st_lines: dict[str, int] = {}
    for tid, (line, rid, sid) in trip_rows.items():
        entries = sorted(stop_times[tid], key=lambda pair: pair[1].stop_sequence)
        trips[tid] = Trip(tid, rid, sid, tuple(e for _, e in entries))
        st_lines[tid] = entries[0][0] if entries else line

    feed = TimetableFeed(stops=stops, routes=routes, trips=trips, calendars=calendars)
    violations = validate_feed(feed)
    if violations:
        lines = []
        for v in violations:
            loc = ""
            if v.entity.startswith("trip:"):
                tid = v.entity.split(":", 1)[1]
                if tid in trip_rows:
                    src = "stop_times.txt" if "stop" in v.rule or "monotone" in v.rule \
                        else "trips.txt"
                    src_line = st_lines[tid] if src == "stop_times.txt" else trip_rows[tid][0]
                    loc = f" [{src}:{src_line}]"
            lines.append(f"{v}{loc}")
        raise FeedError("invalid feed:\n  " + "\n  ".join(lines))
    return feed


# --------------------------------------------------------------------------
# Validation


def validate_feed(feed: TimetableFeed) -> list[Violation]:
    """Check every type invariant; an empty list means the feed is valid."""
    out: list[Violation] = []
    for stop in feed.stops.values():
        if not (-90.0 <= stop.lat <= 90.0) or not (-180.0 <= stop.lon <= 180.0):
            out.append(Violation(f"stop:{stop.stop_id}", "coordinates out of range",
                                 f"lat={stop.lat} lon={stop.lon}"))
        if stop.kind not in STOP_KINDS:
            out.append(Violation(f"stop:{stop.stop_id}", "unknown stop kind", stop.kind))
    for route in feed.routes.values():
        if route.category not in ROUTE_CATEGORIES:
            out.append(Violation(f"route:{route.route_id}", "unknown category",
                                 route.category))
    for trip in feed.trips.values():
        ent = f"trip:{trip.trip_id}"
        if trip.route_id not in feed.routes:
            out.append(Violation(ent, "unresolved route_id", trip.route_id))
        if trip.service_id not in feed.calendars:
            out.append(Violation(ent, "unresolved service_id", trip.service_id))
        if len(trip.stop_times) < 2:
            out.append(Violation(ent, "fewer than 2 stop_times",
                                 f"{len(trip.stop_times)} entries"))
        prev: StopTimeEntry | None = None
        for st in trip.stop_times:
            if st.stop_id not in feed.stops:
                out.append(Violation(ent, "unresolved stop_id", st.stop_id))
            if st.arrival_s < 0 or st.departure_s < 0:
                out.append(Violation(ent, "negative stop time",
                                     f"sequence {st.stop_sequence}"))
            if st.departure_s < st.arrival_s:
                out.append(Violation(ent, "departure before arrival",
                                     f"sequence {st.stop_sequence}"))
            if prev is not None:
                if st.stop_sequence <= prev.stop_sequence:
                    out.append(Violation(ent, "stop_sequence not increasing",
                                         f"{prev.stop_sequence} -> {st.stop_sequence}"))
                if st.arrival_s < prev.departure_s:
                    out.append(Violation(
                        ent, "non-monotone stop_times",
                        f"departs {format_hms(prev.departure_s)} at sequence "
                        f"{prev.stop_sequence}, arrives {format_hms(st.arrival_s)} "
                        f"at sequence {st.stop_sequence}"))
            prev = st
    return out


# --------------------------------------------------------------------------
# Service resolution


def active_trips(feed: TimetableFeed, day: dt.date) -> set[str]:
    """Trip ids whose service calendar (mask plus exceptions) covers the day."""
    covered = False
    for cal in feed.calendars.values():
        rng = cal.date_range()
        if rng is not None and rng[0] <= day <= rng[1]:
            covered = True
            break
    if not covered:
        log.warning("date %s is outside all calendar ranges", day.isoformat())
        return set()
    active_services = {sid for sid, cal in feed.calendars.items() if cal.active_on(day)}
    return {tid for tid, trip in feed.trips.items() if trip.service_id in active_services}


# --------------------------------------------------------------------------
# Writing


def write_feed(feed: TimetableFeed, directory: str | Path) -> None:
    """Write the feed back to GTFS text files (inverse of parse_feed on the
    modeled fields)."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)

    with open(root / "stops.txt", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["stop_id", "stop_name", "stop_lat", "stop_lon", "ext_stop_kind"])
        for stop in feed.stops.values():
            w.writerow([stop.stop_id, stop.name, repr(stop.lat), repr(stop.lon),
                        stop.kind])

    with open(root / "routes.txt", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["route_id", "route_short_name", "ext_category"])
        for route in feed.routes.values():
            w.writerow([route.route_id, route.name, route.category])

    with open(root / "trips.txt", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["route_id", "service_id", "trip_id"])
        for trip in feed.trips.values():
            w.writerow([trip.route_id, trip.service_id, trip.trip_id])

    with open(root / "stop_times.txt", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["trip_id", "arrival_time", "departure_time", "stop_id",
                    "stop_sequence"])
        for trip in feed.trips.values():
            for st in trip.stop_times:
                w.writerow([trip.trip_id, format_hms(st.arrival_s),
                            format_hms(st.departure_s), st.stop_id, st.stop_sequence])

    weekly = [c for c in feed.calendars.values() if c.start is not None]
    if weekly or not feed.calendars:
        with open(root / "calendar.txt", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["service_id", *_WEEKDAY_COLS, "start_date", "end_date"])
            for cal in weekly:
                flags = ["1" if i in cal.weekdays else "0" for i in range(7)]
                w.writerow([cal.service_id, *flags,
                            cal.start.strftime("%Y%m%d"), cal.end.strftime("%Y%m%d")])

    exceptions = [(c.service_id, d, "1") for c in feed.calendars.values() for d in sorted(c.added)]
    exceptions += [(c.service_id, d, "2") for c in feed.calendars.values() for d in sorted(c.removed)]
    if exceptions or not weekly:
        with open(root / "calendar_dates.txt", "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["service_id", "date", "exception_type"])
            for sid, day, etype in sorted(exceptions):
                w.writerow([sid, day.strftime("%Y%m%d"), etype])
