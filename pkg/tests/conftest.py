import csv
from pathlib import Path

import pytest


def write_csv(path: Path, header: list[str], rows: list[list]) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


def write_gtfs(root: Path,
               stops: list[list],
               routes: list[list],
               trips: list[list],
               stop_times: list[list],
               calendar: list[list] | None = None,
               calendar_dates: list[list] | None = None) -> Path:
    """Write a feed directory; rows follow the column order below."""
    root.mkdir(parents=True, exist_ok=True)
    write_csv(root / "stops.txt",
              ["stop_id", "stop_name", "stop_lat", "stop_lon", "ext_stop_kind"],
              stops)
    write_csv(root / "routes.txt",
              ["route_id", "route_short_name", "ext_category"], routes)
    write_csv(root / "trips.txt", ["route_id", "service_id", "trip_id"], trips)
    write_csv(root / "stop_times.txt",
              ["trip_id", "arrival_time", "departure_time", "stop_id",
               "stop_sequence"], stop_times)
    if calendar is not None:
        write_csv(root / "calendar.txt",
                  ["service_id", "monday", "tuesday", "wednesday", "thursday",
                   "friday", "saturday", "sunday", "start_date", "end_date"],
                  calendar)
    if calendar_dates is not None:
        write_csv(root / "calendar_dates.txt",
                  ["service_id", "date", "exception_type"], calendar_dates)
    return root


WEEKDAYS = ["1", "1", "1", "1", "1", "0", "0"]


def minimal_feed_rows():
    """One route, one trip, two stops, 08:00 -> 08:10."""
    return dict(
        stops=[["A", "Stop A", "36.20", "137.96", "bus_stop"],
               ["B", "Stop B", "36.21", "137.97", "bus_stop"]],
        routes=[["R1", "Route 1", "regular"]],
        trips=[["R1", "WK", "T1"]],
        stop_times=[["T1", "08:00:00", "08:00:00", "A", "1"],
                    ["T1", "08:10:00", "08:10:00", "B", "2"]],
        calendar=[["WK", *WEEKDAYS, "20251201", "20260131"]],
    )


@pytest.fixture
def minimal_feed_dir(tmp_path):
    return write_gtfs(tmp_path / "feed", **minimal_feed_rows())
