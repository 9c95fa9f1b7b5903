"""Round-trip public-transport accessibility to schools, under scheduled and
delay-adjusted timetables: feed handling, routing, opportunity indices, and
delay-gain diagnostics."""

__version__ = "0.1.0"

from .gtfs import (  # noqa: F401
    FeedError,
    Route,
    ServiceCalendar,
    Stop,
    StopTimeEntry,
    TimetableFeed,
    Trip,
    Violation,
    active_trips,
    parse_feed,
    validate_feed,
    write_feed,
)
