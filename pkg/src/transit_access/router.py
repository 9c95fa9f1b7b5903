"""Door-to-door travel-time profiles with at most one transfer.

Profiles are computed by a round-based timetable scan (two rounds, one per
boarding) over departure minutes in descending order; labels persist between
minutes because an earlier departure can always catch everything a later one
can.  Representative window values are nearest-rank percentiles, actual
operations times are conditioned on the scheduled representative departure
minute, and round trips combine window values with configured departure
shares.
"""

from __future__ import annotations

import datetime as dt
import logging
import math
from bisect import bisect_left
from dataclasses import dataclass, field
from typing import Mapping, Sequence

from .access import AccessTables, CYCLE, WALK
from .gtfs import TimetableFeed, active_trips

log = logging.getLogger(__name__)

INFEASIBLE = math.inf   # no valid trip for a departure minute
UNREACHABLE = math.inf  # no valid round trip for an OD pair

MORNING_START_S = 6 * 3600
EVENING_START_S = 16 * 3600
DEADLINE_S = 8 * 3600 + 40 * 60  # class starts 08:40
WINDOW_S = 1800

# Morning departure shares per 30-minute window, 06:00-08:30.
MORNING_SHARES = (0.041, 0.041, 0.396, 0.396, 0.126)


@dataclass(frozen=True)
class TimeWindow:
    start_s: int
    end_s: int
    share: float

    def __post_init__(self):
        if self.end_s - self.start_s != WINDOW_S:
            raise ValueError(f"window must span {WINDOW_S} s, got "
                             f"{self.end_s - self.start_s}")

    def minutes(self) -> range:
        return range(self.start_s, self.end_s, 60)


def make_windows(start_s: int, shares: Sequence[float]) -> list[TimeWindow]:
    """Consecutive 30-minute windows with the given shares (must sum to 1)."""
    total = sum(shares)
    if abs(total - 1.0) > 1e-9:
        raise ValueError(f"window shares sum to {total!r}, expected 1")
    return [TimeWindow(start_s + i * WINDOW_S, start_s + (i + 1) * WINDOW_S, sh)
            for i, sh in enumerate(shares)]


def default_morning_windows() -> list[TimeWindow]:
    return make_windows(MORNING_START_S, MORNING_SHARES)


def default_evening_windows() -> list[TimeWindow]:
    return make_windows(EVENING_START_S, [0.125] * 8)


# --------------------------------------------------------------------------
# Itineraries


@dataclass(frozen=True)
class AccessLeg:
    mode: str
    from_id: str
    to_stop: str
    start_s: int
    end_s: int


@dataclass(frozen=True)
class RideLeg:
    trip_id: str
    route_id: str
    board_stop: str
    alight_stop: str
    board_s: int
    alight_s: int


@dataclass(frozen=True)
class TransferLeg:
    from_stop: str
    to_stop: str
    start_s: int
    end_s: int


@dataclass(frozen=True)
class EgressLeg:
    mode: str
    from_stop: str
    to_id: str
    start_s: int
    end_s: int


Leg = AccessLeg | RideLeg | TransferLeg | EgressLeg


@dataclass(frozen=True)
class Itinerary:
    legs: tuple[Leg, ...]
    departure_s: int
    arrival_s: int

    @property
    def rides(self) -> tuple[RideLeg, ...]:
        return tuple(l for l in self.legs if isinstance(l, RideLeg))

    @property
    def access_mode(self) -> str | None:
        for leg in self.legs:
            if isinstance(leg, AccessLeg):
                return leg.mode
        return None

    def cycle_station(self) -> str | None:
        """Station reached or left by a cycle leg, if any."""
        for leg in self.legs:
            if isinstance(leg, AccessLeg) and leg.mode == CYCLE:
                return leg.to_stop
            if isinstance(leg, EgressLeg) and leg.mode == CYCLE:
                return leg.from_stop
        return None

    def serialize_legs(self) -> str:
        parts = []
        for leg in self.legs:
            if isinstance(leg, AccessLeg):
                parts.append(f"{leg.mode}:{leg.from_id}→{leg.to_stop}@{leg.end_s}")
            elif isinstance(leg, RideLeg):
                parts.append(f"ride[{leg.trip_id}]:{leg.board_stop}→"
                             f"{leg.alight_stop}@{leg.alight_s}")
            elif isinstance(leg, TransferLeg):
                parts.append(f"transfer:{leg.from_stop}→{leg.to_stop}@{leg.end_s}")
            else:
                parts.append(f"{leg.mode}:{leg.from_stop}→{leg.to_id}@{leg.end_s}")
        return "|".join(parts)


@dataclass
class TravelTimeProfile:
    """Per-minute door-to-door durations for one OD pair and direction."""

    origin: str
    dest: str
    direction: str  # outbound | return
    variant: str
    window: TimeWindow
    minutes: list[int]
    durations: list[float]  # seconds, INFEASIBLE where no valid trip
    itineraries: list[Itinerary | None] | None = None

    def duration_at(self, minute: int) -> float:
        try:
            return self.durations[self.minutes.index(minute)]
        except ValueError:
            raise ValueError(f"minute {minute} outside profile window") from None

    def finite(self) -> list[tuple[int, float]]:
        return [(m, d) for m, d in zip(self.minutes, self.durations)
                if d != INFEASIBLE]


@dataclass(frozen=True)
class RoutingConfig:
    transfer_slack_s: int = 60
    deadline_s: int | None = DEADLINE_S  # outbound arrivals only
    percentile: str = "p25"


@dataclass(frozen=True)
class ModeRules:
    """Cycle-leg policy at the cell end of an itinerary.

    ``allowed`` considers cycling to any station alongside walking;
    ``forbidden`` drops cycle legs; ``required`` forces the cell-end leg to
    be a cycle leg at ``station`` (the paired return of a cycle-and-ride
    outbound, which must reuse the same station).
    """

    cycle: str = "allowed"  # allowed | forbidden | required
    station: str | None = None

    def __post_init__(self):
        if self.cycle not in ("allowed", "forbidden", "required"):
            raise ValueError(f"unknown cycle rule {self.cycle!r}")
        if self.cycle == "required" and not self.station:
            raise ValueError("required cycle rule needs a station")


# --------------------------------------------------------------------------
# Transit network preparation


class _Line:
    """Trips sharing one stop sequence, time-sorted and non-overtaking."""

    __slots__ = ("route_id", "stops", "trip_ids", "dep", "arr", "dep_cols")

    def __init__(self, route_id: str, stops: list[int], trip_ids: list[str],
                 dep: list[list[int]], arr: list[list[int]]):
        self.route_id = route_id
        self.stops = stops
        self.trip_ids = trip_ids
        self.dep = dep
        self.arr = arr
        n = len(stops)
        self.dep_cols = [[dep[t][p] for t in range(len(trip_ids))] for p in range(n)]


class TransitNetwork:
    """Indexed, immutable view of the trips active on one day."""

    def __init__(self, stop_ids: list[str], lines: list[_Line],
                 stop_lines: list[list[tuple[int, int]]],
                 transfers: list[list[tuple[int, int]]]):
        self.stop_ids = stop_ids
        self.stop_index = {s: i for i, s in enumerate(stop_ids)}
        self.lines = lines
        self.stop_lines = stop_lines
        self.transfers = transfers

    @classmethod
    def build(cls, feed: TimetableFeed, day: dt.date,
              tables: AccessTables) -> "TransitNetwork":
        stop_ids = sorted(feed.stops)
        index = {s: i for i, s in enumerate(stop_ids)}

        groups: dict[tuple[str, tuple[str, ...]], list] = {}
        for tid in sorted(active_trips(feed, day)):
            trip = feed.trips[tid]
            key = (trip.route_id, tuple(st.stop_id for st in trip.stop_times))
            groups.setdefault(key, []).append(trip)

        lines: list[_Line] = []
        for (route_id, seq), trips in sorted(groups.items()):
            trips.sort(key=lambda t: (t.stop_times[0].departure_s, t.trip_id))
            # Split overtaking trips into separate lines so that within a
            # line a later trip is never earlier at any stop.
            chains: list[list] = []
            for trip in trips:
                deps = [st.departure_s for st in trip.stop_times]
                arrs = [st.arrival_s for st in trip.stop_times]
                placed = False
                for chain in chains:
                    last = chain[-1]
                    if all(d >= ld and a >= la for d, a, ld, la
                           in zip(deps, arrs, last[1], last[2])):
                        chain.append((trip, deps, arrs))
                        placed = True
                        break
                if not placed:
                    chains.append([(trip, deps, arrs)])
            stop_idx = [index[s] for s in seq]
            for chain in chains:
                lines.append(_Line(
                    route_id=route_id,
                    stops=stop_idx,
                    trip_ids=[t.trip_id for t, _, _ in chain],
                    dep=[d for _, d, _ in chain],
                    arr=[a for _, _, a in chain],
                ))

        stop_lines: list[list[tuple[int, int]]] = [[] for _ in stop_ids]
        for li, line in enumerate(lines):
            for pos, s in enumerate(line.stops):
                if pos + 1 < len(line.stops):  # boarding at the last stop is useless
                    stop_lines[s].append((li, pos))

        transfers: list[list[tuple[int, int]]] = [[] for _ in stop_ids]
        for (a, b), seconds in tables.transfer_walk.entries.items():
            ia, ib = index.get(a), index.get(b)
            if ia is not None and ib is not None:
                transfers[ia].append((ib, seconds))
        return cls(stop_ids, lines, stop_lines, transfers)


# --------------------------------------------------------------------------
# Profile scanning


class ProfileScanner:
    """Label state for one origin, advanced over descending departure minutes.

    Labels persist between minutes: anything catchable when departing later
    is catchable when departing earlier, so arrival labels only improve as
    the scan moves toward earlier minutes.
    """

    def __init__(self, net: TransitNetwork,
                 access: Sequence[tuple[int, str, int]],
                 transfer_slack_s: int):
        self.net = net
        self.access = access  # (stop index, mode, duration seconds)
        self.slack = transfer_slack_s
        n = len(net.stop_ids)
        inf = INFEASIBLE
        self.tau_acc = [inf] * n
        self.acc_meta: list[tuple[str, int] | None] = [None] * n
        self.tau1 = [inf] * n
        self.p1: list[tuple | None] = [None] * n
        self.tau_ready = [inf] * n
        self.p_ready: list[tuple | None] = [None] * n
        self.tau2 = [inf] * n
        self.p2: list[tuple | None] = [None] * n

    def advance(self, minute: int) -> tuple[list[int], list[int]]:
        """Relax labels for one departure minute; returns stops whose round-1
        and round-2 arrivals improved."""
        net = self.net
        tau_acc, tau1, tau2 = self.tau_acc, self.tau1, self.tau2
        improved0 = []
        for stop, mode, seconds in self.access:
            t = minute + seconds
            if t < tau_acc[stop]:
                tau_acc[stop] = t
                self.acc_meta[stop] = (mode, seconds)
                improved0.append(stop)

        improved1 = self._scan_round(improved0, tau_acc, tau1, self.p1)

        improved_ready = []
        for s in improved1:
            base = tau1[s]
            t = base + self.slack
            if t < self.tau_ready[s]:
                self.tau_ready[s] = t
                self.p_ready[s] = (s, self.slack)
                improved_ready.append(s)
            for s2, walk_s in net.transfers[s]:
                t = base + walk_s
                if t < self.tau_ready[s2]:
                    self.tau_ready[s2] = t
                    self.p_ready[s2] = (s, walk_s)
                    improved_ready.append(s2)

        improved2 = self._scan_round(improved_ready, self.tau_ready, tau2, self.p2)
        return improved1, improved2

    def _scan_round(self, marked: list[int], board_tau: list[float],
                    arr_tau: list[float], parents: list[tuple | None]) -> list[int]:
        net = self.net
        queue: dict[int, int] = {}
        for stop in marked:
            for li, pos in net.stop_lines[stop]:
                prev = queue.get(li)
                if prev is None or pos < prev:
                    queue[li] = pos
        improved: list[int] = []
        for li, pos0 in queue.items():
            line = net.lines[li]
            stops, dep_cols, arr_rows = line.stops, line.dep_cols, line.arr
            n_trips = len(line.trip_ids)
            trip_i = -1
            board_pos = -1
            for pos in range(pos0, len(stops)):
                s = stops[pos]
                if trip_i >= 0:
                    a = arr_rows[trip_i][pos]
                    if a < arr_tau[s]:
                        arr_tau[s] = a
                        parents[s] = (li, trip_i, board_pos, pos)
                        improved.append(s)
                t = board_tau[s]
                if t != INFEASIBLE and pos + 1 < len(stops):
                    ti = bisect_left(dep_cols[pos], t)
                    if ti < n_trips and (trip_i < 0 or ti < trip_i):
                        trip_i = ti
                        board_pos = pos
        return improved

    # -- evaluation ---------------------------------------------------------

    def best_arrival(self, egress: Sequence[tuple[int, str, int]]
                     ) -> tuple[float, tuple | None]:
        """Earliest transit arrival at the destination over its egress stops."""
        best = INFEASIBLE
        label = None
        tau1, tau2 = self.tau1, self.tau2
        for stop, mode, seconds in egress:
            t = tau1[stop]
            if t + seconds < best:
                best = t + seconds
                label = (1, stop, mode, seconds)
            t = tau2[stop]
            if t + seconds < best:
                best = t + seconds
                label = (2, stop, mode, seconds)
        return best, label

    def evaluate(self, minute: int, egress: Sequence[tuple[int, str, int]],
                 walk_only_s: int | None, deadline_s: int | None
                 ) -> tuple[float, tuple | None]:
        """Best duration for a departure minute; label None means walk-only."""
        arrival, label = self.best_arrival(egress)
        duration = INFEASIBLE
        choice: tuple | None = None
        if arrival != INFEASIBLE and (deadline_s is None or arrival <= deadline_s):
            duration = arrival - minute
            choice = label
        if walk_only_s is not None and walk_only_s < duration \
                and (deadline_s is None or minute + walk_only_s <= deadline_s):
            duration = walk_only_s
            choice = ("walk_only", walk_only_s)
        return duration, choice

    def access_of(self, choice: tuple) -> tuple[str, str | None]:
        """(access mode, boarding stop id) behind an evaluation choice."""
        if choice[0] == "walk_only":
            return WALK, None
        rnd, stop, _, _ = choice
        if rnd == 2:
            li2, _, bpos2, _ = self.p2[stop]
            board2 = self.net.lines[li2].stops[bpos2]
            stop = self.p_ready[board2][0]  # where the first ride alighted
        li1, _, bpos1, _ = self.p1[stop]
        board1 = self.net.lines[li1].stops[bpos1]
        mode, _ = self.acc_meta[board1]
        return mode, self.net.stop_ids[board1]

    def reconstruct(self, minute: int, choice: tuple, origin_id: str,
                    dest_id: str) -> Itinerary:
        """Build the itinerary behind an evaluation choice, valid for this
        minute (labels are live, so call right after advance())."""
        net = self.net
        if choice[0] == "walk_only":
            _, seconds = choice
            leg = AccessLeg(WALK, origin_id, dest_id, minute, minute + seconds)
            return Itinerary((leg,), minute, minute + seconds)

        rnd, stop, egress_mode, egress_s = choice
        legs: list[Leg] = []
        if rnd == 2:
            li2, ti2, bpos2, apos2 = self.p2[stop]
            line2 = net.lines[li2]
            board2 = line2.stops[bpos2]
            from_stop, walk_s = self.p_ready[board2]
            li1, ti1, bpos1, apos1 = self.p1[from_stop]
            line1 = net.lines[li1]
            ride1 = RideLeg(line1.trip_ids[ti1], line1.route_id,
                            net.stop_ids[line1.stops[bpos1]],
                            net.stop_ids[from_stop],
                            line1.dep[ti1][bpos1], line1.arr[ti1][apos1])
            ride2 = RideLeg(line2.trip_ids[ti2], line2.route_id,
                            net.stop_ids[board2],
                            net.stop_ids[line2.stops[apos2]],
                            line2.dep[ti2][bpos2], line2.arr[ti2][apos2])
            board1 = line1.stops[bpos1]
            mode, acc_s = self.acc_meta[board1]
            legs.append(AccessLeg(mode, origin_id, net.stop_ids[board1],
                                  minute, minute + acc_s))
            legs.append(ride1)
            legs.append(TransferLeg(net.stop_ids[from_stop], net.stop_ids[board2],
                                    ride1.alight_s, ride1.alight_s + walk_s))
            legs.append(ride2)
            alight = ride2.alight_stop
            arrival = ride2.alight_s + egress_s
        else:
            li1, ti1, bpos1, apos1 = self.p1[stop]
            line1 = net.lines[li1]
            ride1 = RideLeg(line1.trip_ids[ti1], line1.route_id,
                            net.stop_ids[line1.stops[bpos1]],
                            net.stop_ids[line1.stops[apos1]],
                            line1.dep[ti1][bpos1], line1.arr[ti1][apos1])
            board1 = line1.stops[bpos1]
            mode, acc_s = self.acc_meta[board1]
            legs.append(AccessLeg(mode, origin_id, net.stop_ids[board1],
                                  minute, minute + acc_s))
            legs.append(ride1)
            alight = ride1.alight_stop
            arrival = ride1.alight_s + egress_s
        legs.append(EgressLeg(egress_mode, alight, dest_id,
                              arrival - egress_s, arrival))
        itinerary = Itinerary(tuple(legs), minute, arrival)
        assert len(itinerary.rides) <= 2, "transfer cap exceeded"
        return itinerary


# --------------------------------------------------------------------------
# Access assembly


def _outbound_access(tables: AccessTables, cell_id: str,
                     rules: ModeRules) -> list[tuple[str, str, int]]:
    """(stop id, mode, seconds) entries for leaving a cell."""
    out = [(stop, WALK, s) for stop, s in tables.cell_bus_walk.targets_of(cell_id)]
    out += [(stop, WALK, s) for stop, s in tables.cell_rail_walk.targets_of(cell_id)]
    if rules.cycle != "forbidden":
        for station, s in tables.cell_rail_cycle.targets_of(cell_id):
            if rules.station is None or station == rules.station:
                out.append((station, CYCLE, s))
    if rules.cycle == "required":
        out = [(stop, mode, s) for stop, mode, s in out if mode == CYCLE]
    return out


def _school_access(tables: AccessTables, school_id: str) -> list[tuple[str, str, int]]:
    out = [(stop, WALK, s) for stop, s in tables.school_bus_walk.targets_of(school_id)]
    out += [(stop, WALK, s) for stop, s in tables.school_rail_walk.targets_of(school_id)]
    return out


def _dedupe_access(entries: list[tuple[str, str, int]]
                   ) -> list[tuple[str, str, int]]:
    """Keep the fastest entry per stop; ties prefer walking (no bicycle to
    park) so same-station constraints are only created when cycling wins."""
    best: dict[str, tuple[str, int]] = {}
    for stop, mode, seconds in entries:
        kept = best.get(stop)
        if kept is None or seconds < kept[1] or \
                (seconds == kept[1] and kept[0] == CYCLE and mode == WALK):
            best[stop] = (mode, seconds)
    return [(stop, mode, s) for stop, (mode, s) in sorted(best.items())]


def _index_access(net: TransitNetwork, entries: list[tuple[str, str, int]]
                  ) -> list[tuple[int, str, int]]:
    return [(net.stop_index[stop], mode, s) for stop, mode, s in entries
            if stop in net.stop_index]


def _walk_only(tables: AccessTables, cell_id: str, school_id: str,
               rules: ModeRules) -> int | None:
    if rules.cycle == "required":
        return None  # the bicycle is parked at a station and must be fetched
    return tables.cell_school_walk.duration(cell_id, school_id)


# --------------------------------------------------------------------------
# Profile API


def profile(feed: TimetableFeed,
            tables: AccessTables,
            cell_id: str,
            school_id: str,
            direction: str,
            window: TimeWindow,
            day: dt.date,
            config: RoutingConfig = RoutingConfig(),
            rules: ModeRules = ModeRules(),
            net: TransitNetwork | None = None,
            with_itineraries: bool = True) -> TravelTimeProfile:
    """Per-minute best durations (and itineraries) for one OD and window.

    Outbound is cell to school with the morning deadline applied; return is
    school to cell with no deadline.  ``rules`` constrains cycle legs at the
    cell end (the return of a cycle-and-ride outbound must reuse its
    station).
    """
    if direction not in ("outbound", "return"):
        raise ValueError(f"unknown direction {direction!r}")
    if net is None:
        net = TransitNetwork.build(feed, day, tables)

    if direction == "outbound":
        access = _dedupe_access(_outbound_access(tables, cell_id, rules))
        egress = _school_access(tables, school_id)
        origin, dest = cell_id, school_id
        deadline = config.deadline_s
    else:
        access = _dedupe_access(_school_access(tables, school_id))
        egress = _outbound_access(tables, cell_id, rules)
        origin, dest = school_id, cell_id
        deadline = None
    walk_only = _walk_only(tables, cell_id, school_id, rules)

    scanner = ProfileScanner(net, _index_access(net, access), config.transfer_slack_s)
    egress_idx = _index_access(net, egress)

    minutes = list(window.minutes())
    durations: list[float] = [INFEASIBLE] * len(minutes)
    itineraries: list[Itinerary | None] = [None] * len(minutes)
    for i in range(len(minutes) - 1, -1, -1):
        m = minutes[i]
        scanner.advance(m)
        dur, choice = scanner.evaluate(m, egress_idx, walk_only, deadline)
        durations[i] = dur
        if with_itineraries and choice is not None and dur != INFEASIBLE:
            itineraries[i] = scanner.reconstruct(m, choice, origin, dest)

    return TravelTimeProfile(origin=origin, dest=dest, direction=direction,
                             variant=feed.variant_tag(), window=window,
                             minutes=minutes, durations=durations,
                             itineraries=itineraries if with_itineraries else None)


def representative(prof: TravelTimeProfile, percentile: str
                   ) -> tuple[float, int] | None:
    """Nearest-rank percentile duration over the finite minutes, with the
    earliest minute attaining it; None when every minute is infeasible."""
    q = {"p25": 0.25, "p50": 0.5}.get(percentile)
    if q is None:
        raise ValueError(f"unknown percentile {percentile!r}")
    finite = prof.finite()
    if not finite:
        return None
    values = sorted(d for _, d in finite)
    rank = math.ceil(q * len(values))
    value = values[rank - 1]
    minute = min(m for m, d in finite if d == value)
    return value, minute


def condition_on_actual(scheduled_minute: int | None,
                        actual_profile: TravelTimeProfile) -> float:
    """Actual-operations duration at the scheduled representative minute.

    The traveler departs per the timetable and experiences actual
    operations; INFEASIBLE propagates (no scheduled reference, or the
    delayed trip misses the deadline).
    """
    if scheduled_minute is None:
        return INFEASIBLE
    return actual_profile.duration_at(scheduled_minute)


def combine_round_trip(outbound: Sequence[float],
                       returns: Sequence[float],
                       out_shares: Sequence[float],
                       ret_shares: Sequence[float] | None = None,
                       strict: bool = False) -> float:
    """Round-trip time as the share-weighted sum of window durations.

    Shares are renormalized over feasible windows within each direction;
    with ``strict`` any infeasible window makes the OD unreachable, and a
    direction with no feasible window always does.
    """
    if ret_shares is None:
        ret_shares = [1.0 / len(returns)] * len(returns) if returns else []
    if len(outbound) != len(out_shares) or len(returns) != len(ret_shares):
        raise ValueError("window values and shares differ in length")
    total = 0.0
    for values, shares in ((outbound, out_shares), (returns, ret_shares)):
        share_sum = sum(shares)
        if abs(share_sum - 1.0) > 1e-9:
            raise ValueError(f"shares sum to {share_sum!r}, expected 1")
        feasible = [(v, s) for v, s in zip(values, shares) if v != INFEASIBLE]
        if not feasible or (strict and len(feasible) < len(values)):
            return UNREACHABLE
        norm = sum(s for _, s in feasible)
        total += sum(v * s for v, s in feasible) / norm
    return total


# --------------------------------------------------------------------------
# Matrix construction


@dataclass(frozen=True)
class WindowValue:
    duration_s: float       # INFEASIBLE when no valid trip
    minute: int | None      # departure second of the representative


@dataclass
class RoundTripTime:
    cell_id: str
    school_id: str
    variant: str
    day: dt.date
    t_ik_s: float  # UNREACHABLE when either direction has no feasible window
    outbound: list[WindowValue]
    returns: list[WindowValue]
    cycle_station: str | None = None


def _governing_station(windows: Sequence[TimeWindow],
                       reps: Sequence[tuple[float, int] | None],
                       meta: Sequence[Mapping[int, tuple[str, str | None]]],
                       ) -> str | None:
    """Station of the cycle access used by the representative itinerary of
    the highest-share feasible window (ties break to the earlier window)."""
    order = sorted(range(len(windows)),
                   key=lambda i: (-windows[i].share, windows[i].start_s))
    for i in order:
        rep = reps[i]
        if rep is None:
            continue
        mode, station = meta[i].get(rep[1], (WALK, None))
        return station if mode == CYCLE else None
    return None


def build_matrix(feed: TimetableFeed,
                 day: dt.date,
                 cells: Sequence,
                 schools: Sequence,
                 tables: AccessTables,
                 morning: Sequence[TimeWindow] | None = None,
                 evening: Sequence[TimeWindow] | None = None,
                 config: RoutingConfig = RoutingConfig(),
                 reference: Mapping[tuple[str, str], RoundTripTime] | None = None,
                 strict_window_exclusion: bool = False,
                 ) -> list[RoundTripTime]:
    """One RoundTripTime per (cell, school), deterministically ordered.

    Without ``reference`` this is the scheduled evaluation: representative
    durations per window, with cycle-and-ride pairing decided from the
    outbound representative itinerary.  With ``reference`` (the scheduled
    matrix for the same day) every window value is the actual-feed duration
    conditioned on the scheduled representative minute, and return trips
    reuse the scheduled pairing.
    """
    morning = list(morning) if morning is not None else default_morning_windows()
    evening = list(evening) if evening is not None else default_evening_windows()
    net = TransitNetwork.build(feed, day, tables)
    cell_ids = [c.cell_id for c in cells]
    school_ids = [s.school_id for s in schools]
    variant = feed.variant_tag()

    school_egress = {sid: _index_access(net, _school_access(tables, sid))
                     for sid in school_ids}
    morning_minutes = [m for w in morning for m in w.minutes()]
    evening_minutes = [m for w in evening for m in w.minutes()]

    # Outbound pass: one scan per cell serves every school.
    out_values: dict[tuple[str, str], list[WindowValue]] = {}
    pairing: dict[tuple[str, str], str | None] = {}
    for cell_id in cell_ids:
        access = _dedupe_access(_outbound_access(tables, cell_id, ModeRules()))
        scanner = ProfileScanner(net, _index_access(net, access),
                                 config.transfer_slack_s)
        durs: dict[str, dict[int, float]] = {sid: {} for sid in school_ids}
        meta: dict[str, dict[int, tuple[str, str | None]]] = \
            {sid: {} for sid in school_ids}
        walk_only = {sid: tables.cell_school_walk.duration(cell_id, sid)
                     for sid in school_ids}
        for m in reversed(morning_minutes):
            scanner.advance(m)
            for sid in school_ids:
                dur, choice = scanner.evaluate(m, school_egress[sid],
                                               walk_only[sid], config.deadline_s)
                durs[sid][m] = dur
                if choice is not None and dur != INFEASIBLE:
                    meta[sid][m] = scanner.access_of(choice)

        for sid in school_ids:
            values: list[WindowValue] = []
            reps: list[tuple[float, int] | None] = []
            win_meta: list[dict[int, tuple[str, str | None]]] = []
            for wi, window in enumerate(morning):
                win_minutes = list(window.minutes())
                win_durs = [durs[sid][m] for m in win_minutes]
                rep = _rep_from_lists(win_minutes, win_durs, config.percentile)
                reps.append(rep)
                win_meta.append({m: meta[sid][m] for m in win_minutes
                                 if m in meta[sid]})
                if reference is not None:
                    ref_minute = reference[(cell_id, sid)].outbound[wi].minute
                    dur = durs[sid][ref_minute] if ref_minute is not None \
                        else INFEASIBLE
                    values.append(WindowValue(dur, ref_minute))
                else:
                    values.append(WindowValue(rep[0], rep[1]) if rep
                                  else WindowValue(INFEASIBLE, None))
            out_values[(cell_id, sid)] = values
            if reference is not None:
                pairing[(cell_id, sid)] = reference[(cell_id, sid)].cycle_station
            else:
                pairing[(cell_id, sid)] = _governing_station(morning, reps, win_meta)

    # Return pass: one scan per school serves every cell, with per-cell
    # egress rules from the outbound pairing.
    ret_values: dict[tuple[str, str], list[WindowValue]] = {}
    for sid in school_ids:
        access = _dedupe_access(_school_access(tables, sid))
        scanner = ProfileScanner(net, _index_access(net, access),
                                 config.transfer_slack_s)
        cell_egress: dict[str, list[tuple[int, str, int]]] = {}
        cell_walk_only: dict[str, int | None] = {}
        for cell_id in cell_ids:
            station = pairing[(cell_id, sid)]
            rules = ModeRules("required", station) if station else \
                ModeRules("forbidden")
            cell_egress[cell_id] = _index_access(
                net, _outbound_access(tables, cell_id, rules))
            cell_walk_only[cell_id] = _walk_only(tables, cell_id, sid, rules)
        durs: dict[str, dict[int, float]] = {cid: {} for cid in cell_ids}
        for m in reversed(evening_minutes):
            scanner.advance(m)
            for cell_id in cell_ids:
                dur, _ = scanner.evaluate(m, cell_egress[cell_id],
                                          cell_walk_only[cell_id], None)
                durs[cell_id][m] = dur

        for cell_id in cell_ids:
            values = []
            for wi, window in enumerate(evening):
                win_minutes = list(window.minutes())
                win_durs = [durs[cell_id][m] for m in win_minutes]
                if reference is not None:
                    ref_minute = reference[(cell_id, sid)].returns[wi].minute
                    dur = durs[cell_id][ref_minute] if ref_minute is not None \
                        else INFEASIBLE
                    values.append(WindowValue(dur, ref_minute))
                else:
                    rep = _rep_from_lists(win_minutes, win_durs, config.percentile)
                    values.append(WindowValue(rep[0], rep[1]) if rep
                                  else WindowValue(INFEASIBLE, None))
            ret_values[(cell_id, sid)] = values

    out: list[RoundTripTime] = []
    morning_shares = [w.share for w in morning]
    evening_shares = [w.share for w in evening]
    for cell_id in cell_ids:
        for sid in school_ids:
            ov = out_values[(cell_id, sid)]
            rv = ret_values[(cell_id, sid)]
            t_ik = combine_round_trip([v.duration_s for v in ov],
                                      [v.duration_s for v in rv],
                                      morning_shares, evening_shares,
                                      strict=strict_window_exclusion)
            out.append(RoundTripTime(cell_id, sid, variant, day, t_ik, ov, rv,
                                     cycle_station=pairing[(cell_id, sid)]))
    return out


def _rep_from_lists(minutes: Sequence[int], durations: Sequence[float],
                    percentile: str) -> tuple[float, int] | None:
    q = {"p25": 0.25, "p50": 0.5}[percentile]
    finite = [(m, d) for m, d in zip(minutes, durations) if d != INFEASIBLE]
    if not finite:
        return None
    values = sorted(d for _, d in finite)
    value = values[math.ceil(q * len(values)) - 1]
    minute = min(m for m, d in finite if d == value)
    return value, minute
