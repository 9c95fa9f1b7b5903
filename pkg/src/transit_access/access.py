"""Street-network access/egress durations and Public Transport Desert tests.

Distances use an equirectangular approximation at the study-area mean
latitude (sub-meter error at city scale).  Durations are network shortest
paths at a constant mode speed, include straight-line snap legs at the same
speed, and are rounded up to whole seconds so travel time is never
understated.
"""

from __future__ import annotations

import csv
import heapq
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.spatial import cKDTree

log = logging.getLogger(__name__)

EARTH_RADIUS_M = 6_371_000.0

WALK = "walk"
CYCLE = "cycle"

# Table of routing caps, in seconds.
BUS_WALK_CAP_S = 450        # 7.5 min to/from bus stops
RAIL_WALK_CAP_S = 900       # 15 min to/from rail stations
RAIL_CYCLE_CAP_S = 900      # 15 min cycle-and-ride to stations
WALK_ONLY_CAP_S = 900       # 15 min door-to-door walking trips
TRANSFER_WALK_CAP_S = 120   # walking transfers between distinct stops


class LocalProjection:
    """Equirectangular lat/lon -> meters frame around a reference latitude."""

    def __init__(self, lat0_deg: float):
        self.lat0 = lat0_deg
        self._kx = math.radians(1.0) * EARTH_RADIUS_M * math.cos(math.radians(lat0_deg))
        self._ky = math.radians(1.0) * EARTH_RADIUS_M

    def xy(self, lat: float, lon: float) -> tuple[float, float]:
        return lon * self._kx, lat * self._ky

    def distance_m(self, lat1: float, lon1: float, lat2: float, lon2: float) -> float:
        dx = (lon1 - lon2) * self._kx
        dy = (lat1 - lat2) * self._ky
        return math.hypot(dx, dy)


@dataclass
class StreetGraph:
    """Undirected street network with per-edge mode permissions."""

    nodes: dict[str, tuple[float, float]]  # node_id -> (lat, lon)
    adjacency: dict[str, list[tuple[str, float, bool, bool]]]  # (to, m, walk, cycle)
    projection: LocalProjection = field(init=False)
    _tree: cKDTree = field(init=False, repr=False)
    _node_ids: list[str] = field(init=False, repr=False)

    def __post_init__(self):
        lat0 = (sum(lat for lat, _ in self.nodes.values()) / len(self.nodes)
                if self.nodes else 0.0)
        self.projection = LocalProjection(lat0)
        self._node_ids = list(self.nodes)
        pts = np.array([self.projection.xy(*self.nodes[n]) for n in self._node_ids],
                       dtype=float) if self.nodes else np.zeros((0, 2))
        self._tree = cKDTree(pts)

    @classmethod
    def load(cls, nodes_path: str | Path, edges_path: str | Path) -> "StreetGraph":
        nodes: dict[str, tuple[float, float]] = {}
        with open(nodes_path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                nodes[row["node_id"].strip()] = (float(row["lat"]), float(row["lon"]))
        adjacency: dict[str, list[tuple[str, float, bool, bool]]] = {n: [] for n in nodes}
        with open(edges_path, newline="", encoding="utf-8") as fh:
            for row in csv.DictReader(fh):
                a, b = row["from"].strip(), row["to"].strip()
                length = float(row["length_m"])
                if length <= 0:
                    raise ValueError(f"edge {a}-{b}: non-positive length {length}")
                if a not in nodes or b not in nodes:
                    raise ValueError(f"edge {a}-{b}: unresolved endpoint")
                walk = row.get("walk", "1").strip() == "1"
                cycle = row.get("cycle", "1").strip() == "1"
                adjacency[a].append((b, length, walk, cycle))
                adjacency[b].append((a, length, walk, cycle))
        return cls(nodes=nodes, adjacency=adjacency)

    def nearest_node(self, lat: float, lon: float) -> tuple[str, float]:
        """Nearest node id and its straight-line distance in meters."""
        if not self._node_ids:
            raise ValueError("empty graph")
        dist, idx = self._tree.query(self.projection.xy(lat, lon))
        return self._node_ids[int(idx)], float(dist)


@dataclass(frozen=True)
class Site:
    """A point of interest snapped onto the street network."""

    site_id: str
    role: str  # cell_centroid | school | bus_stop | rail_station
    lat: float
    lon: float
    node_id: str | None = None
    snap_m: float = 0.0

    @property
    def snappable(self) -> bool:
        return self.node_id is not None


def snap_sites(graph: StreetGraph, sites: Iterable[Site],
               max_snap_m: float = 100.0) -> list[Site]:
    """Snap sites to their nearest node; beyond max_snap_m a site is flagged
    unsnappable (node_id None) rather than silently attached."""
    out = []
    for site in sites:
        node, dist = graph.nearest_node(site.lat, site.lon)
        if dist > max_snap_m:
            log.warning("site %s (%s) is %.0f m from the street network, "
                        "unsnappable", site.site_id, site.role, dist)
            out.append(Site(site.site_id, site.role, site.lat, site.lon, None, dist))
        else:
            out.append(Site(site.site_id, site.role, site.lat, site.lon, node, dist))
    return out


# --------------------------------------------------------------------------
# Shortest durations


def _dijkstra_m(graph: StreetGraph, source: str, mode: str,
                cutoff_m: float) -> dict[str, float]:
    """Meter distances from source over mode-permitted edges, up to cutoff."""
    want_cycle = mode == CYCLE
    dist = {source: 0.0}
    heap = [(0.0, source)]
    adjacency = graph.adjacency
    while heap:
        d, node = heapq.heappop(heap)
        if d > dist.get(node, math.inf):
            continue
        for to, length, walk_ok, cycle_ok in adjacency[node]:
            if (cycle_ok if want_cycle else walk_ok) is False:
                continue
            nd = d + length
            if nd <= cutoff_m and nd < dist.get(to, math.inf):
                dist[to] = nd
                heapq.heappush(heap, (nd, to))
    return dist


def shortest_durations(graph: StreetGraph,
                       origin: Site,
                       targets: Sequence[Site],
                       mode: str,
                       speed_kmh: float,
                       cap_s: int) -> dict[str, int]:
    """Capped door-to-door durations from one site to many, in whole seconds.

    Includes the straight-line snap legs at both ends at the mode speed.
    Targets beyond the cap (or unsnappable) are omitted.
    """
    if speed_kmh <= 0 or cap_s <= 0:
        raise ValueError("speed and cap must be positive")
    if not origin.snappable:
        log.warning("origin %s is unsnappable, no access durations", origin.site_id)
        return {}
    mps = speed_kmh / 3.6
    budget_m = cap_s * mps - origin.snap_m
    if budget_m < 0:
        return {}
    by_node: dict[str, list[Site]] = {}
    for t in targets:
        if t.snappable:
            by_node.setdefault(t.node_id, []).append(t)
    dist = _dijkstra_m(graph, origin.node_id, mode, budget_m)
    out: dict[str, int] = {}
    for node, sites in by_node.items():
        d = dist.get(node)
        if d is None:
            continue
        for site in sites:
            total_m = origin.snap_m + d + site.snap_m
            seconds = math.ceil(total_m / mps)
            if seconds <= cap_s:
                out[site.site_id] = seconds
    return out


# --------------------------------------------------------------------------
# Access tables


@dataclass
class AccessTable:
    """Capped durations between two site families (symmetric per mode)."""

    mode: str
    cap_s: int
    entries: dict[tuple[str, str], int] = field(default_factory=dict)

    def duration(self, a: str, b: str) -> int | None:
        hit = self.entries.get((a, b))
        if hit is None:
            hit = self.entries.get((b, a))
        return hit

    def targets_of(self, origin: str) -> list[tuple[str, int]]:
        return [(b, s) for (a, b), s in self.entries.items() if a == origin]


@dataclass
class AccessTables:
    """The access/egress tables the router consumes, one per (pair, mode)."""

    cell_bus_walk: AccessTable
    cell_rail_walk: AccessTable
    cell_rail_cycle: AccessTable
    school_bus_walk: AccessTable
    school_rail_walk: AccessTable
    cell_school_walk: AccessTable
    transfer_walk: AccessTable

    def all_tables(self) -> list[AccessTable]:
        return [self.cell_bus_walk, self.cell_rail_walk, self.cell_rail_cycle,
                self.school_bus_walk, self.school_rail_walk,
                self.cell_school_walk, self.transfer_walk]


def build_access_tables(graph: StreetGraph,
                        cells: Sequence[Site],
                        schools: Sequence[Site],
                        boarding_points: Sequence[Site],
                        walk_speed_kmh: float = 4.0,
                        cycle_speed_kmh: float = 12.0,
                        bus_walk_cap_s: int = BUS_WALK_CAP_S,
                        rail_walk_cap_s: int = RAIL_WALK_CAP_S,
                        rail_cycle_cap_s: int = RAIL_CYCLE_CAP_S,
                        walk_only_cap_s: int = WALK_ONLY_CAP_S,
                        transfer_walk_cap_s: int = TRANSFER_WALK_CAP_S,
                        ) -> AccessTables:
    """Compute every capped table in one pass per origin.

    Cycle-and-ride applies to rail stations only (no bicycle parking at bus
    stops), so the cycle table never contains bus_stop targets.
    """
    stops = [s for s in boarding_points if s.role == "bus_stop"]
    stations = [s for s in boarding_points if s.role == "rail_station"]

    tables = AccessTables(
        cell_bus_walk=AccessTable(WALK, bus_walk_cap_s),
        cell_rail_walk=AccessTable(WALK, rail_walk_cap_s),
        cell_rail_cycle=AccessTable(CYCLE, rail_cycle_cap_s),
        school_bus_walk=AccessTable(WALK, bus_walk_cap_s),
        school_rail_walk=AccessTable(WALK, rail_walk_cap_s),
        cell_school_walk=AccessTable(WALK, walk_only_cap_s),
        transfer_walk=AccessTable(WALK, transfer_walk_cap_s),
    )

    walk_targets = list(boarding_points) + list(schools)
    walk_cap = max(bus_walk_cap_s, rail_walk_cap_s, walk_only_cap_s)
    station_roles = {s.site_id for s in stations}
    stop_roles = {s.site_id for s in stops}
    school_ids = {s.site_id for s in schools}

    for cell in cells:
        durations = shortest_durations(graph, cell, walk_targets, WALK,
                                       walk_speed_kmh, walk_cap)
        for target_id, seconds in durations.items():
            if target_id in stop_roles and seconds <= bus_walk_cap_s:
                tables.cell_bus_walk.entries[(cell.site_id, target_id)] = seconds
            elif target_id in station_roles and seconds <= rail_walk_cap_s:
                tables.cell_rail_walk.entries[(cell.site_id, target_id)] = seconds
            elif target_id in school_ids and seconds <= walk_only_cap_s:
                tables.cell_school_walk.entries[(cell.site_id, target_id)] = seconds
        cycle_durs = shortest_durations(graph, cell, stations, CYCLE,
                                        cycle_speed_kmh, rail_cycle_cap_s)
        for station_id, seconds in cycle_durs.items():
            tables.cell_rail_cycle.entries[(cell.site_id, station_id)] = seconds

    for school in schools:
        durations = shortest_durations(graph, school, boarding_points, WALK,
                                       walk_speed_kmh, rail_walk_cap_s)
        for target_id, seconds in durations.items():
            if target_id in stop_roles and seconds <= bus_walk_cap_s:
                tables.school_bus_walk.entries[(school.site_id, target_id)] = seconds
            elif target_id in station_roles:
                tables.school_rail_walk.entries[(school.site_id, target_id)] = seconds

    for bp in boarding_points:
        durations = shortest_durations(graph, bp, boarding_points, WALK,
                                       walk_speed_kmh, transfer_walk_cap_s)
        for target_id, seconds in durations.items():
            if target_id != bp.site_id:
                tables.transfer_walk.entries[(bp.site_id, target_id)] = seconds

    return tables


# --------------------------------------------------------------------------
# PT deserts


def classify_pt_desert(cell: Site,
                       stops: Sequence[Site],
                       stations: Sequence[Site],
                       projection: LocalProjection | None = None,
                       bus_radius_m: float = 500.0,
                       rail_radius_m: float = 1000.0,
                       metric: str = "radius",
                       graph: StreetGraph | None = None,
                       walk_speed_kmh: float = 4.0) -> bool:
    """True iff the cell is beyond both service radii of every stop/station.

    The boundary counts as served.  The default metric is the straight-line
    radius used in buffer-based planning; ``metric="network"`` substitutes
    walking network distance instead.
    """
    if metric == "radius":
        proj = projection or LocalProjection(cell.lat)
        near_bus = any(proj.distance_m(cell.lat, cell.lon, s.lat, s.lon)
                       <= bus_radius_m for s in stops)
        if near_bus:
            return False
        near_rail = any(proj.distance_m(cell.lat, cell.lon, s.lat, s.lon)
                        <= rail_radius_m for s in stations)
        return not near_rail
    if metric == "network":
        if graph is None:
            raise ValueError("network metric requires the street graph")
        mps = walk_speed_kmh / 3.6
        cap = int(math.ceil(max(bus_radius_m, rail_radius_m) / mps))
        durations = shortest_durations(graph, cell, list(stops) + list(stations),
                                       WALK, walk_speed_kmh, cap)
        stop_ids = {s.site_id for s in stops}
        for sid, seconds in durations.items():
            meters = seconds * mps
            radius = bus_radius_m if sid in stop_ids else rail_radius_m
            if meters <= radius:
                return False
        return True
    raise ValueError(f"unknown desert metric {metric!r}")


# --------------------------------------------------------------------------
# Site file loading


@dataclass(frozen=True)
class Cell:
    cell_id: str
    lat: float
    lon: float
    population_u15: int
    district: str
    area: str


@dataclass(frozen=True)
class School:
    school_id: str
    name: str
    lat: float
    lon: float


def load_cells(path: str | Path) -> list[Cell]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.append(Cell(
                cell_id=row["cell_id"].strip(),
                lat=float(row["lat"]),
                lon=float(row["lon"]),
                population_u15=int(row["population_u15"]),
                district=row["district"].strip(),
                area=row["area"].strip(),
            ))
    return out


def load_schools(path: str | Path) -> list[School]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.append(School(
                school_id=row["school_id"].strip(),
                name=row["name"].strip(),
                lat=float(row["lat"]),
                lon=float(row["lon"]),
            ))
    return out


def sites_from_cells(cells: Sequence[Cell]) -> list[Site]:
    return [Site(c.cell_id, "cell_centroid", c.lat, c.lon) for c in cells]


def sites_from_schools(schools: Sequence[School]) -> list[Site]:
    return [Site(s.school_id, "school", s.lat, s.lon) for s in schools]


def sites_from_feed_stops(stops: Mapping) -> list[Site]:
    """Boarding-point sites from feed stops (kind decides the access caps)."""
    return [Site(s.stop_id, s.kind, s.lat, s.lon) for s in stops.values()]


def export_access_table(table: AccessTable, path: str | Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["mode", "from", "to", "seconds"])
        for (a, b), s in sorted(table.entries.items()):
            w.writerow([table.mode, a, b, s])
