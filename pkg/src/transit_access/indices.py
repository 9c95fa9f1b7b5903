"""Opportunity indices: decayed cumulative opportunities, gain/loss under
delays, population-weighted district percentiles, binned distributions, and
a weighted Gini coefficient with bootstrap confidence intervals.

Round-trip times enter as seconds; unreachable ODs are ``math.inf`` and
contribute zero opportunity.
"""

from __future__ import annotations

import math
import statistics
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

DEFAULT_THRESHOLDS_MIN = (60, 90, 120)

# Population distribution bins over ECO (upper bin closed at the school
# count) and cell-count bins over OGL (zero is its own row).
ECO_BIN_EDGES = (0.0, 0.5, 1.0, 2.0, 5.0, 7.0)
OGL_BINS = (
    ("0 < OGL < 1", lambda v: 0.0 < v < 1.0),
    ("OGL = 0", lambda v: v == 0.0),
    ("-1 <= OGL < 0", lambda v: -1.0 <= v < 0.0),
    ("-3 <= OGL < -1", lambda v: -3.0 <= v < -1.0),
    ("OGL <= -3", lambda v: v <= -3.0),
)


@dataclass(frozen=True)
class Threshold:
    """Round-trip travel-time threshold."""

    seconds: int

    def __post_init__(self):
        if self.seconds <= 0:
            raise ValueError("threshold must be positive")

    @property
    def minutes(self) -> int:
        return self.seconds // 60


@dataclass
class CellAccessRecord:
    """Per-cell index values for one threshold and day."""

    cell_id: str
    district: str
    area: str
    population: int
    threshold_min: int
    day: str  # ISO date, or "median" for the over-days summary
    eco_scheduled: float
    eco_actual: float
    ogl: float
    togl: float
    unreachable: bool = False  # no school reachable under schedule


@dataclass(frozen=True)
class GiniResult:
    variant: str
    threshold_min: int
    gini: float
    ci_low: float
    ci_high: float
    iterations: int
    seed: int


# --------------------------------------------------------------------------
# Decay and cumulative opportunities


def decay(t_s: float, threshold_s: float) -> float:
    """Tolerated-share of a round-trip time: 1 up to the threshold, linear
    to 0 at twice the threshold, 0 beyond (and for unreachable trips)."""
    if threshold_s <= 0:
        raise ValueError("threshold must be positive")
    if t_s != math.inf and t_s < 0:
        raise ValueError(f"negative travel time {t_s}")
    if t_s <= threshold_s:
        return 1.0
    if t_s <= 2 * threshold_s:
        return 2.0 - t_s / threshold_s
    return 0.0


def eco(times_s: Iterable[float], threshold_s: float) -> float:
    """Equivalent number of schools accessible within the threshold: the sum
    of decayed round-trip times over all schools."""
    return sum(decay(t, threshold_s) for t in times_s)


def ogl(eco_actual: float, eco_scheduled: float) -> float:
    """Opportunity gain/loss; negative means delays cost opportunities."""
    return eco_actual - eco_scheduled


def togl(ogl_value: float, population: int) -> float:
    """Population-scaled gain/loss."""
    return population * ogl_value


def median_over_days(values: Sequence[float]) -> float:
    """Representative value across days (even counts average the middle pair)."""
    if not values:
        raise ValueError("no values")
    return statistics.median(values)


# --------------------------------------------------------------------------
# District percentiles


def district_percentile(cells: Sequence[tuple[float, float]], q: float,
                        direction: str = "attains") -> float:
    """Population-weighted district ECO percentile.

    With ``direction="attains"`` (the default): the largest ECO value v such
    that cells with ECO >= v hold at least a share q of the population, i.e.
    the level attained by at least q of the district's population.  The
    literal quantile reading (value below which q of the population falls)
    is available as ``direction="below"``.
    """
    if not cells:
        raise ValueError("empty district")
    if not 0 < q <= 1:
        raise ValueError(f"q must be in (0, 1], got {q}")
    total = float(sum(pop for _, pop in cells))
    if total <= 0:
        raise ValueError("district has no population")
    merged: dict[float, float] = {}
    for value, pop in cells:
        merged[value] = merged.get(value, 0.0) + pop
    if direction == "attains":
        cum = 0.0
        for value in sorted(merged, reverse=True):
            cum += merged[value]
            if cum / total >= q - 1e-12:
                return value
        return min(merged)
    if direction == "below":
        cum = 0.0
        for value in sorted(merged):
            cum += merged[value]
            if cum / total >= q - 1e-12:
                return value
        return max(merged)
    raise ValueError(f"unknown percentile direction {direction!r}")


# --------------------------------------------------------------------------
# Binned distributions


def bin_population(values_pops: Sequence[tuple[float, float]],
                   edges: Sequence[float] = ECO_BIN_EDGES,
                   top: float | None = None) -> list[tuple[str, float, float]]:
    """Population mass per ECO bin, highest bin first (Table style).

    ``edges`` are ascending lower bounds; the top bin is closed at ``top``
    (defaults to the largest observed value).  Returns (label, population,
    share) rows; shares sum to 1 over the binned mass.
    """
    edges = list(edges)
    if sorted(edges) != edges or len(set(edges)) != len(edges):
        raise ValueError("bin edges must be strictly increasing")
    if top is None:
        top = max((v for v, _ in values_pops), default=edges[-1])
        top = max(top, edges[-1])
    bounds = edges + [top]
    labels = []
    for i in range(len(edges)):
        lo, hi = bounds[i], bounds[i + 1]
        if i == len(edges) - 1:
            labels.append(f"{_fmt(lo)} <= ECO <= {_fmt(hi)}")
        else:
            labels.append(f"{_fmt(lo)} <= ECO < {_fmt(hi)}")
    masses = [0.0] * len(edges)
    for value, pop in values_pops:
        if value < edges[0] or value > top:
            continue
        idx = len(edges) - 1
        for i in range(len(edges) - 1):
            if value < edges[i + 1]:
                idx = i
                break
        masses[idx] += pop
    total = sum(masses)
    rows = []
    for label, mass in zip(labels, masses):
        rows.append((label, mass, mass / total if total else 0.0))
    rows.reverse()
    return rows


def bin_ogl_cells(records: Sequence[CellAccessRecord]
                  ) -> list[tuple[str, int, float]]:
    """Cell counts per OGL bin plus an Unreachable row (Table style)."""
    counts = {label: 0 for label, _ in OGL_BINS}
    counts["Unreachable"] = 0
    for rec in records:
        if rec.unreachable:
            counts["Unreachable"] += 1
            continue
        for label, member in OGL_BINS:
            if member(rec.ogl):
                counts[label] += 1
                break
    total = sum(counts.values())
    return [(label, n, n / total if total else 0.0)
            for label, n in counts.items()]


def _fmt(x: float) -> str:
    return f"{x:g}"


# --------------------------------------------------------------------------
# Weighted Gini


def weighted_gini(values: Sequence[float], weights: Sequence[float]) -> float:
    """Population-weighted Gini coefficient.

    Equals the normalized mean absolute difference
    sum_ij w_i w_j |x_i - x_j| / (2 (sum w)^2 mu), computed from the sorted
    cumulative form in O(n log n).  An all-zero distribution has no
    inequality, so mu = 0 yields 0.
    """
    x = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    if x.shape != w.shape or x.ndim != 1:
        raise ValueError("values and weights must be 1-d and equally long")
    if np.any(w < 0):
        raise ValueError("negative weights")
    if np.any(x < 0):
        raise ValueError("negative values")
    wsum = w.sum()
    if wsum <= 0:
        raise ValueError("weights sum to zero")
    order = np.argsort(x, kind="stable")
    x = x[order]
    w = w[order]
    s = np.cumsum(w * x)
    if s[-1] == 0:
        return 0.0
    cw = np.cumsum(w)
    # sum_i w_i * (x_i * W_{i-1} - S_{i-1}) doubles to the pairwise sum.
    prev_w = cw - w
    prev_s = s - w * x
    delta = float(np.sum(w * (x * prev_w - prev_s)))
    mu = s[-1] / wsum
    return delta / (wsum * wsum * mu)


def gini_bootstrap(values: Sequence[float], weights: Sequence[float],
                   iterations: int = 1000, seed: int = 0,
                   variant: str = "", threshold_min: int = 0) -> GiniResult:
    """Point estimate plus empirical 95% CI from resampling cells (each cell
    keeps its weight) with replacement; deterministic for a given seed."""
    x = np.asarray(values, dtype=float)
    w = np.asarray(weights, dtype=float)
    if len(x) < 2:
        raise ValueError("need at least 2 cells to bootstrap")
    point = weighted_gini(x, w)
    rng = np.random.default_rng(seed)
    reps = np.empty(iterations)
    n = len(x)
    for i in range(iterations):
        idx = rng.integers(0, n, size=n)
        wi = w[idx]
        if wi.sum() <= 0:
            reps[i] = 0.0
        else:
            reps[i] = weighted_gini(x[idx], wi)
    lo, hi = np.percentile(reps, [2.5, 97.5])
    return GiniResult(variant=variant, threshold_min=threshold_min,
                      gini=point, ci_low=float(lo), ci_high=float(hi),
                      iterations=iterations, seed=seed)


# --------------------------------------------------------------------------
# Record assembly


def build_records(cell_info: Mapping[str, tuple[str, str, int]],
                  times_scheduled: Mapping[str, Sequence[float]],
                  times_actual: Mapping[str, Sequence[float]],
                  threshold: Threshold,
                  day: str) -> list[CellAccessRecord]:
    """Per-cell records for one (threshold, day) from round-trip times.

    ``cell_info`` maps cell_id -> (district, area, population); the time
    maps carry one round-trip seconds value per school (inf = unreachable).
    """
    out = []
    for cell_id in sorted(cell_info):
        district, area, population = cell_info[cell_id]
        sched = times_scheduled[cell_id]
        actual = times_actual[cell_id]
        eco_s = eco(sched, threshold.seconds)
        eco_a = eco(actual, threshold.seconds)
        gain = ogl(eco_a, eco_s)
        out.append(CellAccessRecord(
            cell_id=cell_id, district=district, area=area,
            population=population, threshold_min=threshold.minutes, day=day,
            eco_scheduled=eco_s, eco_actual=eco_a, ogl=gain,
            togl=togl(gain, population),
            unreachable=all(t == math.inf for t in sched),
        ))
    return out


def median_records(per_day: Sequence[Sequence[CellAccessRecord]]
                   ) -> list[CellAccessRecord]:
    """Five-day medians of each index, cell by cell."""
    if not per_day:
        return []
    by_cell: dict[str, list[CellAccessRecord]] = {}
    for day_records in per_day:
        for rec in day_records:
            by_cell.setdefault(rec.cell_id, []).append(rec)
    out = []
    for cell_id in sorted(by_cell):
        recs = by_cell[cell_id]
        first = recs[0]
        out.append(CellAccessRecord(
            cell_id=cell_id, district=first.district, area=first.area,
            population=first.population, threshold_min=first.threshold_min,
            day="median",
            eco_scheduled=median_over_days([r.eco_scheduled for r in recs]),
            eco_actual=median_over_days([r.eco_actual for r in recs]),
            ogl=median_over_days([r.ogl for r in recs]),
            togl=median_over_days([r.togl for r in recs]),
            unreachable=all(r.unreachable for r in recs),
        ))
    return out
