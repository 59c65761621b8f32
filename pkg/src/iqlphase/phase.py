"""CSR-S phase map: percentile reference point, phase distance, regimes, ridge crossings."""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Optional, Sequence

from .errors import TooFewPoints

PERCENTILE = 60.0
RIDGE_LEVEL = 0.4


class Regime(str, Enum):
    COORDINATED_STABLE = "CoordinatedStable"
    FRAGILE = "Fragile"
    JAMMED_DISORDERED = "JammedDisordered"


def percentile(values: Iterable[float], q: float) -> float:
    """Linear interpolation between order statistics at rank q/100 * (n - 1)."""
    xs = sorted(float(v) for v in values)
    if not xs:
        raise TooFewPoints("percentile of an empty set")
    rank = q / 100.0 * (len(xs) - 1)
    lo = math.floor(rank)
    hi = min(lo + 1, len(xs) - 1)
    frac = rank - lo
    return xs[lo] + frac * (xs[hi] - xs[lo])


def thresholds(points: Sequence[tuple[float, float]], q: float = PERCENTILE) -> tuple[float, float]:
    """(tau_CSR, tau_S): per-axis percentiles of the (CSR, S) points."""
    if len(points) < 2:
        raise TooFewPoints(f"need at least 2 conditions, got {len(points)}")
    return percentile((p[0] for p in points), q), percentile((p[1] for p in points), q)


def phase_distance(csr: float, s: float, tau_csr: float, tau_s: float) -> float:
    return math.hypot(csr - tau_csr, s - tau_s)


def classify(
    csr: float,
    s: float,
    d_phase: float,
    tau: tuple[float, float],
    ridge_level: float = RIDGE_LEVEL,
) -> Regime:
    """Regime from the distance to the reference point and the quadrant it lies in."""
    if d_phase <= ridge_level:
        return Regime.FRAGILE
    if csr >= tau[0] and s >= tau[1]:
        return Regime.COORDINATED_STABLE
    return Regime.JAMMED_DISORDERED


@dataclass
class PhasePoint:
    L: int
    rho: float
    csr: float
    S: float
    d_phase: float
    regime: Regime


def build_phase_map(
    conditions: Sequence[tuple[int, float, float, float]],
    ridge_level: float = RIDGE_LEVEL,
) -> tuple[list[PhasePoint], tuple[float, float]]:
    """Phase points for (L, rho, CSR, S) tuples; conditions with NaN S are skipped."""
    usable = [c for c in conditions if not (math.isnan(c[2]) or math.isnan(c[3]))]
    tau = thresholds([(c[2], c[3]) for c in usable])
    points = []
    for L, rho, c, s in usable:
        d = phase_distance(c, s, *tau)
        points.append(PhasePoint(L, rho, c, s, d, classify(c, s, d, tau, ridge_level)))
    return points, tau


@dataclass(frozen=True)
class RidgeCrossing:
    a: tuple[int, float]  # (L, rho) of the first endpoint
    b: tuple[int, float]
    axis: str  # "L" or "rho"
    fraction: float  # position of the crossing along a -> b
    d_a: float
    d_b: float


def ridge_cells(
    d_phase: Mapping[tuple[int, float], float],
    ridge_level: float = RIDGE_LEVEL,
    L_values: Optional[Sequence[int]] = None,
    rho_values: Optional[Sequence[float]] = None,
) -> list[RidgeCrossing]:
    """Edges between grid-adjacent conditions whose d_phase values straddle ``ridge_level``.

    Neighbours are consecutive entries of the sorted L axis (same rho) or of
    the sorted rho axis (same L). Missing conditions break adjacency.
    """
    Ls = sorted(L_values if L_values is not None else {k[0] for k in d_phase})
    rhos = sorted(rho_values if rho_values is not None else {k[1] for k in d_phase})
    out = []

    def edge(p, q, axis):
        if p not in d_phase or q not in d_phase:
            return
        da, db = d_phase[p], d_phase[q]
        if math.isnan(da) or math.isnan(db):
            return
        if (da - ridge_level) * (db - ridge_level) < 0:
            out.append(RidgeCrossing(p, q, axis, (ridge_level - da) / (db - da), da, db))

    for L in Ls:
        for r0, r1 in zip(rhos, rhos[1:]):
            edge((L, r0), (L, r1), "rho")
    for rho in rhos:
        for L0, L1 in zip(Ls, Ls[1:]):
            edge((L0, rho), (L1, rho), "L")
    return out


def ridge_chains(
    crossings: Sequence[RidgeCrossing],
    L_values: Optional[Sequence[int]] = None,
    rho_values: Optional[Sequence[float]] = None,
) -> list[list[RidgeCrossing]]:
    """Group crossings into contour chains.

    Two crossings belong to the same chain when their edges bound a common
    grid square, as a contour would pass through that square. On a single
    row or column there are no squares, so every crossing is its own chain.
    Two or more chains is a multiple ridge.
    """
    Ls = sorted(L_values if L_values is not None else {p[0] for c in crossings for p in (c.a, c.b)})
    rhos = sorted(rho_values if rho_values is not None else {p[1] for c in crossings for p in (c.a, c.b)})

    def squares(c: RidgeCrossing) -> list[tuple[int, int]]:
        # squares are indexed by their lower-left (L index, rho index) corner
        i, j = Ls.index(c.a[0]), rhos.index(c.a[1])
        cands = [(i - 1, j), (i, j)] if c.axis == "rho" else [(i, j - 1), (i, j)]
        return [(a, b) for a, b in cands if 0 <= a < len(Ls) - 1 and 0 <= b < len(rhos) - 1]

    parent = list(range(len(crossings)))

    def find(i: int) -> int:
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    owner: dict[tuple[int, int], int] = {}
    for i, c in enumerate(crossings):
        for sq in squares(c):
            if sq in owner:
                parent[find(i)] = find(owner[sq])
            else:
                owner[sq] = i
    groups: dict[int, list[RidgeCrossing]] = {}
    for i, c in enumerate(crossings):
        groups.setdefault(find(i), []).append(c)
    return list(groups.values())
