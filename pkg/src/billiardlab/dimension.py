"""Dimension estimation in one dimension: exact greedy box counts,
least-squares slope fits over scale ladders, the average-length covering
construction with its packing bound, and Hausdorff covering-sum schedules
driven by billiard escape sets.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import List, Optional, Sequence, Tuple

from mpmath import mp, mpf

from .errors import InsufficientScales
from .fixedpoint import mpf_to_fraction
from .intervals import IntervalUnion


@dataclass(frozen=True)
class CoverReport:
    """One covering record: N(epsilon) pieces of length 2*epsilon, the
    covering sum count*epsilon^s, and the single-scale dimension estimate
    log(count)/log(1/epsilon) (None for an empty set)."""

    scale: mpf
    count: int
    s: float
    sum: mpf
    dim_estimate: Optional[mpf]

    def csv_row(self) -> str:
        de = "" if self.dim_estimate is None else mp.nstr(self.dim_estimate, 17)
        return f"{mp.nstr(self.scale, 17)},{self.count},{self.s}," \
               f"{mp.nstr(self.sum, 17)},{de}"

    def to_json_obj(self) -> dict:
        return {
            "scale": mp.nstr(self.scale, 17),
            "count": self.count,
            "s": self.s,
            "sum": mp.nstr(self.sum, 17),
            "dim_estimate": None if self.dim_estimate is None
            else mp.nstr(self.dim_estimate, 17),
        }


CSV_HEADER = "scale,count,s,sum,dim_estimate"


def box_count(cover_set: IntervalUnion, epsilon, s: float = 1.0) -> CoverReport:
    """Minimal number of closed length-2*epsilon intervals covering the
    union.  The greedy left-to-right sweep is optimal in one dimension:
    each piece is placed at the leftmost uncovered point, and no cover can
    do better than covering that point with a piece extending right."""
    bits = cover_set.precision_bits
    with mp.workprec(bits + 16):
        eps = mpf(epsilon)
        if eps <= 0:
            raise ValueError("epsilon must be positive")
        piece = 2 * eps
        count = 0
        cursor = None
        for lo, hi in cover_set:
            if cursor is None or cursor < lo:
                cursor = lo
            while cursor < hi:
                count += 1
                cursor = cursor + piece
        total = count * eps ** mpf(s)
        if count == 0 or eps >= 1:
            dim = None
        else:
            dim = mp.log(count) / mp.log(1 / eps) if count > 1 else mpf(0)
        return CoverReport(scale=eps, count=count, s=s, sum=total, dim_estimate=dim)


@dataclass(frozen=True)
class DimensionFit:
    """Least-squares slope of log N(eps) against log(1/eps), with the
    per-scale residuals and the underlying cover reports."""

    slope: mpf
    intercept: mpf
    residuals: Tuple[mpf, ...]
    reports: Tuple[CoverReport, ...]


def dim_lb_estimate(scale_sets: Sequence[Tuple[object, IntervalUnion]]) -> DimensionFit:
    """Fit log N(eps) = slope*log(1/eps) + c over a decreasing scale
    ladder of (epsilon, set) pairs; the slope is the finite-scale
    box-dimension estimate.  Requires at least three strictly decreasing
    scales and nonempty sets."""
    if len(scale_sets) < 3:
        raise InsufficientScales("need at least 3 scales for a slope")
    bits = min(u.precision_bits for _, u in scale_sets)
    with mp.workprec(bits + 16):
        epss = [mpf(e) for e, _ in scale_sets]
        for e1, e2 in zip(epss, epss[1:]):
            if not e2 < e1:
                raise InsufficientScales("scales must be strictly decreasing")
        reports = [box_count(u, e) for e, u in scale_sets]
        if any(r.count == 0 for r in reports):
            raise ValueError("cannot fit a slope through an empty set")
        xs = [mp.log(1 / e) for e in epss]
        ys = [mp.log(r.count) for r in reports]
        n = len(xs)
        xbar = sum(xs) / n
        ybar = sum(ys) / n
        sxx = sum((x - xbar) ** 2 for x in xs)
        sxy = sum((x - xbar) * (y - ybar) for x, y in zip(xs, ys))
        slope = sxy / sxx
        intercept = ybar - slope * xbar
        residuals = tuple(y - (slope * x + intercept) for x, y in zip(xs, ys))
    return DimensionFit(slope=slope, intercept=intercept,
                        residuals=residuals, reports=tuple(reports))


@dataclass(frozen=True)
class AverageCoverReport:
    """Result of covering j intervals by pieces of the average length."""

    count: int
    bound_3n_ok: bool
    piece_length: mpf
    pieces_per_interval: Tuple[int, ...]


def average_length_cover(lengths: Sequence, budget_length) -> AverageCoverReport:
    """Cover intervals of lengths a_1..a_j by pieces of length budget/j.

    count = sum_k (floor(a_k * j / sum(a)) + 1), evaluated in exact
    rational arithmetic so floor ties cannot flip with rounding; the
    packing bound asserts count <= 3j.  Each interval k fits inside its
    floor(a_k*j/sum)+1 pieces because budget >= sum(a)."""
    j = len(lengths)
    if j == 0:
        return AverageCoverReport(0, True, mpf(0), ())
    fracs = [a if isinstance(a, Fraction) else mpf_to_fraction(a) for a in lengths]
    if any(a <= 0 for a in fracs):
        raise ValueError("interval lengths must be positive")
    total = sum(fracs)
    budget = budget_length if isinstance(budget_length, Fraction) \
        else mpf_to_fraction(budget_length)
    if budget < total:
        raise ValueError("budget_length must be at least the total length")
    per = tuple(int(a * j / total) + 1 for a in fracs)
    count = sum(per)
    with mp.workprec(96):
        piece = mpf(budget.numerator) / budget.denominator / j
    return AverageCoverReport(count=count, bound_3n_ok=count <= 3 * j,
                              piece_length=piece, pieces_per_interval=per)


@dataclass(frozen=True)
class EscapeCoverRecord:
    """One Hausdorff covering-sum record for an escape set F_N."""

    N: int
    hs_sum: mpf
    count: int
    piece_length: mpf
    gate_width: mpf
    escape_length: mpf
    uncertain_length: mpf


def cover_escape_set(q, theta, s: float, N: int, reflection_cap: int,
                     variant: str = "down") -> EscapeCoverRecord:
    """Compute F_N, cover it with average-exiting-length pieces of the
    gate width, and report the H^s covering sum.  Unresolved
    (vertex-uncertain) source intervals are added to the sum at their own
    lengths, keeping the result an honest upper bound for what was
    resolved."""
    from .billiard import escape_set  # deferred: avoids an import cycle

    if not (0 < s <= 1):
        raise ValueError("s must lie in (0, 1]")
    f_n, report = escape_set(q, theta, N, reflection_cap, variant=variant)
    bits = f_n.precision_bits
    gate = report.gate_width
    lengths = [hi - lo for lo, hi in f_n]
    with mp.workprec(bits + 16):
        if lengths:
            cover = average_length_cover(lengths, max(gate, sum(lengths)))
            hs = cover.count * cover.piece_length ** mpf(s)
            count = cover.count
            piece = cover.piece_length
        else:
            hs, count, piece = mpf(0), 0, mpf(0)
        unc = mpf(0)
        for lo, hi in report.uncertain:
            unc += (hi - lo) ** mpf(s)
        hs = hs + unc
        return EscapeCoverRecord(
            N=N, hs_sum=hs, count=count, piece_length=piece,
            gate_width=gate, escape_length=f_n.total_length,
            uncertain_length=report.uncertain.total_length)


def hausdorff_sum_schedule(q, theta, s: float, n_schedule: Sequence[int],
                           reflection_cap: int, variant: str = "down",
                           ) -> List[Tuple[int, mpf]]:
    """H^s covering sums of the escape sets F_N along an increasing
    schedule of cutoffs N; decay along a well-chosen schedule is the
    testable content, not an assumption."""
    ns = list(n_schedule)
    if any(b <= a for a, b in zip(ns, ns[1:])):
        raise ValueError("N schedule must be strictly increasing")
    return [(n, cover_escape_set(q, theta, s, n, reflection_cap, variant).hs_sum)
            for n in ns]
