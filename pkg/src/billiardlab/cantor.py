"""Nested interval hierarchies carrying mass on the circle.

A hierarchy is built from a sparse subsequence of continued-fraction
denominators: level k keeps the intervals of half-width (2|n_k|)^(-mu)/2
centered on lattice orbit points (m*p + k)*omega that are completely
contained in a level-(k-1) interval, and splits each parent's mass
uniformly among its retained children.  All counting and containment is
done in exact fixed-point integer arithmetic (floor sums), so level
counts and masses are exact even when a level is far too large to
enumerate; representative drift is absorbed by per-level guard bands and
any interval whose containment is ambiguous at the guard is discarded,
keeping every reported quantity a certified lower-bound object.
"""

from __future__ import annotations

import math
from bisect import bisect_right
from dataclasses import dataclass
from fractions import Fraction
from typing import List, Optional, Sequence, Tuple

from mpmath import mp, mpf

from .circle import (CirclePoint, ContinuedFractionExpansion,
                     continued_fraction, eval_number, min_orbit_distance)
from .errors import CapTooSmall, DepthUnreachable, EmptyLevel
from .fixedpoint import floor_sum, from_fixed, to_fixed
from .intervals import IntervalUnion

__all__ = [
    "CantorHierarchy",
    "HierarchyLevel",
    "LevelInterval",
    "build_hierarchy",
    "intermediate_interval_check",
    "local_dimension_report",
    "select_sequence",
    "separation_report",
]

DEFAULT_GROWTH_MARGIN = 0.2
DEFAULT_SCAN_CAP = 1 << 21          # max lattice points enumerated per level
DEFAULT_MATERIALIZE_CAP = 1 << 19   # max intervals stored per level
_GUARD_FLOOR = 1 << 8


def _schedule_sign(k: int, m: int) -> int:
    """+1 on the first m steps of each 2m-cycle (1-based k), -1 after."""
    return 1 if ((k - 1) % (2 * m)) <= m - 1 else -1


def _schedule_residue(k: int, m: int) -> int:
    return k % m


def _lattice_range(n_signed: int, m: int, res: int) -> Tuple[int, int]:
    """Indices j with j in sgn(n)*[|n|, 2|n|] and j = m*p + res: the p range."""
    if n_signed > 0:
        j_lo, j_hi = n_signed, 2 * n_signed
    else:
        j_lo, j_hi = 2 * n_signed, n_signed
    p_lo = -((res - j_lo) // m)   # ceil((j_lo - res) / m)
    p_hi = (j_hi - res) // m
    return p_lo, p_hi


def _count_arc(w: int, scale: int, m: int, res: int, p_lo: int, p_hi: int,
               center: int, allow: int) -> int:
    """card{p in [p_lo, p_hi]: the representative ((m*p+res)*w) mod scale
    lies within `allow` of `center` on the circle of circumference scale}.

    Exact for the fixed-point rotation number w/scale, via two floor sums.
    """
    if allow < 0 or p_hi < p_lo:
        return 0
    n = p_hi - p_lo + 1
    width = 2 * allow + 1
    if width >= scale:
        return n
    a = w * m
    b0 = w * (m * p_lo + res) - (center - allow)
    return floor_sum(n, scale, a, b0) - floor_sum(n, scale, a, b0 - width)


def _fmt(x, bits: int) -> str:
    with mp.workprec(bits + 16):
        return mp.nstr(mpf(x), int(bits * 0.30103) + 3, strip_zeros=True)


@dataclass(frozen=True)
class LevelInterval:
    """One retained interval: center = frac(j * omega), width shared by
    the whole level, mass an exact rational."""

    j: int
    center_fp: int
    mass: Fraction
    parent: int


@dataclass(frozen=True)
class HierarchyLevel:
    """Level k of a hierarchy.

    A materialized level stores its intervals sorted by center; a counted
    level (too large to enumerate) stores exact per-parent child counts
    and the mass carried by each child of that parent, aligned with the
    previous level's interval tuple.  ``ambiguous`` counts candidate
    children discarded because their containment could not be certified
    at the guard band.
    """

    k: int
    n_k: int
    half_fp: int
    count: int
    intervals: Optional[Tuple[LevelInterval, ...]]
    child_counts: Optional[Tuple[int, ...]] = None
    child_mass: Optional[Tuple[Fraction, ...]] = None
    ambiguous: int = 0

    @property
    def materialized(self) -> bool:
        return self.intervals is not None

    def max_mass(self) -> Fraction:
        if self.intervals is not None:
            return max(iv.mass for iv in self.intervals)
        return max(self.child_mass)

    def mass_total(self) -> Fraction:
        if self.intervals is not None:
            return sum((iv.mass for iv in self.intervals), Fraction(0))
        return sum((c * w for c, w in zip(self.child_counts, self.child_mass)),
                   Fraction(0))


@dataclass(frozen=True)
class CantorHierarchy:
    """A nested mass-carrying interval hierarchy over a circle rotation."""

    omega: CirclePoint
    mu: mpf
    m: int
    sequence: Tuple[int, ...]
    levels: Tuple[HierarchyLevel, ...]
    residue_schedule: Tuple[Tuple[int, int], ...]
    precision_bits: int

    @property
    def depth(self) -> int:
        return len(self.levels)

    def level(self, k: int) -> HierarchyLevel:
        if not (1 <= k <= self.depth):
            raise ValueError(f"level {k} outside 1..{self.depth}")
        return self.levels[k - 1]

    def children_per_parent(self, k: int) -> Tuple[int, ...]:
        """Child counts of level k grouped by level-(k-1) parent."""
        lev = self.level(k)
        if lev.child_counts is not None:
            return lev.child_counts
        n_parents = 1 if k == 1 else self.levels[k - 2].count
        out = [0] * n_parents
        for iv in lev.intervals:
            out[iv.parent] += 1
        return tuple(out)

    def level_union(self, k: int) -> IntervalUnion:
        """The level's intervals as an interval union on [0, 1), wrapped
        intervals split at 0.  Materialized levels only."""
        lev = self.level(k)
        if lev.intervals is None:
            raise ValueError(f"level {k} is counted, not materialized")
        bits = self.precision_bits
        pairs = []
        with mp.workprec(bits + 16):
            h = from_fixed(lev.half_fp, bits)
            for iv in lev.intervals:
                c = from_fixed(iv.center_fp, bits)
                lo, hi = c - h, c + h
                if lo < 0:
                    pairs.extend([(mpf(0), hi), (lo + 1, mpf(1))])
                elif hi > 1:
                    pairs.extend([(lo, mpf(1)), (mpf(0), hi - 1)])
                else:
                    pairs.append((lo, hi))
        return IntervalUnion.make(pairs, bits)

    def nominal_length(self, k: int) -> mpf:
        """The exact common length (2|n_k|)^(-mu) of level-k intervals."""
        lev = self.level(k)
        with mp.workprec(self.precision_bits + 16):
            return mp.power(2 * abs(lev.n_k), -self.mu)

    def to_json_obj(self) -> dict:
        bits = self.precision_bits
        levels = []
        for i, lev in enumerate(self.levels):
            entry = {
                "k": lev.k,
                "n_k": lev.n_k,
                "count": lev.count,
                "length": _fmt(self.nominal_length(lev.k), bits),
                "ambiguous_discarded": lev.ambiguous,
            }
            if lev.intervals is not None:
                h = from_fixed(lev.half_fp, bits)
                entry["intervals"] = [
                    {"center": _fmt(from_fixed(iv.center_fp, bits), bits),
                     "half_width": _fmt(h, bits),
                     "mass": str(iv.mass)}
                    for iv in lev.intervals]
            else:
                parents = self.levels[i - 1].intervals
                entry["per_parent"] = [
                    {"parent_center": _fmt(from_fixed(p.center_fp, bits), bits),
                     "child_count": c,
                     "child_mass": str(w)}
                    for p, c, w in zip(parents, lev.child_counts, lev.child_mass)]
            levels.append(entry)
        return {
            "omega": _fmt(self.omega.value, bits),
            "mu": _fmt(self.mu, bits),
            "m": self.m,
            "precision_bits": bits,
            "sequence": list(self.sequence),
            "residue_schedule": [[r, s] for r, s in self.residue_schedule],
            "levels": levels,
        }


class _Builder:
    """Shared construction core: exact lattice counting, guard bands,
    level extension (materialized or counted)."""

    def __init__(self, omega: CirclePoint, mu, m: int,
                 scan_cap: int, materialize_cap: int):
        bits = omega.precision_bits
        self.omega = omega
        self.bits = bits
        self.scale = 1 << bits
        self.w = to_fixed(omega.value, bits)
        with mp.workprec(bits + 16):
            self.mu = eval_number(mu, bits) if isinstance(mu, str) else mpf(mu)
            if not self.mu > 1:
                raise ValueError("mu must exceed 1")
        if m < 1:
            raise ValueError("m must be a positive integer")
        self.m = m
        if scan_cap < 1 or materialize_cap < 1:
            raise ValueError("caps must be positive")
        self.scan_cap = scan_cap
        self.materialize_cap = materialize_cap
        self.levels: List[HierarchyLevel] = []

    # -- per-candidate geometry --------------------------------------

    def half_fp(self, n_abs: int) -> int:
        """floor(scale * (2n)^(-mu) / 2): fixed-point interval half-width."""
        with mp.workprec(self.bits + 64):
            return int(mp.floor(mp.power(2 * n_abs, -self.mu) * self.scale / 2))

    def guard(self, n_abs: int) -> int:
        """Representative drift bound: |j| ulps for lattice indices up to
        2|n_k|, the parent center's own drift, and floor slack."""
        prev = abs(self.levels[-1].n_k) if self.levels else 0
        return max(_GUARD_FLOOR, 2 * (n_abs + prev) + 4)

    def _lattice(self, n_signed: int, k: int) -> Tuple[int, int, int]:
        res = _schedule_residue(k, self.m)
        p_lo, p_hi = _lattice_range(n_signed, self.m, res)
        return res, p_lo, p_hi

    def _check_resolution(self, k: int, n_abs: int) -> None:
        half = self.half_fp(n_abs)
        if 2 * half < (1 << (self.bits // 2)):
            raise DepthUnreachable(
                f"level-{k} interval length falls below the precision floor "
                f"2^-{self.bits // 2}; increase precision_bits")
        if self.guard(n_abs) << 16 > max(half, 1):
            raise DepthUnreachable(
                f"level-{k} guard band is not negligible against the interval "
                "width at this precision; increase precision_bits")

    def disjoint_ok(self, cf: ContinuedFractionExpansion, n_abs: int) -> bool:
        """Certify that distinct lattice centers at this level are farther
        apart than a full interval plus both guard bands."""
        gap_fp = to_fixed(min_orbit_distance(cf, n_abs), self.bits)
        return gap_fp > 2 * (self.half_fp(n_abs) + self.guard(n_abs))

    def well_holds(self, n_signed: int, k: int) -> bool:
        """Sufficient check of the per-parent density condition
        |I|/2 <= count/|n_k| <= 2|I| (counts resolved conservatively)."""
        q = abs(n_signed)
        res, p_lo, p_hi = self._lattice(n_signed, k)
        if not self.levels:
            n_pts = max(p_hi - p_lo + 1, 0)
            return Fraction(1, 2) <= Fraction(n_pts, q) <= 2
        parent = self.levels[-1]
        if parent.intervals is None:
            raise CapTooSmall(
                "cannot verify the density condition against a counted level")
        half = parent.half_fp
        g = self.guard(q)
        len_lo = Fraction(2 * half, self.scale)
        len_hi = Fraction(2 * half + 2, self.scale)
        for iv in parent.intervals:
            loose = _count_arc(self.w, self.scale, self.m, res, p_lo, p_hi,
                               iv.center_fp, half + g)
            if Fraction(loose, q) > 2 * len_lo:
                return False
            strict = _count_arc(self.w, self.scale, self.m, res, p_lo, p_hi,
                                iv.center_fp, half - g)
            if Fraction(strict, q) < len_hi / 2:
                return False
        return True

    # -- level extension ----------------------------------------------

    def extend(self, n_signed: int, k: int, *, final: bool) -> None:
        """Append level k for n_k = n_signed, materialized when it fits the
        caps, counted (exact per-parent floor-sum counts) when it is the
        final level and does not.  Raises EmptyLevel if some parent would
        keep no certified child; the builder is unchanged on any raise."""
        q = abs(n_signed)
        self._check_resolution(k, q)
        half = self.half_fp(q)
        g = self.guard(q)
        res, p_lo, p_hi = self._lattice(n_signed, k)
        n_pts = p_hi - p_lo + 1
        if n_pts <= 0:
            raise EmptyLevel(f"no admissible lattice indices at level {k}")
        parent = self.levels[-1] if self.levels else None
        if parent is not None and parent.intervals is None:
            raise CapTooSmall("cannot extend below a counted level")

        if n_pts > self.scan_cap:
            if not final:
                raise CapTooSmall(
                    f"level {k} needs {n_pts} lattice points, above "
                    f"scan_cap={self.scan_cap}, and deeper levels require a "
                    "materialized parent")
            self.levels.append(self._counted_level(
                n_signed, k, half, g, res, p_lo, p_hi, parent))
            return

        level = self._enumerated_level(
            n_signed, k, half, g, res, p_lo, p_hi, parent, final)
        self.levels.append(level)

    def _counted_level(self, n_signed, k, half, g, res, p_lo, p_hi,
                       parent) -> HierarchyLevel:
        if parent is None:
            n_pts = p_hi - p_lo + 1
            return HierarchyLevel(
                k=k, n_k=n_signed, half_fp=half, count=n_pts, intervals=None,
                child_counts=(n_pts,), child_mass=(Fraction(1, n_pts),))
        allow = parent.half_fp - half
        counts: List[int] = []
        masses: List[Fraction] = []
        ambiguous = 0
        for i, iv in enumerate(parent.intervals):
            strict = _count_arc(self.w, self.scale, self.m, res, p_lo, p_hi,
                                iv.center_fp, allow - g)
            loose = _count_arc(self.w, self.scale, self.m, res, p_lo, p_hi,
                               iv.center_fp, allow + g)
            if strict == 0:
                raise EmptyLevel(
                    f"parent {i} at level {k} keeps no certified children")
            counts.append(strict)
            masses.append(iv.mass / strict)
            ambiguous += loose - strict
        return HierarchyLevel(
            k=k, n_k=n_signed, half_fp=half, count=sum(counts), intervals=None,
            child_counts=tuple(counts), child_mass=tuple(masses),
            ambiguous=ambiguous)

    def _enumerated_level(self, n_signed, k, half, g, res, p_lo, p_hi,
                          parent, final: bool) -> HierarchyLevel:
        scale = self.scale
        step = (self.m * self.w) % scale
        c = (self.w * (self.m * p_lo + res)) % scale

        if parent is None:
            children = []
            mass = Fraction(1, p_hi - p_lo + 1)
            for p in range(p_lo, p_hi + 1):
                children.append(LevelInterval(
                    j=self.m * p + res, center_fp=c, mass=mass, parent=0))
                c = (c + step) % scale
            children.sort(key=lambda iv: iv.center_fp)
            return HierarchyLevel(
                k=k, n_k=n_signed, half_fp=half, count=len(children),
                intervals=tuple(children))

        centers = [iv.center_fp for iv in parent.intervals]
        n_parents = len(centers)
        allow = parent.half_fp - half
        strict_allow = allow - g
        loose_allow = allow + g
        per_parent: List[List[Tuple[int, int]]] = [[] for _ in range(n_parents)]
        ambiguous = 0
        for p in range(p_lo, p_hi + 1):
            i = bisect_right(centers, c)
            cands = ((i - 1) % n_parents,) if n_parents == 1 else \
                ((i - 1) % n_parents, i % n_parents)
            hit = -1
            near = False
            for cand in cands:
                d = (c - centers[cand]) % scale
                d = min(d, scale - d)
                if d <= strict_allow:
                    hit = cand
                    break
                if d <= loose_allow:
                    near = True
            if hit >= 0:
                per_parent[hit].append((c, self.m * p + res))
            elif near:
                ambiguous += 1
            c = (c + step) % scale

        counts = [len(lst) for lst in per_parent]
        for i, n_children in enumerate(counts):
            if n_children == 0:
                raise EmptyLevel(
                    f"parent {i} at level {k} keeps no certified children")
        total = sum(counts)
        if total > self.materialize_cap:
            if not final:
                raise CapTooSmall(
                    f"level {k} retains {total} intervals, above "
                    f"materialize_cap={self.materialize_cap}, and deeper "
                    "levels require a materialized parent")
            masses = tuple(parent.intervals[i].mass / counts[i]
                           for i in range(n_parents))
            return HierarchyLevel(
                k=k, n_k=n_signed, half_fp=half, count=total, intervals=None,
                child_counts=tuple(counts), child_mass=masses,
                ambiguous=ambiguous)
        children = []
        for i, lst in enumerate(per_parent):
            mass = parent.intervals[i].mass / counts[i]
            for c_fp, j in lst:
                children.append(LevelInterval(
                    j=j, center_fp=c_fp, mass=mass, parent=i))
        children.sort(key=lambda iv: iv.center_fp)
        return HierarchyLevel(
            k=k, n_k=n_signed, half_fp=half, count=total,
            intervals=tuple(children), ambiguous=ambiguous)


def select_sequence(cf: ContinuedFractionExpansion, mu, m: int, depth: int,
                    growth_margin: float = DEFAULT_GROWTH_MARGIN, *,
                    scan_cap: int = DEFAULT_SCAN_CAP,
                    materialize_cap: int = DEFAULT_MATERIALIZE_CAP,
                    ) -> List[int]:
    """Choose the sparse signed denominator sequence n_1..n_depth.

    At each step k the sign follows the 2m-periodic schedule (positive on
    the first m steps of each cycle) and the magnitude is the least
    validated convergent denominator above |n_(k-1)| that (a) keeps the
    running product log negligible, log(prod |n_i|) <= margin * log|n_k|,
    (b) has certifiably separated lattice centers, (c) satisfies the
    per-parent density condition |I|/2 <= count/|n_k| <= 2|I| against
    every level-(k-1) interval, and (d) leaves every parent at least one
    certified child.  Candidates failing any condition are skipped;
    exhausting the validated expansion raises DepthUnreachable.
    """
    if depth < 1:
        raise ValueError("depth must be at least 1")
    if not growth_margin > 0:
        raise ValueError("growth_margin must be positive")
    if cf.validated_depth < 1:
        raise ValueError("continued fraction has no validated convergents")
    builder = _Builder(cf.omega, mu, m, scan_cap, materialize_cap)
    sequence: List[int] = []
    log_product = 0.0
    r_next = 1
    for k in range(1, depth + 1):
        sign = _schedule_sign(k, m)
        last_abs = abs(sequence[-1]) if sequence else 0
        chosen = None
        for r in range(r_next, cf.validated_depth + 1):
            q = cf.denominator(r)
            if q <= last_abs:
                continue
            if k > 1 and log_product > growth_margin * math.log(q):
                continue
            if not builder.disjoint_ok(cf, q):
                continue
            n_cand = sign * q
            if not builder.well_holds(n_cand, k):
                continue
            try:
                builder.extend(n_cand, k, final=(k == depth))
            except EmptyLevel:
                continue
            chosen = n_cand
            r_next = r + 1
            break
        if chosen is None:
            raise DepthUnreachable(
                f"no validated convergent denominator satisfies the selection "
                f"conditions at step {k} (validated depth "
                f"{cf.validated_depth}, margin {growth_margin})")
        sequence.append(chosen)
        log_product += math.log(abs(chosen))
    return sequence


def build_hierarchy(omega: CirclePoint, mu, m: int,
                    sequence: Sequence[int], *,
                    scan_cap: int = DEFAULT_SCAN_CAP,
                    materialize_cap: int = DEFAULT_MATERIALIZE_CAP,
                    ) -> CantorHierarchy:
    """Materialize the mass-carrying hierarchy for a selected sequence.

    Levels are stored with their intervals while they fit the caps; the
    deepest level may instead carry exact per-parent child counts and
    masses computed by floor sums (an intermediate level that does not
    fit raises CapTooSmall, since its children would need the geometry).
    Masses split each parent's mass uniformly among its retained
    children, so they sum to exactly 1 at every level.
    """
    seq = tuple(int(n) for n in sequence)
    if not seq:
        raise ValueError("sequence must be nonempty")
    if m < 1:
        raise ValueError("m must be a positive integer")
    for k, n in enumerate(seq, 1):
        if n == 0:
            raise ValueError("sequence entries must be nonzero")
        if (1 if n > 0 else -1) != _schedule_sign(k, m):
            raise ValueError(
                f"sign of n_{k} does not follow the 2m-periodic schedule")
        if k > 1 and abs(n) <= abs(seq[k - 2]):
            raise ValueError("|n_k| must be strictly increasing")
    cf = continued_fraction(omega, max_depth=2048)
    denominators = {q for _, q in cf.convergents}
    for n in seq:
        if abs(n) not in denominators:
            raise ValueError(
                f"|n_k| = {abs(n)} is not a validated convergent denominator")
    builder = _Builder(omega, mu, m, scan_cap, materialize_cap)
    depth = len(seq)
    for k, n in enumerate(seq, 1):
        if not builder.disjoint_ok(cf, abs(n)):
            raise ValueError(
                f"lattice centers at level {k} are not certifiably separated "
                "by a full interval width")
        builder.extend(n, k, final=(k == depth))
    schedule = tuple((_schedule_residue(k, m), _schedule_sign(k, m))
                     for k in range(1, depth + 1))
    return CantorHierarchy(
        omega=omega, mu=builder.mu, m=m, sequence=seq,
        levels=tuple(builder.levels), residue_schedule=schedule,
        precision_bits=omega.precision_bits)


def local_dimension_report(h: CantorHierarchy) -> List[Tuple[int, mpf]]:
    """Per-level minimum of log(mass)/log(length) over the level's
    intervals; the deepest entry is the headline dimension lower bound.

    All intervals at one level share the exact length (2|n_k|)^(-mu), so
    the minimum ratio is attained by the heaviest interval.
    """
    if h.depth < 2:
        raise ValueError("hierarchy must have at least 2 levels")
    out: List[Tuple[int, mpf]] = []
    with mp.workprec(h.precision_bits + 16):
        for lev in h.levels:
            log_len = -h.mu * mp.log(2 * abs(lev.n_k))
            heaviest = lev.max_mass()
            log_mass = mp.log(mpf(heaviest.numerator)) - \
                mp.log(mpf(heaviest.denominator))
            out.append((lev.k, log_mass / log_len))
    return out


def separation_report(h: CantorHierarchy) -> List[dict]:
    """Per-level center separation: the exact minimum orbit gap over the
    level's index range, the measured minimum between retained centers
    (materialized levels), and both the (n+2)-reciprocal comparison bound
    and the companion bound 1/(q_next + |n_k|) that the gap provably
    dominates."""
    cf = continued_fraction(h.omega, max_depth=2048)
    bits = h.precision_bits
    denoms = [q for _, q in cf.convergents]
    out = []
    with mp.workprec(bits + 16):
        for lev in h.levels:
            n_abs = abs(lev.n_k)
            orbit_min = min_orbit_distance(cf, n_abs)
            claimed = mpf(1) / (n_abs + 2)
            companion = None
            if n_abs in denoms:
                r = denoms.index(n_abs)
                if r + 1 < len(denoms):
                    companion = mpf(1) / (denoms[r + 1] + n_abs)
            measured = None
            if lev.intervals is not None and lev.count >= 2:
                centers = [iv.center_fp for iv in lev.intervals]
                best = min(b - a for a, b in zip(centers, centers[1:]))
                wrap = (1 << bits) - centers[-1] + centers[0]
                best = min(best, wrap)
                measured = from_fixed(best, bits)
            out.append({
                "level": lev.k,
                "n_k": lev.n_k,
                "orbit_min_distance": orbit_min,
                "measured_min_distance": measured,
                "claimed_bound": claimed,
                "claimed_ok": bool(orbit_min >= claimed),
                "companion_bound": companion,
                "companion_ok": None if companion is None
                else bool(orbit_min >= companion),
            })
    return out


def intermediate_interval_check(h: CantorHierarchy, lo, hi) -> dict:
    """Audit a test interval whose length falls between two consecutive
    level lengths: count the level-k lattice points it contains away from
    its boundary (erosion radius one full level-k interval length) and
    compare its length against both the (n+2)-reciprocal spacing bound
    and the exact orbit-gap bound (r-1) * min_gap, which always holds."""
    bits = h.precision_bits
    scale = 1 << bits
    with mp.workprec(bits + 16):
        lo_m = eval_number(lo, bits) if isinstance(lo, str) else mpf(lo)
        hi_m = eval_number(hi, bits) if isinstance(hi, str) else mpf(hi)
        length = hi_m - lo_m
        if not (0 < length < 1):
            raise ValueError("interval length must lie in (0, 1)")
        k_found = None
        for lev in h.levels:
            upper = mpf(1) if lev.k == 1 else h.nominal_length(lev.k - 1)
            if h.nominal_length(lev.k) < length < upper:
                k_found = lev.k
                break
        if k_found is None:
            raise ValueError(
                "interval length does not fall strictly between consecutive "
                "level lengths")
        lev = h.level(k_found)
        n_abs = abs(lev.n_k)
        erosion = mp.power(2 * n_abs, -h.mu)
        center_fp = to_fixed((lo_m + hi_m) / 2, bits) % scale
        half_fp = to_fixed(length / 2, bits)
        erosion_fp = int(mp.floor(erosion * scale))
    w = to_fixed(h.omega.value, bits)
    res = _schedule_residue(k_found, h.m)
    p_lo, p_hi = _lattice_range(lev.n_k, h.m, res)
    g = max(_GUARD_FLOOR, 2 * n_abs + 4)
    allow = half_fp - erosion_fp
    r_strict = _count_arc(w, scale, h.m, res, p_lo, p_hi, center_fp, allow - g)
    r_loose = _count_arc(w, scale, h.m, res, p_lo, p_hi, center_fp, allow + g)
    cf = continued_fraction(h.omega, max_depth=2048)
    with mp.workprec(bits + 16):
        orbit_min = min_orbit_distance(cf, n_abs)
        claimed_bound = mpf(r_strict - 1) / (n_abs + 2)
        true_bound = (r_strict - 1) * orbit_min
        return {
            "k": k_found,
            "n_k": lev.n_k,
            "r": r_strict,
            "r_loose": r_loose,
            "length": length,
            "erosion_radius": erosion,
            "claimed_bound": claimed_bound,
            "claimed_ok": bool(length >= claimed_bound),
            "true_bound": true_bound,
            "true_ok": bool(length >= true_bound),
        }
