"""Directional billiards in two-direction polygons.

Everything here concerns polygons whose sides are parallel either to the
x-axis (BASE sides) or to a fixed slanted direction at angle ``alpha``
(SLANT sides).  For a fixed ray direction the rays crossing the polygon
form a cross-section parameterized by arc length on the perpendicular
axis (increasing arc length points along direction + pi/2); a pair of
consecutive reflections maps beams of parallel rays isometrically between
cross-sections whose directions differ by 0 or +-2*alpha, which gives each
beam a signed integer level relative to its base direction.

Beam positions are carried as fixed-point integers at the polygon's
precision, so every traced child interval is an exact isometric image of
its source interval.  Geometric data (vertex shadows, per-reflection
offsets) is quantized once per (direction, source side) into cached
transit tables; a guard zone of width 2^-(precision_bits//2) around every
genuine vertex shadow is excluded from tracing and reported separately,
keeping all reported lengths conservative.

Dynamic operations (partitioning, beam tracing, escape sets) require each
stabbing line to cross the polygon in a single chord for the directions
involved; polygon construction and cross-sections handle the general
multi-chord case.
"""

from __future__ import annotations

import warnings
from bisect import bisect_right
from dataclasses import dataclass
from enum import Enum
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

from mpmath import mp, mpf

from .circle import DEFAULT_PRECISION, detect_rational_angle, eval_number
from .errors import (DegenerateDirection, NotGeneralizedParallelogram,
                     RationalAngle)
from .fixedpoint import from_fixed, to_fixed
from .intervals import IntervalUnion

_LAUNCH = -1  # pseudo source-side index: beam resting on a cross-section

# Internal beam-state tuples: (side, lo, hi, eps, n, sgn, disp, refl, hist)
# with lo/hi/disp fixed-point ints, c_now = sgn * c_source + disp, and hist
# a cons list ((entry, parent) chains) or None.


class SideClass(Enum):
    """Which of the two admissible directions a polygon side is parallel to."""

    BASE = "base"    # parallel to the x-axis
    SLANT = "slant"  # parallel to (cos alpha, sin alpha)


class BeamStatus(Enum):
    ACTIVE = "active"
    RETURNED = "returned"
    ESCAPED = "escaped"
    VERTEX_UNCERTAIN = "vertex_uncertain"


@dataclass(frozen=True)
class GeneralizedParallelogram:
    """Simple polygon whose sides are parallel to the x-axis or to alpha.

    ``vertices`` are stored counterclockwise; ``side_classes[i]`` tags the
    side from ``vertices[i]`` to ``vertices[i+1]``.  ``alpha_rational`` is
    ``alpha/pi`` as an exact fraction when that ratio is rational at the
    working precision, else None.
    """

    vertices: Tuple[Tuple[mpf, mpf], ...]
    alpha: mpf
    side_classes: Tuple[SideClass, ...]
    alpha_rational: Optional[Fraction]
    precision_bits: int = DEFAULT_PRECISION

    @property
    def n_sides(self) -> int:
        return len(self.vertices)

    def side(self, i: int) -> Tuple[Tuple[mpf, mpf], Tuple[mpf, mpf]]:
        return self.vertices[i], self.vertices[(i + 1) % len(self.vertices)]

    @property
    def is_convex(self) -> bool:
        vs = self.vertices
        m = len(vs)
        with mp.workprec(self.precision_bits + 16):
            for i in range(m):
                ax, ay = vs[i]
                bx, by = vs[(i + 1) % m]
                cx, cy = vs[(i + 2) % m]
                if (bx - ax) * (cy - by) - (by - ay) * (cx - bx) < 0:
                    return False
        return True

    @property
    def return_modulus(self) -> Optional[int]:
        """Smallest q > 0 with 2*q*alpha a multiple of 2*pi, None if irrational.

        A beam's direction repeats its base direction exactly when its
        level is a multiple of this modulus.
        """
        if self.alpha_rational is None:
            return None
        return self.alpha_rational.denominator


# --------------------------------------------------------------------------
# Polygon construction and validation
# --------------------------------------------------------------------------


def _classify_sides(verts, alpha, bits):
    """Tag each side BASE or SLANT; raise if any side fits neither."""
    m = len(verts)
    tol = mpf(2) ** (-(bits // 2))
    cos_a, sin_a = mp.cos(alpha), mp.sin(alpha)
    classes = []
    for i in range(m):
        ax, ay = verts[i]
        bx, by = verts[(i + 1) % m]
        dx, dy = bx - ax, by - ay
        length = mp.hypot(dx, dy)
        if length <= tol:
            raise NotGeneralizedParallelogram(
                f"side {i} has zero length at working precision")
        if abs(dy) <= tol * length:
            classes.append(SideClass.BASE)
        elif abs(dx * sin_a - dy * cos_a) <= tol * length:
            classes.append(SideClass.SLANT)
        else:
            raise NotGeneralizedParallelogram(
                f"side {i} is parallel neither to the x-axis nor to "
                f"direction alpha={mp.nstr(alpha, 12)}")
    return tuple(classes)


def _signed_area(verts) -> mpf:
    total = mpf(0)
    m = len(verts)
    for i in range(m):
        ax, ay = verts[i]
        bx, by = verts[(i + 1) % m]
        total += ax * by - bx * ay
    return total / 2


def _is_simple(verts, bits) -> bool:
    """Reject self-intersecting vertex cycles (shared endpoints of
    adjacent sides excluded)."""
    m = len(verts)
    scale = max(max(abs(x), abs(y)) for x, y in verts) + 1
    ztol = mpf(2) ** (-(bits // 2)) * scale * scale

    def cross(ox, oy, ax, ay, bx, by):
        return (ax - ox) * (by - oy) - (ay - oy) * (bx - ox)

    for i in range(m):
        p1, p2 = verts[i], verts[(i + 1) % m]
        for j in range(i + 1, m):
            if j == i or (j + 1) % m == i or (i + 1) % m == j:
                continue  # adjacent (or identical) sides share a vertex
            p3, p4 = verts[j], verts[(j + 1) % m]
            d1 = cross(p3[0], p3[1], p4[0], p4[1], p1[0], p1[1])
            d2 = cross(p3[0], p3[1], p4[0], p4[1], p2[0], p2[1])
            d3 = cross(p1[0], p1[1], p2[0], p2[1], p3[0], p3[1])
            d4 = cross(p1[0], p1[1], p2[0], p2[1], p4[0], p4[1])
            if ((d1 > ztol and d2 < -ztol) or (d1 < -ztol and d2 > ztol)) and \
               ((d3 > ztol and d4 < -ztol) or (d3 < -ztol and d4 > ztol)):
                return False
            if (abs(d1) <= ztol and abs(d2) <= ztol
                    and abs(d3) <= ztol and abs(d4) <= ztol):
                # collinear sides: reject if their spans overlap
                lo1 = min(p1[0], p2[0]), min(p1[1], p2[1])
                hi1 = max(p1[0], p2[0]), max(p1[1], p2[1])
                lo2 = min(p3[0], p4[0]), min(p3[1], p4[1])
                hi2 = max(p3[0], p4[0]), max(p3[1], p4[1])
                if (lo1[0] <= hi2[0] and lo2[0] <= hi1[0]
                        and lo1[1] <= hi2[1] and lo2[1] <= hi1[1]):
                    return False
    return True


def _finish_polygon(verts, alpha, bits) -> GeneralizedParallelogram:
    with mp.workprec(bits + 64):
        if not (0 < alpha < mp.pi / 2):
            raise ValueError("alpha must lie strictly inside (0, pi/2)")
        if len(verts) < 3:
            raise NotGeneralizedParallelogram("need at least 3 vertices")
        area = _signed_area(verts)
        if abs(area) <= mpf(2) ** (-(bits // 2)):
            raise NotGeneralizedParallelogram(
                "polygon is degenerate (vanishing area)")
        if area < 0:
            verts = tuple(reversed(verts))
        classes = _classify_sides(verts, alpha, bits)
        if not _is_simple(verts, bits):
            raise NotGeneralizedParallelogram("polygon is self-intersecting")
        ratio = alpha / mp.pi
    rational = detect_rational_angle(ratio, bits)
    if rational is not None:
        warnings.warn(RationalAngle(
            f"alpha = {rational} * pi is a rational angle; the direction "
            f"group is finite and every beam eventually repeats"))
    return GeneralizedParallelogram(
        vertices=tuple(verts), alpha=alpha, side_classes=classes,
        alpha_rational=rational, precision_bits=bits)


def rhombus(alpha, side=1, precision_bits: int = DEFAULT_PRECISION,
            ) -> GeneralizedParallelogram:
    """Rhombus with angle alpha at the origin and the given side length."""
    bits = precision_bits
    with mp.workprec(bits + 64):
        a = eval_number(alpha, bits + 48)
        s = eval_number(side, bits + 48)
        if s <= 0:
            raise ValueError("side length must be positive")
        zero = mpf(0)
        c, sn = s * mp.cos(a), s * mp.sin(a)
        verts = ((zero, zero), (s, zero), (s + c, sn), (c, sn))
    return _finish_polygon(verts, a, bits)


def parallelogram(alpha, base, side, precision_bits: int = DEFAULT_PRECISION,
                  ) -> GeneralizedParallelogram:
    """Parallelogram with a horizontal base and slanted sides at alpha."""
    bits = precision_bits
    with mp.workprec(bits + 64):
        a = eval_number(alpha, bits + 48)
        b = eval_number(base, bits + 48)
        s = eval_number(side, bits + 48)
        if b <= 0 or s <= 0:
            raise ValueError("base and side lengths must be positive")
        zero = mpf(0)
        c, sn = s * mp.cos(a), s * mp.sin(a)
        verts = ((zero, zero), (b, zero), (b + c, sn), (c, sn))
    return _finish_polygon(verts, a, bits)


def polygon_from_vertices(vertices: Sequence[Sequence], alpha=None,
                          precision_bits: int = DEFAULT_PRECISION,
                          ) -> GeneralizedParallelogram:
    """Validate an explicit vertex list; infer alpha from the slanted
    sides when not given."""
    bits = precision_bits
    with mp.workprec(bits + 64):
        verts = tuple((eval_number(x, bits + 48), eval_number(y, bits + 48))
                      for x, y in vertices)
        if alpha is not None:
            a = eval_number(alpha, bits + 48)
        else:
            a = None
            tol = mpf(2) ** (-(bits // 2))
            for i in range(len(verts)):
                ax, ay = verts[i]
                bx, by = verts[(i + 1) % len(verts)]
                dx, dy = bx - ax, by - ay
                length = mp.hypot(dx, dy)
                if length > tol and abs(dy) > tol * length:
                    a = mp.atan2(dy, dx) % mp.pi
                    break
            if a is None:
                raise NotGeneralizedParallelogram(
                    "all sides are horizontal; cannot infer alpha")
            if not (0 < a < mp.pi / 2):
                raise NotGeneralizedParallelogram(
                    "slanted sides must have inclination in (0, pi/2)")
    return _finish_polygon(verts, a, bits)


def build_polygon(spec) -> GeneralizedParallelogram:
    """Construct a polygon from a declarative spec.

    Accepts an already-built polygon (returned unchanged) or a mapping with
    a ``type`` key: ``rhombus`` (alpha, side), ``parallelogram`` (alpha,
    base, side) or ``polygon`` / ``vertices`` (vertices, optional alpha).
    Numeric fields may be strings ("pi/3", "0.7") for exact parsing.
    """
    if isinstance(spec, GeneralizedParallelogram):
        return spec
    if not isinstance(spec, dict):
        raise ValueError("polygon spec must be a mapping or a polygon")
    kind = spec.get("type")
    bits = int(spec.get("precision_bits", DEFAULT_PRECISION))
    if kind == "rhombus":
        return rhombus(spec["alpha"], spec.get("side", 1), bits)
    if kind == "parallelogram":
        return parallelogram(spec["alpha"], spec["base"], spec["side"], bits)
    if kind in ("polygon", "vertices", "explicit"):
        return polygon_from_vertices(spec["vertices"], spec.get("alpha"), bits)
    raise ValueError(f"unknown polygon type {kind!r}")


# --------------------------------------------------------------------------
# Cross-sections and beams
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class CrossSection:
    """Arc-length view of the rays with a fixed direction crossing a polygon.

    ``segments`` is the stabbed span on the perpendicular axis;
    ``pieces`` lists (lo, hi, chords) cells where ``chords`` counts how
    many disjoint chords a stabbing line at that offset crosses; ``width``
    is the total ray measure (chord-multiplicity weighted), which equals
    the plain directional width exactly when every line crosses one chord.
    """

    theta: mpf
    segments: IntervalUnion
    width: mpf
    pieces: Tuple[Tuple[mpf, mpf, int], ...]
    precision_bits: int = DEFAULT_PRECISION

    @property
    def multi_chord(self) -> bool:
        return any(m > 1 for _, _, m in self.pieces)


@dataclass(frozen=True)
class Beam:
    """Interval of parallel rays on a cross-section.

    ``lo``/``hi`` bound the current interval on the level's section;
    ``source_lo``/``source_hi`` bound its exact preimage on the base
    section where the beam was launched.  ``direction`` equals
    theta + 2*level*alpha (mod 2*pi) whenever the status is not
    VERTEX_UNCERTAIN.  ``history``, when recorded, lists
    (reflections, side, level, lo, hi) snapshots taken each time the beam
    lands on a section.
    """

    lo: mpf
    hi: mpf
    level: int
    direction: mpf
    reflections: int
    status: BeamStatus
    source_lo: Optional[mpf] = None
    source_hi: Optional[mpf] = None
    history: Optional[Tuple[Tuple[int, int, int, mpf, mpf], ...]] = None

    @property
    def length(self) -> mpf:
        with mp.workprec(max(mp.prec, 2 * DEFAULT_PRECISION)):
            return self.hi - self.lo


def beam_on_section(q: GeneralizedParallelogram, theta, lo, hi,
                    level: int = 0) -> Beam:
    """Active beam resting on the level-``level`` section of direction theta."""
    bits = q.precision_bits
    with mp.workprec(bits + 48):
        th = eval_number(theta, bits + 32) % (2 * mp.pi)
        direction = (th + 2 * level * q.alpha) % (2 * mp.pi)
        lo_m, hi_m = mpf(lo), mpf(hi)
        if not hi_m > lo_m:
            raise ValueError("beam interval must have positive length")
    return Beam(lo=lo_m, hi=hi_m, level=level, direction=direction,
                reflections=0, status=BeamStatus.ACTIVE,
                source_lo=lo_m, source_hi=hi_m)


# --------------------------------------------------------------------------
# Transit tables and the tracing engine
# --------------------------------------------------------------------------


class _Table:
    """Carved transit cells for one (direction, source side) pair.

    ``los``/``his`` bound the guard-carved cells; per cell ``targets`` is
    the side hit next, ``deltas`` the fixed-point reflection offset
    (c -> delta - c), ``classes`` the target's side class as an int
    (0 BASE, 1 SLANT).  ``raw_cells`` (launch tables only) keeps the
    uncarved (lo, hi, chords) decomposition for cross-section reporting.
    """

    __slots__ = ("dom_lo", "dom_hi", "los", "his", "targets", "deltas",
                 "classes", "raw_cells", "max_chords", "width_exact")

    def __init__(self):
        self.los: List[int] = []
        self.his: List[int] = []
        self.targets: List[int] = []
        self.deltas: List[int] = []
        self.classes: List[int] = []
        self.raw_cells: List[Tuple[int, int, int]] = []
        self.max_chords = 1
        self.width_exact: Optional[mpf] = None


_TABLE_CACHE_LIMIT = 60000


class _Tracer:
    """Beam-transit engine for one polygon and one base direction."""

    def __init__(self, q: GeneralizedParallelogram, theta, bits: Optional[int] = None):
        self.q = q
        self.P = q.precision_bits if bits is None else bits
        self.guard = 1 << (self.P // 2)  # ints; c-width 2^-(P//2)
        with mp.workprec(self.P + 64):
            self.theta = eval_number(theta, self.P + 48) % (2 * mp.pi)
            self.two_pi = 2 * mp.pi
        self.alpha = q.alpha
        self.b_mod = q.return_modulus
        self.classes_int = tuple(0 if c is SideClass.BASE else 1
                                 for c in q.side_classes)
        self.tables: Dict[Tuple[int, int, int], _Table] = {}

    # -- directions ---------------------------------------------------

    def _phi(self, eps: int, n: int) -> mpf:
        with mp.workprec(self.P + 64):
            return (eps * self.theta + 2 * n * self.alpha) % self.two_pi

    def _key(self, eps: int, n: int, side: int) -> Tuple[int, int, int]:
        if self.b_mod is not None:
            n = n % self.b_mod
        return (eps, n, side)

    def _table(self, eps: int, n: int, side: int) -> _Table:
        key = self._key(eps, n, side)
        tbl = self.tables.get(key)
        if tbl is None:
            if len(self.tables) > _TABLE_CACHE_LIMIT:
                self.tables.clear()
            tbl = self._build_table(key[0], key[1], side)
            self.tables[key] = tbl
        return tbl

    # -- geometry -----------------------------------------------------

    def _cast_from_point(self, px, py, dx, dy, skip_side: int):
        """First boundary hit of the ray from (px, py): (side, t, hx, hy)."""
        verts = self.q.vertices
        m = len(verts)
        best = None
        for s2 in range(m):
            if s2 == skip_side:
                continue
            cx, cy = verts[s2]
            dx2, dy2 = verts[(s2 + 1) % m]
            ex, ey = dx2 - cx, dy2 - cy
            den = dx * ey - dy * ex
            if den == 0:
                continue
            rx, ry = cx - px, cy - py
            t = (rx * ey - ex * ry) / den
            if t <= 0:
                continue
            u = (dy * rx - dx * ry) / den
            if u < 0 or u > 1:
                continue
            if best is None or t < best[1]:
                best = (s2, t, px + t * dx, py + t * dy)
        if best is None:
            raise DegenerateDirection(
                "ray from the boundary found no forward intersection; "
                "direction is parallel to a side within precision")
        return best

    def _stab_all(self, px, py, dx, dy):
        """All boundary hits of the full forward ray, sorted by distance."""
        verts = self.q.vertices
        m = len(verts)
        hits = []
        for s2 in range(m):
            cx, cy = verts[s2]
            dx2, dy2 = verts[(s2 + 1) % m]
            ex, ey = dx2 - cx, dy2 - cy
            den = dx * ey - dy * ex
            if den == 0:
                continue
            rx, ry = cx - px, cy - py
            t = (rx * ey - ex * ry) / den
            if t <= 0:
                continue
            u = (dy * rx - dx * ry) / den
            if u < 0 or u > 1:
                continue
            hits.append((t, s2, px + t * dx, py + t * dy))
        hits.sort(key=lambda h: h[0])
        return hits

    def _reflected(self, phi: mpf, cls: int) -> mpf:
        if cls == 0:
            return (-phi) % self.two_pi
        return (2 * self.alpha - phi) % self.two_pi

    def _build_table(self, eps: int, n: int, side: int) -> _Table:
        P = self.P
        q = self.q
        verts = q.vertices
        m = len(verts)
        with mp.workprec(P + 64):
            phi = self._phi(eps, n)
            gtol = mpf(2) ** (-(P // 2))
            if abs(mp.sin(phi)) < gtol or abs(mp.sin(phi - self.alpha)) < gtol:
                raise DegenerateDirection(
                    f"direction {mp.nstr(phi, 12)} (level offset {n}) is "
                    f"parallel to a side class within the precision guard")
            dx, dy = mp.cos(phi), mp.sin(phi)
            nx, ny = -dy, dx
            proj = [vx * nx + vy * ny for vx, vy in verts]
            proj_i = [to_fixed(p, P) for p in proj]
            if side == _LAUNCH:
                dom_lo, dom_hi = min(proj_i), max(proj_i)
                reach = max(abs(vx * dx + vy * dy) for vx, vy in verts) + 1
            else:
                a_i, b_i = proj_i[side], proj_i[(side + 1) % m]
                dom_lo, dom_hi = (a_i, b_i) if a_i <= b_i else (b_i, a_i)
                if dom_lo >= dom_hi:
                    raise DegenerateDirection(
                        f"side {side} collapses in the direction "
                        f"{mp.nstr(phi, 12)} perpendicular frame")
                sa_x, sa_y = verts[side]
                sb_x, sb_y = verts[(side + 1) % m]
                pa = proj[side]
                pb = proj[(side + 1) % m]

            def source_point(c_int):
                c = from_fixed(c_int, P)
                if side == _LAUNCH:
                    return c * nx - reach * dx, c * ny - reach * dy
                u = (c - pa) / (pb - pa)
                return sa_x + u * (sb_x - sa_x), sa_y + u * (sb_y - sa_y)

            def outcome(c_int):
                px, py = source_point(c_int)
                if side == _LAUNCH:
                    hits = self._stab_all(px, py, dx, dy)
                    if len(hits) < 2 or len(hits) % 2:
                        raise DegenerateDirection(
                            "stabbing line meets the boundary an odd number "
                            "of times; direction too close to a vertex frame")
                    chords = len(hits) // 2
                    _, target, hx, hy = hits[1]
                    return target, chords, hx, hy
                target, _, hx, hy = self._cast_from_point(px, py, dx, dy, side)
                return target, 1, hx, hy

            breaks = sorted({p for p in proj_i if dom_lo < p < dom_hi})
            edges = [dom_lo] + breaks + [dom_hi]
            raw = []
            for lo_i, hi_i in zip(edges, edges[1:]):
                if hi_i <= lo_i:
                    continue
                target, chords, _, _ = outcome((lo_i + hi_i) // 2)
                raw.append((lo_i, hi_i, target, chords))

            tbl = _Table()
            tbl.dom_lo, tbl.dom_hi = dom_lo, dom_hi
            if side == _LAUNCH:
                tbl.raw_cells = [(lo, hi, ch) for lo, hi, _, ch in raw]
                tbl.max_chords = max((ch for *_, ch in raw), default=1)
                tbl.width_exact = max(proj) - min(proj)

            # Coalesce cells sharing a target: the transit map is
            # continuous across a vertex shadow that does not change the
            # side being hit, so only target changes are real singularities.
            runs: List[List] = []  # [lo, hi, target, best_lo, best_hi]
            for lo_i, hi_i, target, _ in raw:
                if runs and runs[-1][2] == target:
                    runs[-1][1] = hi_i
                    if hi_i - lo_i > runs[-1][4] - runs[-1][3]:
                        runs[-1][3], runs[-1][4] = lo_i, hi_i
                else:
                    runs.append([lo_i, hi_i, target, lo_i, hi_i])

            G = self.guard
            for idx, (lo_i, hi_i, target, cell_lo, cell_hi) in enumerate(runs):
                # the reflection offset is constant on the whole run;
                # measure it at the midpoint of the run's widest raw cell,
                # which is bounded away from every vertex shadow
                c_mid = (cell_lo + cell_hi) // 2
                px, py = source_point(c_mid)
                if side == _LAUNCH:
                    hits = self._stab_all(px, py, dx, dy)
                    _, t_side, hx, hy = hits[1]
                else:
                    t_side, _, hx, hy = self._cast_from_point(px, py, dx, dy, side)
                if t_side != target:
                    raise DegenerateDirection(
                        "transit cell classification is unstable at the "
                        "working precision")
                cls = self.classes_int[target]
                phi2 = self._reflected(phi, cls)
                n2x, n2y = -mp.sin(phi2), mp.cos(phi2)
                # projection onto the incoming frame is constant along the
                # ray, so measuring both frames at the hit point is exact
                c_in = hx * nx + hy * ny
                c_out = hx * n2x + hy * n2y
                delta = to_fixed(c_in + c_out, P)
                lo_c = lo_i if idx == 0 else lo_i + G
                hi_c = hi_i if idx == len(runs) - 1 else hi_i - G
                if hi_c <= lo_c:
                    continue  # cell fully consumed by vertex guards
                tbl.los.append(lo_c)
                tbl.his.append(hi_c)
                tbl.targets.append(target)
                tbl.deltas.append(delta)
                tbl.classes.append(cls)
        return tbl

    # -- beam stepping -------------------------------------------------

    def _advance(self, st):
        """One reflection: split a beam over the transit cells of its
        current (direction, source side) table.

        Returns (children, slivers); slivers are (lo, hi, state) pieces of
        the parent that fell into vertex guards (or drifted off-domain)
        and stop here.  Children + slivers partition the parent exactly.
        """
        side, lo, hi, eps, n, sgn, disp, refl, hist = st
        tbl = self._table(eps, n, side)
        los, his = tbl.los, tbl.his
        children = []
        slivers = []
        if not los:
            return children, [(lo, hi, st)]
        pos = lo
        i = bisect_right(los, lo) - 1
        if i < 0:
            i = 0
        elif his[i] <= lo:
            i += 1
        while i < len(los) and los[i] < hi and pos < hi:
            a = max(pos, los[i])
            b = min(hi, his[i])
            if a > pos:
                slivers.append((pos, a, st))
            if b > a:
                delta = tbl.deltas[i]
                n2 = -n if tbl.classes[i] == 0 else 1 - n
                children.append((tbl.targets[i], delta - b, delta - a,
                                 -eps, n2, -sgn, delta - disp, refl + 1, hist))
            pos = b
            i += 1
        if pos < hi:
            slivers.append((pos, hi, st))
        return children, slivers

    def _is_return(self, n: int) -> bool:
        if n == 0:
            return True
        return self.b_mod is not None and n % self.b_mod == 0

    def launch_span(self) -> Tuple[int, int]:
        tbl = self._table(1, 0, _LAUNCH)
        return tbl.dom_lo, tbl.dom_hi

    def require_single_chord(self, level: int = 0):
        tbl = self._table(1, level, _LAUNCH)
        if tbl.max_chords > 1:
            raise ValueError(
                "dynamic operations need every stabbing line to cross the "
                "polygon in a single chord for this direction; the polygon "
                "is non-convex in the transversal sense here")

    def launch_state(self, lo: int, hi: int, level: int = 0):
        return (_LAUNCH, lo, hi, 1, level, 1, 0, 0, None)

    def trace_states(self, states, *, n_cap: Optional[int],
                     reflection_cap: int, record_history: bool = False):
        """Drive beam states to terminal statuses.

        Returns (out, max_refl) where out maps status name ->
        list of finalized internal records (status, side, lo, hi, eps, n,
        sgn, disp, refl, hist).
        """
        out = {"returned": [], "escaped": [], "active": [], "uncertain": []}
        stack = list(states)
        max_refl = 0
        while stack:
            st = stack.pop()
            children, slivers = self._advance(st)
            for lo_s, hi_s, parent in slivers:
                _, _, _, eps, n, sgn, disp, refl, hist = parent
                out["uncertain"].append(
                    ("uncertain", parent[0], lo_s, hi_s, eps, n, sgn, disp,
                     refl, hist))
            for ch in children:
                side, lo, hi, eps, n, sgn, disp, refl, hist = ch
                if refl & 1:
                    stack.append(ch)
                    continue
                if refl > max_refl:
                    max_refl = refl
                if record_history:
                    hist = ((refl, side, n, lo, hi), hist)
                    ch = (side, lo, hi, eps, n, sgn, disp, refl, hist)
                if self._is_return(n):
                    out["returned"].append(("returned",) + ch)
                elif n_cap is not None and abs(n) > n_cap:
                    out["escaped"].append(("escaped",) + ch)
                elif refl >= reflection_cap:
                    out["active"].append(("active",) + ch)
                else:
                    stack.append(ch)
        return out, max_refl

    def partition_states(self):
        """Launch the whole base section through one pair of reflections.

        Returns ((u_states, r_states, d_states), slivers) with the states
        classified by the level they reach (+1, 0, -1) after two
        reflections.  Raises if any stabbing line crosses several chords.
        """
        self.require_single_chord()
        lo, hi = self.launch_span()
        buckets = {1: [], 0: [], -1: []}
        slivers = []
        first, sl0 = self._advance(self.launch_state(lo, hi))
        slivers.extend(sl0)
        for st in first:
            second, sl1 = self._advance(st)
            slivers.extend(sl1)
            for ch in second:
                buckets[ch[4]].append(ch)
        return (buckets[1], buckets[0], buckets[-1]), slivers

    # -- point tracing (fast path) --------------------------------------

    def trace_point(self, c0: int, *, reflection_cap: int,
                    n_cap: Optional[int] = None, level: int = 0,
                    side_log: Optional[List[Tuple[int, int]]] = None):
        """Trace a single ray; returns (status, c, n, refl, disp)."""
        side = _LAUNCH
        eps, n = 1, level
        c = c0
        refl = 0
        disp = 0
        b = self.b_mod
        while True:
            tbl = self._table(eps, n, side)
            los = tbl.los
            i = bisect_right(los, c) - 1
            if i < 0 or c >= tbl.his[i]:
                return ("uncertain", c, n, refl, disp)
            delta = tbl.deltas[i]
            side = tbl.targets[i]
            cls = tbl.classes[i]
            c = delta - c
            eps = -eps
            n = -n if cls == 0 else 1 - n
            disp = delta - disp
            refl += 1
            if side_log is not None:
                side_log.append((side, n))
            if not (refl & 1):
                if n == 0 or (b is not None and n % b == 0):
                    return ("returned", c, n, refl, disp)
                if n_cap is not None and abs(n) > n_cap:
                    return ("escaped", c, n, refl, disp)
                if refl >= reflection_cap:
                    return ("active", c, n, refl, disp)

    # -- finalization ----------------------------------------------------

    def source_pair(self, rec) -> Tuple[int, int]:
        _, _, lo, hi, _, _, sgn, disp, _, _ = rec
        if sgn == 1:
            return lo - disp, hi - disp
        return disp - hi, disp - lo

    def source_union(self, recs) -> IntervalUnion:
        P = self.P
        pairs = []
        for rec in recs:
            s_lo, s_hi = self.source_pair(rec)
            pairs.append((from_fixed(s_lo, P), from_fixed(s_hi, P)))
        return IntervalUnion.make(pairs, P)

    def to_beam(self, rec) -> Beam:
        status_map = {"returned": BeamStatus.RETURNED,
                      "escaped": BeamStatus.ESCAPED,
                      "active": BeamStatus.ACTIVE,
                      "uncertain": BeamStatus.VERTEX_UNCERTAIN}
        status, _, lo, hi, _, n, _, _, refl, hist = rec
        s_lo, s_hi = self.source_pair(rec)
        P = self.P
        entries = []
        node = hist
        while node is not None:
            entry, node = node
            r, side, lev, l_i, h_i = entry
            entries.append((r, side, lev, from_fixed(l_i, P), from_fixed(h_i, P)))
        entries.reverse()
        return Beam(lo=from_fixed(lo, P), hi=from_fixed(hi, P), level=n,
                    direction=self._phi(1, n) if status != "uncertain"
                    else self._phi(rec[4], n),
                    reflections=refl, status=status_map[status],
                    source_lo=from_fixed(s_lo, P), source_hi=from_fixed(s_hi, P),
                    history=tuple(entries) if entries else None)


# --------------------------------------------------------------------------
# Public operations
# --------------------------------------------------------------------------


def cross_section(q: GeneralizedParallelogram, theta) -> CrossSection:
    """Perpendicular cross-section of the rays with direction theta.

    Arc length increases along theta + pi/2.  Raises DegenerateDirection
    when theta is parallel to a side class within the precision guard.
    """
    tracer = _Tracer(q, theta)
    tbl = tracer._table(1, 0, _LAUNCH)
    P = tracer.P
    with mp.workprec(P + 16):
        pieces = tuple((from_fixed(lo, P), from_fixed(hi, P), ch)
                       for lo, hi, ch in tbl.raw_cells)
        segments = IntervalUnion.make(
            [(from_fixed(tbl.dom_lo, P), from_fixed(tbl.dom_hi, P))], P)
        if tbl.max_chords == 1:
            width = tbl.width_exact
        else:
            width = sum(((hi - lo) * ch for lo, hi, ch in pieces), mpf(0))
    return CrossSection(theta=tracer.theta, segments=segments, width=width,
                        pieces=pieces, precision_bits=P)


def partition_udr(q: GeneralizedParallelogram, theta,
                  ) -> Tuple[IntervalUnion, IntervalUnion, IntervalUnion]:
    """Split the base section by the level reached after two reflections.

    Returns (U, R, D): sub-beams moving to level +1, staying at level 0,
    and moving to level -1.  The three parts are disjoint and exhaust the
    section up to the vertex-guard slivers around transit singularities.
    """
    tracer = _Tracer(q, theta)
    (u_states, r_states, d_states), _ = tracer.partition_states()
    return (tracer.source_union(("", *st) for st in u_states),
            tracer.source_union(("", *st) for st in r_states),
            tracer.source_union(("", *st) for st in d_states))


def trace_beam(q: GeneralizedParallelogram, beam: Beam, n_cap: int,
               reflection_cap: int, *, record_history: bool = False,
               ) -> List[Beam]:
    """Propagate a beam through reflection pairs until every child
    returns to level 0, escapes past level +-(n_cap+1), runs out of
    reflection budget (status ACTIVE), or lands in a vertex guard.

    Children are pairwise disjoint and their source intervals partition
    the parent exactly (vertex slivers included).
    """
    if beam.status is not BeamStatus.ACTIVE:
        raise ValueError("only an ACTIVE beam can be traced")
    if abs(beam.level) > n_cap:
        raise ValueError("beam level must satisfy |level| <= n_cap")
    if beam.reflections % 2:
        raise ValueError("a traceable beam rests on a section, so its "
                         "reflection count must be even")
    bits = q.precision_bits
    with mp.workprec(bits + 48):
        theta = (beam.direction - 2 * beam.level * q.alpha) % (2 * mp.pi)
    tracer = _Tracer(q, theta)
    tracer.require_single_chord(beam.level)
    lo_i, hi_i = to_fixed(beam.lo, bits), to_fixed(beam.hi, bits)
    state = (_LAUNCH, lo_i, hi_i, 1, beam.level, 1, 0, beam.reflections,
             None)
    out, _ = tracer.trace_states([state], n_cap=n_cap,
                                 reflection_cap=reflection_cap,
                                 record_history=record_history)
    children = []
    for key in ("returned", "escaped", "active", "uncertain"):
        children.extend(tracer.to_beam(rec) for rec in out[key])
    children.sort(key=lambda b: (b.source_lo, b.source_hi))
    return children


@dataclass(frozen=True)
class EscapeReport:
    """Bookkeeping for one escape-set computation.

    ``j_N`` counts the terminal partition intervals produced by tracing
    the departing cohort; ``gate_width`` is the width of the departing
    part of the level-+-N section through which every escaping beam must
    pass, so total_length(F_N) <= gate_width.  ``uncertain`` collects the
    vertex-guard slivers plus any budget-stopped remnants (their mass is
    excluded from both the returned and escaped tallies).  ``f_n_upper``
    complements the returned set inside the cohort: it contains F_N even
    when the reflection budget ran out.
    """

    N: int
    variant: str
    j_N: int
    gate_width: mpf
    gate_direction: mpf
    cohort_width: mpf
    u_width: mpf
    r_width: mpf
    d_width: mpf
    returned: IntervalUnion
    f_n_upper: IntervalUnion
    slivers: IntervalUnion
    active: IntervalUnion
    uncertain: IntervalUnion
    budget_exhausted: bool
    reflection_cap: int
    max_reflections: int


def escape_set(q: GeneralizedParallelogram, theta, N: int,
               reflection_cap: int, variant: str = "down",
               ) -> Tuple[IntervalUnion, EscapeReport]:
    """Source set F_N of rays that reach level -(N+1) (variant "down",
    tracing the level-decreasing cohort) or +(N+1) (variant "up") before
    first returning to level 0.

    Every escaping child passes through the departing gate of the level
    -+N section, and traced orbits are pairwise disjoint until they
    return, so total_length(F_N) never exceeds the gate width.
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    if variant not in ("down", "up"):
        raise ValueError("variant must be 'down' or 'up'")
    tracer = _Tracer(q, theta)
    (u_states, r_states, d_states), part_slivers = tracer.partition_states()
    cohort = d_states if variant == "down" else u_states
    out, max_refl = tracer.trace_states(
        cohort, n_cap=N, reflection_cap=reflection_cap)

    sliver_recs = [("uncertain", p[0], lo, hi, p[3], p[4], p[5], p[6],
                    p[7], p[8]) for lo, hi, p in part_slivers]
    sliver_recs.extend(out["uncertain"])

    f_n = tracer.source_union(out["escaped"])
    returned = tracer.source_union(out["returned"])
    active = tracer.source_union(out["active"])
    slivers = tracer.source_union(sliver_recs)
    uncertain = slivers.union(active)

    u_union = tracer.source_union(("", *st) for st in u_states)
    r_union = tracer.source_union(("", *st) for st in r_states)
    d_union = tracer.source_union(("", *st) for st in d_states)
    cohort_union = d_union if variant == "down" else u_union
    f_n_upper = cohort_union.subtract(returned)

    with mp.workprec(tracer.P + 48):
        sign = -1 if variant == "down" else 1
        gate_dir = (tracer.theta + sign * 2 * N * q.alpha) % (2 * mp.pi)
    gate_tracer = _Tracer(q, gate_dir)
    (g_u, _, g_d), _ = gate_tracer.partition_states()
    gate_states = g_d if variant == "down" else g_u
    gate_width = gate_tracer.source_union(
        ("", *st) for st in gate_states).total_length

    report = EscapeReport(
        N=N, variant=variant,
        j_N=len(out["returned"]) + len(out["escaped"]) + len(out["active"]),
        gate_width=gate_width, gate_direction=gate_dir,
        cohort_width=cohort_union.total_length,
        u_width=u_union.total_length, r_width=r_union.total_length,
        d_width=d_union.total_length,
        returned=returned, f_n_upper=f_n_upper, slivers=slivers,
        active=active, uncertain=uncertain,
        budget_exhausted=bool(out["active"]),
        reflection_cap=reflection_cap, max_reflections=max_refl)
    return f_n, report


def perpendicular_periodicity(q: GeneralizedParallelogram, samples: int,
                              reflection_cap: int, *,
                              retrace_samples: int = 5) -> dict:
    """Fraction of equispaced rays perpendicular to a rhombus diagonal
    whose traces come back parallel to themselves (hence periodic after
    folding the rhombus onto its quarter triangle).

    Returns a dict with ``periodic_fraction`` and ``undecided_fraction``
    (vertex-guard hits plus reflection-budget exhaustions) among other
    counters.  A handful of returned samples are re-traced from their
    return position to confirm they return again.
    """
    if samples < 1:
        raise ValueError("samples must be positive")
    if len(q.vertices) != 4 or set(q.side_classes) != {SideClass.BASE,
                                                       SideClass.SLANT}:
        raise ValueError("perpendicular launches are defined for rhombi")
    bits = q.precision_bits
    with mp.workprec(bits + 48):
        lengths = []
        for i in range(4):
            (ax, ay), (bx, by) = q.side(i)
            lengths.append(mp.hypot(bx - ax, by - ay))
        spread = max(lengths) - min(lengths)
        if spread > mpf(2) ** (-(bits // 2)):
            raise ValueError("perpendicular launches are defined for rhombi "
                             "(all side lengths equal)")
        theta = (q.alpha / 2 + mp.pi / 2) % (2 * mp.pi)
    tracer = _Tracer(q, theta)
    tracer.require_single_chord()
    dom_lo, dom_hi = tracer.launch_span()
    span = dom_hi - dom_lo

    counts = {"returned": 0, "uncertain": 0, "active": 0}
    first_returns = []
    for j in range(samples):
        c0 = dom_lo + ((2 * j + 1) * span) // (2 * samples)
        status, c, n, refl, disp = tracer.trace_point(
            c0, reflection_cap=reflection_cap)
        counts[status] += 1
        if status == "returned" and len(first_returns) < retrace_samples:
            first_returns.append((c, refl, disp))

    retrace_returned = 0
    retrace_exact = 0
    for c_ret, refl1, disp1 in first_returns:
        status2, _, _, refl2, disp2 = tracer.trace_point(
            c_ret, reflection_cap=reflection_cap)
        if status2 == "returned":
            retrace_returned += 1
            if refl2 == refl1 and disp2 == disp1:
                retrace_exact += 1

    return {
        "periodic_fraction": counts["returned"] / samples,
        "undecided_fraction": (counts["uncertain"] + counts["active"]) / samples,
        "samples": samples,
        "reflection_cap": reflection_cap,
        "returned": counts["returned"],
        "vertex_uncertain": counts["uncertain"],
        "budget_exhausted": counts["active"],
        "retrace_checked": len(first_returns),
        "retrace_returned": retrace_returned,
        "retrace_exact": retrace_exact,
        "theta": tracer.theta,
    }
