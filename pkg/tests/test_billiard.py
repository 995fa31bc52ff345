"""Tests for directional billiards in two-direction polygons.

The independent oracle here is a naive floating-point ray simulator:
side sequences produced by the fixed-point transit-table engine must
match plain geometry for dozens of reflections.  Everything else is
checked against exact conservation laws and closed-form projections.
"""

import math
import warnings

import pytest
from mpmath import mp, mpf

from billiardlab import billiard as B
from billiardlab.billiard import _LAUNCH, _Tracer, BeamStatus, SideClass
from billiardlab.circle import eval_number
from billiardlab.errors import (DegenerateDirection,
                                NotGeneralizedParallelogram, RationalAngle)
from billiardlab.fixedpoint import from_fixed
from billiardlab.intervals import IntervalUnion


def unit_rhombus(alpha="1.0"):
    return B.rhombus(alpha, 1)


def l_shape():
    """Non-convex staircase of two unit-height slabs, slant angle 1.0."""
    verts = [("0", "0"), ("2", "0"), ("2+cos(1)", "sin(1)"),
             ("1+cos(1)", "sin(1)"), ("1+2*cos(1)", "2*sin(1)"),
             ("2*cos(1)", "2*sin(1)")]
    return B.polygon_from_vertices(verts, "1.0")


# --------------------------------------------------------------------------
# Construction and validation
# --------------------------------------------------------------------------


def test_rhombus_closed_form_vertices():
    q = unit_rhombus()
    with mp.workprec(300):
        a = mpf(1)
        expect = [(mpf(0), mpf(0)), (mpf(1), mpf(0)),
                  (1 + mp.cos(a), mp.sin(a)), (mp.cos(a), mp.sin(a))]
        for (vx, vy), (ex, ey) in zip(q.vertices, expect):
            assert abs(vx - ex) < mpf(2) ** -250
            assert abs(vy - ey) < mpf(2) ** -250
    assert q.side_classes == (SideClass.BASE, SideClass.SLANT,
                              SideClass.BASE, SideClass.SLANT)
    assert q.is_convex
    assert q.alpha_rational is None
    assert q.return_modulus is None


def test_rational_angle_warns_and_sets_modulus():
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        q = B.rhombus("pi/3", 1)
    assert any(issubclass(w.category, RationalAngle) for w in caught)
    assert q.alpha_rational is not None
    assert q.alpha_rational.numerator == 1
    assert q.alpha_rational.denominator == 3
    assert q.return_modulus == 3


def test_irrational_angle_no_warning():
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        unit_rhombus()
    assert not any(issubclass(w.category, RationalAngle) for w in caught)


def test_vertex_list_roundtrip_and_ccw_normalization():
    p = B.parallelogram("0.7", 2, 1)
    # feed the same vertices clockwise; construction must normalize
    with mp.workprec(320):
        cw = [(mp.nstr(x, 95), mp.nstr(y, 95))
              for x, y in reversed(p.vertices)]
    p2 = B.polygon_from_vertices(cw)
    with mp.workprec(320):
        area = B._signed_area(p2.vertices)
        assert area > 0
        assert abs(p2.alpha - p.alpha) < mpf("1e-80")


def test_rejects_side_in_third_direction():
    with pytest.raises(NotGeneralizedParallelogram):
        B.polygon_from_vertices(
            [("0", "0"), ("1", "0"), ("1.2", "0.9"), ("0", "1")], "1.0")


def test_rejects_self_intersecting_cycle():
    # bowtie out of two admissible directions
    with pytest.raises(NotGeneralizedParallelogram):
        B.polygon_from_vertices(
            [("0", "0"), ("1", "0"),
             ("1-cos(1)", "-sin(1)"), ("cos(1)+1", "sin(1)")
             ][:4], "1.0")


def test_rejects_degenerate_alpha():
    with pytest.raises(ValueError):
        B.rhombus("0", 1)
    with pytest.raises(ValueError):
        B.rhombus("pi/2", 1)
    with pytest.raises(ValueError):
        B.rhombus("1.0", 0)


def test_l_shape_accepted_nonconvex():
    q = l_shape()
    assert not q.is_convex
    assert len(q.vertices) == 6
    assert [c.value for c in q.side_classes] == [
        "base", "slant", "base", "slant", "base", "slant"]


def test_build_polygon_dispatch():
    q1 = B.build_polygon({"type": "rhombus", "alpha": "1.0", "side": 1})
    assert len(q1.vertices) == 4
    q2 = B.build_polygon({"type": "parallelogram", "alpha": "0.7",
                          "base": 2, "side": 1})
    assert len(q2.vertices) == 4
    q3 = B.build_polygon({"type": "polygon",
                          "vertices": [("0", "0"), ("1", "0"),
                                       ("1+cos(1)", "sin(1)"),
                                       ("cos(1)", "sin(1)")]})
    assert abs(q3.alpha - 1) < mpf(2) ** -200
    assert B.build_polygon(q1) is q1
    with pytest.raises(ValueError):
        B.build_polygon({"type": "triangle"})
    with pytest.raises(ValueError):
        B.build_polygon("rhombus")


# --------------------------------------------------------------------------
# Cross-sections
# --------------------------------------------------------------------------


def test_cross_section_width_matches_projection_span():
    q = unit_rhombus()
    cs = B.cross_section(q, "0.3")
    assert len(cs.segments) == 1
    assert not cs.multi_chord
    with mp.workprec(300):
        th = eval_number("0.3", 280)
        proj = [-vx * mp.sin(th) + vy * mp.cos(th) for vx, vy in q.vertices]
        assert abs(cs.width - (max(proj) - min(proj))) < mpf(2) ** -250


def test_cross_section_reversed_direction_same_width():
    q = unit_rhombus()
    a = B.cross_section(q, "0.3")
    b = B.cross_section(q, "0.3 + pi")
    with mp.workprec(300):
        assert abs(a.width - b.width) < mpf(2) ** -250


def test_cross_section_width_continuous_in_theta():
    q = unit_rhombus()
    with mp.workprec(300):
        w1 = B.cross_section(q, "0.3").width
        w2 = B.cross_section(q, "0.3 + 1/100000").width
        # width is Lipschitz in theta with constant <= polygon diameter
        assert abs(w2 - w1) < mpf("3e-5")


def test_cross_section_degenerate_directions_rejected():
    q = unit_rhombus()
    with pytest.raises(DegenerateDirection):
        B.cross_section(q, "0")
    with pytest.raises(DegenerateDirection):
        B.cross_section(q, "1.0")  # parallel to the slant sides
    with pytest.raises(DegenerateDirection):
        B.cross_section(q, "pi")


def test_cross_section_multi_chord_reporting():
    q = l_shape()
    cs = B.cross_section(q, "1.3")
    assert cs.multi_chord
    assert max(m for _, _, m in cs.pieces) == 2
    with mp.workprec(300):
        th = mpf("1.3")
        proj = [-vx * mp.sin(th) + vy * mp.cos(th) for vx, vy in q.vertices]
        span = max(proj) - min(proj)
        # multiplicity-weighted width strictly exceeds the plain span
        assert cs.width > span + mpf("0.1")
        # and the reported pieces tile the span exactly
        tiled = sum((hi - lo for lo, hi, _ in cs.pieces), mpf(0))
        assert abs(tiled - span) < mpf(2) ** -240


def test_multi_chord_piece_counts_match_direct_stabbing():
    q = l_shape()
    cs = B.cross_section(q, "1.3")
    verts = [(float(x), float(y)) for x, y in q.vertices]
    th = 1.3
    d = (math.cos(th), math.sin(th))
    nx, ny = -math.sin(th), math.cos(th)
    for lo, hi, mult in cs.pieces:
        c = float((lo + hi) / 2)
        px, py = c * nx - 4 * d[0], c * ny - 4 * d[1]
        crossings = 0
        m = len(verts)
        for s in range(m):
            ax, ay = verts[s]
            bx, by = verts[(s + 1) % m]
            ex, ey = bx - ax, by - ay
            den = d[0] * ey - d[1] * ex
            if abs(den) < 1e-15:
                continue
            rx, ry = ax - px, ay - py
            t = (rx * ey - ex * ry) / den
            u = (d[1] * rx - d[0] * ry) / den
            if t > 0 and 0 <= u <= 1:
                crossings += 1
        assert crossings == 2 * mult


# --------------------------------------------------------------------------
# Two-reflection partition
# --------------------------------------------------------------------------


def test_partition_sums_to_section_width():
    q = unit_rhombus()
    for ts in ("0.3", "1.2", "2.6"):
        u, r, d = B.partition_udr(q, ts)
        cs = B.cross_section(q, ts)
        with mp.workprec(320):
            total = u.total_length + r.total_length + d.total_length
            gap = cs.width - total
            # only the vertex-guard slivers are missing
            assert 0 <= gap < mpf("1e-35")


def test_partition_parts_disjoint():
    q = unit_rhombus()
    u, r, d = B.partition_udr(q, "1.2")
    assert all(x.total_length > 0 for x in (u, r, d))
    with mp.workprec(320):
        assert u.intersect(d).total_length == 0
        assert u.intersect(r).total_length == 0
        assert r.intersect(d).total_length == 0


def test_partition_thin_gates_track_sines():
    # On the unit rhombus the +2a part is exactly |sin theta| wide and the
    # -2a part exactly |sin(theta - alpha)| wide for shallow theta.
    q = unit_rhombus()
    with mp.workprec(300):
        for k in range(1, 21):
            th = mpf(k) / 100
            u, r, d = B.partition_udr(q, th)
            ru = u.total_length / abs(mp.sin(th))
            rd = d.total_length / abs(mp.sin(th - q.alpha))
            assert abs(ru - 1) < mpf("1e-30")
            assert abs(rd - 1) < mpf("1e-30")


def test_partition_literal_ratio_bounded_on_range():
    # the raw ratio w(D)/|sin theta| stays finite on the compact range,
    # with its maximum at the left endpoint
    q = unit_rhombus()
    with mp.workprec(300):
        ratios = []
        for k in range(50):
            th = mpf("0.01") + k * (mpf("0.19") / 49)
            _, _, d = B.partition_udr(q, th)
            ratios.append(d.total_length / abs(mp.sin(th)))
        assert max(ratios) < 90
        assert min(ratios) > 3
        assert max(ratios) == ratios[0]


def test_partition_vanishing_gate_as_theta_to_zero():
    q = unit_rhombus()
    with mp.workprec(300):
        for ts in ("0.01", "0.001", "0.0001"):
            th = mpf(ts)
            u, _, _ = B.partition_udr(q, th)
            assert u.total_length < mpf("1.01") * th


def test_partition_rejects_multi_chord_direction():
    q = l_shape()
    with pytest.raises(ValueError):
        B.partition_udr(q, "1.3")
    # single-chord directions on the same polygon still work
    u, r, d = B.partition_udr(q, "0.3")
    with mp.workprec(300):
        assert (u.total_length + r.total_length + d.total_length) > 1


# --------------------------------------------------------------------------
# Beam tracing
# --------------------------------------------------------------------------


def test_trace_beam_exact_length_conservation():
    q = unit_rhombus()
    _, _, d = B.partition_udr(q, "0.3")
    lo, hi = d.intervals[0]
    beam = B.beam_on_section(q, "0.3", lo, hi)
    kids = B.trace_beam(q, beam, 3, 100000)
    with mp.workprec(320):
        total = sum((k.source_hi - k.source_lo for k in kids), mpf(0))
        assert total == hi - lo  # exact, not approximate
    assert all(k.status in (BeamStatus.RETURNED, BeamStatus.ESCAPED,
                            BeamStatus.VERTEX_UNCERTAIN) for k in kids)


def test_trace_beam_isometry_per_child():
    q = unit_rhombus()
    _, _, d = B.partition_udr(q, "0.9")
    lo, hi = d.intervals[0]
    kids = B.trace_beam(q, B.beam_on_section(q, "0.9", lo, hi), 4, 100000)
    with mp.workprec(320):
        for k in kids:
            assert (k.hi - k.lo) == (k.source_hi - k.source_lo)


def test_trace_beam_bounce_back_history_stays_level_zero():
    # at theta = 2.2 the middle of the section bounces between the two
    # side classes' same-class pairs and returns immediately
    q = unit_rhombus()
    _, r, _ = B.partition_udr(q, "2.2")
    assert r.total_length > 1
    lo, hi = r.intervals[0]
    with mp.workprec(300):
        pad = (hi - lo) / 1000
        beam = B.beam_on_section(q, "2.2", lo + pad, hi - pad)
    kids = B.trace_beam(q, beam, 2, 1000, record_history=True)
    assert all(k.status is BeamStatus.RETURNED for k in kids)
    assert all(k.reflections == 2 for k in kids)
    for k in kids:
        assert all(level == 0 for _, _, level, _, _ in k.history)


def test_trace_beam_splits_across_vertex_shadow():
    q = unit_rhombus()
    cs = B.cross_section(q, "0.3")
    (lo, hi), = cs.segments.intervals
    kids = B.trace_beam(q, B.beam_on_section(q, "0.3", lo, hi), 1, 100000)
    statuses = {k.status for k in kids}
    assert len(kids) >= 3
    assert BeamStatus.VERTEX_UNCERTAIN in statuses
    assert BeamStatus.RETURNED in statuses or BeamStatus.ESCAPED in statuses
    # vertex slivers carry negligible length
    with mp.workprec(320):
        sliver = sum((k.source_hi - k.source_lo for k in kids
                      if k.status is BeamStatus.VERTEX_UNCERTAIN), mpf(0))
        assert sliver < mpf("1e-35")


def test_trace_beam_level_direction_bookkeeping():
    q = unit_rhombus()
    _, _, d = B.partition_udr(q, "0.3")
    lo, hi = d.intervals[0]
    kids = B.trace_beam(q, B.beam_on_section(q, "0.3", lo, hi), 2, 100000)
    with mp.workprec(300):
        th = eval_number("0.3", 280)
        for k in kids:
            if k.status is BeamStatus.VERTEX_UNCERTAIN:
                continue
            want = (th + 2 * k.level * q.alpha) % (2 * mp.pi)
            assert abs(k.direction - want) < mpf(2) ** -230


def test_trace_beam_same_time_fragments_disjoint():
    q = unit_rhombus()
    cs = B.cross_section(q, "0.9")
    (lo, hi), = cs.segments.intervals
    kids = B.trace_beam(q, B.beam_on_section(q, "0.9", lo, hi), 3, 60,
                        record_history=True)
    # rays at the same reflection count and level share one section line,
    # so their fragments' intervals must be disjoint
    snapshots = {}
    for k in kids:
        for refl, _, level, slo, shi in (k.history or ()):
            snapshots.setdefault((refl, level), set()).add((slo, shi))
    checked = 0
    for group in snapshots.values():
        group = sorted(group)
        for (a_lo, a_hi), (b_lo, b_hi) in zip(group, group[1:]):
            assert a_hi <= b_lo  # identical ancestors dedupe; others disjoint
            checked += 1
    assert checked > 0


def test_trace_beam_input_validation():
    q = unit_rhombus()
    beam = B.beam_on_section(q, "0.3", "0.1", "0.2")
    with pytest.raises(ValueError):
        # beam level beyond the escape cutoff
        B.trace_beam(q, B.beam_on_section(q, "0.3", "0.1", "0.2", level=3),
                     2, 100)
    with pytest.raises(ValueError):
        # beams rest on sections only after full reflection pairs
        odd = B.Beam(lo=beam.lo, hi=beam.hi, level=0,
                     direction=beam.direction, reflections=1,
                     status=BeamStatus.ACTIVE, source_lo=beam.lo,
                     source_hi=beam.hi)
        B.trace_beam(q, odd, 2, 100)
    done = next(k for k in B.trace_beam(q, beam, 1, 100000)
                if k.status is not BeamStatus.ACTIVE)
    with pytest.raises(ValueError):
        B.trace_beam(q, done, 1, 100)
    with pytest.raises(ValueError):
        B.beam_on_section(q, "0.3", "0.2", "0.1")


def test_trace_beam_budget_flagged_as_active():
    q = unit_rhombus()
    cs = B.cross_section(q, "0.9")
    (lo, hi), = cs.segments.intervals
    kids = B.trace_beam(q, B.beam_on_section(q, "0.9", lo, hi), 50, 6)
    active = [k for k in kids if k.status is BeamStatus.ACTIVE]
    assert active  # the budget is far too small to resolve everything
    assert all(k.reflections >= 6 for k in active)
    with mp.workprec(320):
        total = sum((k.source_hi - k.source_lo for k in kids), mpf(0))
        assert total == hi - lo


# --------------------------------------------------------------------------
# Engine vs. naive floating-point geometry
# --------------------------------------------------------------------------


def _float_trace(verts, theta, c0, nrefl):
    """Plain float billiard: start inside the chord at offset c0."""
    m = len(verts)
    d = (math.cos(theta), math.sin(theta))
    nx, ny = -math.sin(theta), math.cos(theta)
    px, py = c0 * nx - 4 * d[0], c0 * ny - 4 * d[1]

    def cast_all(px, py, d, skip):
        hits = []
        for s in range(m):
            if s == skip:
                continue
            ax, ay = verts[s]
            bx, by = verts[(s + 1) % m]
            ex, ey = bx - ax, by - ay
            den = d[0] * ey - d[1] * ex
            if abs(den) < 1e-15:
                continue
            rx, ry = ax - px, ay - py
            t = (rx * ey - ex * ry) / den
            u = (d[1] * rx - d[0] * ry) / den
            if t <= 1e-12 or u < -1e-12 or u > 1 + 1e-12:
                continue
            hits.append((t, s))
        hits.sort()
        return hits

    hits = cast_all(px, py, d, -1)
    if len(hits) < 2:
        return []
    tm = (hits[0][0] + hits[1][0]) / 2
    px, py = px + tm * d[0], py + tm * d[1]
    sides = []
    skip = -1
    for _ in range(nrefl):
        hits = cast_all(px, py, d, skip)
        if not hits:
            return sides
        t, s = hits[0]
        px, py = px + t * d[0], py + t * d[1]
        sides.append(s)
        ax, ay = verts[s]
        bx, by = verts[(s + 1) % m]
        ex, ey = bx - ax, by - ay
        ln = math.hypot(ex, ey)
        ex, ey = ex / ln, ey / ln
        dot = d[0] * ex + d[1] * ey
        d = (2 * dot * ex - d[0], 2 * dot * ey - d[1])
        skip = s
    return sides


@pytest.mark.parametrize("alpha,theta", [
    ("1.0", "0.3"), ("1.0", "2.2"), ("0.7", "0.41"), ("pi/4", "0.55")])
def test_side_sequences_match_float_geometry(alpha, theta):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        q = B.rhombus(alpha, 1)
    verts_f = [(float(x), float(y)) for x, y in q.vertices]
    tracer = _Tracer(q, theta)
    lo, hi = tracer.launch_span()
    span = hi - lo
    for j in (17, 101, 313, 449, 700, 901):
        c0 = lo + (j * span) // 997
        log = []
        tracer.trace_point(c0, reflection_cap=60, side_log=log)
        engine_sides = [s for s, _ in log][:40]
        oracle_sides = _float_trace(
            verts_f, float(mpf(tracer.theta)),
            float(from_fixed(c0, q.precision_bits)), len(engine_sides))
        assert engine_sides == oracle_sides


# --------------------------------------------------------------------------
# Escape sets
# --------------------------------------------------------------------------


def test_escape_sets_nested_and_gate_bounded():
    q = unit_rhombus()
    prev = None
    for n in (1, 2, 3, 4, 5):
        f_n, rep = B.escape_set(q, "0.3", n, 100000)
        assert f_n.total_length <= rep.gate_width
        assert rep.j_N <= 2 * 4 * n
        if prev is not None:
            assert f_n.is_subset_of(prev)
        prev = f_n
        with mp.workprec(320):
            assert rep.uncertain.total_length < mpf("1e-30")
        assert not rep.budget_exhausted


def test_escape_set_report_partition_widths():
    q = unit_rhombus()
    f_1, rep = B.escape_set(q, "1.2", 1, 100000)
    cs = B.cross_section(q, "1.2")
    with mp.workprec(320):
        total = rep.u_width + rep.r_width + rep.d_width
        assert 0 <= cs.width - total < mpf("1e-35")
        assert rep.cohort_width == rep.d_width
    # the escaped set plus the returned set sit inside the cohort
    assert f_1.is_subset_of(rep.f_n_upper)
    assert rep.f_n_upper.total_length <= rep.cohort_width


def test_escape_set_up_variant_gate_tracks_sine():
    q = unit_rhombus()
    with mp.workprec(300):
        th = mpf("0.3")
        for n in (1, 2, 3):
            f_n, rep = B.escape_set(q, th, n, 100000, variant="up")
            assert f_n.total_length <= rep.gate_width
            bound = abs(mp.sin(th + 2 * n * q.alpha))
            assert rep.gate_width <= bound * mpf("1.000001")
            assert f_n.is_subset_of(rep.f_n_upper)


def test_escape_set_rational_angle_shallow_levels_empty():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        q3 = B.rhombus("pi/3", 1)
    f_1, _ = B.escape_set(q3, "0.3", 1, 100000)
    assert f_1.total_length > 0
    for n in (2, 3, 5):
        f_n, rep = B.escape_set(q3, "0.3", n, 100000)
        assert len(f_n) == 0
        assert f_n.total_length == 0
        assert not rep.budget_exhausted
    # the up side closes off the same way
    f_up, _ = B.escape_set(q3, "0.3", 3, 100000, variant="up")
    assert f_up.total_length == 0


def test_escape_set_budget_exhaustion_reported_not_raised():
    q = unit_rhombus()
    f_n, rep = B.escape_set(q, "0.3", 30, 50)
    assert rep.budget_exhausted
    assert rep.active.total_length > 0
    assert rep.uncertain.total_length >= rep.active.total_length
    # the upper envelope still contains every possible escaper
    assert f_n.is_subset_of(rep.f_n_upper)


def test_escape_set_input_validation():
    q = unit_rhombus()
    with pytest.raises(ValueError):
        B.escape_set(q, "0.3", 0, 1000)
    with pytest.raises(ValueError):
        B.escape_set(q, "0.3", 1, 1000, variant="sideways")


def test_escape_set_measure_preserved_between_source_and_image():
    q = unit_rhombus()
    tracer = _Tracer(q, "0.9")
    (u, r, d), _ = tracer.partition_states()
    out, _ = tracer.trace_states(d, n_cap=4, reflection_cap=100000)
    with mp.workprec(320):
        for rec in out["returned"] + out["escaped"]:
            _, _, lo, hi, _, _, _, _, _, _ = rec
            s_lo, s_hi = tracer.source_pair(rec)
            assert hi - lo == s_hi - s_lo  # exact isometry, image vs source


# --------------------------------------------------------------------------
# Perpendicular launches
# --------------------------------------------------------------------------


def test_perpendicular_rational_angle_everything_periodic():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        q = B.rhombus("pi/4", 1)
    res = B.perpendicular_periodicity(q, 500, 100000)
    assert res["returned"] >= 500 - 2
    assert res["periodic_fraction"] >= 1 - 2 / 500
    assert res["undecided_fraction"] <= 2 / 500
    # retraced samples return again with the identical period signature
    assert res["retrace_checked"] == 5
    assert res["retrace_returned"] == 5
    assert res["retrace_exact"] == 5


def test_perpendicular_irrational_angle_resolves_with_budget():
    q = unit_rhombus()
    res = B.perpendicular_periodicity(q, 200, 20000)
    assert res["undecided_fraction"] <= 0.05
    assert res["periodic_fraction"] + res["undecided_fraction"] == 1.0
    # returned samples return again (position may differ, return must not)
    assert res["retrace_returned"] == res["retrace_checked"] > 0


def test_perpendicular_undecided_shrinks_with_budget():
    q = unit_rhombus()
    fractions = []
    for cap in (10, 50, 300):
        res = B.perpendicular_periodicity(q, 200, cap)
        fractions.append(res["undecided_fraction"])
    assert fractions[0] >= fractions[1] >= fractions[2]
    assert fractions[2] <= 0.05


def test_perpendicular_rejects_non_rhombus():
    p = B.parallelogram("1.0", 2, 1)
    with pytest.raises(ValueError):
        B.perpendicular_periodicity(p, 10, 100)
    q = unit_rhombus()
    with pytest.raises(ValueError):
        B.perpendicular_periodicity(q, 0, 100)
