"""Nested mass-carrying interval hierarchies: selection, construction,
exact masses, separation, and local-dimension reports."""

import json
import math
from fractions import Fraction

import pytest
from mpmath import mp, mpf

from billiardlab.cantor import (build_hierarchy, intermediate_interval_check,
                                local_dimension_report, select_sequence,
                                separation_report)
from billiardlab.circle import CirclePoint, continued_fraction
from billiardlab.dimension import dim_lb_estimate
from billiardlab.errors import CapTooSmall, DepthUnreachable, EmptyLevel
from billiardlab.fixedpoint import from_fixed

BITS = 192


def golden(bits=BITS):
    return CirclePoint.make("(sqrt(5)-1)/2", bits)


@pytest.fixture(scope="module")
def golden_cf():
    return continued_fraction(golden(), max_depth=256)


@pytest.fixture(scope="module")
def golden_h3():
    return build_hierarchy(golden(), 2, 1, [1, -2, 1597])


# ---------------------------------------------------------------------------
# independent oracle: direct mpf enumeration, no fixed point, no floor sums
# ---------------------------------------------------------------------------

def _naive_chain(omega_cp, mu, m, depth, margin):
    """Reimplements selection and construction by brute enumeration:
    candidate magnitudes are scanned in convergent order and accepted on
    the same published conditions (growth margin, separation certificate
    over the full index-difference range, per-parent density bounds,
    no childless parent), and children are classified by direct mpf
    center-distance comparisons."""
    bits = omega_cp.precision_bits
    cf = continued_fraction(omega_cp, max_depth=256)
    with mp.workprec(bits + 32):
        om = omega_cp.value
        mu_m = mpf(mu)
        seq, levels = [], []
        parents = None
        parent_half = None
        log_prod = mpf(0)
        r_next = 1
        for k in range(1, depth + 1):
            sign = 1 if ((k - 1) % (2 * m)) <= m - 1 else -1
            res = k % m
            chosen = None
            for r in range(r_next, cf.validated_depth + 1):
                q = cf.denominator(r)
                if seq and q <= abs(seq[-1]):
                    continue
                if k > 1 and log_prod > margin * mp.log(q):
                    continue
                half = mp.power(2 * q, -mu_m) / 2
                sep = min(min((d * om) % 1, 1 - (d * om) % 1)
                          for d in range(1, q + 1))
                if sep <= 2 * half:
                    continue
                j_lo, j_hi = (q, 2 * q) if sign > 0 else (-2 * q, -q)
                pts = [(j, (j * om) % 1) for j in range(j_lo, j_hi + 1)
                       if j % m == res]
                if parents is None:
                    if not (Fraction(1, 2) <= Fraction(len(pts), q) <= 2):
                        continue
                    children = sorted((v, Fraction(1, len(pts)))
                                      for _, v in pts)
                else:
                    buckets = [[] for _ in parents]
                    counts_in = [0] * len(parents)
                    for _, v in pts:
                        for i, (cen, _) in enumerate(parents):
                            d = abs(v - cen)
                            d = min(d, 1 - d)
                            if d <= parent_half:
                                counts_in[i] += 1
                            if d <= parent_half - half:
                                buckets[i].append(v)
                    length = 2 * parent_half
                    if not all(length / 2 <= mpf(c) / q <= 2 * length
                               for c in counts_in):
                        continue
                    if any(not b for b in buckets):
                        continue
                    children = sorted(
                        (v, parents[i][1] / len(buckets[i]))
                        for i, b in enumerate(buckets) for v in b)
                chosen = sign * q
                r_next = r + 1
                break
            assert chosen is not None, f"oracle exhausted at step {k}"
            seq.append(chosen)
            log_prod += mp.log(abs(chosen))
            parents = children
            parent_half = half
            levels.append(children)
        return seq, levels


def _assert_matches_oracle(omega_cp, mu, m, depth, margin):
    oracle_seq, oracle_levels = _naive_chain(omega_cp, mu, m, depth, margin)
    cf = continued_fraction(omega_cp, max_depth=256)
    seq = select_sequence(cf, mu, m, depth, margin)
    assert seq == oracle_seq
    h = build_hierarchy(omega_cp, mu, m, seq)
    bits = omega_cp.precision_bits
    with mp.workprec(bits + 32):
        tol = mpf(2) ** (-bits + 48)
        for lev, olev in zip(h.levels, oracle_levels):
            assert lev.count == len(olev)
            assert lev.ambiguous == 0
            for iv, (oc, omass) in zip(lev.intervals, olev):
                assert abs(from_fixed(iv.center_fp, bits) - oc) < tol
                assert iv.mass == omass
    return h


def test_matches_oracle_golden():
    h = _assert_matches_oracle(golden(), 2, 1, 4, 0.5)
    assert h.sequence == (1, -2, 13, -987)


def test_matches_oracle_residue_two():
    h = _assert_matches_oracle(golden(), 2, 2, 4, 1.0)
    assert h.sequence == (1, 3, -34, -2584)
    assert h.residue_schedule == ((1, 1), (0, 1), (1, -1), (0, -1))


def test_matches_oracle_silver_fractional_exponent():
    om = CirclePoint.make("sqrt(2)-1", BITS)
    h = _assert_matches_oracle(om, 1.5, 1, 3, 1.0)
    assert h.sequence == (2, -5, 70)


# ---------------------------------------------------------------------------
# selection
# ---------------------------------------------------------------------------

def test_select_small_margin_forces_sparse_jump(golden_cf):
    # log 2 <= 0.1 log q forces q >= 1023.6; the next convergent
    # denominator past that is 1597.
    assert select_sequence(golden_cf, 2, 1, 3, 0.1) == [1, -2, 1597]


def test_selected_sequences_satisfy_growth_margin(golden_cf):
    for margin in (0.1, 0.5):
        seq = select_sequence(golden_cf, 2, 1, 3, margin)
        log_prod = 0.0
        for k, n in enumerate(seq, 1):
            if k > 1:
                assert log_prod <= margin * math.log(abs(n))
            log_prod += math.log(abs(n))


def test_selected_magnitudes_are_increasing_convergents(golden_cf):
    seq = select_sequence(golden_cf, 2, 1, 4, 0.5)
    denoms = {q for _, q in golden_cf.convergents}
    assert all(abs(n) in denoms for n in seq)
    assert all(abs(b) > abs(a) for a, b in zip(seq, seq[1:]))


def test_select_validates_arguments(golden_cf):
    with pytest.raises(ValueError):
        select_sequence(golden_cf, 2, 1, 0, 0.5)
    with pytest.raises(ValueError):
        select_sequence(golden_cf, 2, 1, 2, 0.0)
    with pytest.raises(ValueError):
        select_sequence(golden_cf, 1, 1, 2, 0.5)   # mu must exceed 1


def test_select_depth_unreachable_on_truncated_expansion():
    cf = continued_fraction(golden(), max_depth=6)
    with pytest.raises(DepthUnreachable):
        select_sequence(cf, 2, 1, 3, 0.1)


# ---------------------------------------------------------------------------
# construction invariants
# ---------------------------------------------------------------------------

def _check_invariants(h):
    scale = 1 << h.precision_bits
    for lev in h.levels:
        assert lev.mass_total() == 1
    for k in range(2, h.depth + 1):
        lev, par = h.levels[k - 1], h.levels[k - 2]
        counts = h.children_per_parent(k)
        assert len(counts) == par.count
        assert all(c >= 1 for c in counts)
        assert sum(counts) == lev.count
        if lev.intervals is not None:
            for iv in lev.intervals:
                p = par.intervals[iv.parent]
                assert iv.mass == p.mass / counts[iv.parent]
                d = (iv.center_fp - p.center_fp) % scale
                d = min(d, scale - d)
                assert d <= par.half_fp - lev.half_fp
        else:
            for i, c in enumerate(counts):
                assert lev.child_mass[i] == par.intervals[i].mass / c
    materialized = [k for k in range(1, h.depth + 1)
                    if h.levels[k - 1].intervals is not None]
    for a, b in zip(materialized, materialized[1:]):
        assert h.level_union(b).is_subset_of(h.level_union(a))


def test_two_level_structure_exact(golden_h3):
    # Level 1: centers at omega and 2*omega, each of mass 1/2; level 2:
    # the single certified child of each, at -4*omega and -3*omega.
    h = golden_h3
    bits = h.precision_bits
    with mp.workprec(bits + 16):
        om = h.omega.value
        tol = mpf(2) ** (-bits + 48)
        lv1, lv2 = h.levels[0], h.levels[1]
        assert [iv.j for iv in lv1.intervals] == [2, 1]
        assert [iv.j for iv in lv2.intervals] == [-3, -4]
        for lev, js in ((lv1, (2, 1)), (lv2, (-3, -4))):
            for iv, j in zip(lev.intervals, js):
                assert abs(from_fixed(iv.center_fp, bits) - (j * om) % 1) < tol
                assert iv.mass == Fraction(1, 2)


def test_hierarchy_invariants_hold(golden_h3):
    _check_invariants(golden_h3)
    assert [lev.count for lev in golden_h3.levels] == [2, 2, 200]
    assert [lev.ambiguous for lev in golden_h3.levels] == [0, 0, 0]


def test_interval_lengths_are_exact_powers(golden_h3):
    h = golden_h3
    with mp.workprec(h.precision_bits + 64):
        scale = 1 << h.precision_bits
        for lev in h.levels:
            exact = mp.power(2 * abs(lev.n_k), -h.mu) * scale
            assert abs(2 * lev.half_fp - exact) <= 2


def test_index_ranges_follow_schedule(golden_h3):
    for lev, (res, sign) in zip(golden_h3.levels, golden_h3.residue_schedule):
        n_abs = abs(lev.n_k)
        for iv in lev.intervals:
            assert iv.j % golden_h3.m == res
            assert (1 if iv.j > 0 else -1) == sign
            assert n_abs <= abs(iv.j) <= 2 * n_abs


def test_density_condition_post_hoc(golden_h3):
    # Recount by direct enumeration: level-3 candidates against level-2
    # parents must satisfy |I|/2 <= count/|n_3| <= 2|I|.
    h = golden_h3
    bits = h.precision_bits
    with mp.workprec(bits + 32):
        om = h.omega.value
        pts = [(j * om) % 1 for j in range(1597, 3195)]
        par = h.levels[1]
        half = from_fixed(par.half_fp, bits)
        length = 2 * half
        for iv in par.intervals:
            cen = from_fixed(iv.center_fp, bits)
            count = sum(1 for v in pts
                        if min(abs(v - cen), 1 - abs(v - cen)) <= half)
            assert length / 2 <= mpf(count) / 1597 <= 2 * length


def test_mass_upper_bound_chain(golden_cf):
    # For mu = 2 the level-(k+1) maximum mass is bounded by
    # 2^(3k) * |n_1|^2 / |n_(k+1)| * prod_(i=2..k) |n_i|.
    h = build_hierarchy(golden(), 2, 1, [1, -2, 13, -987])
    seq = [abs(n) for n in h.sequence]
    for k in range(1, h.depth):
        bound = Fraction(2 ** (3 * k) * seq[0] ** 2, seq[k])
        for i in range(1, k):
            bound *= seq[i]
        assert h.levels[k].max_mass() <= bound


def test_empty_level_witness():
    # For [1, -2, 3] the candidate centers 4*omega and 5*omega each land
    # about 0.056 from the nearest level-2 center, outside the 1/32-wide
    # parents, so both parents lose all children.
    with pytest.raises(EmptyLevel):
        build_hierarchy(golden(), 2, 1, [1, -2, 3])


def test_build_validates_sequences():
    om = golden()
    with pytest.raises(ValueError):
        build_hierarchy(om, 2, 1, [])
    with pytest.raises(ValueError):
        build_hierarchy(om, 2, 1, [-1])            # sign schedule
    with pytest.raises(ValueError):
        build_hierarchy(om, 2, 1, [1, 2])          # sign schedule at k=2
    with pytest.raises(ValueError):
        build_hierarchy(om, 2, 1, [1, -2, 2])      # not increasing
    with pytest.raises(ValueError):
        build_hierarchy(om, 2, 1, [1, -4])         # 4 is not a denominator
    with pytest.raises(ValueError):
        build_hierarchy(om, 2, 1, [1, 0])
    with pytest.raises(ValueError):
        build_hierarchy(om, 1, 1, [1])             # mu must exceed 1
    with pytest.raises(ValueError):
        build_hierarchy(om, 2, 0, [1])             # m must be positive


def test_build_rejects_uncertified_separation():
    # At mu = 1.2 the level-1 interval length 2^(-1.2) ~ 0.435 exceeds
    # the worst orbit gap ||omega|| ~ 0.382, so adjacent intervals
    # could overlap and construction refuses.
    with pytest.raises(ValueError):
        build_hierarchy(golden(), "1.2", 1, [1])


# ---------------------------------------------------------------------------
# counted levels and caps
# ---------------------------------------------------------------------------

def test_counted_final_level_matches_enumerated():
    om = golden()
    seq = [1, -2, 13, -987]
    h_full = build_hierarchy(om, 2, 1, seq)
    h_cnt = build_hierarchy(om, 2, 1, seq, scan_cap=500)
    assert [lev.materialized for lev in h_full.levels] == [True] * 4
    assert [lev.materialized for lev in h_cnt.levels] == [True] * 3 + [False]
    for k in range(1, 5):
        assert h_full.children_per_parent(k) == h_cnt.children_per_parent(k)
    last_f, last_c = h_full.levels[-1], h_cnt.levels[-1]
    assert last_c.ambiguous == 0
    masses = {}
    for iv in last_f.intervals:
        masses[iv.parent] = iv.mass
    assert tuple(masses[i] for i in sorted(masses)) == last_c.child_mass
    _check_invariants(h_cnt)


def test_materialize_cap_collapses_to_counts():
    om = golden()
    h_ref = build_hierarchy(om, 2, 1, [1, -2, 1597])
    h_cnt = build_hierarchy(om, 2, 1, [1, -2, 1597], materialize_cap=100)
    assert not h_cnt.levels[-1].materialized
    assert h_cnt.levels[-1].count == 200
    assert h_cnt.children_per_parent(3) == h_ref.children_per_parent(3)
    _check_invariants(h_cnt)


def test_intermediate_level_beyond_caps_is_refused():
    with pytest.raises(CapTooSmall):
        build_hierarchy(golden(), 2, 1, [1, -2, 13, -987], scan_cap=5)


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------

def test_local_dimension_report_values(golden_h3):
    report = local_dimension_report(golden_h3)
    assert [k for k, _ in report] == [1, 2, 3]
    with mp.workprec(golden_h3.precision_bits + 16):
        # level 1: two children of mass 1/2 at length 1/4 give exactly
        # log(2) / (2 log 2) = 1/2
        assert abs(report[0][1] - mpf(1) / 2) < mpf(2) ** -100
        assert abs(report[1][1] - mpf(1) / 4) < mpf(2) ** -100
        assert abs(report[2][1] - mpf("0.328312")) < mpf("1e-5")


def test_local_dimension_report_needs_two_levels():
    h = build_hierarchy(golden(), 2, 1, [1])
    with pytest.raises(ValueError):
        local_dimension_report(h)


def test_separation_report_flags_reciprocal_bound(golden_h3):
    rows = separation_report(golden_h3)
    assert [row["level"] for row in rows] == [1, 2, 3]
    lv1, lv2, lv3 = rows
    assert lv1["claimed_ok"] and lv1["companion_ok"]
    # ||2 omega|| = 0.23606... sits below 1/(2+2) but above 1/(3+2):
    # the reciprocal comparison bound fails while the companion holds.
    assert abs(lv2["orbit_min_distance"] - mpf("0.2360679")) < mpf("1e-6")
    assert not lv2["claimed_ok"]
    assert lv2["companion_ok"]
    assert abs(lv2["measured_min_distance"] - mpf("0.3819660")) < mpf("1e-6")
    assert not lv3["claimed_ok"]
    assert lv3["companion_ok"]
    # retained centers are always at least the orbit gap apart
    for row in rows:
        if row["measured_min_distance"] is not None:
            assert row["measured_min_distance"] >= row["orbit_min_distance"]


def test_intermediate_interval_audit(golden_h3):
    h = golden_h3
    bits = h.precision_bits
    with mp.workprec(bits + 32):
        om = h.omega.value
        pts = sorted((j * om) % 1 for j in range(1597, 3195))
        gaps = sorted((b - a, a, b) for a, b in zip(pts, pts[1:])
                      if mpf("0.01") < a and b < mpf("0.99"))
        g_min, a_min, b_min = gaps[0]
        g_max, a_max, b_max = gaps[-1]
        pad = g_min / 10

        tight = intermediate_interval_check(h, a_min - pad, b_min + pad)
        assert tight["k"] == 3 and tight["r"] == 2 == tight["r_loose"]
        # two points closer than 1/(|n_3|+2): the reciprocal spacing
        # claim fails on this interval while the orbit-gap bound holds
        assert not tight["claimed_ok"]
        assert tight["true_ok"]
        assert tight["length"] >= tight["true_bound"]

        wide = intermediate_interval_check(h, a_max - pad, b_max + pad)
        assert wide["k"] == 3 and wide["r"] == 2 == wide["r_loose"]
        assert wide["claimed_ok"]
        assert wide["true_ok"]


def test_intermediate_interval_audit_window_errors(golden_h3):
    with pytest.raises(ValueError):
        intermediate_interval_check(golden_h3, 0, 1)       # length not in (0,1)
    with pytest.raises(ValueError):
        intermediate_interval_check(golden_h3, "0.5", "0.5625")  # length 1/16
    with pytest.raises(ValueError):
        intermediate_interval_check(golden_h3, "0.5", "0.500000001")


def test_box_dimension_consistency(golden_h3):
    # The deepest materialized level's ratio report must not exceed the
    # box-count slope of its union over the level-length ladder by more
    # than 0.05.
    h = golden_h3
    union = h.level_union(3)
    fit = dim_lb_estimate([(h.nominal_length(k), union) for k in (1, 2, 3)])
    deepest = local_dimension_report(h)[-1][1]
    assert deepest <= fit.slope + mpf("0.05")


# ---------------------------------------------------------------------------
# deep high-precision run and determinism
# ---------------------------------------------------------------------------

def test_deep_golden_hierarchy_dimension_floor():
    om = golden(512)
    cf = continued_fraction(om, max_depth=2048)
    seq = select_sequence(cf, 2, 1, 4, 0.1)
    assert seq[:3] == [1, -2, 1597]
    assert abs(seq[3]) > 10 ** 34
    h = build_hierarchy(om, 2, 1, seq)
    assert h.depth == 4
    assert [lev.materialized for lev in h.levels] == [True, True, True, False]
    assert all(lev.ambiguous == 0 for lev in h.levels)
    for lev in h.levels:
        assert lev.mass_total() == 1
    report = local_dimension_report(h)
    deepest = report[-1][1]
    assert deepest >= mpf("0.4")
    assert deepest <= 1
    _check_invariants(h)


def test_json_export_is_deterministic(golden_h3):
    h2 = build_hierarchy(golden(), 2, 1, [1, -2, 1597])
    s1 = json.dumps(golden_h3.to_json_obj(), sort_keys=True)
    s2 = json.dumps(h2.to_json_obj(), sort_keys=True)
    assert s1 == s2
    obj = json.loads(s1)
    assert obj["m"] == 1 and obj["sequence"] == [1, -2, 1597]
    assert len(obj["levels"]) == 3
    assert len(obj["levels"][2]["intervals"]) == 200
    assert obj["levels"][2]["ambiguous_discarded"] == 0


def test_json_export_counted_level():
    h = build_hierarchy(golden(), 2, 1, [1, -2, 1597], materialize_cap=100)
    obj = h.to_json_obj()
    deep = obj["levels"][2]
    assert "per_parent" in deep
    assert len(deep["per_parent"]) == 2
    assert sum(row["child_count"] for row in deep["per_parent"]) == 200
    with pytest.raises(ValueError):
        h.level_union(3)
