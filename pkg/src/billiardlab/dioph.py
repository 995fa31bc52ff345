"""Inhomogeneous approximation machinery: solution scans for
||t + p*omega|| below power thresholds, finite-depth truncations of the
A/B covering sets, and the ubiquity deficiency functional.

Scans run in two stages: a chunked float64 prefilter (error well below
1e-9 for p up to 10^6) with a 1e-8 safety margin, then exact mpmath
verification of every candidate.  Results therefore do not depend on the
chunking, and near-misses at the float64 scale cannot be lost.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable, Iterator, List, Optional, Tuple

import numpy as np
from mpmath import mp, mpf

from .circle import CirclePoint, detect_rational_angle
from .errors import CapTooSmall, OrbitPoint, RationalRotation
from .intervals import IntervalUnion

_PREFILTER_MARGIN = 1e-8
_CHUNK = 1 << 20


@dataclass(frozen=True)
class ApproxSolution:
    """One solution of ||t + p*omega|| < threshold(|p|).

    residue is the canonical representative of p mod m for the modulus the
    producing scan used; exponent is -log(distance)/log|p| (infinite for
    |p| = 1 or an exact hit).
    """

    p: int
    residue: int
    distance: mpf
    exponent: mpf


def _exact_distance(t: mpf, w: mpf, p: int, bits: int) -> mpf:
    """||t + p*w|| on the unit circle, at working precision."""
    with mp.workprec(bits + 64 + abs(p).bit_length()):
        x = t + p * w
        x = x - mp.floor(x)
        return min(x, 1 - x)


def _exponent(distance: mpf, p: int, bits: int) -> mpf:
    with mp.workprec(bits + 16):
        if distance <= 0:
            return mp.inf
        a = abs(p)
        if a <= 1:
            return mp.inf
        return -mp.log(distance) / mp.log(a)


def _progression(lo: int, hi: int, m: int, residue: int) -> Tuple[int, int]:
    """First and last integers in [lo, hi] congruent to residue mod m."""
    first = lo + ((residue - lo) % m)
    if first > hi:
        return 1, 0
    last = hi - ((hi - residue) % m)
    return first, last


def _scan(t64: float, w64: float, sign: int, lo: int, hi: int, m: int,
          residue: int, thr64: Callable[[np.ndarray], np.ndarray],
          chunk: int) -> Iterator[int]:
    """Yield candidate |p| values (float64 prefilter, margin included)."""
    first, last = _progression(lo, hi, m, residue)
    if first > last:
        return
    p0 = first
    step = m * chunk
    while p0 <= last:
        p1 = min(p0 + step - m, last)
        ps = np.arange(p0, p1 + 1, m, dtype=np.int64)
        x = (t64 + sign * ps * w64) % 1.0
        d = np.minimum(x, 1.0 - x)
        mask = d < thr64(ps) + _PREFILTER_MARGIN
        for p_abs in ps[mask]:
            yield int(p_abs)
        p0 = p1 + m


def _normalize_sign(sign) -> int:
    if sign in (1, +1, "+", "pos", "positive"):
        return 1
    if sign in (-1, "-", "neg", "negative"):
        return -1
    raise ValueError(f"sign must be '+' or '-', got {sign!r}")


def approx_solutions(t: CirclePoint, omega: CirclePoint, mu: float, m: int,
                     l: int, p_max: int, sign, *, chunk: int = _CHUNK,
                     ) -> List[ApproxSolution]:
    """All p of the requested sign with |p| <= p_max, p = l (mod m) and
    ||t + p*omega|| < |p|^(-mu), sorted by |p|.

    The threshold exponent mu may be any positive real (the covering-set
    constructions use mu > 1; the billiard schedules use mu < 1).
    """
    if mu <= 0:
        raise ValueError("mu must be positive")
    if not (0 <= l < m):
        raise ValueError("need 0 <= l < m")
    if p_max < m:
        raise ValueError("p_max must be at least m")
    s = _normalize_sign(sign)
    bits = min(t.precision_bits, omega.precision_bits)
    t64, w64 = float(t.value), float(omega.value)
    # |p| must satisfy s*|p| = l (mod m)
    residue = l % m if s > 0 else (-l) % m
    mu64 = float(mu)

    def thr(ps: np.ndarray) -> np.ndarray:
        return ps.astype(np.float64) ** (-mu64)

    out: List[ApproxSolution] = []
    with mp.workprec(bits + 32):
        mu_m = mpf(mu)
    for p_abs in _scan(t64, w64, s, 1, p_max, m, residue, thr, chunk):
        p = s * p_abs
        d = _exact_distance(t.value, omega.value, p, bits)
        with mp.workprec(bits + 32):
            if d < mpf(p_abs) ** (-mu_m):
                out.append(ApproxSolution(
                    p=p, residue=p % m, distance=d,
                    exponent=_exponent(d, p, bits)))
    return out


def minkowski_solutions(t: CirclePoint, omega: CirclePoint, p_max: int, *,
                        chunk: int = _CHUNK) -> List[ApproxSolution]:
    """All positive p <= p_max with ||t + p*omega|| < 1/(4p).

    Raises OrbitPoint if any |p| <= p_max (either sign) puts t + p*omega
    within 2^(-precision_bits/2) of 0: t is then indistinguishable from an
    orbit point of the rotation at working precision.  A rational rotation
    number (detected at working precision) emits a RationalRotation
    warning before scanning.
    """
    bits = min(t.precision_bits, omega.precision_bits)
    if detect_rational_angle(omega.value, omega.precision_bits) is not None:
        warnings.warn("rotation number is rational at working precision; "
                      "orbit distances are eventually periodic", RationalRotation)
    t64, w64 = float(t.value), float(omega.value)
    floor_thr = mpf(2) ** (-(bits // 2))

    def thr_mink(ps: np.ndarray) -> np.ndarray:
        return 0.25 / ps.astype(np.float64)

    def thr_orbit(ps: np.ndarray) -> np.ndarray:
        return np.zeros(len(ps))  # margin alone catches precision-floor hits

    orbit_hits: List[int] = []
    for s in (1, -1):
        for p_abs in _scan(t64, w64, s, 1, p_max, 1, 0, thr_orbit, chunk):
            d = _exact_distance(t.value, omega.value, s * p_abs, bits)
            if d < floor_thr:
                orbit_hits.append(s * p_abs)
    if orbit_hits:
        nearest = min(orbit_hits, key=abs)
        raise OrbitPoint(f"t + {nearest}*omega is within 2^-{bits // 2} of 0: "
                         "t lies on the rotation orbit at working precision")

    out: List[ApproxSolution] = []
    for p_abs in _scan(t64, w64, 1, 1, p_max, 1, 0, thr_mink, chunk):
        d = _exact_distance(t.value, omega.value, p_abs, bits)
        with mp.workprec(bits + 32):
            if d < mpf(1) / (4 * p_abs):
                out.append(ApproxSolution(
                    p=p_abs, residue=0, distance=d,
                    exponent=_exponent(d, p_abs, bits)))
    return out


def _circle_pairs(center: mpf, halfwidth: mpf, bits: int) -> List[Tuple[mpf, mpf]]:
    """(center - halfwidth, center + halfwidth) mod 1, split at 0."""
    with mp.workprec(bits + 16):
        c = center - mp.floor(center)
        h = halfwidth
        if h <= 0:
            return []
        if 2 * h >= 1:
            return [(mpf(0), mpf(1))]
        lo, hi = c - h, c + h
        if lo < 0:
            return [(mpf(0), hi), (lo + 1, mpf(1))]
        if hi > 1:
            return [(mpf(0), hi - 1), (lo, mpf(1))]
        return [(lo, hi)]


def _admissible_abs(j: int, m: int, l: int, sign: int, p_cap: int) -> range:
    """|p| values in [j*m, p_cap] with sign*|p| = l (mod m), as a range."""
    residue = l % m if sign > 0 else (-l) % m
    first, last = _progression(j * m, p_cap, m, residue)
    if first > last:
        return range(0)
    return range(first, last + 1, m)


def a_set_depth(omega: CirclePoint, mu: float, m: int, l: int, k: int,
                p_cap: int) -> IntervalUnion:
    """Depth-k truncation of the inhomogeneous covering set over the
    rotation orbit: the intersection over layer indices |j| = 1..k (each
    sign separately) of the union over admissible p — sign(p) = sign(j),
    |j|*m <= |p| <= p_cap, p = l (mod m) — of the intervals
    (p*omega - 1/(2|p|^mu), p*omega + 1/(2|p|^mu)) on the circle.

    The full (infinite-cap) set has finite total length only for mu > 1;
    the finite truncation is well defined for any positive mu."""
    if mu <= 0:
        raise ValueError("mu must be positive")
    if not (0 <= l < m) or k < 1:
        raise ValueError("need 0 <= l < m and k >= 1")
    if p_cap < k * m:
        raise CapTooSmall(f"p_cap={p_cap} below k*m={k * m}")
    bits = omega.precision_bits
    result: Optional[IntervalUnion] = None
    with mp.workprec(bits + 32):
        w = mpf(omega.value)
        mu_m = mpf(mu)
        for j in range(1, k + 1):
            for sign in (1, -1):
                pairs: List[Tuple[mpf, mpf]] = []
                for p_abs in _admissible_abs(j, m, l, sign, p_cap):
                    center = sign * p_abs * w
                    half = mpf(1) / (2 * mpf(p_abs) ** mu_m)
                    pairs.extend(_circle_pairs(center, half, bits))
                layer = IntervalUnion.make(pairs, bits)
                result = layer if result is None else result.intersect(layer)
    return result if result is not None else IntervalUnion.empty(bits)


def b_set_depth(t: CirclePoint, mu: float, m: int, l: int, k: int,
                p_cap: int) -> IntervalUnion:
    """Depth-k truncation of the denominator-side covering set: for each
    admissible p (same layer convention as a_set_depth), |p| intervals
    centered at (t+i)/p for i = 0..|p|-1 with radius 1/(2|p|^(mu+1));
    layers intersected.  As with a_set_depth, any positive mu is accepted
    for the finite truncation."""
    if mu <= 0:
        raise ValueError("mu must be positive")
    if not (0 <= l < m) or k < 1:
        raise ValueError("need 0 <= l < m and k >= 1")
    if p_cap < k * m:
        raise CapTooSmall(f"p_cap={p_cap} below k*m={k * m}")
    bits = t.precision_bits
    result: Optional[IntervalUnion] = None
    with mp.workprec(bits + 32):
        tv = mpf(t.value)
        mu_m = mpf(mu)
        for j in range(1, k + 1):
            for sign in (1, -1):
                pairs: List[Tuple[mpf, mpf]] = []
                for p_abs in _admissible_abs(j, m, l, sign, p_cap):
                    p = sign * p_abs
                    half = mpf(1) / (2 * mpf(p_abs) ** (mu_m + 1))
                    for i in range(p_abs):
                        center = (tv + i) / p
                        pairs.extend(_circle_pairs(center, half, bits))
                layer = IntervalUnion.make(pairs, bits)
                result = layer if result is None else result.intersect(layer)
    return result if result is not None else IntervalUnion.empty(bits)


def ubiquity_rho(m: int, l: int, N: int, K: float, eps: float,
                 bits: int = 256) -> mpf:
    """The neighborhood radius K * log^(5+2*eps)(N*m+l) / (N*m+l)^2."""
    with mp.workprec(bits + 16):
        q = N * m + l
        if q < 1:
            raise ValueError("N*m + l must be at least 1")
        lg = mp.log(q)
        if lg <= 0:
            return mpf(0)
        return mpf(K) * lg ** (5 + 2 * mpf(eps)) / mpf(q) ** 2


def ubiquity_deficiency(omega: CirclePoint, m: int, l: int, N: int,
                        K: float, eps: float) -> mpf:
    """Lebesgue measure of the part of [0,1) missed by the rho(N)-
    neighborhoods of the rational-solution families
    R_k = {(omega+i)/(k*m+l) : i = 0..k*m+l-1} for k = 1..N.

    The family R_k consists of exactly q = k*m+l equally spaced points
    (consecutive centers differ by exactly 1/q), so a single family covers
    the circle as soon as 2*rho*q >= 1; that shortcut is exact and makes
    large-N calls cheap.  Otherwise families are subtracted largest-q
    first with an early exit once nothing remains."""
    if N < 1 or K <= 0 or eps <= 0:
        raise ValueError("need N >= 1, K > 0, eps > 0")
    bits = omega.precision_bits
    rho = ubiquity_rho(m, l, N, K, eps, bits)
    with mp.workprec(bits + 32):
        q_top = N * m + l
        if q_top >= 1 and 2 * rho * q_top >= 1:
            return mpf(0)
        w = mpf(omega.value)
        complement = IntervalUnion.make([(mpf(0), mpf(1))], bits)
        for k in range(N, 0, -1):
            q = k * m + l
            if q < 1:
                continue
            pairs: List[Tuple[mpf, mpf]] = []
            for i in range(q):
                pairs.extend(_circle_pairs((w + i) / q, rho, bits))
            complement = complement.subtract(IntervalUnion.make(pairs, bits))
            if not complement:
                return mpf(0)
        return complement.total_length
