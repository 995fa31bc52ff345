"""Exact fixed-point helpers for circle arithmetic.

A circle value x in [0, 1) at ``bits`` precision is represented by the
integer floor(x * 2**bits).  All routines here are pure integer
arithmetic, so results are exact for the represented values; callers are
responsible for tracking the (one ulp) representation error of the
original real inputs.
"""

from __future__ import annotations

from fractions import Fraction

from mpmath import mp, mpf


def mpf_to_fraction(x) -> Fraction:
    """Exact rational value of a finite mpf (every mpf is dyadic)."""
    v = mpf(x)
    sign, man, exp, _ = v._mpf_
    man = int(man)
    if man == 0 and exp != 0:
        raise ValueError(f"non-finite value {v}")
    num = -man if sign else man
    if exp >= 0:
        return Fraction(num << exp, 1)
    return Fraction(num, 1 << -exp)


def to_fixed(x, bits: int) -> int:
    """floor(x * 2**bits) for an mpf/int/Fraction x."""
    with mp.workprec(bits + 64):
        return int(mp.floor(mpf(x) * (1 << bits)))


def from_fixed(n: int, bits: int) -> mpf:
    """Exact mpf value n / 2**bits (the integer fits the mantissa)."""
    with mp.workprec(max(bits + 8, n.bit_length() + 8)):
        return mpf(n) / (1 << bits)


def frac_mul(j: int, w: int, bits: int) -> int:
    """Fixed-point fractional part of j * (w / 2**bits), for signed j."""
    return (j * w) % (1 << bits)


def floor_sum(n: int, m: int, a: int, b: int) -> int:
    """Exact sum_{i=0}^{n-1} floor((a*i + b) / m) for m > 0, any-sign a, b.

    Standard Euclidean-style recursion; runs in O(log) big-integer steps,
    which keeps orbit counting exact even for ranges far beyond anything
    enumerable.
    """
    if n <= 0:
        return 0
    assert m > 0
    total = 0
    while True:
        if a >= m or a < 0:
            qa, a = divmod(a, m)
            total += n * (n - 1) // 2 * qa
        if b >= m or b < 0:
            qb, b = divmod(b, m)
            total += n * qb
        y_max = a * n + b
        if y_max < m:
            return total
        # swap roles: count lattice points under the line from the side
        n, b, m, a = y_max // m, y_max % m, a, m


def count_orbit_hits(w: int, bits: int, lo: int, hi: int, j_lo: int, j_hi: int) -> int:
    """Count j in [j_lo, j_hi] with frac(j * w / 2**bits) in [lo, hi).

    Exact for the fixed-point rotation number w / 2**bits.  Requires
    0 <= lo <= hi <= 2**bits; j may range over any signed interval.
    """
    scale = 1 << bits
    if not (0 <= lo <= hi <= scale):
        raise ValueError("interval must satisfy 0 <= lo <= hi <= 2**bits")
    if j_hi < j_lo:
        return 0

    # frac(j*w) in [lo, hi)  <=>  floor(j*w - lo) - floor(j*w - hi) == 1
    # (taking the scaled integers; each floor difference is 0 or 1).
    n = j_hi - j_lo + 1

    def s(offset: int) -> int:
        # sum over i = 0..n-1 of floor((w*(j_lo + i) - offset) / scale)
        return floor_sum(n, scale, w, w * j_lo - offset)

    return s(lo) - s(hi)
