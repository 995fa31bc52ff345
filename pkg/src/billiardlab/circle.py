"""Circle arithmetic: the unit-circle metric, validated continued
fractions, three-distance gap computation, and angle-to-circle
conversions.

All values live on R/Z of unit length and are stored as mpmath floats
together with an explicit ``precision_bits`` tag.  Nothing here relies on
the global mpmath context: every operation runs inside a local working
precision derived from its operands.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import List, Sequence, Tuple, Union

from mpmath import mp, mpf

from .errors import DepthExceeded, RationalDetected
from .fixedpoint import from_fixed, to_fixed

DEFAULT_PRECISION = 256

NumberLike = Union[int, float, str, Fraction, mpf]

# Symbols allowed in textual number specs ("(sqrt(5)-1)/2", "pi/3", ...).
_EVAL_NAMES = {
    "pi": mp.pi,
    "e": mp.e,
    "sqrt": mp.sqrt,
    "log": mp.log,
    "exp": mp.exp,
    "sin": mp.sin,
    "cos": mp.cos,
    "phi": mp.phi,
}


_LITERAL_RE = None  # compiled lazily to keep the import section tidy


def eval_number(x: NumberLike, precision_bits: int = DEFAULT_PRECISION) -> mpf:
    """Evaluate a numeric spec at the requested binary precision.

    Strings may be plain rationals or decimals ("1/3", "0.7" — parsed
    exactly, no float rounding) or expressions over pi, e, phi, sqrt(),
    log(), exp(), sin(), cos(); numeric literals inside expressions are
    promoted to working precision before any arithmetic, so "1.4/pi"
    means the decimal 1.4, not its 53-bit rounding.
    """
    global _LITERAL_RE
    with mp.workprec(precision_bits + 16):
        if isinstance(x, str):
            try:
                exact = Fraction(x.strip())
            except (ValueError, ZeroDivisionError):
                exact = None
            if exact is not None:
                return mpf(exact.numerator) / exact.denominator
            allowed = set("0123456789.+-*/() _abcdefghijklmnopqrstuvwxyz")
            if not set(x.lower()) <= allowed:
                raise ValueError(f"unsupported characters in number spec {x!r}")
            if _LITERAL_RE is None:
                import re
                _LITERAL_RE = re.compile(r"(?<![\w.])(\d+\.?\d*|\.\d+)(?![\w.])")
            promoted = _LITERAL_RE.sub(r"mpf('\1')", x)
            names = dict(_EVAL_NAMES)
            names["mpf"] = mpf
            value = eval(promoted, {"__builtins__": {}}, names)  # noqa: S307
            return mpf(value)
        if isinstance(x, Fraction):
            return mpf(x.numerator) / x.denominator
        return mpf(x)


@dataclass(frozen=True)
class CirclePoint:
    """A point on the circle R/Z: value in [0, 1) at a tagged precision."""

    value: mpf
    precision_bits: int = DEFAULT_PRECISION

    def __post_init__(self):
        if self.precision_bits <= 0:
            raise ValueError("precision_bits must be positive")
        with mp.workprec(self.precision_bits + 16):
            v = mpf(self.value)
            v = v - mp.floor(v)
            if v >= 1:  # guard against rounding at the wrap point
                v = mpf(0)
        object.__setattr__(self, "value", v)

    @classmethod
    def make(cls, x: NumberLike, precision_bits: int = DEFAULT_PRECISION) -> "CirclePoint":
        return cls(eval_number(x, precision_bits), precision_bits)

    def __add__(self, other: "CirclePoint") -> "CirclePoint":
        bits = min(self.precision_bits, other.precision_bits)
        with mp.workprec(bits + 16):
            return CirclePoint(self.value + other.value, bits)

    def __sub__(self, other: "CirclePoint") -> "CirclePoint":
        bits = min(self.precision_bits, other.precision_bits)
        with mp.workprec(bits + 16):
            return CirclePoint(self.value - other.value, bits)

    def __neg__(self) -> "CirclePoint":
        with mp.workprec(self.precision_bits + 16):
            return CirclePoint(-self.value, self.precision_bits)

    def scaled(self, k: int) -> "CirclePoint":
        """k * self mod 1 for an integer k."""
        with mp.workprec(self.precision_bits + max(16, abs(k).bit_length() + 8)):
            return CirclePoint(self.value * k, self.precision_bits)


@dataclass(frozen=True)
class Direction:
    """A billiard direction: ray angle theta and parallelogram angle alpha."""

    theta: mpf
    alpha: mpf
    precision_bits: int = DEFAULT_PRECISION

    def __post_init__(self):
        with mp.workprec(self.precision_bits + 16):
            two_pi = 2 * mp.pi
            th = mpf(self.theta)
            th = th - mp.floor(th / two_pi) * two_pi
            al = mpf(self.alpha)
            if not (0 < al < mp.pi / 2):
                raise ValueError("alpha must lie in (0, pi/2)")
        object.__setattr__(self, "theta", th)
        object.__setattr__(self, "alpha", al)

    @classmethod
    def make(cls, theta: NumberLike, alpha: NumberLike,
             precision_bits: int = DEFAULT_PRECISION) -> "Direction":
        return cls(eval_number(theta, precision_bits),
                   eval_number(alpha, precision_bits), precision_bits)


def circle_distance(a: CirclePoint, b: CirclePoint) -> mpf:
    """min(|a-b|, 1-|a-b|): the standard metric on the unit circle."""
    bits = min(a.precision_bits, b.precision_bits)
    with mp.workprec(bits + 16):
        d = abs(a.value - b.value)
        return min(d, 1 - d)


@dataclass(frozen=True)
class ContinuedFractionExpansion:
    """Validated continued fraction of a circle point.

    ``partial_quotients`` and ``convergents`` are certified up to
    ``validated_depth``: a quotient counts as validated only when both
    endpoints of the stored value's uncertainty interval agree on it.
    """

    omega: CirclePoint
    partial_quotients: List[int] = field(default_factory=list)
    convergents: List[Tuple[int, int]] = field(default_factory=list)
    validated_depth: int = 0

    def denominator(self, r: int) -> int:
        """q_r, 1-indexed."""
        if not (1 <= r <= self.validated_depth):
            raise DepthExceeded(f"r={r} exceeds validated depth {self.validated_depth}")
        return self.convergents[r - 1][1]


def continued_fraction(omega: CirclePoint, max_depth: int = 64) -> ContinuedFractionExpansion:
    """Continued fraction of omega with honestly validated depth.

    The expansion runs the Euclidean algorithm simultaneously on the two
    rationals W/2^P and (W+1)/2^P that bracket the stored value; quotients
    are emitted only while both endpoints agree on them.  Rationality at
    working precision is detected three ways: an endpoint expansion
    terminates exactly; a common quotient exceeds 2^(P/2) (the Gauss
    iterate dropped below the certification floor); or the endpoints
    disagree while a rational of low height (simplest rational of the
    bracket) lies inside the uncertainty interval.  A disagreement with no
    low-height rational nearby is ordinary precision exhaustion: the
    validated prefix is returned.
    """
    bits = omega.precision_bits
    scale = 1 << bits
    w = to_fixed(omega.value, bits)
    if w == 0:
        raise RationalDetected("omega is an integer at working precision")
    huge = 1 << (bits // 2)
    simple_cap = 1 << max(bits // 4, 8)

    # Euclid on (scale, w) and (scale, w+1): quotients of 1/omega.
    a_lo, b_lo = scale, w
    a_hi, b_hi = scale, w + 1
    quotients: List[int] = []
    convergents: List[Tuple[int, int]] = []
    p_prev, q_prev = 1, 0  # conventions p_{-1}=1, q_{-1}=0, p_0=0, q_0=1
    p_cur, q_cur = 0, 1
    while len(quotients) < max_depth:
        if b_lo == 0 or b_hi == 0:
            raise RationalDetected("expansion terminated: rational at working precision")
        q_lo, r_lo = divmod(a_lo, b_lo)
        q_hi, r_hi = divmod(a_hi, b_hi)
        if q_lo != q_hi:
            # Simplest rational strictly inside the bracket: the validated
            # prefix continued by min(q_lo, q_hi) + 1.
            q_simple = (min(q_lo, q_hi) + 1) * q_cur + q_prev
            if q_simple <= simple_cap:
                raise RationalDetected(
                    f"rational of denominator {q_simple} inside the uncertainty "
                    "interval at working precision")
            break
        if q_lo >= huge:
            raise RationalDetected(
                f"partial quotient {q_lo} exceeds 2^{bits // 2}: rational at working precision")
        quotients.append(q_lo)
        p_prev, p_cur = p_cur, q_lo * p_cur + p_prev
        q_prev, q_cur = q_cur, q_lo * q_cur + q_prev
        convergents.append((p_cur, q_cur))
        a_lo, b_lo = b_lo, r_lo
        a_hi, b_hi = b_hi, r_hi

    return ContinuedFractionExpansion(
        omega=omega,
        partial_quotients=quotients,
        convergents=convergents,
        validated_depth=len(quotients),
    )


def three_distance_gap(cf: ContinuedFractionExpansion, r: int) -> mpf:
    """Exact minimum of d(p1*omega, p2*omega) over n <= p1 < p2 <= 2n, n = q_r.

    Computed by sorting the n+1 orbit points in fixed point, so the result
    is exact for the stored value of omega (the representation error is
    below 2n ulps, far under any gap of interest).
    """
    n = cf.denominator(r)
    bits = cf.omega.precision_bits
    scale = 1 << bits
    w = to_fixed(cf.omega.value, bits)
    points = sorted((p * w) % scale for p in range(n, 2 * n + 1))
    best = scale  # max possible
    for i in range(1, len(points)):
        gap = points[i] - points[i - 1]
        if gap < best:
            best = gap
    wrap = scale - points[-1] + points[0]
    if wrap < best:
        best = wrap
    if best > scale // 2:
        best = scale - best
    return from_fixed(best, bits)


def angle_to_circle(d: Direction) -> Tuple[CirclePoint, CirclePoint]:
    """(t, omega) = ((theta mod pi)/pi, (2*alpha mod pi)/pi)."""
    bits = d.precision_bits
    with mp.workprec(bits + 16):
        pi = mp.pi
        t = (d.theta - mp.floor(d.theta / pi) * pi) / pi
        two_alpha = 2 * d.alpha
        om = (two_alpha - mp.floor(two_alpha / pi) * pi) / pi
    return CirclePoint(t, bits), CirclePoint(om, bits)


def detect_rational_angle(x: mpf, precision_bits: int,
                          max_denominator: int = 1 << 24) -> Union[Fraction, None]:
    """Return p/q if x is rational with small denominator at working precision.

    Used to recognize rational multiples of pi (alpha/pi, omega, ...): runs
    the validated continued fraction and reports the last convergent before
    a quotient blow-up.  Returns None for irrational-at-precision inputs.
    """
    point = CirclePoint(x, precision_bits)
    with mp.workprec(precision_bits + 16):
        frac_part = point.value
        int_part = int(mp.floor(mpf(x)))
    if frac_part == 0:
        return Fraction(int_part, 1)
    try:
        cf = continued_fraction(point, max_depth=256)
    except RationalDetected:
        # Re-run a single-endpoint Euclid and cut at the quotient blow-up:
        # the convergent just before the cut is the detected rational
        # (possibly in its trailing-1 form, which Fraction normalizes).
        bits = precision_bits
        scale = 1 << bits
        w = to_fixed(frac_part, bits)
        if w == 0:
            return Fraction(int_part, 1)
        cut = max(1 << (bits // 4), 2 * max_denominator)
        quotients = []
        a, b = scale, w
        while b > 0:
            q, r = divmod(a, b)
            if q >= cut:
                break
            quotients.append(q)
            a, b = b, r
        p_prev, q_prev, p_cur, q_cur = 1, 0, 0, 1
        for q in quotients:
            p_prev, p_cur = p_cur, q * p_cur + p_prev
            q_prev, q_cur = q_cur, q * q_cur + q_prev
        if q_cur == 1 and p_cur == 0:
            return None
        if q_cur > max_denominator:
            return None
        return Fraction(p_cur, q_cur) + int_part
    del cf
    return None


def orbit_entry(omega: CirclePoint, start: mpf, lo: mpf, hi: mpf,
                max_steps: int = 100000) -> int:
    """A small j >= 0 with frac(start + j*omega) in (lo, hi).

    Greedy descent along best-approximation steps (convergent jumps in
    both rotation directions).  The returned entry time is small but not
    necessarily minimal; raises DepthUnreachable if the interval is below
    the precision floor or the walk stalls.
    """
    from .errors import DepthUnreachable

    bits = omega.precision_bits
    scale = 1 << bits
    w = to_fixed(omega.value, bits)
    x = to_fixed(mpf(start), bits) % scale
    lo_i = to_fixed(mpf(lo), bits)
    hi_i = to_fixed(mpf(hi), bits)
    if not (0 <= lo_i < hi_i <= scale):
        raise ValueError("target interval must satisfy 0 <= lo < hi <= 1")
    if hi_i - lo_i < (1 << (bits // 2)):
        raise DepthUnreachable("target interval below precision floor")

    cf = continued_fraction(omega, max_depth=bits)
    # signed displacement of each convergent jump: q*w mod scale, as a
    # signed representative in (-scale/2, scale/2)
    jumps: List[Tuple[int, int]] = []  # (q, signed displacement)
    for _, q in cf.convergents:
        disp = (q * w) % scale
        if disp > scale // 2:
            disp -= scale
        if disp != 0:
            jumps.append((q, disp))
    jumps.sort(key=lambda t: -abs(t[1]))  # big steps first

    j = 0
    for _ in range(max_steps):
        if lo_i < x < hi_i:
            return j
        # distance to move forward (increasing x, wrapping) to reach the
        # middle of the target
        mid = (lo_i + hi_i) // 2
        delta = (mid - x) % scale
        if delta > scale // 2:
            delta -= scale
        # largest jump not overshooting past the target midpoint
        width = (hi_i - lo_i) // 2
        moved = False
        for q, disp in jumps:
            if abs(disp) <= max(abs(delta), width) and disp * delta > 0:
                x = (x + disp) % scale
                j += q
                moved = True
                break
        if not moved:
            # take the smallest available jump to perturb and retry
            q, disp = jumps[-1]
            x = (x + disp) % scale
            j += q
    raise DepthUnreachable("orbit entry walk did not converge")


def min_orbit_distance(cf: ContinuedFractionExpansion, n: int) -> mpf:
    """Exact min over 1 <= d <= n of ||d*omega||: equals ||q_r*omega|| for
    the largest validated convergent denominator q_r <= n."""
    bits = cf.omega.precision_bits
    scale = 1 << bits
    w = to_fixed(cf.omega.value, bits)
    best = None
    for _, q in cf.convergents:
        if q > n:
            break
        d = (q * w) % scale
        d = min(d, scale - d)
        if best is None or d < best:
            best = d
    if best is None:
        # n below the first denominator: brute force
        best = min(min((d * w) % scale, scale - (d * w) % scale) for d in range(1, n + 1))
    return from_fixed(best, bits)
