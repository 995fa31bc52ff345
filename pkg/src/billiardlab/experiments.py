"""Reproducible experiment drivers behind the ``lab`` command line tool.

Each experiment takes a validated :class:`ExperimentConfig`, runs a fixed
pipeline over the library primitives, and returns a :class:`RunReport`
holding CSV tables, a JSON result object, and the list of invariant
violations.  :func:`write_report` serializes a report into an output
directory: one CSV file per table, one JSON file with the full results,
and a manifest echoing the configuration.  Reports contain no timestamps
or environment-dependent fields, so a re-run with the same configuration
and seed produces byte-identical files.
"""

from __future__ import annotations

import copy
import json
import os
import warnings
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from mpmath import mp, mpf

from . import __version__
from .billiard import (GeneralizedParallelogram, parallelogram,
                       perpendicular_periodicity, rhombus)
from .cantor import (build_hierarchy, local_dimension_report,
                     select_sequence, separation_report)
from .circle import (CirclePoint, Direction, angle_to_circle,
                     continued_fraction, detect_rational_angle, eval_number,
                     three_distance_gap)
from .dimension import average_length_cover, cover_escape_set
from .dioph import approx_solutions, minkowski_solutions, ubiquity_deficiency, ubiquity_rho
from .errors import ConfigError, ScheduleNotFound
from .fixedpoint import to_fixed

__all__ = [
    "EXPERIMENTS",
    "ExperimentConfig",
    "RunReport",
    "apply_overrides",
    "construct_twosided_target",
    "run_experiment",
    "write_report",
]


# --------------------------------------------------------------------------
# configuration
# --------------------------------------------------------------------------

_DEFAULT_POLYGON = {"kind": "rhombus", "alpha": "pi*(sqrt(5)-1)/4", "side": 1}

#: Per-experiment option names and default values.  A configuration may
#: only set keys listed for its experiment (plus the common keys); unknown
#: keys are rejected so typos cannot silently fall back to defaults.
_SCHEMA: Dict[str, Dict[str, Any]] = {
    "thm1_cover": {
        "precision_bits": 256,
        "polygon": dict(_DEFAULT_POLYGON),
        "theta": "0.3",
        "delta": 0.1,
        "eps": 0.1,
        "s": None,
        "p_max": 4096,
        "schedule_steps": 3,
        "schedule_shrink": 0.5,
        "reflection_cap": 100000,
        "control_alpha": "pi/3",
        "control_max_n": 64,
    },
    "thm2_cover": {
        "precision_bits": 512,
        "polygon": dict(_DEFAULT_POLYGON),
        "mu": 2.0,
        "eps": 0.1,
        "construct_steps": 6,
        "p_max": 4096,
        "n_cap": 100,
        "reflection_cap": 20000,
    },
    "cantor_dim": {
        "precision_bits": 512,
        "omega": "(sqrt(5)-1)/2",
        "mu": 2.0,
        "m": 1,
        "depth": 4,
        "growth_margin": 0.1,
        "scan_cap": 1 << 21,
        "materialize_cap": 1 << 19,
        "ratio_floor": None,
    },
    "ubiquity": {
        "precision_bits": 256,
        "omega": "sqrt(2)-1",
        "m": 2,
        "l": 1,
        "coverage_constant": 1.0,
        "eps": 0.05,
        "n_values": [100, 1000, 10000],
        "threshold": 0.05,
    },
    "minkowski_scan": {
        "precision_bits": 256,
        "pairs": 100,
        "p_max": 1000000,
        "min_solutions": 5,
    },
    "perp_orbits": {
        "precision_bits": 256,
        "polygon": {"kind": "rhombus", "alpha": "pi/4", "side": 1},
        "samples": 2000,
        "reflection_cap": 100000,
        "singular_allowance": 10,
        "undecided_threshold": 0.05,
        "cap_doubling": False,
    },
    "three_distance_audit": {
        "precision_bits": 256,
        "omegas": ["(sqrt(5)-1)/2", "sqrt(2)-1"],
        "q_max": 100000,
        "e1_trials": 10000,
        "e1_j_max": 1000,
        "e1_check_sample": 50,
    },
}

_COMMON_DEFAULTS: Dict[str, Any] = {"seed": 20260818, "out_dir": "lab_out"}

_POLYGON_KEYS = {"kind", "alpha", "side", "base"}


def _type_name(value: Any) -> str:
    return type(value).__name__


def _check_int(name: str, value: Any, lo: int = 1, hi: Optional[int] = None) -> int:
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{name} must be an integer, got {_type_name(value)}")
    if value < lo or (hi is not None and value > hi):
        bound = f">= {lo}" if hi is None else f"in [{lo}, {hi}]"
        raise ConfigError(f"{name} must be {bound}, got {value}")
    return value


def _check_float(name: str, value: Any, lo: float, hi: float,
                 *, open_ends: bool = True) -> float:
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{name} must be a number, got {_type_name(value)}")
    v = float(value)
    inside = lo < v < hi if open_ends else lo <= v <= hi
    if not inside:
        raise ConfigError(f"{name} must lie in ({lo}, {hi}), got {value}")
    return v


def _check_expr(name: str, value: Any) -> Any:
    if not isinstance(value, (str, int, float)) or isinstance(value, bool):
        raise ConfigError(f"{name} must be a number or a symbolic string, "
                          f"got {_type_name(value)}")
    try:
        eval_number(value, 64)
    except (ValueError, TypeError, ZeroDivisionError,
            SyntaxError, NameError) as exc:
        raise ConfigError(f"{name} is not a valid numeric expression: {exc}")
    return value


def _check_polygon(spec: Any) -> Dict[str, Any]:
    if not isinstance(spec, Mapping):
        raise ConfigError("polygon must be an object with kind/alpha/side[/base]")
    unknown = set(spec) - _POLYGON_KEYS
    if unknown:
        raise ConfigError(f"unknown polygon keys: {sorted(unknown)}")
    kind = spec.get("kind", "rhombus")
    if kind not in ("rhombus", "parallelogram"):
        raise ConfigError(f"polygon kind must be rhombus or parallelogram, got {kind!r}")
    out = {"kind": kind, "alpha": _check_expr("polygon.alpha", spec.get("alpha", _DEFAULT_POLYGON["alpha"])),
           "side": _check_expr("polygon.side", spec.get("side", 1))}
    if kind == "parallelogram":
        out["base"] = _check_expr("polygon.base", spec.get("base", 1))
    elif "base" in spec:
        raise ConfigError("polygon.base only applies to parallelograms")
    return out


class ExperimentConfig:
    """Validated options for one experiment run.

    Options are exposed as attributes (``config.p_max``); the schema is the
    union of the common keys (experiment, seed, out_dir) and the experiment's
    entry in the module-level defaults table.
    """

    def __init__(self, options: Dict[str, Any]):
        self._options = dict(options)

    def __getattr__(self, name: str) -> Any:
        try:
            return self._options[name]
        except KeyError:
            raise AttributeError(name) from None

    def get(self, name: str, default: Any = None) -> Any:
        return self._options.get(name, default)

    def to_json_obj(self) -> Dict[str, Any]:
        return copy.deepcopy(self._options)

    @classmethod
    def from_json_obj(cls, obj: Mapping[str, Any],
                      experiment: Optional[str] = None) -> "ExperimentConfig":
        if not isinstance(obj, Mapping):
            raise ConfigError("configuration must be a JSON object")
        name = experiment if experiment is not None else obj.get("experiment")
        if name is None:
            raise ConfigError("no experiment selected")
        if name not in _SCHEMA:
            raise ConfigError(f"unknown experiment {name!r}; expected one of "
                              f"{sorted(_SCHEMA)}")
        declared = obj.get("experiment")
        if declared is not None and declared != name:
            raise ConfigError(f"config declares experiment {declared!r} but "
                              f"{name!r} was requested")
        merged: Dict[str, Any] = {"experiment": name}
        merged.update(copy.deepcopy(_COMMON_DEFAULTS))
        merged.update(copy.deepcopy(_SCHEMA[name]))
        allowed = set(merged)
        unknown = set(obj) - allowed
        if unknown:
            raise ConfigError(f"unknown option(s) for {name}: {sorted(unknown)}")
        for key, value in obj.items():
            if key == "experiment":
                continue
            merged[key] = copy.deepcopy(value)
        cls._validate(merged)
        return cls(merged)

    @staticmethod
    def _validate(opts: Dict[str, Any]) -> None:
        name = opts["experiment"]
        _check_int("seed", opts["seed"], lo=0)
        _check_int("precision_bits", opts["precision_bits"], lo=64, hi=8192)
        if not isinstance(opts["out_dir"], str) or not opts["out_dir"]:
            raise ConfigError("out_dir must be a non-empty path string")
        if "polygon" in opts:
            opts["polygon"] = _check_polygon(opts["polygon"])
        if "theta" in opts:
            _check_expr("theta", opts["theta"])
        if "omega" in opts:
            _check_expr("omega", opts["omega"])
        if "omegas" in opts:
            seq = opts["omegas"]
            if not isinstance(seq, list) or not seq:
                raise ConfigError("omegas must be a non-empty list")
            for i, om in enumerate(seq):
                _check_expr(f"omegas[{i}]", om)
        if "mu" in opts:
            mu = opts["mu"]
            if isinstance(mu, bool) or not isinstance(mu, (int, float)):
                raise ConfigError(f"mu must be a number, got {_type_name(mu)}")
            if name == "thm2_cover" and not mu >= 1:
                raise ConfigError(f"mu must be >= 1, got {mu}")
            if name == "cantor_dim" and not mu > 1:
                raise ConfigError(f"mu must be > 1, got {mu}")
        if "m" in opts:
            _check_int("m", opts["m"], lo=1)
        if "l" in opts:
            _check_int("l", opts["l"], lo=0)
            if opts["l"] >= opts["m"]:
                raise ConfigError(f"residue l={opts['l']} must be < m={opts['m']}")
        if "depth" in opts:
            _check_int("depth", opts["depth"], lo=2)
        if "growth_margin" in opts:
            _check_float("growth_margin", opts["growth_margin"], 0.0, 1.0)
        if "delta" in opts:
            _check_float("delta", opts["delta"], 0.0, 1.0)
        if "eps" in opts:
            _check_float("eps", opts["eps"], 0.0, 1.0)
        if "s" in opts and opts["s"] is not None:
            _check_float("s", opts["s"], 0.0, 1.0)
        if "schedule_shrink" in opts:
            _check_float("schedule_shrink", opts["schedule_shrink"], 0.0, 1.0,
                         open_ends=False)
            if opts["schedule_shrink"] <= 0:
                raise ConfigError("schedule_shrink must be positive")
        if "ratio_floor" in opts and opts["ratio_floor"] is not None:
            _check_float("ratio_floor", opts["ratio_floor"], 0.0, 1.0)
        if "threshold" in opts:
            _check_float("threshold", opts["threshold"], 0.0, 1.0)
        if "undecided_threshold" in opts:
            _check_float("undecided_threshold", opts["undecided_threshold"], 0.0, 1.0)
        if "coverage_constant" in opts:
            _check_float("coverage_constant", opts["coverage_constant"], 0.0, 1e9)
        for key in ("p_max", "schedule_steps", "reflection_cap", "control_max_n",
                    "construct_steps", "n_cap", "scan_cap", "materialize_cap",
                    "samples", "pairs", "min_solutions", "q_max", "e1_trials",
                    "e1_j_max"):
            if key in opts:
                _check_int(key, opts[key], lo=1)
        for key in ("singular_allowance", "e1_check_sample"):
            if key in opts:
                _check_int(key, opts[key], lo=0)
        if "n_values" in opts:
            seq = opts["n_values"]
            if not isinstance(seq, list) or not seq:
                raise ConfigError("n_values must be a non-empty list of integers")
            for i, n in enumerate(seq):
                _check_int(f"n_values[{i}]", n, lo=1)
            if any(b <= a for a, b in zip(seq, seq[1:])):
                raise ConfigError("n_values must be strictly increasing")
        if "cap_doubling" in opts and not isinstance(opts["cap_doubling"], bool):
            raise ConfigError("cap_doubling must be a boolean")
        if "control_alpha" in opts and opts["control_alpha"] is not None:
            _check_expr("control_alpha", opts["control_alpha"])
        if name == "perp_orbits" and opts["polygon"]["kind"] != "rhombus":
            raise ConfigError("perp_orbits requires a rhombus polygon")


def apply_overrides(obj: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    """Apply ``key=value`` strings (dotted keys descend into sub-objects).

    Values are parsed as JSON when possible and fall back to plain strings,
    so ``--override p_max=500`` assigns an integer while
    ``--override theta=pi/7`` assigns a symbolic string.
    """
    for item in overrides:
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = obj
        parts = key.split(".")
        for part in parts[:-1]:
            nxt = node.setdefault(part, {})
            if not isinstance(nxt, dict):
                raise ConfigError(f"override {key!r} descends into non-object "
                                  f"{part!r}")
            node = nxt
        node[parts[-1]] = value
    return obj


# --------------------------------------------------------------------------
# report plumbing
# --------------------------------------------------------------------------

@dataclass
class RunReport:
    """Outcome of one experiment run, ready for serialization."""

    experiment: str
    passed: bool
    violations: List[str]
    notes: List[str]
    tables: Dict[str, Tuple[str, List[str]]]
    data: Dict[str, Any]
    config: ExperimentConfig = field(repr=False)


def _fmt(x, digits: int = 20) -> str:
    """Deterministic decimal rendering of an mpf/number for reports."""
    with mp.workprec(max(digits * 4, 64)):
        return mp.nstr(mpf(x), digits, strip_zeros=True)


def _fmt_full(x, bits: int) -> str:
    digits = int(bits * 0.3010299956639812) + 2
    with mp.workprec(bits + 16):
        return mp.nstr(mpf(x), digits, strip_zeros=True)


def write_report(report: RunReport, out_dir: str) -> List[str]:
    """Write CSV tables, the JSON result, and the manifest; return filenames."""
    os.makedirs(out_dir, exist_ok=True)
    names: List[str] = []
    for table in sorted(report.tables):
        header, rows = report.tables[table]
        fname = f"{report.experiment}.{table}.csv"
        with open(os.path.join(out_dir, fname), "w", encoding="utf-8") as fh:
            fh.write(header + "\n")
            for row in rows:
                fh.write(row + "\n")
        names.append(fname)
    result_obj = {
        "experiment": report.experiment,
        "passed": report.passed,
        "violations": report.violations,
        "notes": report.notes,
        "config": report.config.to_json_obj(),
        "results": report.data,
    }
    json_name = f"{report.experiment}.json"
    with open(os.path.join(out_dir, json_name), "w", encoding="utf-8") as fh:
        json.dump(result_obj, fh, sort_keys=True, indent=2)
        fh.write("\n")
    names.append(json_name)
    manifest = {
        "experiment": report.experiment,
        "package": "billiardlab",
        "version": __version__,
        "precision_bits": report.config.precision_bits,
        "seed": report.config.seed,
        "passed": report.passed,
        "violations": report.violations,
        "config": report.config.to_json_obj(),
        "outputs": sorted(names),
    }
    manifest_name = f"{report.experiment}.manifest.json"
    with open(os.path.join(out_dir, manifest_name), "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
        fh.write("\n")
    names.append(manifest_name)
    return sorted(names)


def _build_polygon(spec: Mapping[str, Any], bits: int) -> GeneralizedParallelogram:
    if spec["kind"] == "rhombus":
        return rhombus(spec["alpha"], side=spec["side"], precision_bits=bits)
    return parallelogram(spec["alpha"], base=spec["base"], side=spec["side"],
                         precision_bits=bits)


def _collect_warnings(records, notes: List[str]) -> None:
    counts: Dict[str, int] = {}
    for rec in records:
        key = rec.category.__name__
        counts[key] = counts.get(key, 0) + 1
    for key in sorted(counts):
        notes.append(f"warnings: {key} x{counts[key]}")


# --------------------------------------------------------------------------
# escape-set covers along Diophantine schedules
# --------------------------------------------------------------------------

def _deltadio_schedule(t: CirclePoint, omega: CirclePoint, delta: float,
                       p_max: int, sign: int, steps: int,
                       shrink: float = 0.5) -> List[int]:
    """Indices N with ||t + sign*N*omega|| < N^-(1-delta), distance-sparsified.

    The inequality is vacuous while N^-(1-delta) >= 1/2 (no circle distance
    exceeds 1/2), so indices up to 2^(1/(1-delta)) are skipped outright.
    Past that, the schedule keeps the greedy subsequence along which the
    distance shrinks by at least ``shrink`` per kept step, which singles
    out genuine approximation events while every entry remains a solution
    of the defining inequality.
    """
    sols = approx_solutions(t, omega, 1.0 - delta, 1, 0, p_max, sign)
    p_min = 2.0 ** (1.0 / (1.0 - delta))
    ns: List[int] = []
    best = None
    for sol in sols:
        n = abs(sol.p)
        if n <= p_min:
            continue
        if ns and n <= ns[-1]:
            continue
        if best is not None and not sol.distance <= shrink * best:
            continue
        ns.append(n)
        best = sol.distance
        if len(ns) == steps:
            break
    if not ns:
        raise ScheduleNotFound(
            f"no solutions of ||t + p*omega|| < |p|^-{1 - delta:g} with "
            f"|p| <= {p_max}; enlarge p_max")
    return ns


_COVER_HEADER = ("side,n,count,piece_length,gate_width,escape_length,"
                 "uncertain_length,hs_sum")


def _cover_rows(side: str, q, theta, s: float, ns: Sequence[int],
                cap: int) -> Tuple[List[str], List[mpf]]:
    variant = "down" if side.startswith("down") else "up"
    rows, sums = [], []
    for n in ns:
        rec = cover_escape_set(q, theta, s, n, cap, variant=variant)
        rows.append(",".join([side, str(n), str(rec.count), _fmt(rec.piece_length),
                              _fmt(rec.gate_width), _fmt(rec.escape_length),
                              _fmt(rec.uncertain_length), _fmt(rec.hs_sum)]))
        sums.append(rec.hs_sum)
    return rows, sums


def run_thm1(cfg: ExperimentConfig) -> RunReport:
    """Escape-set Hausdorff sums along a two-sided Diophantine schedule."""
    bits = cfg.precision_bits
    q = _build_polygon(cfg.polygon, bits)
    d = Direction.make(cfg.theta, cfg.polygon["alpha"], bits)
    violations: List[str] = []
    notes: List[str] = []
    delta, eps = float(cfg.delta), float(cfg.eps)
    if not delta < eps:
        msg = (f"exponent ordering 1 > eps > delta > 0 violated "
               f"(eps={eps:g}, delta={delta:g}); decay is not guaranteed")
        warnings.warn(msg, UserWarning)
        notes.append("warning: " + msg)
    s = float(cfg.s) if cfg.s is not None else 0.5 + eps
    t_up, om = angle_to_circle(d)
    with mp.workprec(bits + 16):
        t_down = CirclePoint(((d.theta - q.alpha) % mp.pi) / mp.pi, bits)
    side_specs = (("up", t_up, +1), ("down", t_down, -1))
    rows: List[str] = []
    sides: Dict[str, Any] = {}
    for side, target, sign in side_specs:
        entry: Dict[str, Any] = {"sign": sign, "target": _fmt(target.value, 30)}
        try:
            ns = _deltadio_schedule(target, om, delta, cfg.p_max, sign,
                                    cfg.schedule_steps,
                                    shrink=float(cfg.schedule_shrink))
        except ScheduleNotFound as exc:
            entry["schedule_found"] = False
            entry["note"] = str(exc)
            notes.append(f"{side}: {exc}")
            sides[side] = entry
            continue
        side_rows, sums = _cover_rows(side, q, d.theta, s, ns, cfg.reflection_cap)
        rows.extend(side_rows)
        entry["schedule_found"] = True
        entry["schedule"] = ns
        entry["hs_sums"] = [_fmt(v) for v in sums]
        if len(sums) >= 2:
            decay = all(b < a for a, b in zip(sums, sums[1:]))
            entry["decay_strict"] = decay
            if not decay:
                violations.append(f"{side}: H^s sums do not strictly decrease "
                                  f"along schedule {ns}")
        else:
            entry["decay_strict"] = None
            notes.append(f"{side}: schedule has {len(ns)} step(s); decay "
                         "not assessable")
        sides[side] = entry
    control: Dict[str, Any] = {}
    if cfg.control_alpha is not None:
        q_ctl = rhombus(cfg.control_alpha, side=cfg.polygon["side"],
                        precision_bits=bits)
        d_ctl = Direction.make(cfg.theta, cfg.control_alpha, bits)
        with warnings.catch_warnings(record=True) as records:
            warnings.simplefilter("always")
            n, ctl_ns = 1, []
            while n <= cfg.control_max_n:
                ctl_ns.append(n)
                n *= 2
            ctl_rows, ctl_sums = [], []
            certified_empty = False
            residual = None
            for n in ctl_ns:
                rec = cover_escape_set(q_ctl, d_ctl.theta, s, n,
                                       cfg.reflection_cap, variant="up")
                ctl_rows.append(",".join(["control_up", str(n), str(rec.count),
                                          _fmt(rec.piece_length), _fmt(rec.gate_width),
                                          _fmt(rec.escape_length),
                                          _fmt(rec.uncertain_length),
                                          _fmt(rec.hs_sum)]))
                ctl_sums.append(rec.hs_sum)
                # The certified escape cover is empty once no pieces and no
                # escape length remain; the H^s sum then carries only the
                # 2-ulp guard shards around singular vertex rays, which the
                # exact engine keeps as explicit uncertainty instead of
                # rounding to zero.
                if rec.count == 0 and rec.escape_length == 0:
                    certified_empty = True
                    residual = rec.uncertain_length
                    break
        _collect_warnings(records, notes)
        rows.extend(ctl_rows)
        control = {"alpha": cfg.control_alpha, "schedule": ctl_ns[:len(ctl_sums)],
                   "hs_sums": [_fmt(v) for v in ctl_sums],
                   "certified_empty": certified_empty,
                   "residual_uncertain": _fmt(residual) if residual is not None
                   else None}
        if not certified_empty:
            violations.append("control: escape cover never certified empty "
                              "on the rational-angle fixture")
    data = {"s": _fmt(s), "delta": _fmt(delta), "eps": _fmt(eps),
            "theta": _fmt_full(d.theta, bits), "omega": _fmt_full(om.value, bits),
            "sides": sides, "control": control}
    return RunReport("thm1_cover", not violations, violations, notes,
                     {"covers": (_COVER_HEADER, rows)}, data, cfg)


# --------------------------------------------------------------------------
# two-sided well-approximable targets
# --------------------------------------------------------------------------

def construct_twosided_target(omega: CirclePoint, mu: float, steps: int,
                              *, cf_depth: int = 2048) -> Dict[str, Any]:
    """Build t whose orbit satisfies ||t + sign*p*omega|| < p^-mu alternately.

    Witnesses alternate (sign=-1, p odd) and (sign=+1, p even), starting
    with the odd/minus pair.  Each step jumps by an odd continued-fraction
    denominator D with ||D*omega|| below a third of the current interval's
    half-width, so the new witness interval nests inside the previous one;
    the returned target is the center of the innermost interval.  The
    construction and the final witness verification both run in exact
    fixed-point arithmetic with a drift allowance of one ulp per orbit step.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    if not mu >= 1:
        raise ValueError("mu must be >= 1")
    bits = omega.precision_bits
    scale = 1 << bits
    w = to_fixed(omega.value, bits)
    cf = continued_fraction(omega, max_depth=cf_depth)
    with mp.workprec(bits + 64):
        mu_m = mpf(mu)
        p = 3
        while int(mp.floor(mp.power(p, -mu_m) * scale)) >= scale // 16:
            p += 2
        sign = -1
        c = (p * w) % scale
        h = int(mp.floor(mp.power(p, -mu_m) * scale)) // 2
        witnesses = [(sign, p)]
        for _ in range(1, steps):
            sign = -sign
            target = h // 3
            D = None
            for _, qd in cf.convergents:
                if qd % 2 == 1 and qd > 2 * p:
                    dd = (qd * w) % scale
                    dd = min(dd, scale - dd)
                    if dd <= target:
                        D = qd
                        break
            if D is None:
                raise ScheduleNotFound(
                    f"no odd denominator jump below {target}/2^{bits} within "
                    f"{len(cf.convergents)} validated convergents")
            p_next = D - p
            c_next = ((-sign) * p_next * w) % scale
            dd = (c_next - c) % scale
            dd = min(dd, scale - dd)
            if dd > h // 3:
                raise AssertionError("jump left the nesting window")
            r_fp = int(mp.floor(mp.power(p_next, -mu_m) * scale))
            h_next = min(r_fp // 2, h // 3)
            if h_next < (p_next << 16):
                raise ScheduleNotFound(
                    f"witness index {p_next} needs more than {bits} bits of "
                    "precision; raise precision_bits or lower construct_steps")
            witnesses.append((sign, p_next))
            p, c, h = p_next, c_next, h_next
        t_fp = c % scale
        t = CirclePoint(mpf(t_fp) / scale, bits)
        rows = []
        all_ok = True
        for sgn, pw in witnesses:
            d_fp = (t_fp + sgn * pw * w) % scale
            d_fp = min(d_fp, scale - d_fp)
            bound_fp = int(mp.floor(mp.power(pw, -mu_m) * scale))
            ok = d_fp + pw + 2 < bound_fp
            all_ok = all_ok and ok
            dist = mpf(d_fp) / scale
            normalized = dist * mp.power(pw, mu_m)
            rows.append({"sign": sgn, "p": pw, "parity": pw % 2,
                         "distance": dist, "normalized": normalized,
                         "certified": bool(ok)})
    return {"t": t, "t_fp": t_fp, "witnesses": rows, "all_certified": all_ok}


def run_thm2(cfg: ExperimentConfig) -> RunReport:
    """Escape covers for a constructed two-sided well-approximable direction."""
    bits = cfg.precision_bits
    q = _build_polygon(cfg.polygon, bits)
    violations: List[str] = []
    notes: List[str] = []
    mu, eps = float(cfg.mu), float(cfg.eps)
    with mp.workprec(bits + 16):
        om_alpha = CirclePoint((q.alpha % mp.pi) / mp.pi, bits)
    built = construct_twosided_target(om_alpha, mu, cfg.construct_steps)
    t = built["t"]
    with mp.workprec(bits + 16):
        theta = t.value * mp.pi
    d = Direction(theta=theta, alpha=q.alpha, precision_bits=bits)
    wit_rows = []
    evens, odds = [], []
    for row in built["witnesses"]:
        side = "up" if row["parity"] == 0 else "down"
        wit_rows.append(",".join([str(row["p"]), str(row["sign"]),
                                  str(row["parity"]), side,
                                  _fmt(row["distance"], 25),
                                  _fmt(row["normalized"], 10),
                                  str(row["certified"])]))
        (evens if row["parity"] == 0 else odds).append(row)
    if not built["all_certified"]:
        violations.append("a constructed witness failed exact verification")
    if len(evens) < 3 or len(odds) < 3:
        violations.append(f"need >= 3 even and >= 3 odd witnesses, got "
                          f"{len(evens)} even / {len(odds)} odd")
    refound = {"checked": 0, "found": 0}
    for sgn, l in ((-1, 1), (+1, 0)):
        sols = approx_solutions(t, om_alpha, mu, 2, l, cfg.p_max, sgn)
        have = {abs(s.p) for s in sols}
        for row in built["witnesses"]:
            if row["sign"] == sgn and row["p"] % 2 == (l % 2) and row["p"] <= cfg.p_max:
                refound["checked"] += 1
                if row["p"] in have:
                    refound["found"] += 1
                else:
                    violations.append(f"witness p={row['p']} not re-found by "
                                      "the residue-class solution scan")
    s_main = 1.0 / (mu + 1.0) + eps
    s_low = max(1.0 / (mu + 1.0) - eps, 0.02)
    cover_rows: List[str] = []
    schedules: Dict[str, Any] = {}
    for side, parity, to_n in (("down", 1, lambda p: (p - 1) // 2),
                               ("up", 0, lambda p: p // 2)):
        ns = sorted({to_n(row["p"]) for row in built["witnesses"]
                     if row["parity"] == parity and 1 <= to_n(row["p"]) <= cfg.n_cap})
        entry: Dict[str, Any] = {"schedule": ns}
        if not ns:
            notes.append(f"{side}: no witness level within n_cap={cfg.n_cap}")
            schedules[side] = entry
            continue
        side_rows, sums = _cover_rows(side, q, d.theta, s_main, ns,
                                      cfg.reflection_cap)
        cover_rows.extend(side_rows)
        low_rows, low_sums = _cover_rows(side + "_low_s", q, d.theta, s_low, ns,
                                         cfg.reflection_cap)
        cover_rows.extend(low_rows)
        entry["hs_sums"] = [_fmt(v) for v in sums]
        entry["hs_sums_low_s"] = [_fmt(v) for v in low_sums]
        if len(sums) >= 2:
            decay = all(b < a for a, b in zip(sums, sums[1:]))
            entry["decay_strict"] = decay
            if not decay:
                violations.append(f"{side}: H^s sums do not strictly decrease "
                                  f"along schedule {ns}")
        else:
            entry["decay_strict"] = None
            notes.append(f"{side}: schedule has {len(ns)} step(s) within "
                         f"n_cap={cfg.n_cap}; decay not assessable")
        schedules[side] = entry
    data = {"mu": _fmt(mu), "eps": _fmt(eps), "s": _fmt(s_main),
            "s_low": _fmt(s_low), "theta": _fmt_full(d.theta, bits),
            "t": _fmt_full(t.value, bits),
            "omega_alpha": _fmt_full(om_alpha.value, bits),
            "witness_counts": {"even": len(evens), "odd": len(odds)},
            "refound": refound, "schedules": schedules}
    tables = {
        "witnesses": ("p,sign,parity,side,distance,normalized,certified",
                      wit_rows),
        "covers": (_COVER_HEADER, cover_rows),
    }
    return RunReport("thm2_cover", not violations, violations, notes,
                     tables, data, cfg)


# --------------------------------------------------------------------------
# mass hierarchies
# --------------------------------------------------------------------------

def run_cantor(cfg: ExperimentConfig) -> RunReport:
    """Build a nested mass hierarchy and audit its local dimension ladder."""
    bits = cfg.precision_bits
    violations: List[str] = []
    notes: List[str] = []
    om = CirclePoint.make(cfg.omega, bits)
    cf = continued_fraction(om, max_depth=2048)
    mu, m = float(cfg.mu), cfg.m
    seq = select_sequence(cf, mu, m, cfg.depth, cfg.growth_margin,
                          scan_cap=cfg.scan_cap,
                          materialize_cap=cfg.materialize_cap)
    h = build_hierarchy(om, mu, m, seq, scan_cap=cfg.scan_cap,
                        materialize_cap=cfg.materialize_cap)
    dims = local_dimension_report(h)
    floor = (float(cfg.ratio_floor) if cfg.ratio_floor is not None
             else 1.0 / mu - 0.1)
    deepest = dims[-1][1]
    if not deepest >= floor:
        violations.append(f"deepest local dimension ratio {_fmt(deepest, 10)} "
                          f"fell below the floor {floor:g}")
    for k in range(1, h.depth + 1):
        if h.level(k).mass_total() != Fraction(1):
            violations.append(f"level {k} masses do not sum to 1 exactly")
    for k in range(1, h.depth):
        if not (h.level(k).materialized and h.level(k + 1).materialized):
            notes.append(f"nesting of level {k + 1} in level {k} verified "
                         "during construction (counted level)")
            continue
        if not h.level_union(k + 1).is_subset_of(h.level_union(k)):
            violations.append(f"level {k + 1} union escapes level {k}")
    with mp.workprec(bits + 64):
        scale = mpf(1 << bits)
        for k in range(1, h.depth + 1):
            lvl = h.level(k)
            nominal = mp.power(2 * abs(lvl.n_k), -mpf(mu)) * scale
            gap = nominal - 2 * lvl.half_fp
            if not (0 <= gap <= 2):
                violations.append(f"level {k} interval length is off the "
                                  f"(2|n|)^-mu law by {_fmt(gap, 8)} ulps")
    level_rows = []
    for k in range(1, h.depth + 1):
        lvl = h.level(k)
        level_rows.append(",".join([str(k), str(lvl.n_k), str(lvl.count),
                                    str(lvl.half_fp),
                                    str(lvl.max_mass()),
                                    _fmt(dims[k - 1][1], 12)]))
    sep_rows = []
    for row in separation_report(h):
        sep_rows.append(",".join([str(row["level"]), str(row["n_k"]),
                                  _fmt(row["orbit_min_distance"], 15),
                                  _fmt(row["measured_min_distance"], 15)
                                  if row["measured_min_distance"] is not None else "",
                                  _fmt(row["claimed_bound"], 15),
                                  str(row["claimed_ok"]),
                                  _fmt(row["companion_bound"], 15),
                                  str(row["companion_ok"])]))
    data = {"omega": _fmt_full(om.value, bits), "mu": _fmt(mu), "m": m,
            "sequence": seq, "ratio_floor": _fmt(floor),
            "local_dimensions": [[k, _fmt(r, 12)] for k, r in dims],
            "hierarchy": h.to_json_obj()}
    tables = {
        "levels": ("k,n_k,count,half_width_ulps,max_mass,local_dim", level_rows),
        "separation": ("level,n_k,orbit_min,measured_min,claimed_bound,"
                       "claimed_ok,companion_bound,companion_ok", sep_rows),
    }
    return RunReport("cantor_dim", not violations, violations, notes,
                     tables, data, cfg)


# --------------------------------------------------------------------------
# ubiquity, Minkowski scans, perpendicular orbits, audits
# --------------------------------------------------------------------------

def run_ubiquity(cfg: ExperimentConfig) -> RunReport:
    """Coverage deficiency of shrinking arcs along a residue class."""
    bits = cfg.precision_bits
    om = CirclePoint.make(cfg.omega, bits)
    m, l = cfg.m, cfg.l
    K, eps = float(cfg.coverage_constant), float(cfg.eps)
    violations: List[str] = []
    notes: List[str] = []
    rows = []
    deficiencies = []
    for n in cfg.n_values:
        rho = ubiquity_rho(m, l, n, K, eps, bits=bits)
        defi = ubiquity_deficiency(om, m, l, n, K, eps)
        deficiencies.append(defi)
        rows.append(",".join([str(n), _fmt(rho, 15), _fmt(defi, 15)]))
    for a, b in zip(deficiencies, deficiencies[1:]):
        if b > a:
            violations.append("coverage deficiency increased along the N ladder")
            break
    threshold = float(cfg.threshold)
    if not deficiencies[-1] < threshold:
        violations.append(f"final deficiency {_fmt(deficiencies[-1], 10)} is "
                          f"not below {threshold:g}")
    data = {"omega": _fmt_full(om.value, bits), "m": m, "l": l,
            "coverage_constant": _fmt(K), "eps": _fmt(eps),
            "n_values": list(cfg.n_values),
            "deficiencies": [_fmt(v, 15) for v in deficiencies]}
    return RunReport("ubiquity", not violations, violations, notes,
                     {"deficiency": ("n,rho,deficiency", rows)}, data, cfg)


def run_minkowski(cfg: ExperimentConfig) -> RunReport:
    """Random (t, omega) pairs each admit ||t + p*omega|| < 1/(4p) solutions."""
    bits = cfg.precision_bits
    violations: List[str] = []
    notes: List[str] = []
    rng = np.random.default_rng(cfg.seed)
    rows = []
    counts = []
    with warnings.catch_warnings(record=True) as records:
        warnings.simplefilter("always")
        for i in range(cfg.pairs):
            tv = float(rng.random())
            ov = float(rng.random())
            t = CirclePoint.make(tv, bits)
            om = CirclePoint.make(ov, bits)
            with mp.workprec(bits + 8):
                t_neg = CirclePoint(mp.frac(-t.value), bits)
            # Integer solutions of ||t + p*omega|| < 1/(4|p|): the positive-p
            # scan applied to t covers p > 0 and applied to -t covers p < 0.
            pos = minkowski_solutions(t, om, cfg.p_max)
            neg = minkowski_solutions(t_neg, om, cfg.p_max)
            count = len(pos) + len(neg)
            counts.append(count)
            rows.append(",".join([str(i), repr(tv), repr(ov), str(count),
                                  str(len(pos)), str(len(neg))]))
            if count < cfg.min_solutions:
                violations.append(f"pair {i}: only {count} integer solutions "
                                  f"with |p| <= {cfg.p_max}")
    _collect_warnings(records, notes)
    data = {"pairs": cfg.pairs, "p_max": cfg.p_max,
            "min_solutions_required": cfg.min_solutions,
            "min_count": min(counts) if counts else 0,
            "max_count": max(counts) if counts else 0}
    return RunReport("minkowski_scan", not violations, violations, notes,
                     {"pairs": ("index,t,omega,count,positive_p,negative_p",
                                rows)},
                     data, cfg)


def _perp_row(cap: int, res: Mapping[str, Any]) -> str:
    return ",".join([str(cap), str(res["samples"]), str(res["returned"]),
                     str(res["vertex_uncertain"]), str(res["budget_exhausted"]),
                     _fmt(res["periodic_fraction"], 12),
                     _fmt(res["undecided_fraction"], 12),
                     str(res["retrace_checked"]), str(res["retrace_returned"]),
                     str(res["retrace_exact"])])


def run_perp(cfg: ExperimentConfig) -> RunReport:
    """Periodicity statistics of the perpendicular direction in a rhombus."""
    bits = cfg.precision_bits
    q = _build_polygon(cfg.polygon, bits)
    violations: List[str] = []
    notes: List[str] = []
    with mp.workprec(bits + 16):
        om_val = (2 * q.alpha % mp.pi) / mp.pi
    rational = detect_rational_angle(om_val, bits)
    res = perpendicular_periodicity(q, cfg.samples, cfg.reflection_cap)
    rows = [_perp_row(cfg.reflection_cap, res)]
    results = {"base": {k: (_fmt(v, 15) if isinstance(v, mpf) else v)
                        for k, v in res.items()}}
    if rational is not None:
        mode = "rational"
        floor = Fraction(cfg.samples - cfg.singular_allowance, cfg.samples)
        if not res["periodic_fraction"] >= mpf(floor.numerator) / floor.denominator:
            violations.append(
                f"periodic fraction {_fmt(res['periodic_fraction'], 10)} below "
                f"1 - {cfg.singular_allowance}/{cfg.samples}")
        notes.append(f"rotation number is rational ({rational}); expecting "
                     "periodicity off a singular set")
    else:
        mode = "irrational"
        thr = float(cfg.undecided_threshold)
        if not res["undecided_fraction"] <= thr:
            violations.append(f"undecided fraction "
                              f"{_fmt(res['undecided_fraction'], 10)} exceeds "
                              f"{thr:g}")
    if cfg.cap_doubling:
        res2 = perpendicular_periodicity(q, cfg.samples, 2 * cfg.reflection_cap)
        rows.append(_perp_row(2 * cfg.reflection_cap, res2))
        results["doubled_cap"] = {k: (_fmt(v, 15) if isinstance(v, mpf) else v)
                                  for k, v in res2.items()}
        if res2["undecided_fraction"] > res["undecided_fraction"]:
            violations.append("undecided fraction increased when the "
                              "reflection budget doubled")
    data = {"mode": mode,
            "rotation_number": str(rational) if rational is not None else None,
            "alpha": _fmt_full(q.alpha, bits), "results": results}
    header = ("reflection_cap,samples,returned,vertex_uncertain,"
              "budget_exhausted,periodic_fraction,undecided_fraction,"
              "retrace_checked,retrace_returned,retrace_exact")
    return RunReport("perp_orbits", not violations, violations, notes,
                     {"periodicity": (header, rows)}, data, cfg)


def run_audits(cfg: ExperimentConfig) -> RunReport:
    """Three-distance minimum-gap audit plus the average-length packing audit."""
    bits = cfg.precision_bits
    violations: List[str] = []
    notes: List[str] = []
    gap_rows = []
    claimed_violations = 0
    for expr in cfg.omegas:
        om = CirclePoint.make(expr, bits)
        cf = continued_fraction(om, max_depth=512)
        for r in range(1, cf.validated_depth):
            q_r = cf.denominator(r)
            if q_r > cfg.q_max:
                break
            q_next = cf.denominator(r + 1)
            gap = three_distance_gap(cf, r)
            with mp.workprec(bits + 16):
                claimed = mpf(1) / (q_r + 2)
                true_bound = mpf(1) / (q_next + q_r)
            claimed_ok = bool(gap >= claimed)
            true_ok = bool(gap >= true_bound)
            gap_rows.append(",".join([json.dumps(expr), str(r), str(q_r),
                                      str(q_next), _fmt(gap, 15),
                                      _fmt(claimed, 15), str(claimed_ok),
                                      _fmt(true_bound, 15), str(true_ok)]))
            if not claimed_ok:
                claimed_violations += 1
                violations.append(f"omega={expr}, r={r}: min gap "
                                  f"{_fmt(gap, 10)} < 1/(q_r+2)")
            if not true_ok:
                violations.append(f"omega={expr}, r={r}: min gap below "
                                  "1/(q_(r+1)+q_r)")
    rng = np.random.default_rng(cfg.seed)
    packing_violations = 0
    cross_checked = 0
    cross_failures = 0
    example_rows = []
    for i in range(cfg.e1_trials):
        j = int(rng.integers(1, cfg.e1_j_max + 1))
        lens = rng.integers(1, 1 << 30, size=j, dtype=np.int64)
        total = int(lens.sum())
        count = int(((lens * j) // total).sum()) + j
        ok = count <= 3 * j
        if not ok:
            packing_violations += 1
        if i < cfg.e1_check_sample:
            rep = average_length_cover([Fraction(int(a)) for a in lens],
                                       Fraction(total))
            cross_checked += 1
            if rep.count != count or rep.bound_3n_ok != ok:
                cross_failures += 1
        if i < 10:
            example_rows.append(",".join([str(i), str(j), str(count),
                                          str(3 * j), str(ok)]))
    if packing_violations:
        violations.append(f"{packing_violations} packing trials exceeded the "
                          "3n piece bound")
    if cross_failures:
        violations.append(f"{cross_failures} integer-arithmetic packing counts "
                          "disagreed with average_length_cover")
    data = {"q_max": cfg.q_max, "omegas": list(cfg.omegas),
            "gap_rows": len(gap_rows),
            "claimed_bound_violations": claimed_violations,
            "packing": {"trials": cfg.e1_trials, "j_max": cfg.e1_j_max,
                        "violations": packing_violations,
                        "cross_checked": cross_checked,
                        "cross_failures": cross_failures}}
    tables = {
        "three_distance": ("omega,r,q_r,q_next,min_gap,claimed_bound,"
                           "claimed_ok,true_bound,true_ok", gap_rows),
        "packing": ("index,j,count,bound_3j,ok", example_rows),
    }
    return RunReport("three_distance_audit", not violations, violations, notes,
                     tables, data, cfg)


EXPERIMENTS = {
    "thm1_cover": run_thm1,
    "thm2_cover": run_thm2,
    "cantor_dim": run_cantor,
    "ubiquity": run_ubiquity,
    "minkowski_scan": run_minkowski,
    "perp_orbits": run_perp,
    "three_distance_audit": run_audits,
}


def run_experiment(config: ExperimentConfig) -> RunReport:
    """Dispatch to the configured experiment's runner."""
    return EXPERIMENTS[config.experiment](config)
