"""Continued fractions of the damping location and the coupling lower bounds they imply.

Locations come in three forms:

* exact rationals (``fractions.Fraction``),
* exact quadratic surds (P + sqrt(D)) / Q, expanded by the integer Gauss map,
* enclosures [lo, hi] with rational endpoints, for decimals, floats and
  transcendental expressions.

On an enclosure the Gauss map x -> 1/(x - a) is monotone on each branch, so
the image of [lo, hi] is again a rational interval. A partial quotient is
certified when both endpoints share the same floor.
"""
from __future__ import annotations

import math
import re
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from fractions import Fraction

import numpy as np
import sympy

from .errors import ConfigurationError, DomainError, PrecisionExhausted
from .modal_core import frequency
from .rate_calculus import RateFunction

# Quotients below this bound count as "bounded" in constant_type_check.
QUOTIENT_BOUND = 10
DEFAULT_DEPTH = 30
MAX_N = 10 ** 7
DEFAULT_EPS = 0.1
_MAX_DIGITS = 5000
_CHUNK = 1 << 20
_SPLIT_BITS = 26


# --------------------------------------------------------------------------
# Representations
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class QuadraticSurd:
    """(P + sqrt(D)) / Q with integers, D > 0 not a perfect square and Q | (D - P^2)."""

    P: int
    D: int
    Q: int

    def __post_init__(self):
        if self.Q == 0:
            raise ConfigurationError("surd denominator must be nonzero")
        r = math.isqrt(self.D) if self.D >= 0 else -1
        if self.D <= 0 or r * r == self.D:
            raise ConfigurationError(f"D = {self.D} must be a positive non-square")
        if (self.D - self.P ** 2) % self.Q:
            raise ConfigurationError("surd is not in normalized form: Q must divide D - P^2")

    @classmethod
    def from_abc(cls, a: int, b: int, D: int, c: int) -> "QuadraticSurd":
        """(a + b sqrt(D)) / c in normalized form."""
        if b == 0 or c == 0:
            raise ConfigurationError("need b != 0 and c != 0 for a quadratic surd")
        d = b * b * c * c * D
        if b * c > 0:
            return cls(a * c, d, c * c)
        return cls(-a * c, d, -c * c)

    def floor(self) -> int:
        r = math.isqrt(self.D)
        if self.Q > 0:
            return (self.P + r) // self.Q
        return (-self.P - r - 1) // (-self.Q)

    def gauss_step(self) -> tuple[int, "QuadraticSurd"]:
        """(a, 1/(x - a)) with a = floor(x)."""
        a = self.floor()
        p = self.P - a * self.Q
        return a, QuadraticSurd(-p, self.D, (self.D - p * p) // self.Q)

    def to_fraction(self, bits: int = 200) -> Fraction:
        """Rational approximation with error below 2^-bits / |Q|."""
        root = math.isqrt(self.D << (2 * bits))
        return Fraction((self.P << bits) + root, self.Q << bits)

    def __float__(self) -> float:
        return float(self.to_fraction())


@dataclass(frozen=True)
class Enclosure:
    """Real number known to lie in [lo, hi] (rational endpoints)."""

    lo: Fraction
    hi: Fraction
    refine: object = field(default=None, compare=False, repr=False)  # digits -> Enclosure

    def __post_init__(self):
        if self.lo > self.hi:
            raise ConfigurationError("enclosure needs lo <= hi")

    @property
    def width(self) -> Fraction:
        return self.hi - self.lo

    @property
    def mid(self) -> Fraction:
        return (self.lo + self.hi) / 2


Location = Fraction | QuadraticSurd | Enclosure

_DECIMAL = re.compile(r"^\s*[+-]?(\d+\.\d*|\.\d+|\d+)([eE][+-]?\d+)?\s*$")


def _decimal_enclosure(text: str) -> Enclosure:
    dec = Decimal(text.strip())
    exp = dec.as_tuple().exponent
    half = Fraction(1, 2) * Fraction(10) ** exp
    value = Fraction(dec)
    return Enclosure(value - half, value + half)


def _float_enclosure(x: float) -> Enclosure:
    lo, hi = np.nextafter(x, -np.inf), np.nextafter(x, np.inf)
    return Enclosure(Fraction(float(lo)), Fraction(float(hi)))


def _sympy_enclosure(expr, digits: int) -> Enclosure:
    # evalf works adaptively to deliver the requested digits; the enclosure
    # adds a margin of 10 units in the last place.
    val = sympy.Float(expr.evalf(digits + 10), digits + 10)
    mid = Fraction(*map(int, sympy.Rational(val).as_numer_denom()))
    rad = Fraction(10) ** (-(digits - 1)) * max(1, abs(mid))
    return Enclosure(mid - rad, mid + rad, refine=lambda d: _sympy_enclosure(expr, d))


def _from_sympy(expr) -> Location:
    if expr.is_rational:
        p, q = expr.as_numer_denom()
        return Fraction(int(p), int(q))
    if not expr.is_real:
        raise DomainError(f"location {expr} is not a real number")
    x = sympy.Symbol("x")
    try:
        poly = sympy.Poly(sympy.minimal_polynomial(expr, x), x)
    except (NotImplementedError, sympy.polys.polyerrors.NotAlgebraic):
        poly = None
    if poly is not None and poly.degree() == 2:
        a, b, c = (int(v) for v in poly.all_coeffs())
        disc = b * b - 4 * a * c
        value = float(expr.evalf(30))
        for sign in (1, -1):
            cand = QuadraticSurd.from_abc(-b, sign, disc, 2 * a)
            if abs(float(cand) - value) < 1e-12:
                return cand
    return _sympy_enclosure(expr, 40)


def parse_location(value) -> Location:
    """Exact or enclosed representation of a location given as number, string or sympy expression.

    Strings: decimal literals are read as enclosures of half a unit in the
    last digit; anything else goes through sympy (``sqrt5`` is read as
    ``sqrt(5)``). Floats get a one-ulp enclosure.
    """
    if isinstance(value, (Fraction, QuadraticSurd, Enclosure)):
        return value
    if isinstance(value, bool):
        raise ConfigurationError("location must be a number")
    if isinstance(value, int):
        return Fraction(value)
    if isinstance(value, float):
        if not math.isfinite(value):
            raise DomainError("location must be finite")
        return _float_enclosure(value)
    if isinstance(value, str):
        if _DECIMAL.match(value):
            try:
                return _decimal_enclosure(value)
            except InvalidOperation as exc:
                raise ConfigurationError(f"cannot parse {value!r}") from exc
        text = re.sub(r"sqrt\s*(\d+)", r"sqrt(\1)", value)
        try:
            expr = sympy.sympify(text, rational=True)
        except (sympy.SympifyError, SyntaxError, TypeError) as exc:
            raise ConfigurationError(f"cannot parse location {value!r}") from exc
        if expr.free_symbols:
            raise ConfigurationError(f"location {value!r} contains free symbols")
        return _from_sympy(expr)
    if isinstance(value, sympy.Basic):
        return _from_sympy(value)
    raise ConfigurationError(f"unsupported location type {type(value).__name__}")


def _bounds(loc: Location) -> tuple[Fraction, Fraction]:
    if isinstance(loc, Fraction):
        return loc, loc
    if isinstance(loc, QuadraticSurd):
        f = loc.to_fraction()
        eps = Fraction(1, 1 << 199)
        return f - eps, f + eps
    return loc.lo, loc.hi


def _check_unit_interval(loc: Location):
    lo, hi = _bounds(loc)
    if not (0 < lo and hi < 1):
        raise DomainError(f"location must lie in (0, 1), got [{float(lo)}, {float(hi)}]")


# --------------------------------------------------------------------------
# Continued fractions
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ContinuedFraction:
    a0: int
    quotients: tuple      # a_1, a_2, ...
    terminated: bool      # expansion ended (rational input)
    certified: bool = True

    @property
    def depth(self) -> int:
        return len(self.quotients)

    @property
    def max_quotient(self) -> int:
        return max(self.quotients) if self.quotients else 0

    def to_dict(self) -> dict:
        return {"a0": self.a0, "quotients": list(self.quotients), "depth": self.depth,
                "terminated": self.terminated, "certified": self.certified}


def _expand_rational(x: Fraction, depth: int):
    a0 = math.floor(x)
    rest, out = x - a0, []
    while rest and len(out) < depth:
        rest = 1 / rest
        a = math.floor(rest)
        out.append(a)
        rest -= a
    return a0, out, rest == 0


def _expand_surd(x: QuadraticSurd, depth: int):
    a0, x = x.gauss_step()
    out = []
    for _ in range(depth):
        a, x = x.gauss_step()
        out.append(a)
    return a0, out


def _expand_enclosure(lo: Fraction, hi: Fraction, depth: int):
    """Certified prefix of the expansion for every real in [lo, hi]."""
    out = []
    a0 = math.floor(lo)
    if math.floor(hi) != a0:
        return None, out, False
    lo, hi = lo - a0, hi - a0
    while len(out) < depth:
        if lo == hi == 0:
            return a0, out, True
        if lo <= 0:
            # Interval touches the branch point: the next quotient is unbounded.
            return a0, out, False
        lo, hi = 1 / hi, 1 / lo
        a = math.floor(lo)
        if math.floor(hi) != a:
            return a0, out, False
        out.append(a)
        lo, hi = lo - a, hi - a
    return a0, out, False


def continued_fraction(xi0, depth: int = DEFAULT_DEPTH) -> ContinuedFraction:
    """Partial quotients of xi0 up to ``depth``, each one certified.

    Raises PrecisionExhausted (carrying the certified prefix) when the
    representation cannot certify ``depth`` quotients.
    """
    if depth < 1:
        raise ConfigurationError("depth must be at least 1")
    loc = parse_location(xi0)
    _check_unit_interval(loc)
    if isinstance(loc, Fraction):
        a0, qs, done = _expand_rational(loc, depth)
        return ContinuedFraction(a0, tuple(qs), done)
    if isinstance(loc, QuadraticSurd):
        a0, qs = _expand_surd(loc, depth)
        return ContinuedFraction(a0, tuple(qs), False)
    enc = loc
    while True:
        a0, qs, done = _expand_enclosure(enc.lo, enc.hi, depth)
        if done or len(qs) >= depth:
            return ContinuedFraction(a0, tuple(qs), done)
        digits = _enclosure_digits(enc)
        if enc.refine is None or digits * 2 > _MAX_DIGITS:
            prefix = ContinuedFraction(a0 if a0 is not None else 0, tuple(qs), False, True)
            raise _exhausted(prefix, depth)
        enc = enc.refine(digits * 2)


def _enclosure_digits(enc: Enclosure) -> int:
    if enc.width == 0:
        return _MAX_DIGITS
    w = enc.width
    return max(1, int(math.log10(w.denominator) - math.log10(w.numerator)))


def _exhausted(cf: ContinuedFraction, depth: int, message=None) -> PrecisionExhausted:
    exc = PrecisionExhausted((cf.a0, *cf.quotients), depth, message=message)
    exc.continued_fraction = cf
    return exc


def convergents(cf: ContinuedFraction) -> list[tuple[int, int]]:
    """(p_k, q_k) for k = 0..depth by p_k = a_k p_{k-1} + p_{k-2}."""
    if cf.depth < 1:
        raise ConfigurationError("convergents need depth >= 1")
    p_prev, q_prev = 1, 0
    p, q = cf.a0, 1
    out = [(p, q)]
    for a in cf.quotients:
        p, p_prev = a * p + p_prev, p
        q, q_prev = a * q + q_prev, q
        out.append((p, q))
    return out


# --------------------------------------------------------------------------
# Brute-force approximation constant
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ApproxStats:
    n_max: int
    c_est: float          # min of n * dist(n xi0, Z) over the tail window
    argmin: int
    window: tuple         # (n_lo, n_max)
    c_global: float       # same minimum over 1 <= n <= n_max
    argmin_global: int
    max_quotient: int
    certified_depth: int
    bounded_quotients: bool
    rational: bool

    @property
    def constant_type(self) -> bool:
        return bool(not self.rational and self.bounded_quotients and self.c_est > 0)

    def to_dict(self) -> dict:
        return {"n_max": self.n_max, "c_est": self.c_est, "argmin": self.argmin,
                "window": list(self.window), "c_global": self.c_global,
                "argmin_global": self.argmin_global, "max_quotient": self.max_quotient,
                "certified_depth": self.certified_depth,
                "bounded_quotients": self.bounded_quotients, "rational": self.rational,
                "constant_type": self.constant_type}


def _split(x: Fraction) -> tuple[int, float]:
    """x = H / 2^26 + r with integer H and float r, |r| <= 2^-27."""
    H = round(x * (1 << _SPLIT_BITS))
    return int(H), float(x - Fraction(H, 1 << _SPLIT_BITS))


def scaled_distances(x: Fraction, n: np.ndarray) -> np.ndarray:
    """n * dist(n x, Z) for integer n <= 10^7.

    (n H) mod 2^26 is exact in int64, so the only rounding is in the final
    sum of two small numbers: absolute error ~1e-16 in dist(n x, Z).
    """
    H, r = _split(x)
    n = np.asarray(n, dtype=np.int64)
    m = (n * H) % (1 << _SPLIT_BITS)
    frac = m / float(1 << _SPLIT_BITS) + n * r
    return n * np.abs(frac - np.round(frac))


def _window_start(n_max: int) -> int:
    return max(1, math.isqrt(n_max - 1) + 1) if n_max > 1 else 1


def _chunked_min(x: Fraction, lo: int, hi: int) -> tuple[float, int]:
    best, arg = math.inf, -1
    for start in range(lo, hi + 1, _CHUNK):
        n = np.arange(start, min(hi, start + _CHUNK - 1) + 1, dtype=np.int64)
        d = scaled_distances(x, n)
        j = int(np.argmin(d))
        if d[j] < best:
            best, arg = float(d[j]), int(n[j])
    return best, arg


def constant_type_check(xi0, n_max: int, depth: int = DEFAULT_DEPTH) -> ApproxStats:
    """Brute-force approximation constant and the certified quotient bound.

    c_est is the minimum of n * dist(n xi0, Z) over the tail window
    [ceil(sqrt(n_max)), n_max]; it estimates liminf n * dist(n xi0, Z), which is
    positive exactly for constant-type xi0. c_global is the minimum over all
    1 <= n <= n_max.
    """
    if not 1 <= n_max <= MAX_N:
        raise ConfigurationError(f"n_max must lie in [1, {MAX_N}]")
    loc = parse_location(xi0)
    _check_unit_interval(loc)
    try:
        cf = continued_fraction(loc, depth)
    except PrecisionExhausted as exc:
        cf = exc.continued_fraction
    lo = _window_start(n_max)
    rational = isinstance(loc, Fraction)
    if rational and loc.denominator <= n_max:
        # The minimum 0 is first attained at n = q.
        q = loc.denominator
        return ApproxStats(n_max, 0.0, q, (lo, n_max), 0.0, q, cf.max_quotient,
                           cf.depth, cf.max_quotient < QUOTIENT_BOUND, True)
    if isinstance(loc, QuadraticSurd):
        x = loc.to_fraction()
    elif isinstance(loc, Fraction):
        x = loc
    else:
        x = loc.mid
    c_tail, arg_tail = _chunked_min(x, lo, n_max)
    if lo > 1:
        c_head, arg_head = _chunked_min(x, 1, lo - 1)
    else:
        c_head, arg_head = math.inf, -1
    c_glob, arg_glob = (c_head, arg_head) if c_head < c_tail else (c_tail, arg_tail)
    if isinstance(loc, Enclosure) and loc.width > 0:
        # n * dist(n x, Z) moves by at most n^2 * width across the enclosure.
        spread = float(loc.width) / 2 * n_max ** 2
        if c_tail <= 0 or spread > 1e-3 * c_tail:
            raise _exhausted(cf, depth,
                             message=f"location enclosure of width {float(loc.width):.3g} "
                                     f"is too wide for n_max = {n_max}")
    return ApproxStats(n_max, c_tail, arg_tail, (lo, n_max), c_glob, arg_glob, cf.max_quotient,
                       cf.depth, cf.max_quotient < QUOTIENT_BOUND, rational)


# --------------------------------------------------------------------------
# Coupling lower bounds
# --------------------------------------------------------------------------

def approximation_constant(source) -> float:
    """c with dist(n xi0, Z) >= c / n: c_est from stats, 1/(max quotient + 2) from a fraction."""
    if isinstance(source, ApproxStats):
        return source.c_est
    if isinstance(source, ContinuedFraction):
        if source.terminated:
            return 0.0
        return 1.0 / (source.max_quotient + 2)
    raise ConfigurationError("expected ApproxStats or ContinuedFraction")


def sine_coupling_lower_bound(source, n: int) -> float:
    """Lower bound 2 sqrt(2) c / n for sqrt(2) |sin(n pi xi0)| (uses 2r/pi <= sin r on [0, pi/2])."""
    if n < 1:
        raise ConfigurationError("n must be a positive integer")
    c = approximation_constant(source)
    if not c > 0:
        raise DomainError("no coupling lower bound: the location is rational (c = 0)")
    return 2.0 * math.sqrt(2.0) * c / n


def log_coupling_lower_bound(n: int, eps: float = DEFAULT_EPS) -> float:
    """2 sqrt(2) / (n log(n)^(1+eps)), the bound valid for almost every location (reported only)."""
    if n < 2:
        raise ConfigurationError("log bound needs n >= 2")
    if eps <= 0:
        raise ConfigurationError("eps must be positive")
    return 2.0 * math.sqrt(2.0) / (n * math.log(n) ** (1.0 + eps))


def implied_rate(source, system_kind: str = "wave1d") -> RateFunction:
    """M(s) = n(s)^2 / (8 c^2 delta0^2) from gamma0(s) >= 2 sqrt(2) c / n(s) and delta0 = gap/4.

    n(s) is the mode index whose frequency is s: s/pi (wave) or sqrt(s)/pi (beam).
    """
    c = approximation_constant(source)
    if not c > 0:
        raise DomainError("no implied rate: the location is rational (c = 0)")
    gap = float(frequency(system_kind, 2) - frequency(system_kind, 1))
    delta0 = gap / 4.0
    coef = 1.0 / (8.0 * c * c * delta0 * delta0 * math.pi ** 2)
    if system_kind == "wave1d":
        return RateFunction.power(2.0, coef=coef)
    return RateFunction.power(1.0, coef=coef)
