"""Growth functions M(s), their sup-inverses, decay predictions and lower bounds.

A RateFunction is non-decreasing on [s0, inf). Its right-inverse is

    M^{-1}(t) = sup{ s >= s0 : M(s) <= t },

and a resolvent bound ||R_B(is)|| <= M(|s|) predicts the decay envelope
||T_B(t) A_B^{-1}|| = O(1 / M^{-1}(t)).
"""
from __future__ import annotations

import csv
import math
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np
import scipy.optimize

from .errors import DataError, DomainError, InsufficientData
from .modal_core import ModalSystem
from .operator_assembly import DampedGenerator, assemble_damping
from .resolvent_engine import PeakSeries, SlopeFit, fit_loglog

# Largest s probed by positive-increase searches on closed-form rates. Values
# are handled in log space, so no overflow; the range has to be huge because
# slowly varying factors such as log(2+s) only reveal index 0 at large s.
CLOSED_FORM_S_MAX = 1e150
CALLABLE_S_MAX = 1e6


# --------------------------------------------------------------------------
# Rate functions
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RateFunction:
    """Non-decreasing growth function.

    kinds:
      ``power``       coef * s**a
      ``power_log``   coef * s**a * log(shift + s)**b
      ``tabulated``   samples (s_i, M_i), forced monotone by a running max;
                      ``interpolation`` is ``linear`` or ``step`` (right-continuous)
                      and values beyond the last sample stay constant
      ``callable``    any non-decreasing python function (not verified)
    """

    kind: str
    params: dict = field(default_factory=dict)
    s_table: np.ndarray | None = None
    m_table: np.ndarray | None = None   # running-max envelope
    raw_table: np.ndarray | None = None
    interpolation: str = "linear"
    func: Callable | None = field(default=None, compare=False)
    s0: float = 0.0
    certificate: "PositiveIncreaseCert | None" = None

    # ---- constructors -------------------------------------------------

    @classmethod
    def power(cls, a: float, coef: float = 1.0, s0: float = 0.0) -> "RateFunction":
        if a < 0 or coef <= 0:
            raise DataError("power rate needs a >= 0 and coef > 0")
        return cls("power", {"a": float(a), "coef": float(coef)}, s0=float(s0))

    @classmethod
    def constant(cls, value: float, s0: float = 0.0) -> "RateFunction":
        return cls.power(0.0, value, s0)

    @classmethod
    def power_log(cls, a: float, b: float, coef: float = 1.0, shift: float = 2.0,
                  s0: float = 0.0) -> "RateFunction":
        if a < 0 or b < 0 or coef <= 0 or shift < 1:
            raise DataError("power_log rate needs a, b >= 0, coef > 0 and shift >= 1")
        return cls("power_log", {"a": float(a), "b": float(b), "coef": float(coef),
                                 "shift": float(shift)}, s0=float(s0))

    @classmethod
    def tabulated(cls, s, values, interpolation: str = "linear",
                  require_monotone: bool = False) -> "RateFunction":
        s = np.asarray(s, dtype=float)
        v = np.asarray(values, dtype=float)
        if s.ndim != 1 or s.shape != v.shape or s.size < 1:
            raise DataError("tabulated rate needs matching 1D arrays")
        if np.any(np.diff(s) <= 0):
            raise DataError("tabulated abscissae must be strictly increasing")
        if np.any(np.isnan(v)) or np.any(v <= 0):
            raise DataError("tabulated rate values must be strictly positive")
        if require_monotone and np.any(np.diff(v) < 0):
            raise DataError("tabulated rate values are not non-decreasing")
        if interpolation not in ("linear", "step"):
            raise DataError(f"unknown interpolation {interpolation!r}")
        env = np.maximum.accumulate(v)
        for arr in (s, v, env):
            arr.setflags(write=False)
        return cls("tabulated", {}, s_table=s, m_table=env, raw_table=v,
                   interpolation=interpolation, s0=float(s[0]))

    @classmethod
    def from_callable(cls, func: Callable, s0: float = 0.0, name: str = "callable") -> "RateFunction":
        return cls("callable", {"name": name}, func=func, s0=float(s0))

    def with_certificate(self, cert) -> "RateFunction":
        return replace(self, certificate=cert)

    # ---- evaluation ---------------------------------------------------

    @property
    def is_constant(self) -> bool:
        if self.kind == "power":
            return self.params["a"] == 0
        if self.kind == "power_log":
            return self.params["a"] == 0 and self.params["b"] == 0
        return False

    def __call__(self, s):
        s_arr = np.asarray(s, dtype=float)
        if self.kind == "power":
            out = self.params["coef"] * s_arr ** self.params["a"]
        elif self.kind == "power_log":
            p = self.params
            out = p["coef"] * s_arr ** p["a"] * np.log(p["shift"] + s_arr) ** p["b"]
        elif self.kind == "tabulated":
            out = self._table_eval(s_arr)
        else:
            out = np.vectorize(self.func, otypes=[float])(s_arr)
        return float(out) if np.ndim(out) == 0 else out

    def log_value(self, s):
        """log M(s), computed without forming M(s) for closed forms."""
        s_arr = np.asarray(s, dtype=float)
        if self.kind == "power":
            p = self.params
            if p["a"] == 0:
                return np.full_like(s_arr, math.log(p["coef"]))
            with np.errstate(divide="ignore"):
                return math.log(p["coef"]) + p["a"] * np.log(s_arr)
        if self.kind == "power_log":
            p = self.params
            with np.errstate(divide="ignore"):
                out = math.log(p["coef"]) + p["b"] * np.log(np.log(p["shift"] + s_arr))
                if p["a"]:
                    out = out + p["a"] * np.log(s_arr)
            return out
        with np.errstate(divide="ignore"):
            return np.log(self(s_arr))

    def _table_eval(self, s):
        xs, env = self.s_table, self.m_table
        if self.interpolation == "linear":
            return np.interp(s, xs, env)
        idx = np.searchsorted(xs, s, side="right") - 1
        return env[np.clip(idx, 0, xs.size - 1)]

    @property
    def s_max(self) -> float:
        if self.kind == "tabulated":
            return float(self.s_table[-1])
        return CLOSED_FORM_S_MAX if self.kind in ("power", "power_log") else CALLABLE_S_MAX

    # ---- inverse ------------------------------------------------------

    def inverse(self, t):
        """Sup-inverse M^{-1}(t); vectorized over t."""
        t_arr = np.asarray(t, dtype=float)
        out = np.vectorize(self._inverse_scalar, otypes=[float])(t_arr)
        return float(out) if np.ndim(out) == 0 else out

    def _inverse_scalar(self, t: float) -> float:
        m0 = self(self.s0)
        if t < m0:
            raise DomainError(f"t = {t!r} is below M(s0) = {m0!r}")
        if self.kind == "power":
            a, coef = self.params["a"], self.params["coef"]
            if a == 0:
                return math.inf
            return (t / coef) ** (1.0 / a)
        if self.kind == "tabulated":
            return self._table_inverse(t)
        if self.is_constant:
            return math.inf
        return self._bisect_inverse(t)

    def _table_inverse(self, t: float) -> float:
        xs, env = self.s_table, self.m_table
        j = int(np.searchsorted(env, t, side="right"))  # first index with env > t
        if j >= xs.size:
            return math.inf if self.interpolation == "step" else float(xs[-1])
        if self.interpolation == "step" or j == 0:
            return float(xs[j])
        # env[j-1] <= t < env[j]: crossing inside the increasing segment.
        frac = (t - env[j - 1]) / (env[j] - env[j - 1])
        return float(xs[j - 1] + frac * (xs[j] - xs[j - 1]))

    def _bisect_inverse(self, t: float) -> float:
        log_t = math.log(t) if t > 0 else -math.inf
        lo = max(self.s0, 0.0)
        hi = max(1.0, 2.0 * lo)
        limit = self.s_max
        while self.log_value(hi) <= log_t:
            if hi >= limit:
                return math.inf
            lo, hi = hi, min(hi * 16.0, limit)
        if self.log_value(lo) > log_t:
            return lo

        def g(x):
            return float(self.log_value(x)) - log_t

        # sup{M <= t}: bisect on the sign change, then step down to the last point with M <= t.
        root = scipy.optimize.brentq(g, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps,
                                     maxiter=500)
        def above(x):
            # Direct evaluation can round differently from the log form.
            v = float(self(x))
            return g(x) > 0 or (math.isfinite(v) and v > t)

        while above(root) and root > lo:
            root = np.nextafter(root, -math.inf)
        return float(root)

    def describe(self) -> dict:
        out = {"kind": self.kind, "s0": self.s0}
        if self.kind in ("power", "power_log"):
            out.update(self.params)
        elif self.kind == "tabulated":
            out.update({"interpolation": self.interpolation, "samples": int(self.s_table.size),
                        "s_max": float(self.s_table[-1])})
        else:
            out.update(self.params)
        return out


def invert_rate(M: RateFunction) -> Callable:
    """t -> M^{-1}(t) = sup{s : M(s) <= t}."""
    return M.inverse


def predict_decay(M: RateFunction) -> Callable:
    """t -> 1 / M^{-1}(t); warns when M carries no positive-increase certificate."""
    if M.certificate is None or not M.certificate.ok:
        warnings.warn("decay prediction from a rate without positive-increase certificate "
                      "may not be sharp", stacklevel=2)

    def envelope(t):
        inv = np.asarray(M.inverse(t), dtype=float)
        with np.errstate(divide="ignore"):
            out = 1.0 / inv
        return float(out) if out.ndim == 0 else out

    return envelope


# --------------------------------------------------------------------------
# Positive increase
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PositiveIncreaseCert:
    alpha: float
    c_alpha: float
    s0: float
    lam_max: float
    s_range: tuple
    grid_points: int
    ok: bool = True

    def to_dict(self) -> dict:
        return {"ok": self.ok, "alpha": self.alpha, "c_alpha": self.c_alpha, "s0": self.s0,
                "lam_max": self.lam_max, "s_range": list(self.s_range),
                "grid_points": self.grid_points}


@dataclass(frozen=True)
class PositiveIncreaseFailure:
    reason: str
    lam_max: float
    s_range: tuple
    ok: bool = False

    def to_dict(self) -> dict:
        return {"ok": False, "reason": self.reason, "lam_max": self.lam_max,
                "s_range": list(self.s_range)}


ALPHA_RESOLUTION = 0.01
ALPHA_MIN = 0.05
C_ALPHA_MIN = 0.01
_ALPHA_CAP = 50.0
# Two minima that agree to this relative accuracy count as equal.
_STABLE_RTOL = 1e-9


def _default_s_grid(M: RateFunction, lam_max: float) -> np.ndarray:
    if M.kind == "tabulated":
        xs = M.s_table
        top = xs[-1] / lam_max
        grid = xs[(xs >= max(M.s0, 0.0)) & (xs <= top) & (xs > 0)]
        if grid.size < 2:
            raise InsufficientData("tabulated rate too short for the requested lambda range")
        return grid
    lo = max(M.s0, 1.0)
    hi = M.s_max / lam_max
    return np.geomspace(lo, hi, 600)


def check_positive_increase(M: RateFunction, lam_max: float = 32.0, grid=None,
                            n_lambda: int = 257):
    """Largest alpha (resolution 0.01) with M(l s)/M(s) >= c_alpha l^alpha on the grid.

    For each alpha the minimum ratio is computed twice: over l in [1, lam_max]
    and over l in [1, sqrt(lam_max)]. alpha is accepted only when both minima
    coincide and are at least 0.01. Past the true index the minimum keeps
    dropping as the l range grows, so the two-range comparison stops the search
    at the index instead of at the loosest alpha the finite range tolerates.
    """
    if M.kind == "tabulated" and np.any(np.diff(M.raw_table) < 0):
        raise DataError("non-monotone tabulated input; pass the running-max envelope")
    s = np.asarray(grid, dtype=float) if grid is not None else _default_s_grid(M, lam_max)
    if np.any(s <= 0):
        raise DataError("positive-increase grid must be positive")
    lam = np.geomspace(1.0, lam_max, n_lambda)
    log_lam = np.log(lam)
    log_ms = M.log_value(s)
    log_mls = M.log_value(np.outer(lam, s))
    base = log_mls - log_ms[None, :]          # log M(l s) - log M(s)
    inner = lam <= math.sqrt(lam_max) * (1 + 1e-12)
    s_range = (float(s.min()), float(s.max()))

    def minima(alpha):
        L = base - alpha * log_lam[:, None]
        return float(np.min(L)), float(np.min(L[inner]))

    def accepted(alpha):
        full, half = minima(alpha)
        c_full = math.exp(min(full, 0.0))
        c_half = math.exp(min(half, 0.0))
        return c_full >= C_ALPHA_MIN and c_full >= c_half * (1 - _STABLE_RTOL)

    lo_k = int(round(ALPHA_MIN / ALPHA_RESOLUTION))
    if not accepted(lo_k * ALPHA_RESOLUTION):
        return PositiveIncreaseFailure(
            reason=f"no alpha >= {ALPHA_MIN} verifies on lambda in [1, {lam_max}]",
            lam_max=lam_max, s_range=s_range)
    hi_k = int(round(_ALPHA_CAP / ALPHA_RESOLUTION))
    while lo_k < hi_k:
        mid = (lo_k + hi_k + 1) // 2
        if accepted(mid * ALPHA_RESOLUTION):
            lo_k = mid
        else:
            hi_k = mid - 1
    alpha = lo_k * ALPHA_RESOLUTION
    c_alpha = min(1.0, math.exp(minima(alpha)[0]))
    if c_alpha > 1.0 - _STABLE_RTOL:
        c_alpha = 1.0  # log-ratio rounding only
    return PositiveIncreaseCert(alpha=round(alpha, 10), c_alpha=c_alpha, s0=float(s.min()),
                                lam_max=lam_max, s_range=s_range,
                                grid_points=int(s.size * lam.size))


# --------------------------------------------------------------------------
# Lower bounds from the damping projection
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PseudoinverseSeries:
    n: np.ndarray
    lambda_n: np.ndarray
    Bs_norm_sq: np.ndarray
    lower_bound: np.ndarray          # ||B_s^dagger||^2 = 1 / ||B_s||^2
    undamped_modes: tuple = ()

    def to_dict(self) -> dict:
        def enc(v):
            return None if not math.isfinite(v) else float(v)
        return {
            "n": [int(k) for k in self.n],
            "lambda_n": [float(v) for v in self.lambda_n],
            "Bs_norm_sq": [float(v) for v in self.Bs_norm_sq],
            "lower_bound": [enc(v) for v in self.lower_bound],
            "undamped_modes": [int(k) for k in self.undamped_modes],
        }

    def records(self):
        """Indices of finite bounds exceeding all earlier bounds."""
        keep, best = [], -math.inf
        for i, v in enumerate(self.lower_bound):
            if math.isfinite(v) and v > best:
                keep.append(i)
                best = v
        return np.array(keep, dtype=int)


def eigenvector_of_frequency(N: int, n: int) -> np.ndarray:
    """(e_n^(1) + i e_n^(2)) / sqrt(2), eigenvector of A for i lambda_n."""
    v = np.zeros(2 * N, dtype=complex)
    v[2 * (n - 1)] = 1.0 / math.sqrt(2.0)
    v[2 * (n - 1) + 1] = 1j / math.sqrt(2.0)
    return v


def pseudoinverse_lower_bounds(ms: ModalSystem) -> PseudoinverseSeries:
    """||B_s||^2 for B_s = P_{i lambda_n} B and the bounds M(lambda_n) >= ||B_s^dagger||^2.

    The spectral projection onto the eigenvector v_n gives
    ||B_s|| = ||v_n^H B||, which equals |coupling| / sqrt(2).
    """
    damping = assemble_damping(ms)
    B = damping.B
    N = ms.size
    bs = np.empty(N)
    for n in range(1, N + 1):
        row = eigenvector_of_frequency(N, n).conj() @ B
        bs[n - 1] = float(np.real(np.vdot(row, row)))
    with np.errstate(divide="ignore"):
        lower = np.where(bs > 0, 1.0 / np.where(bs > 0, bs, 1.0), math.inf)
    undamped = tuple(int(k) for k in ms.indices[bs == 0])
    return PseudoinverseSeries(ms.indices, ms.frequencies, bs, lower, undamped)


def fit_lower_bound_exponent(series: PseudoinverseSeries, n_values) -> SlopeFit:
    """Log-log slope of the lower bounds against lambda_n at the given mode indices."""
    idx = np.isin(series.n, np.asarray(n_values)) & np.isfinite(series.lower_bound)
    if np.count_nonzero(idx) < 3:
        raise InsufficientData("need at least 3 finite bounds")
    return fit_loglog(series.lambda_n[idx], series.lower_bound[idx], min_points=3)


def lower_bound_violations(series: PseudoinverseSeries, peaks: PeakSeries,
                           rtol: float = 0.05) -> dict:
    """Compare bounds with measured peaks; bound > (1 + rtol) * peak is a violation."""
    ratios = []
    for n, peak in zip(peaks.n, peaks.peak):
        bound = series.lower_bound[n - 1]
        ratios.append(bound / peak)
    ratios = np.array(ratios)
    return {"max_ratio": float(np.max(ratios)), "passed": bool(np.all(ratios <= 1 + rtol))}


# --------------------------------------------------------------------------
# Eigenvalue asymptotics
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class AsymptoticsRow:
    n: int
    lambda_n: float
    Bs_norm_sq: float
    mu: complex
    deviation: float
    flagged: bool


@dataclass(frozen=True)
class AsymptoticsTable:
    rows: tuple

    @property
    def n(self):
        return np.array([r.n for r in self.rows])

    @property
    def deviations(self):
        return np.array([r.deviation for r in self.rows])

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["n", "lambda_n", "Bs_norm_sq", "deviation"])
            for r in self.rows:
                writer.writerow([r.n, f"{r.lambda_n:.17g}", f"{r.Bs_norm_sq:.17g}",
                                 f"{r.deviation:.17g}"])
        return path

    def trend_slope(self) -> float:
        """Least-squares slope of deviation against n (negative means decreasing)."""
        n, d = self.n.astype(float), self.deviations
        ok = np.isfinite(d)
        return float(np.polyfit(n[ok], d[ok], 1)[0])


def eigenvalue_asymptotics_check(dg: DampedGenerator, ms: ModalSystem, n_range) -> AsymptoticsTable:
    """Nearest eigenvalue mu_n to i lambda_n against the prediction i lambda_n - ||B_s||^2."""
    n_values = np.asarray(n_range, dtype=int)
    if n_values.min() < 1 or n_values.max() > ms.size:
        raise InsufficientData("mode range exceeds the truncation")
    if np.any(dg.damping.values):
        mu = np.linalg.eigvals(dg.matrix)
    else:
        mu = np.concatenate([1j * dg.frequencies, -1j * dg.frequencies])
    series = pseudoinverse_lower_bounds(ms)
    gap = ms.spectral_gap
    rows = []
    for n in n_values:
        lam_n = ms.frequencies[n - 1]
        bs2 = series.Bs_norm_sq[n - 1]
        dist = np.abs(mu - 1j * lam_n)
        near = np.flatnonzero(dist < gap / 4)
        k = int(np.argmin(dist))
        flagged = near.size != 1
        pred = 1j * lam_n - bs2
        err = abs(mu[k] - pred)
        if bs2 == 0:
            deviation = 0.0 if err == 0 else math.inf
        else:
            deviation = err / bs2
        rows.append(AsymptoticsRow(int(n), float(lam_n), float(bs2), complex(mu[k]),
                                   float(deviation), bool(flagged)))
    return AsymptoticsTable(tuple(rows))


# --------------------------------------------------------------------------
# Optimality proxy
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class OptimalityProxy:
    value: float                 # max of M0^{-1}(t) * trace(t) over the last half
    minimum: float
    spread: float                # max / min over the last half
    trend_exponent: float        # log-log slope of the proxy over the last half
    t_range: tuple
    certifies: bool

    def to_dict(self) -> dict:
        return {"value": self.value, "minimum": self.minimum, "spread": self.spread,
                "trend_exponent": self.trend_exponent, "t_range": list(self.t_range),
                "certifies": self.certifies}


# A proxy trend exponent below this counts as decreasing.
DECREASING_TREND = -0.05


def optimality_limsup(trace, M0: RateFunction, window=None) -> OptimalityProxy:
    """Finite-horizon proxy of limsup M0^{-1}(t) * ||T_B(t) A_B^{-1}||.

    Uses the last half (by grid index) of the trace points inside ``window``.
    """
    t = np.asarray(trace.t, dtype=float)
    v = np.asarray(trace.values, dtype=float)
    mask = np.ones(t.size, dtype=bool)
    if window is not None:
        lo, hi = window
        mask = (t >= lo) & (t <= hi)
    t, v = t[mask], v[mask]
    if t.size < 4:
        raise InsufficientData("optimality proxy needs at least 4 trace points")
    half = t.size // 2
    t2, v2 = t[half:], v[half:]
    proxy = np.asarray(M0.inverse(t2), dtype=float) * v2
    value = float(np.max(proxy))
    minimum = float(np.min(proxy))
    spread = value / minimum if minimum > 0 else math.inf
    trend = fit_loglog(t2, proxy).exponent if minimum > 0 else -math.inf
    certifies = bool(value > 0 and trend >= DECREASING_TREND)
    return OptimalityProxy(value, minimum, float(spread), float(trend),
                           (float(t2[0]), float(t2[-1])), certifies)
