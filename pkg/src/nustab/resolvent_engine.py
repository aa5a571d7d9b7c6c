"""Resolvent norms ||(is - A + BB*)^{-1}|| along the imaginary axis.

Two independent paths:

* dense: 1 / sigma_min(is I - A + BB*) from a full SVD;
* rank_one: the Sherman-Morrison form of the damped resolvent,

      R_B = R - R beta (1 + beta^T R beta)^{-1} beta^T R,   R = (is - A)^{-1},

  applied matrix-free through closed-form 2x2 block inverses and rearranged
  so it stays exact at s = lambda_n (see RankOneResolvent). The norm comes
  from block power iteration on R_B R_B*.
"""
from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.linalg
import scipy.sparse.linalg

from .errors import (
    ConfigurationError,
    InsufficientData,
    KatoDenominatorSingular,
    NumericalFailure,
    SpectrumHit,
    UndampedPole,
    ValidityWindowError,
)
from .modal_core import ModalSystem, SystemSpec, build_modal_system
from .operator_assembly import DampedGenerator, TruncatedGenerator, assemble

SPECTRUM_HIT_RTOL = 1e-14
KATO_DENOMINATOR_TOL = 1e-12
POWER_TOL = 1e-10
POWER_MAX_ITER = 5000
# Subspace width of the power iteration: clusters of up to this many top
# singular values (e.g. s midway between two frequencies) still converge fast.
POWER_BLOCK = 4
_POWER_SEED = 0x1234


# --------------------------------------------------------------------------
# Dense path
# --------------------------------------------------------------------------

def _shifted(dg_matrix: np.ndarray, s: float) -> np.ndarray:
    H = -np.asarray(dg_matrix, dtype=complex)
    H[np.diag_indices_from(H)] += 1j * s
    return H


def resolvent_norm_dense(dg: DampedGenerator, s: float) -> float:
    """1/sigma_min(is I - A + BB*) via full SVD."""
    sv = scipy.linalg.svdvals(_shifted(dg.matrix, s))
    smax, smin = sv[0], sv[-1]
    if smin < SPECTRUM_HIT_RTOL * smax:
        raise SpectrumHit(s, smin)
    return float(1.0 / smin)


def damping_resolvent_bounds_dense(dg: DampedGenerator, s: float) -> tuple[float, float, float]:
    """(||R_B||, ||B* R_B||, ||B* R_B B||) at is from a dense solve."""
    H = _shifted(dg.matrix, s)
    sv = scipy.linalg.svdvals(H)
    if sv[-1] < SPECTRUM_HIT_RTOL * sv[0]:
        raise SpectrumHit(s, sv[-1])
    B = dg.damping.B
    # B* R_B = (R_B^T B)^T and R_B^T = (H^T)^{-1}.
    BR = scipy.linalg.solve(H.T, B.astype(complex)).T
    BRB = BR @ B
    return float(1.0 / sv[-1]), float(np.linalg.norm(BR, 2)), float(np.linalg.norm(BRB, 2))


# --------------------------------------------------------------------------
# Rank-one path
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class RankOneResolvent:
    """Matrix-free R_B(is) for rank-one damping beta supported on velocity slots.

    With k the mode nearest to |s| and eps = lambda_k - |s|, the block
    resolvent splits as R = S/eps + Q where S = x y^T is rank one and Q is
    regular. Substituting into the Sherman-Morrison formula and clearing eps
    gives

        R_B = Q + [(1+q) S - a c'^T - c a'^T - eps c c'^T] / (pi + eps (1+q))

    with a = S beta, a' = S^T beta, c = Q beta, c' = Q^T beta, pi = beta^T S beta,
    q = beta^T Q beta. The form stays exact at and near the pole as long as
    mode k is damped. Negative s uses R_B(-is) = conj(R_B(is)).
    """

    lam: np.ndarray
    b: np.ndarray
    s: float
    k: int                                   # resonant mode (0-based)
    eps: float
    q_diag: np.ndarray = field(repr=False)   # Q blocks as (d11, d12, d21, d22), shape (4, N)
    x: np.ndarray = field(repr=False)
    y: np.ndarray = field(repr=False)
    a: np.ndarray = field(repr=False)
    a_t: np.ndarray = field(repr=False)
    c: np.ndarray = field(repr=False)
    c_t: np.ndarray = field(repr=False)
    one_plus_q: complex = 1.0
    pi_term: complex = 0j
    denom: complex = 1.0
    conjugate: bool = False

    @classmethod
    def build(cls, lam, b, s: float) -> "RankOneResolvent":
        lam = np.asarray(lam, dtype=float)
        b = np.asarray(b, dtype=float)
        s = float(s)
        conjugate = s < 0
        t = abs(s)
        k = int(np.argmin(np.abs(lam - t)))
        lk = lam[k]
        eps = lk - t
        den = (lam - t) * (lam + t)
        den[k] = 1.0
        d11 = 1j * t / den
        d12 = lam / den
        d21 = -lam / den
        d22 = 1j * t / den
        reg = -1j / (lk + t)
        d11[k], d12[k], d21[k], d22[k] = reg, 0.0, 0.0, reg
        n2 = 2 * lam.size
        x = np.zeros(n2, dtype=complex)
        y = np.zeros(n2, dtype=complex)
        scale = lk / (lk + t)
        x[2 * k], x[2 * k + 1] = scale, 1j * scale
        y[2 * k], y[2 * k + 1] = 1j, 1.0
        beta_x = 1j * scale * b[k]
        a = b[k] * x
        a_t = beta_x * y
        pi_term = beta_x * b[k]
        c = np.empty(n2, dtype=complex)
        c_t = np.empty(n2, dtype=complex)
        c[0::2], c[1::2] = d12 * b, d22 * b
        c_t[0::2], c_t[1::2] = d21 * b, d22 * b
        q = complex(np.dot(b, d22 * b))
        denom = pi_term + eps * (1.0 + q)
        if denom == 0:
            raise UndampedPole(s, k + 1)
        # 1 + beta^T R beta = denom / eps.
        if eps != 0 and abs(denom) < KATO_DENOMINATOR_TOL * abs(eps):
            raise KatoDenominatorSingular(s, denom / eps)
        return cls(lam=lam, b=b, s=s, k=k, eps=eps,
                   q_diag=np.array([d11, d12, d21, d22]), x=x, y=y, a=a, a_t=a_t,
                   c=c, c_t=c_t, one_plus_q=1.0 + q, pi_term=pi_term, denom=denom,
                   conjugate=conjugate)

    def _Q(self, V, adjoint=False):
        d11, d12, d21, d22 = (m[:, None] for m in self.q_diag)
        if adjoint:
            d11, d12, d21, d22 = np.conj(d11), np.conj(d21), np.conj(d12), np.conj(d22)
        v1, v2 = V[0::2], V[1::2]
        out = np.empty(V.shape, dtype=complex)
        out[0::2] = d11 * v1 + d12 * v2
        out[1::2] = d21 * v1 + d22 * v2
        return out

    def _apply(self, V):
        corr = (self.one_plus_q * np.outer(self.x, self.y @ V)
                - np.outer(self.a, self.c_t @ V)
                - np.outer(self.c, self.a_t @ V)
                - self.eps * np.outer(self.c, self.c_t @ V))
        return self._Q(V) + corr / self.denom

    def _apply_adjoint(self, V):
        cj = np.conj
        corr = (cj(self.one_plus_q) * np.outer(cj(self.y), cj(self.x) @ V)
                - np.outer(cj(self.c_t), cj(self.a) @ V)
                - np.outer(cj(self.a_t), cj(self.c) @ V)
                - self.eps * np.outer(cj(self.c_t), cj(self.c) @ V))
        return self._Q(V, adjoint=True) + corr / np.conj(self.denom)

    def _dispatch(self, func, V):
        V = np.asarray(V)
        one_d = V.ndim == 1
        V2 = V[:, None] if one_d else V
        if self.conjugate:
            out = np.conj(func(np.conj(V2)))
        else:
            out = func(V2)
        return out[:, 0] if one_d else out

    def apply(self, V):
        """R_B V for V of shape (2N,) or (2N, p)."""
        return self._dispatch(self._apply, V)

    def apply_adjoint(self, V):
        """R_B* V."""
        return self._dispatch(self._apply_adjoint, V)

    def damping_bounds(self) -> tuple[float, float]:
        """(||B* R_B||, ||B* R_B B||) in closed form.

        B* R_B = (a' + eps c')^T / D and B* R_B B = (pi + eps q) / D.
        """
        br = float(np.linalg.norm(self.a_t + self.eps * self.c_t) / abs(self.denom))
        q = self.one_plus_q - 1.0
        brb = float(abs((self.pi_term + self.eps * q) / self.denom))
        return br, brb


def _top_singular_value(op: RankOneResolvent, tol=POWER_TOL, max_iter=POWER_MAX_ITER) -> float:
    """sigma_max(R_B) by block power iteration on R_B R_B* with a Lanczos fallback."""
    n = 2 * op.lam.size
    p = min(POWER_BLOCK, n)
    rng = np.random.Generator(np.random.Philox(key=_POWER_SEED))
    V = rng.standard_normal((n, p)) + 1j * rng.standard_normal((n, p))
    V, _ = np.linalg.qr(V)
    for _ in range(max_iter):
        U = op.apply_adjoint(V)
        Y = op.apply(U)
        # Rayleigh-Ritz on span(V): V^H K V = U^H U.
        G = U.conj().T @ U
        theta, S = np.linalg.eigh(G)
        top = theta[-1]
        if top <= 0:
            return 0.0
        y = Y @ S[:, -1]
        v = V @ S[:, -1]
        resid = np.linalg.norm(y - top * v)
        if resid <= tol * top:
            return float(math.sqrt(top))
        V, _ = np.linalg.qr(Y)
    return _lanczos_top(op, tol)


def _lanczos_top(op: RankOneResolvent, tol) -> float:
    n = 2 * op.lam.size

    def matvec(x):
        return op.apply(op.apply_adjoint(np.asarray(x).ravel()))

    K = scipy.sparse.linalg.LinearOperator((n, n), matvec=matvec, dtype=complex)
    if n <= 8:
        dense = np.column_stack([matvec(e) for e in np.eye(n, dtype=complex)])
        return float(math.sqrt(max(np.linalg.eigvalsh(dense)[-1], 0.0)))
    v0 = np.ones(n, dtype=complex)
    try:
        vals = scipy.sparse.linalg.eigsh(K, k=1, which="LA", tol=tol * 1e-2, v0=v0,
                                         maxiter=20 * n, return_eigenvectors=False)
    except scipy.sparse.linalg.ArpackNoConvergence as exc:
        raise NumericalFailure(f"power iteration and Lanczos failed to converge at s={op.s!r}") from exc
    return float(math.sqrt(max(vals[-1].real, 0.0)))


def _rank_one_inputs(gen, beta):
    lam = gen.frequencies if isinstance(gen, TruncatedGenerator) else np.asarray(gen, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (2 * lam.size,):
        raise ConfigurationError(f"beta must have length {2 * lam.size}, got shape {beta.shape}")
    if np.any(beta[0::2] != 0):
        raise ConfigurationError("beta must vanish on position slots")
    return lam, beta[1::2]


def resolvent_norm_rankone(gen: TruncatedGenerator, beta, s: float) -> float:
    """||R_B(is)|| for A - beta beta^T from the rank-one correction of the block resolvent."""
    lam, b = _rank_one_inputs(gen, beta)
    return _top_singular_value(RankOneResolvent.build(lam, b, s))


# --------------------------------------------------------------------------
# Scans
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class ResolventScan:
    s: np.ndarray
    norms: np.ndarray
    method: str
    truncation: int
    br_norms: np.ndarray | None = None   # ||B* R_B(is)||
    brb_norms: np.ndarray | None = None  # ||B* R_B(is) B||

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["s", "norm", "method"])
            for s, v in zip(self.s, self.norms):
                writer.writerow([f"{s:.17g}", f"{v:.17g}", self.method])
        return path

    def damping_bound_violations(self, sqrt_rtol=1e-6, unit_tol=1e-10) -> dict:
        """Worst ratios of the two damping-resolvent bounds; both must be <= 1 + tol."""
        if self.br_norms is None or self.brb_norms is None:
            raise InsufficientData("scan was run without damping bounds")
        br_ratio = float(np.max(self.br_norms / np.sqrt(self.norms)))
        brb = float(np.max(self.brb_norms))
        return {
            "max_br_over_sqrt_norm": br_ratio,
            "max_brb": brb,
            "passed": bool(br_ratio <= 1 + sqrt_rtol and brb <= 1 + unit_tol),
        }


def default_grid(ms: ModalSystem, refinements=()) -> np.ndarray:
    """Frequencies, midpoints between them, and any user refinements, sorted."""
    lam = ms.frequencies
    mids = 0.5 * (lam[:-1] + lam[1:])
    return np.unique(np.concatenate([lam, mids, np.asarray(refinements, dtype=float)]))


def _point_dense(dg, s, with_bounds):
    if with_bounds:
        return damping_resolvent_bounds_dense(dg, s)
    return resolvent_norm_dense(dg, s), math.nan, math.nan


def _point_rank_one(dg, s, with_bounds):
    op = RankOneResolvent.build(dg.frequencies, dg.damping.values, s)
    norm = _top_singular_value(op)
    if with_bounds:
        br, brb = op.damping_bounds()
        return norm, br, brb
    return norm, math.nan, math.nan


def _with_s(func, dg, with_bounds):
    def run(s):
        try:
            return func(dg, s, with_bounds)
        except NumericalFailure as exc:
            if getattr(exc, "s", None) is None:
                exc.s = s
            raise
    return run


def scan(dg: DampedGenerator, s_grid, method: str = "dense", with_bounds: bool = False,
         workers: int = 1) -> ResolventScan:
    """Resolvent norms on a grid; the grid is sorted, so input order is irrelevant."""
    s_sorted = np.sort(np.asarray(s_grid, dtype=float))
    if method == "dense":
        func = _point_dense
    elif method == "rank_one":
        if dg.damping.kind != "rank_one":
            raise ConfigurationError("rank_one method needs rank-one damping")
        func = _point_rank_one
    else:
        raise ConfigurationError(f"unknown scan method {method!r}")
    run = _with_s(func, dg, with_bounds)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run, s_sorted))
    else:
        rows = [run(s) for s in s_sorted]
    arr = np.array(rows, dtype=float).reshape(-1, 3)
    return ResolventScan(
        s=s_sorted,
        norms=arr[:, 0],
        method=method,
        truncation=dg.dimension // 2,
        br_norms=arr[:, 1] if with_bounds else None,
        brb_norms=arr[:, 2] if with_bounds else None,
    )


# --------------------------------------------------------------------------
# Peaks and exponent fits
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class PeakSeries:
    n: np.ndarray
    s: np.ndarray
    peak: np.ndarray
    method: str = "rank_one"

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["n", "s", "peak_norm"])
            for n, s, v in zip(self.n, self.s, self.peak):
                writer.writerow([int(n), f"{s:.17g}", f"{v:.17g}"])
        return path

    def records(self) -> "PeakSeries":
        """Subseries of peaks exceeding every earlier peak (upper envelope points)."""
        keep = []
        best = -math.inf
        for i, v in enumerate(self.peak):
            if v > best:
                keep.append(i)
                best = v
        idx = np.array(keep, dtype=int)
        return PeakSeries(self.n[idx], self.s[idx], self.peak[idx], self.method)

    def select(self, n_values) -> "PeakSeries":
        mask = np.isin(self.n, np.asarray(n_values))
        return PeakSeries(self.n[mask], self.s[mask], self.peak[mask], self.method)


@dataclass(frozen=True)
class SlopeFit:
    exponent: float
    log_intercept: float
    max_residual: float
    points: int = 0

    def to_dict(self) -> dict:
        return {
            "exponent": self.exponent,
            "log_intercept": self.log_intercept,
            "max_residual": self.max_residual,
            "points": self.points,
        }


def fit_loglog(x, y, min_points: int = 2) -> SlopeFit:
    """Least-squares line through (log x, log y)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < min_points:
        raise InsufficientData(f"need at least {min_points} points, got {x.size}")
    if np.any(x <= 0) or np.any(y <= 0):
        raise InsufficientData("log-log fit needs positive data")
    lx, ly = np.log(x), np.log(y)
    design = np.column_stack([lx, np.ones_like(lx)])
    (slope, icpt), *_ = np.linalg.lstsq(design, ly, rcond=None)
    resid = ly - (slope * lx + icpt)
    return SlopeFit(float(slope), float(icpt), float(np.max(np.abs(resid))), int(x.size))


def _golden_max(f, a, b, fa_hint=None):
    """Maximize a unimodal f on [a, b] down to a few ulps of bracket width."""
    g = (math.sqrt(5.0) - 1.0) / 2.0
    x1 = b - g * (b - a)
    x2 = a + g * (b - a)
    f1, f2 = f(x1), f(x2)
    for _ in range(200):
        if b - a <= 8 * np.spacing(max(abs(a), abs(b))):
            break
        if f1 >= f2:
            b, x2, f2 = x2, x1, f1
            x1 = b - g * (b - a)
            f1 = f(x1)
        else:
            a, x1, f1 = x1, x2, f2
            x2 = a + g * (b - a)
            f2 = f(x2)
    return (x1, f1) if f1 >= f2 else (x2, f2)


def _check_window(N: int, n_values):
    n_values = np.asarray(n_values, dtype=int)
    if n_values.size == 0:
        raise InsufficientData("empty mode range")
    if n_values.min() < 1 or n_values.max() > N // 2:
        raise ValidityWindowError(
            f"mode range [{n_values.min()}, {n_values.max()}] leaves the validity window "
            f"1 <= n <= N/2 = {N // 2}"
        )
    return n_values


def peak_series(dg: DampedGenerator, n_range, method: str = "rank_one",
                refine: bool = True) -> PeakSeries:
    """Local maxima of the resolvent norm near each frequency lambda_n.

    The norm is evaluated at s = lambda_n and, with ``refine``, maximized by
    golden-section search on [lambda_n - gap/4, lambda_n + gap/4].
    """
    N = dg.dimension // 2
    n_values = _check_window(N, n_range)
    lam = dg.frequencies
    gap = float(np.min(np.diff(lam)))
    if method == "dense":
        def f(s):
            return resolvent_norm_dense(dg, s)
    elif method == "rank_one":
        if dg.damping.kind != "rank_one":
            raise ConfigurationError("rank_one method needs rank-one damping")
        b = dg.damping.values

        def f(s):
            return _top_singular_value(RankOneResolvent.build(lam, b, s))
    else:
        raise ConfigurationError(f"unknown peak method {method!r}")

    s_out, p_out = [], []
    for n in n_values:
        ln = lam[n - 1]
        if dg.damping.kind == "rank_one" and dg.damping.values[n - 1] == 0.0:
            # Decoupled mode: i lambda_n stays an eigenvalue, the peak is infinite.
            raise SpectrumHit(ln, 0.0, f"mode {n} is undamped; resolvent diverges at s = {float(ln)!r}")
        best_s, best = ln, f(ln)
        if refine:
            s1, v1 = _golden_max(f, ln - gap / 4, ln + gap / 4)
            if v1 > best:
                best_s, best = s1, v1
        s_out.append(best_s)
        p_out.append(best)
    return PeakSeries(n_values.copy(), np.array(s_out), np.array(p_out), method)


def peak_series_from_scan(scan_result: ResolventScan, ms: ModalSystem, n_range) -> PeakSeries:
    """Per-frequency maxima of an existing scan over the windows |s - lambda_n| <= gap/4."""
    n_values = _check_window(ms.size, n_range)
    lam = ms.frequencies
    gap = ms.spectral_gap
    s_out, p_out = [], []
    for n in n_values:
        mask = np.abs(scan_result.s - lam[n - 1]) <= gap / 4
        if not np.any(mask):
            raise InsufficientData(f"scan has no points near lambda_{n}")
        idx = np.flatnonzero(mask)
        k = idx[np.argmax(scan_result.norms[idx])]
        s_out.append(scan_result.s[k])
        p_out.append(scan_result.norms[k])
    return PeakSeries(n_values.copy(), np.array(s_out), np.array(p_out), scan_result.method)


def fit_growth_exponent(ps: PeakSeries, window=None) -> SlopeFit:
    """Slope of log(peak) against log(s) over mode indices in ``window`` = (n_lo, n_hi)."""
    mask = np.ones(ps.n.size, dtype=bool)
    if window is not None:
        lo, hi = window
        mask = (ps.n >= lo) & (ps.n <= hi)
    if np.count_nonzero(mask) < 5:
        raise InsufficientData(f"need at least 5 peaks in window, got {np.count_nonzero(mask)}")
    return fit_loglog(ps.s[mask], ps.peak[mask], min_points=5)


@dataclass(frozen=True)
class ConvergenceCheck:
    n: np.ndarray
    coarse: np.ndarray
    fine: np.ndarray
    max_relative_change: float
    contaminated: bool


def peak_convergence(spec: SystemSpec, n_range, method: str = "rank_one",
                     rtol: float = 1e-3) -> ConvergenceCheck:
    """Compare peaks at truncation N and 2N; a change above ``rtol`` flags contamination."""
    from dataclasses import replace

    coarse = peak_series(assemble(build_modal_system(spec)), n_range, method)
    doubled = replace(spec, truncation=2 * spec.truncation)
    fine = peak_series(assemble(build_modal_system(doubled)), n_range, method)
    rel = np.abs(fine.peak - coarse.peak) / fine.peak
    worst = float(np.max(rel))
    return ConvergenceCheck(coarse.n, coarse.peak, fine.peak, worst, bool(worst >= rtol))
