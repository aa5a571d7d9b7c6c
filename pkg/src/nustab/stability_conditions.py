"""Observability-type conditions checked on finite samples of the truncation.

* non-uniform Hautus test  ||x||^2 <= M_o(s) ||(is - A)x||^2 + m_o(s) ||B* x||^2
* wavepacket condition with half-width delta0 and lower bound gamma0
* conversion of Schroedinger-type observability data into wavepacket data
* non-uniform observability  c_tau ||(-A)^{-beta} x||^2 <= int_0^tau ||B* T(t) x||^2 dt

All vectors are modal coordinates (see operator_assembly), so X-norms are
Euclidean norms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable

import numpy as np

from .errors import InsufficientData, PreconditionViolation
from .modal_core import ModalSystem, build_modal_system
from .operator_assembly import DampedGenerator, DampingMatrix, TruncatedGenerator, assemble_damping
from .rate_calculus import RateFunction
from .resolvent_engine import PeakSeries, ResolventScan
from .semigroup_sim import SpectralFactorization, damped_output_energy, eig_decompose

HAUTUS_RTOL = 1e-12


def _evaluate(f, s):
    return np.asarray(f(np.abs(np.asarray(s, dtype=float))), dtype=float)


def random_unit_vectors(dim: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """count complex unit vectors as columns."""
    X = rng.standard_normal((dim, count)) + 1j * rng.standard_normal((dim, count))
    return X / np.linalg.norm(X, axis=0)


def sample_vectors(dim: int, n_random: int = 100, seed: int = 0) -> np.ndarray:
    """Modal basis vectors followed by ``n_random`` random unit vectors (Philox stream)."""
    rng = np.random.Generator(np.random.Philox(key=seed))
    basis = np.eye(dim, dtype=complex)
    if n_random <= 0:
        return basis
    return np.hstack([basis, random_unit_vectors(dim, n_random, rng)])


# --------------------------------------------------------------------------
# Wavepackets
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class WavepacketParams:
    delta0: float
    frequencies: np.ndarray
    gamma_values: np.ndarray     # per-mode lower bound |b_n| or d_n
    predicted_M: RateFunction | None

    def gamma0(self, s):
        """Min of per-mode bounds over modes with lambda_n in (s - delta0, s + delta0).

        Windows without modes impose no constraint and return inf.
        """
        s_arr = np.atleast_1d(np.asarray(s, dtype=float))
        out = np.full(s_arr.shape, math.inf)
        for i, sv in enumerate(s_arr):
            inside = np.abs(self.frequencies - sv) < self.delta0
            if np.any(inside):
                out[i] = float(np.min(self.gamma_values[inside]))
        return float(out[0]) if np.ndim(s) == 0 else out

    def to_dict(self) -> dict:
        return {
            "delta0": self.delta0,
            "frequencies": [float(v) for v in self.frequencies],
            "gamma0": [float(v) for v in self.gamma_values],
        }


def wavepacket_params(ms: ModalSystem) -> WavepacketParams:
    if ms.size == 0:
        raise InsufficientData("empty modal system")
    if ms.size < 2:
        raise InsufficientData("wavepacket half-width needs at least 2 modes")
    delta0 = ms.spectral_gap / 4.0
    lam = ms.frequencies
    mags = np.abs(ms.couplings)
    # gap/4 windows around each frequency contain that mode only.
    wp = WavepacketParams(delta0, lam, mags, None)
    gamma_at_modes = wp.gamma0(lam)
    predicted = None
    if lam.size >= 3 and np.all(gamma_at_modes > 0):
        predicted = _envelope_rate(lam, 1.0 / (gamma_at_modes ** 2 * delta0 ** 2))
    return replace(wp, gamma_values=mags, predicted_M=predicted)


def _envelope_rate(s, values) -> RateFunction:
    return RateFunction.tabulated(s, np.maximum.accumulate(values))


def predicted_M_from_wavepackets(wp: WavepacketParams) -> RateFunction:
    """Running-max envelope of gamma0(s)^-2 delta0^-2 tabulated at the frequencies."""
    if wp.frequencies.size < 3:
        raise InsufficientData("predicted rate needs gamma0 on at least 3 frequencies")
    gamma = wp.gamma0(wp.frequencies)
    if np.any(gamma <= 0):
        bad = [int(i) + 1 for i in np.flatnonzero(gamma <= 0)]
        raise PreconditionViolation(f"wavepacket condition fails: modes {bad} are undamped")
    return _envelope_rate(wp.frequencies, 1.0 / (gamma ** 2 * wp.delta0 ** 2))


def wavepacket_constant(ps: PeakSeries, wp: WavepacketParams) -> float:
    """Smallest C with peak_n <= C * predicted_M(s_n) over the peak series."""
    M = wp.predicted_M or predicted_M_from_wavepackets(wp)
    return float(np.max(ps.peak / M(ps.s)))


# --------------------------------------------------------------------------
# Hautus test
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class HautusReport:
    sample_count: int
    worst_ratio: float
    passed: bool
    worst_s: float = math.nan
    worst_sample: int = -1

    def to_dict(self) -> dict:
        return {"sample_count": self.sample_count, "worst_ratio": self.worst_ratio,
                "passed": self.passed, "worst_s": self.worst_s,
                "worst_sample": self.worst_sample}


def hautus_check(gen: TruncatedGenerator, damping: DampingMatrix, M_o, m_o, s_samples,
                 x_samples, rtol: float = HAUTUS_RTOL) -> HautusReport:
    """Worst ratio ||x||^2 / (M_o(s)||(is-A)x||^2 + m_o(s)||B*x||^2) over all (s, x) pairs.

    ``x_samples`` holds sample vectors as columns; M_o and m_o are evaluated
    at |s|. The report passes when the worst ratio is <= 1 up to rounding.
    """
    X = np.asarray(x_samples, dtype=complex)
    if X.ndim == 1:
        X = X[:, None]
    s_arr = np.atleast_1d(np.asarray(s_samples, dtype=float))
    Mo = np.atleast_1d(_evaluate(M_o, s_arr))
    mo = np.atleast_1d(_evaluate(m_o, s_arr))
    AX = gen.matrix @ X
    BX = damping.adjoint_apply(X)
    if BX.ndim == 1:
        BX = BX[None, :]
    bx2 = np.sum(np.abs(np.atleast_2d(BX)) ** 2, axis=0)
    x2 = np.sum(np.abs(X) ** 2, axis=0)
    worst, worst_s, worst_j = -math.inf, math.nan, -1
    for i, s in enumerate(s_arr):
        res2 = np.sum(np.abs(1j * s * X - AX) ** 2, axis=0)
        denom = Mo[i] * res2 + mo[i] * bx2
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(denom > 0, x2 / denom, np.where(x2 > 0, math.inf, 0.0))
        j = int(np.argmax(ratio))
        if ratio[j] > worst:
            worst, worst_s, worst_j = float(ratio[j]), float(s), j
    return HautusReport(int(s_arr.size * X.shape[1]), worst, bool(worst <= 1.0 + rtol),
                        worst_s, worst_j)


def converse_hautus_pair(scan: ResolventScan, bounded_damping: bool = True):
    """(M_o, m_o) = (2 M^2, 2 M) built from the running-max envelope M of a scan.

    M(s) is at least the measured resolvent norm at every scanned s >= 0.
    For unbounded damping only m_o ~ M^2 is available; it is returned as 2 M^2.
    """
    s = np.abs(scan.s)
    order = np.argsort(s)
    s_sorted, norms = s[order], scan.norms[order]
    uniq, idx = np.unique(s_sorted, return_index=True)
    norms_u = np.maximum.reduceat(norms, idx)
    M = RateFunction.tabulated(uniq, norms_u)

    def M_o(x):
        return 2.0 * M(x) ** 2

    def m_o(x):
        return 2.0 * M(x) if bounded_damping else 2.0 * M(x) ** 2

    return M_o, m_o, M


# --------------------------------------------------------------------------
# Schroedinger-type observability
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SchrodingerWavepacket:
    eta: float
    c0: float
    r0: float
    delta0: Callable
    gamma0: Callable
    predicted_M: Callable

    def to_dict(self, s_values=(0.0, 1.0, 10.0)) -> dict:
        return {"eta": self.eta, "c0": self.c0, "r0": self.r0,
                "samples": [{"s": float(s), "delta0": float(self.delta0(s)),
                             "gamma0": float(self.gamma0(s)),
                             "predicted_M": float(self.predicted_M(s))} for s in s_values]}


def _default_s_probe():
    return np.concatenate([[0.0], np.geomspace(1e-6, 1e6, 2401)])


def schrodinger_to_wavepacket(M_S, m_S, s_grid=None) -> SchrodingerWavepacket:
    """Wavepacket parameters from observability data (M_S, m_S) of the Schroedinger pair.

    eta = inf_{s>=0} M_S(s)(1+s)^2 and r0 = inf m_S are estimated on ``s_grid``.
    """
    s = _default_s_probe() if s_grid is None else np.asarray(s_grid, dtype=float)
    ms_vals = _evaluate(m_S, s)
    r0 = float(np.min(ms_vals))
    if not r0 > 0:
        raise PreconditionViolation(f"m_S must be bounded below by r0 > 0, got inf {r0!r}")
    eta = float(np.min(_evaluate(M_S, s) * (1.0 + s) ** 2))
    if not eta > 0:
        raise PreconditionViolation(f"eta = inf M_S(s)(1+s)^2 must be positive, got {eta!r}")
    c0 = min(math.sqrt(eta), 0.5)

    def delta0(x):
        x = np.abs(np.asarray(x, dtype=float))
        return c0 / (np.sqrt(2.0 * np.asarray(M_S(x), dtype=float)) * (1.0 + x))

    def gamma0(x):
        x = np.abs(np.asarray(x, dtype=float))
        return 1.0 / np.sqrt(2.0 * np.asarray(m_S(x), dtype=float))

    def predicted(x):
        x = np.abs(np.asarray(x, dtype=float))
        return (1.0 + x ** 2) * np.asarray(M_S(x), dtype=float) * np.asarray(m_S(x), dtype=float)

    return SchrodingerWavepacket(eta, c0, r0, delta0, gamma0, predicted)


# --------------------------------------------------------------------------
# Second-order Hautus conversion
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class SecondOrderConstants:
    c_B: float   # sup_n |coupling_n| / lambda_n
    c_A: float   # lambda_1^2


def second_order_constants(ms: ModalSystem) -> SecondOrderConstants:
    return SecondOrderConstants(float(np.max(np.abs(ms.couplings) / ms.frequencies)),
                                float(ms.frequencies[0] ** 2))


def hautus_secondorder_convert(Mt_o, mt_o, ms: ModalSystem):
    """First-order Hautus pair from a second-order one.

    m_o(s) = 4 mt_o(|s|),  M_o(s) = max{Mt_o(|s|), 8 mt_o(|s|) c_B^2 + c_A}.
    """
    k = second_order_constants(ms)

    def m_o(s):
        return 4.0 * _evaluate(mt_o, s)

    def M_o(s):
        return np.maximum(_evaluate(Mt_o, s), 8.0 * _evaluate(mt_o, s) * k.c_B ** 2 + k.c_A)

    return M_o, m_o


def hautus_firstorder_convert(M_o, m_o):
    """Second-order pair from a first-order one: (Mt_o, mt_o) = (M_o, m_o / 2)."""

    def Mt_o(s):
        return _evaluate(M_o, s)

    def mt_o(s):
        return 0.5 * _evaluate(m_o, s)

    return Mt_o, mt_o


# --------------------------------------------------------------------------
# Observability integrals
# --------------------------------------------------------------------------

def _trig_gram(freq: np.ndarray, tau: float) -> np.ndarray:
    """Gram matrix of f = (cos w_1 t, sin w_1 t, cos w_2 t, ...) on [0, tau] (interleaved)."""
    wi = freq[:, None]
    wj = freq[None, :]

    def C(w):  # int_0^tau cos(w t) dt = sin(w tau)/w
        return tau * np.sinc(w * tau / np.pi)

    def S(w):  # int_0^tau sin(w t) dt = (1 - cos(w tau))/w = 2 sin^2(w tau/2)/w
        return 0.5 * w * tau ** 2 * np.sinc(w * tau / (2 * np.pi)) ** 2

    dm, dp = wi - wj, wi + wj
    cc = 0.5 * (C(dm) + C(dp))
    ss = 0.5 * (C(dm) - C(dp))
    cs = 0.5 * (S(dp) - S(dm))  # int cos(w_i t) sin(w_j t)
    n = freq.size
    K = np.empty((2 * n, 2 * n))
    K[0::2, 0::2] = cc
    K[1::2, 1::2] = ss
    K[0::2, 1::2] = cs
    K[1::2, 0::2] = cs.T
    return K


def _output_coefficients(ms: ModalSystem, X: np.ndarray) -> np.ndarray:
    """Cos/sin coefficients of the per-mode outputs coupling * q_n(t), interleaved.

    With p, q the position and velocity coordinates, the undamped flow gives
    q_n(t) = q_n cos(l t) - p_n sin(l t).
    """
    cpl = ms.couplings[:, None]
    coef = np.empty(X.shape, dtype=complex)
    coef[0::2] = cpl * X[1::2]
    coef[1::2] = -cpl * X[0::2]
    return coef


def _integrals(ms: ModalSystem, X: np.ndarray, tau: float, K=None) -> np.ndarray:
    K = _trig_gram(ms.frequencies, tau) if K is None else K
    coef = _output_coefficients(ms, X)
    if ms.damping_kind == "rank_one":
        # Single output: the squared sum over modes.
        vals = np.einsum("ik,ij,jk->k", coef.conj(), K, coef)
    else:
        # One output per mode: only diagonal 2x2 blocks of K contribute.
        N = ms.size
        vals = np.zeros(X.shape[1], dtype=complex)
        for n in range(N):
            sl = slice(2 * n, 2 * n + 2)
            c = coef[sl]
            vals += np.einsum("ik,ij,jk->k", c.conj(), K[sl, sl], c)
    return np.real(vals)


def observability_integral(ms: ModalSystem, x, tau: float) -> float:
    """int_0^tau ||B* T(t) x||^2 dt for the undamped group T, in closed form."""
    if not tau > 0:
        raise PreconditionViolation("tau must be positive")
    X = np.asarray(x, dtype=complex).reshape(-1, 1)
    return float(_integrals(ms, X, tau)[0])


def undamped_evolve(ms: ModalSystem, x, t: float) -> np.ndarray:
    """T(t) x for the undamped group: exact rotation per mode."""
    x = np.asarray(x, dtype=complex)
    lam = ms.frequencies
    c, s = np.cos(lam * t), np.sin(lam * t)
    p, q = x[0::2], x[1::2]
    out = np.empty_like(x)
    out[0::2] = p * c + q * s
    out[1::2] = q * c - p * s
    return out


def fractional_norm_sq(ms: ModalSystem, X: np.ndarray, beta: float) -> np.ndarray:
    """||(-A)^{-beta} x||^2 = sum_n lambda_n^{-2 beta} (|x_n^(1)|^2 + |x_n^(2)|^2)."""
    w = ms.frequencies ** (-2.0 * beta)
    X = np.asarray(X)
    if X.ndim == 1:
        X = X[:, None]
    return w @ (np.abs(X[0::2]) ** 2 + np.abs(X[1::2]) ** 2)


@dataclass(frozen=True)
class ObservabilityReport:
    beta: float
    tau: float
    c_tau: float
    passed: bool
    sample_count: int
    worst_sample: int

    def to_dict(self) -> dict:
        return {"beta": self.beta, "tau": self.tau, "c_tau": self.c_tau, "passed": self.passed,
                "sample_count": self.sample_count, "worst_sample": self.worst_sample}


def nonuniform_obs_check(ms: ModalSystem, beta: float, tau: float, samples=None,
                         n_random: int = 100, seed: int = 0) -> ObservabilityReport:
    """c_tau estimate: min over samples of int ||B* T(t)x||^2 / ||(-A)^{-beta} x||^2.

    Default samples are the modal basis vectors and ``n_random`` random unit
    vectors. The estimate is not a proof: it only bounds the true constant from above.
    """
    if beta < 0:
        raise PreconditionViolation("beta must be nonnegative")
    if not tau > 0:
        raise PreconditionViolation("tau must be positive")
    X = sample_vectors(2 * ms.size, n_random, seed) if samples is None else \
        np.asarray(samples, dtype=complex)
    if X.ndim == 1:
        X = X[:, None]
    ints = _integrals(ms, X, tau)
    norms = fractional_norm_sq(ms, X, beta)
    ratios = ints / norms
    j = int(np.argmin(ratios))
    c_tau = max(float(ratios[j]), 0.0)
    return ObservabilityReport(float(beta), float(tau), c_tau, bool(c_tau > 0), int(X.shape[1]), j)


@dataclass(frozen=True)
class ObservabilityTrend:
    truncations: tuple
    c_tau: tuple
    ratios: tuple        # c_tau(2N) / c_tau(N)
    passed: bool         # positive and not shrinking under doubling

    def to_dict(self) -> dict:
        return {"truncations": list(self.truncations), "c_tau": list(self.c_tau),
                "ratios": list(self.ratios), "passed": self.passed}


# c_tau shrinking by more than this factor per doubling counts as decay to 0.
DOUBLING_SHRINK = 0.95


def observability_doubling(spec, beta: float, tau: float, doublings: int = 2,
                           n_random: int = 100, seed: int = 0) -> ObservabilityTrend:
    """nonuniform_obs_check at N, 2N, 4N, ...; c_tau -> 0 under doubling means failure."""
    Ns, cs = [], []
    for k in range(doublings + 1):
        N = spec.truncation * 2 ** k
        ms = build_modal_system(replace(spec, truncation=N))
        rep = nonuniform_obs_check(ms, beta, tau, n_random=n_random, seed=seed)
        Ns.append(N)
        cs.append(rep.c_tau)
    ratios = tuple(cs[i + 1] / cs[i] if cs[i] > 0 else 0.0 for i in range(len(cs) - 1))
    passed = bool(all(c > 0 for c in cs) and all(r >= DOUBLING_SHRINK for r in ratios))
    return ObservabilityTrend(tuple(Ns), tuple(cs), ratios, passed)


def exact_observability_time(ms: ModalSystem) -> float:
    """Observation-time threshold pi (1 + 2 pi^2) / ||A0^{-1/2}|| with ||A0^{-1/2}|| = 1/lambda_1."""
    return math.pi * (1.0 + 2.0 * math.pi ** 2) * float(ms.frequencies[0])


@dataclass(frozen=True)
class Sandwich:
    undamped: float
    damped: float
    energy_loss: float
    identity_error: float     # relative mismatch of 2*damped vs energy loss
    ordered: bool             # damped <= undamped (up to rounding)

    def to_dict(self) -> dict:
        return {"undamped": self.undamped, "damped": self.damped,
                "energy_loss": self.energy_loss, "identity_error": self.identity_error,
                "ordered": self.ordered}


def damped_observability_sandwich(ms: ModalSystem, dg: DampedGenerator, x, tau: float,
                                  sf: SpectralFactorization | None = None) -> Sandwich:
    """Undamped and damped output energies on [0, tau] plus the energy-balance identity."""
    x = np.asarray(x, dtype=complex)
    if not np.any(x):
        return Sandwich(0.0, 0.0, 0.0, 0.0, True)
    sf = sf or eig_decompose(dg)
    und = observability_integral(ms, x, tau)
    dmp = damped_output_energy(dg, x, tau, sf)
    end = sf.propagator(tau) @ x
    loss = float(np.real(np.vdot(x, x) - np.vdot(end, end)))
    denom = max(abs(loss), 2 * abs(dmp), 1e-300)
    err = abs(2 * dmp - loss) / denom
    ordered = dmp <= und * (1 + 1e-9) + 1e-15
    return Sandwich(und, dmp, loss, float(err), bool(ordered))
