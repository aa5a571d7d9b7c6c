"""Damped semigroup e^{t A_B} on the truncation: operator-norm traces and orbits.

Propagation goes through the eigendecomposition A_B = V diag(w) V^{-1}, which
is well conditioned for these nearly normal matrices. When the eigenvector
matrix is ill conditioned, or the factorization fails its reconstruction
check, every time point falls back to scipy's scaling-and-squaring expm.
"""
from __future__ import annotations

import csv
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.integrate
import scipy.linalg

from .errors import ConfigurationError, InsufficientData
from .operator_assembly import DampedGenerator
from .resolvent_engine import SlopeFit, fit_loglog

CONDITION_LIMIT = 1e8
RECONSTRUCTION_TOL = 1e-8
REAL_PART_TOL = 1e-12
DEFAULT_T0 = 10.0
# Fit points below this fraction of the truncation floor are treated as
# exponential tail.
TAIL_FRACTION = 0.1
MIN_FIT_POINTS = 8


@dataclass(frozen=True)
class SpectralFactorization:
    eigenvalues: np.ndarray
    vectors: np.ndarray
    inverse_vectors: np.ndarray
    condition: float
    reconstruction_error: float
    max_real_part: float
    fallback: bool
    matrix: np.ndarray

    def propagator(self, t: float) -> np.ndarray:
        """e^{t A_B} as a dense matrix."""
        if self.fallback:
            return scipy.linalg.expm(t * self.matrix)
        return np.real_if_close((self.vectors * np.exp(t * self.eigenvalues)) @ self.inverse_vectors)


def _undamped_factorization(dg: DampedGenerator) -> SpectralFactorization:
    # Exact eigenpairs of the rotation blocks: +-i lambda_n with (1, +-i)/sqrt(2).
    lam = dg.frequencies
    N = lam.size
    w = np.empty(2 * N, dtype=complex)
    V = np.zeros((2 * N, 2 * N), dtype=complex)
    r = 1.0 / math.sqrt(2.0)
    for k in range(N):
        w[2 * k] = 1j * lam[k]
        w[2 * k + 1] = -1j * lam[k]
        V[2 * k, 2 * k] = r
        V[2 * k + 1, 2 * k] = 1j * r
        V[2 * k, 2 * k + 1] = r
        V[2 * k + 1, 2 * k + 1] = -1j * r
    return SpectralFactorization(w, V, V.conj().T, 1.0, 0.0, 0.0, False, dg.matrix)


def eig_decompose(dg: DampedGenerator) -> SpectralFactorization:
    """Eigendecomposition of A_B with conditioning and reconstruction diagnostics."""
    if not np.any(dg.damping.values):
        return _undamped_factorization(dg)
    M = dg.matrix
    w, V = np.linalg.eig(M)
    cond = float(np.linalg.cond(V))
    fallback = not math.isfinite(cond) or cond > CONDITION_LIMIT
    try:
        Vinv = np.linalg.inv(V)
    except np.linalg.LinAlgError:
        Vinv = np.full_like(V, np.nan)
        fallback = True
    scale = max(np.linalg.norm(M, 2), 1e-300)
    recon = float(np.linalg.norm((V * w) @ Vinv - M, 2) / scale)
    if not recon <= RECONSTRUCTION_TOL:
        fallback = True
    max_re = float(np.max(w.real))
    if max_re > REAL_PART_TOL * max(1.0, scale):
        fallback = True
    return SpectralFactorization(w, V, Vinv, cond, recon, max_re, fallback, M)


def propagator_norm(sf: SpectralFactorization, A_B_inverse, t: float) -> float:
    """||e^{t A_B} A_B^{-1}||_2."""
    if t < 0:
        raise ConfigurationError("propagator needs t >= 0")
    if sf.fallback:
        return float(np.linalg.norm(scipy.linalg.expm(t * sf.matrix) @ A_B_inverse, 2))
    W = sf.inverse_vectors @ A_B_inverse
    return float(np.linalg.norm((sf.vectors * np.exp(t * sf.eigenvalues)) @ W, 2))


def _trace_values(sf: SpectralFactorization, right: np.ndarray, t_grid, workers: int = 1):
    if sf.fallback:
        def one(t):
            return float(np.linalg.norm(scipy.linalg.expm(t * sf.matrix) @ right, 2))
    else:
        W = sf.inverse_vectors @ right
        V, w = sf.vectors, sf.eigenvalues

        def one(t):
            return float(np.linalg.norm((V * np.exp(t * w)) @ W, 2))
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            return np.array(list(pool.map(one, t_grid)))
    return np.array([one(t) for t in t_grid])


def semigroup_norms(sf: SpectralFactorization, t_grid) -> np.ndarray:
    """||e^{t A_B}|| on a grid (contraction check)."""
    return _trace_values(sf, np.eye(sf.matrix.shape[0]), np.asarray(t_grid, dtype=float))


@dataclass(frozen=True)
class DecayTrace:
    t: np.ndarray
    values: np.ndarray
    predicted: np.ndarray | None
    horizon: float
    beyond_horizon: bool
    floor: float  # truncation floor estimate 1/lambda_N

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["t", "opnorm", "predicted"])
            for i, (t, v) in enumerate(zip(self.t, self.values)):
                pred = "" if self.predicted is None else f"{self.predicted[i]:.17g}"
                writer.writerow([f"{t:.17g}", f"{v:.17g}", pred])
        return path


def validity_horizon(dg: DampedGenerator) -> float:
    """t_max(N) = M(lambda_{N/2}) for the wavepacket-predicted rate M."""
    from .stability_conditions import predicted_M_from_wavepackets, wavepacket_params

    ms = dg.modal_system
    if ms is None:
        raise InsufficientData("validity horizon needs the modal system of the generator")
    try:
        M = predicted_M_from_wavepackets(wavepacket_params(ms))
    except (InsufficientData, ValueError):
        return math.inf
    return float(M(ms.frequencies[ms.size // 2 - 1]))


def time_grid(start: float, stop: float, points: int, spacing: str = "log") -> np.ndarray:
    if points < 2 or not (0 < start < stop):
        raise ConfigurationError("time grid needs 0 < start < stop and at least 2 points")
    if spacing == "log":
        return np.geomspace(start, stop, points)
    if spacing == "linear":
        return np.linspace(start, stop, points)
    raise ConfigurationError(f"unknown spacing {spacing!r}")


def decay_trace(dg: DampedGenerator, t_grid, M=None, sf: SpectralFactorization | None = None,
                workers: int = 1) -> DecayTrace:
    """||e^{t A_B} A_B^{-1}|| on t_grid, with 1/M^{-1}(t) when a rate M is given."""
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or t.size == 0 or np.any(t <= 0) or np.any(np.diff(t) <= 0):
        raise ConfigurationError("time grid must be positive and strictly increasing")
    sf = sf or eig_decompose(dg)
    AB_inv = np.linalg.inv(dg.matrix)
    values = _trace_values(sf, AB_inv, t, workers)
    predicted = None
    if M is not None:
        with np.errstate(divide="ignore"):
            predicted = 1.0 / np.asarray(M.inverse(t), dtype=float)
    horizon = validity_horizon(dg) if dg.modal_system is not None else math.inf
    beyond = bool(t[-1] > horizon)
    if beyond:
        warnings.warn(f"time grid reaches t = {t[-1]:.4g} beyond the validity horizon "
                      f"{horizon:.4g}", stacklevel=2)
    floor = 1.0 / float(dg.frequencies[-1])
    return DecayTrace(t, values, predicted, horizon, beyond, floor)


def fit_decay_exponent(trace: DecayTrace, window=None, floor: float | None = None) -> SlopeFit:
    """Log-log exponent of the trace over ``window`` = (t_lo, t_hi).

    Defaults: t_lo = 10 (transient), t_hi = last grid point. Points where the
    trace is below 0.1 x truncation floor are dropped as exponential tail.
    """
    lo, hi = (DEFAULT_T0, math.inf) if window is None else window
    floor = trace.floor if floor is None else floor
    mask = (trace.t >= lo) & (trace.t <= hi) & (trace.values >= TAIL_FRACTION * floor)
    if np.count_nonzero(mask) < MIN_FIT_POINTS:
        raise InsufficientData(
            f"need at least {MIN_FIT_POINTS} trace points in window, got {np.count_nonzero(mask)}")
    return fit_loglog(trace.t[mask], trace.values[mask], min_points=MIN_FIT_POINTS)


def orbit_decay(sf: SpectralFactorization, x0, t_grid) -> np.ndarray:
    """||e^{t A_B} x0|| for every t in the grid."""
    x0 = np.asarray(x0)
    if not np.any(x0):
        raise ConfigurationError("orbit needs a nonzero initial state")
    t = np.asarray(t_grid, dtype=float)
    if sf.fallback:
        return np.array([np.linalg.norm(scipy.linalg.expm(tt * sf.matrix) @ x0) for tt in t])
    c = sf.inverse_vectors @ x0
    states = sf.vectors @ (c[:, None] * np.exp(np.outer(sf.eigenvalues, t)))
    return np.linalg.norm(states, axis=0)


def _simpson_grid(tau: float, lam_max: float, min_intervals: int = 10_000) -> np.ndarray:
    step = min(0.01, 0.1 / lam_max)
    m = max(min_intervals, int(math.ceil(tau / step)))
    m += m % 2
    return np.linspace(0.0, tau, m + 1)


def damped_output_energy(dg: DampedGenerator, x, tau: float,
                         sf: SpectralFactorization | None = None, chunk: int = 4096) -> float:
    """integral_0^tau ||B* e^{t A_B} x||^2 dt by composite Simpson on the eigenbasis propagator."""
    if tau <= 0:
        raise ConfigurationError("tau must be positive")
    x = np.asarray(x, dtype=complex)
    if not np.any(x):
        return 0.0
    sf = sf or eig_decompose(dg)
    t = _simpson_grid(tau, float(dg.frequencies[-1]))
    B = dg.damping.B
    vals = np.empty(t.size)
    if sf.fallback:
        for i, tt in enumerate(t):
            y = B.T @ (scipy.linalg.expm(tt * sf.matrix) @ x)
            vals[i] = float(np.real(np.vdot(y, y)))
    else:
        c = sf.inverse_vectors @ x
        BV = B.T @ sf.vectors
        for start in range(0, t.size, chunk):
            tt = t[start:start + chunk]
            y = BV @ (c[:, None] * np.exp(np.outer(sf.eigenvalues, tt)))
            vals[start:start + chunk] = np.sum(np.abs(y) ** 2, axis=0)
    return float(scipy.integrate.simpson(vals, x=t))


@dataclass(frozen=True)
class EnergyBalance:
    energy_loss: float        # ||x||^2 - ||T_B(tau) x||^2
    dissipated: float         # 2 * integral ||B* T_B(t) x||^2
    relative_error: float


def energy_balance(dg: DampedGenerator, x, tau: float,
                   sf: SpectralFactorization | None = None) -> EnergyBalance:
    sf = sf or eig_decompose(dg)
    x = np.asarray(x, dtype=complex)
    end = sf.propagator(tau) @ x
    loss = float(np.real(np.vdot(x, x) - np.vdot(end, end)))
    diss = 2.0 * damped_output_energy(dg, x, tau, sf)
    denom = max(abs(loss), abs(diss), 1e-300)
    return EnergyBalance(loss, diss, abs(loss - diss) / denom)
