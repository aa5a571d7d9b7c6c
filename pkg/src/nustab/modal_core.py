"""Finite modal data for 1D damped wave and beam systems on (0, 1).

Both systems use the Dirichlet sine basis phi_n(xi) = sqrt(2) sin(n pi xi);
they differ only in the frequencies of A0^{1/2}:

    wave1d: lambda_n = n pi
    beam1d: lambda_n = n^2 pi^2

A damping spec is turned into one coupling per mode. Weak and pointwise
damping give signed rank-one scalars b_n = B0* phi_n, fractional damping gives
the diagonal values d_n = lambda_n^(-alpha).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence, Union

import numpy as np

from .errors import ConfigurationError, InsufficientData

SYSTEM_KINDS = ("wave1d", "beam1d")
WEAK_PROFILES = ("one_minus_xi", "xi2_one_minus_xi", "indicator", "tabulated")

# Gauss-Legendre order per quadrature panel.
_GL_ORDER = 10
# Panels per unit length are _PANELS_PER_MODE * n + _PANELS_BASE, i.e. about
# pi/4 radians of the integrand per panel.
_PANELS_PER_MODE = 4
_PANELS_BASE = 8


# --------------------------------------------------------------------------
# Damping specifications
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Weak:
    """Distributed damping B0 u = b(.) u.

    ``profile`` is one of ``one_minus_xi``, ``xi2_one_minus_xi``,
    ``indicator`` (b = 1 on [0, xi0]) or ``tabulated``.

    ``xi2_one_minus_xi`` uses the reference table
    b_n = 2 sqrt(2) (2(-1)^n - 1) / (n pi)^3. The exact sine coefficient of
    xi^2 (1 - xi) is -2 sqrt(2) (2(-1)^n + 1) / (n pi)^3: the same magnitudes
    with odd and even n exchanged, hence the same n^-3 decay. Use
    ``tabulated`` with ``samples=lambda x: x**2 * (1 - x)`` for the exact one.

    A tabulated profile
    takes ``samples`` as either a pair ``(xs, values)`` interpolated piecewise
    linearly, or a callable ``b(xi)`` accepting numpy arrays.
    """

    profile: str = "one_minus_xi"
    xi0: float | None = None
    samples: tuple | Callable | None = field(default=None, compare=False)

    def validate(self):
        if self.profile not in WEAK_PROFILES:
            raise ConfigurationError(
                f"unknown weak damping profile {self.profile!r}; expected one of {WEAK_PROFILES}"
            )
        if self.profile == "indicator":
            _check_location(self.xi0)
        elif self.xi0 is not None:
            raise ConfigurationError(f"profile {self.profile!r} takes no xi0")
        if self.profile == "tabulated":
            if self.samples is None:
                raise ConfigurationError("tabulated profile requires samples")
            if not callable(self.samples):
                xs, vals = _tabulated_arrays(self.samples)
                if xs.size < 2 or xs[0] != 0.0 or xs[-1] != 1.0:
                    raise ConfigurationError("tabulated sample grid must start at 0 and end at 1")
                if np.any(np.diff(xs) <= 0):
                    raise ConfigurationError("tabulated sample grid must be strictly increasing")
                if vals.shape != xs.shape or not np.all(np.isfinite(vals)):
                    raise ConfigurationError("tabulated values must be finite and match the grid")
        elif self.samples is not None:
            raise ConfigurationError(f"profile {self.profile!r} takes no samples")


@dataclass(frozen=True)
class Pointwise:
    """Point damping B0 u = delta_{xi0} u."""

    xi0: float

    def validate(self):
        _check_location(self.xi0)


@dataclass(frozen=True)
class FractionalDiag:
    """Diagonal damping B0 = A0^{-alpha/2}, so B0* phi_n = lambda_n^{-alpha} phi_n."""

    alpha: float

    def validate(self):
        a = self.alpha
        if not isinstance(a, (int, float)) or not math.isfinite(a) or not (0.0 < a <= 1.0):
            raise ConfigurationError(f"alpha must lie in (0, 1], got {a!r}")


@dataclass(frozen=True)
class Couplings:
    """User-supplied rank-one coupling sequence b_1, b_2, ... (no regularity check)."""

    values: tuple

    def validate(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1 or vals.size == 0 or not np.all(np.isfinite(vals)):
            raise ConfigurationError("coupling sequence must be a non-empty list of finite reals")


DampingSpec = Union[Weak, Pointwise, FractionalDiag, Couplings]


def _check_location(xi0):
    if xi0 is None or not isinstance(xi0, (int, float)) or not math.isfinite(xi0):
        raise ConfigurationError(f"damping location xi0 must be a real in (0, 1), got {xi0!r}")
    if not (0.0 < xi0 < 1.0):
        raise ConfigurationError(f"damping location xi0 must lie in (0, 1), got {xi0!r}")


def _tabulated_arrays(samples):
    try:
        xs, vals = samples
    except (TypeError, ValueError) as exc:
        raise ConfigurationError("tabulated samples must be a pair (xs, values)") from exc
    return np.asarray(xs, dtype=float), np.asarray(vals, dtype=float)


@dataclass(frozen=True)
class SystemSpec:
    system_kind: str
    damping: DampingSpec
    truncation: int

    def validate(self):
        if self.system_kind not in SYSTEM_KINDS:
            raise ConfigurationError(
                f"unknown system kind {self.system_kind!r}; expected one of {SYSTEM_KINDS}"
            )
        if isinstance(self.truncation, bool) or not isinstance(self.truncation, (int, np.integer)):
            raise ConfigurationError(f"truncation must be an integer, got {self.truncation!r}")
        if self.truncation < 2:
            raise ConfigurationError(f"truncation N must be at least 2, got {self.truncation}")
        if not isinstance(self.damping, (Weak, Pointwise, FractionalDiag, Couplings)):
            raise ConfigurationError(f"unsupported damping spec {self.damping!r}")
        self.damping.validate()
        if isinstance(self.damping, Couplings) and len(self.damping.values) < self.truncation:
            raise ConfigurationError(
                f"coupling sequence has {len(self.damping.values)} entries, "
                f"truncation needs {self.truncation}"
            )
        return self


# --------------------------------------------------------------------------
# Modal system
# --------------------------------------------------------------------------

@dataclass(frozen=True)
class Mode:
    index: int
    frequency: float
    coupling: float


@dataclass(frozen=True)
class ModalSystem:
    modes: tuple
    damping_kind: str  # "rank_one" or "diagonal"
    spectral_gap: float
    spec: SystemSpec | None = None
    damping_scale: float = 1.0

    @property
    def size(self) -> int:
        return len(self.modes)

    @property
    def frequencies(self) -> np.ndarray:
        return np.array([m.frequency for m in self.modes], dtype=float)

    @property
    def couplings(self) -> np.ndarray:
        return np.array([m.coupling for m in self.modes], dtype=float)

    @property
    def indices(self) -> np.ndarray:
        return np.array([m.index for m in self.modes], dtype=int)

    def scaled(self, kappa: float) -> "ModalSystem":
        """Same system with BB* replaced by kappa * BB*."""
        if not kappa > 0:
            raise ConfigurationError(f"damping scale must be positive, got {kappa!r}")
        root = math.sqrt(kappa)
        modes = tuple(replace(m, coupling=m.coupling * root) for m in self.modes)
        return replace(self, modes=modes, damping_scale=self.damping_scale * kappa)

    @classmethod
    def from_arrays(cls, frequencies, couplings, damping_kind="rank_one") -> "ModalSystem":
        lam = np.asarray(frequencies, dtype=float)
        cpl = np.asarray(couplings, dtype=float)
        if lam.shape != cpl.shape or lam.ndim != 1:
            raise ConfigurationError("frequencies and couplings must be 1D arrays of equal length")
        if lam.size and (np.any(lam <= 0) or np.any(np.diff(lam) <= 0)):
            raise ConfigurationError("frequencies must be positive and strictly increasing")
        if damping_kind not in ("rank_one", "diagonal"):
            raise ConfigurationError(f"unknown damping kind {damping_kind!r}")
        if damping_kind == "diagonal" and np.any(cpl < 0):
            raise ConfigurationError("diagonal damping values must be nonnegative")
        modes = tuple(Mode(i + 1, float(l), float(c)) for i, (l, c) in enumerate(zip(lam, cpl)))
        gap = float(np.min(np.diff(lam))) if lam.size >= 2 else math.nan
        return cls(modes=modes, damping_kind=damping_kind, spectral_gap=gap)


def frequency(system_kind: str, n) -> np.ndarray | float:
    """Frequency lambda_n of A0^{1/2}."""
    n = np.asarray(n, dtype=float)
    if system_kind == "wave1d":
        out = n * np.pi
    elif system_kind == "beam1d":
        out = n * n * np.pi ** 2
    else:
        raise ConfigurationError(f"unknown system kind {system_kind!r}")
    return float(out) if out.ndim == 0 else out


def sin_pi(x):
    """sin(pi x) with exact argument reduction: exactly 0 at integers."""
    # fmod is exact and odd; the shifts below are exact by Sterbenz' lemma.
    r = np.fmod(np.asarray(x, dtype=float), 2.0)
    r = np.where(r > 1.0, r - 2.0, np.where(r < -1.0, r + 2.0, r))
    r = np.where(r > 0.5, 1.0 - r, np.where(r < -0.5, -1.0 - r, r))
    return np.sin(np.pi * r)


def _weak_closed_form(profile: str, xi0, n: np.ndarray) -> np.ndarray:
    npi = n * np.pi
    if profile == "one_minus_xi":
        return np.sqrt(2.0) / npi
    if profile == "xi2_one_minus_xi":
        # Reference table, not the exact coefficient (see Weak).
        sign = np.where(n.astype(np.int64) % 2 == 0, 1.0, -1.0)
        return 2.0 * np.sqrt(2.0) * (2.0 * sign - 1.0) / npi ** 3
    if profile == "indicator":
        # 1 - cos(x) = 2 sin^2(x/2) avoids cancellation for small x.
        return np.sqrt(2.0) * 2.0 * np.sin(npi * xi0 / 2.0) ** 2 / npi
    raise ConfigurationError(f"no closed form for profile {profile!r}")


def _gauss_legendre_panels(edges: np.ndarray):
    """Nodes and weights of composite Gauss-Legendre on the given panel edges."""
    x, w = np.polynomial.legendre.leggauss(_GL_ORDER)
    a = edges[:-1, None]
    h = np.diff(edges)[:, None]
    nodes = a + 0.5 * h * (x[None, :] + 1.0)
    weights = 0.5 * h * w[None, :]
    return nodes.ravel(), weights.ravel()


def _panel_edges(knots: np.ndarray, n: int) -> np.ndarray:
    # Refine every knot interval so kinks of a piecewise-linear profile sit on
    # panel edges and the total panel count grows linearly in n.
    density = _PANELS_PER_MODE * n + _PANELS_BASE
    pieces = []
    for a, b in zip(knots[:-1], knots[1:]):
        m = max(1, int(math.ceil(density * (b - a))))
        pieces.append(np.linspace(a, b, m + 1)[:-1])
    pieces.append(knots[-1:])
    return np.concatenate(pieces)


def quadrature_coupling(profile, n: int) -> float:
    """sqrt(2) * integral_0^1 b(xi) sin(n pi xi) d xi by composite Gauss-Legendre.

    ``profile`` is a callable b(xi) or a pair (xs, values) of samples that is
    interpolated piecewise linearly.
    """
    if callable(profile):
        knots = np.array([0.0, 1.0])
        func = profile
    else:
        xs, vals = _tabulated_arrays(profile)
        knots = xs

        def func(xi):
            return np.interp(xi, xs, vals)

    nodes, weights = _gauss_legendre_panels(_panel_edges(knots, int(n)))
    values = np.asarray(func(nodes), dtype=float) * np.sin(n * np.pi * nodes)
    return float(np.sqrt(2.0) * np.dot(weights, values))


def coupling_coefficient(spec: SystemSpec, n: int) -> float:
    """Coupling of mode n: signed b_n for rank-one damping, d_n for diagonal damping."""
    if isinstance(n, bool) or int(n) != n or n < 1:
        raise ConfigurationError(f"mode index must be a positive integer, got {n!r}")
    n = int(n)
    damping = spec.damping
    if isinstance(damping, Weak):
        if damping.profile == "tabulated":
            return quadrature_coupling(damping.samples, n)
        return float(_weak_closed_form(damping.profile, damping.xi0, np.array(float(n))))
    if isinstance(damping, Pointwise):
        return float(np.sqrt(2.0) * sin_pi(n * damping.xi0))
    if isinstance(damping, FractionalDiag):
        return float(frequency(spec.system_kind, n) ** (-damping.alpha))
    if isinstance(damping, Couplings):
        return float(damping.values[n - 1])
    raise ConfigurationError(f"unsupported damping spec {damping!r}")


def _all_couplings(spec: SystemSpec) -> np.ndarray:
    N = spec.truncation
    n = np.arange(1, N + 1, dtype=float)
    damping = spec.damping
    if isinstance(damping, Weak) and damping.profile != "tabulated":
        return _weak_closed_form(damping.profile, damping.xi0, n)
    if isinstance(damping, Pointwise):
        return np.sqrt(2.0) * sin_pi(n * damping.xi0)
    if isinstance(damping, FractionalDiag):
        return frequency(spec.system_kind, n) ** (-damping.alpha)
    return np.array([coupling_coefficient(spec, k) for k in range(1, N + 1)])


def build_modal_system(spec: SystemSpec) -> ModalSystem:
    spec.validate()
    N = spec.truncation
    lam = frequency(spec.system_kind, np.arange(1, N + 1))
    cpl = _all_couplings(spec)
    kind = "diagonal" if isinstance(spec.damping, FractionalDiag) else "rank_one"
    modes = tuple(Mode(i + 1, float(l), float(c)) for i, (l, c) in enumerate(zip(lam, cpl)))
    return ModalSystem(modes=modes, damping_kind=kind, spectral_gap=_gap(lam), spec=spec)


def _gap(lam: np.ndarray) -> float:
    if lam.size < 2:
        raise InsufficientData("spectral gap needs at least 2 modes")
    return float(np.min(np.diff(lam)))


def spectral_gap(ms: ModalSystem) -> float:
    return _gap(ms.frequencies)


def mode_table(ms: ModalSystem) -> list[tuple[int, float, float]]:
    """Rows (n, lambda_n, coupling) in mode order."""
    return [(m.index, m.frequency, m.coupling) for m in ms.modes]


def system_spec(system_kind: str, damping: DampingSpec, truncation: int) -> SystemSpec:
    """Build and validate a SystemSpec."""
    return SystemSpec(system_kind, damping, truncation).validate()


__all__: Sequence[str] = (
    "SystemSpec", "Weak", "Pointwise", "FractionalDiag", "Couplings", "Mode", "ModalSystem",
    "build_modal_system", "coupling_coefficient", "spectral_gap", "frequency",
    "quadrature_coupling", "mode_table", "system_spec",
)
