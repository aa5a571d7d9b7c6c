"""First-order generator and damping in orthonormal modal coordinates.

The energy space X = D(A0^{1/2}) x X0 carries the basis

    e_n^(1) = (phi_n / lambda_n, 0),   e_n^(2) = (0, phi_n),

which is orthonormal for ||(w, v)||^2 = ||A0^{1/2} w||^2 + ||v||^2. Coordinates
are interleaved: slot 2(n-1) holds e_n^(1) (position) and slot 2(n-1)+1
holds e_n^(2) (velocity). X-norms are therefore plain Euclidean norms and
operator norms are matrix 2-norms.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AssemblyError, DimensionMismatch
from .modal_core import ModalSystem

# Relative tolerance of the post-assembly dissipation check.
DISSIPATION_TOL = 1e-12
_CHECK_SAMPLES = 8
_CHECK_SEED = 0x5EED


def position_slot(n: int) -> int:
    """Coordinate index of e_n^(1) for 1-based mode index n."""
    return 2 * (n - 1)


def velocity_slot(n: int) -> int:
    """Coordinate index of e_n^(2) for 1-based mode index n."""
    return 2 * (n - 1) + 1


@dataclass(frozen=True)
class TruncatedGenerator:
    """Skew-symmetric block-diagonal matrix with blocks [[0, lambda_n], [-lambda_n, 0]]."""

    frequencies: np.ndarray
    matrix: np.ndarray

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]


@dataclass(frozen=True)
class DampingMatrix:
    """Damping operator B as a 2N x k matrix acting on velocity slots only.

    ``kind`` is ``rank_one`` (k = 1, column beta) or ``diagonal``
    (k = N, column n carries d_n in slot e_n^(2)).
    """

    kind: str
    values: np.ndarray  # b_n (rank_one) or d_n (diagonal), length N

    @property
    def dimension(self) -> int:
        return 2 * self.values.size

    @property
    def beta(self) -> np.ndarray:
        """Damping vector of the rank-one case."""
        if self.kind != "rank_one":
            raise TypeError("beta is only defined for rank-one damping")
        out = np.zeros(self.dimension)
        out[1::2] = self.values
        return out

    @property
    def B(self) -> np.ndarray:
        N = self.values.size
        if self.kind == "rank_one":
            return self.beta[:, None]
        out = np.zeros((2 * N, N))
        out[1::2, :] = np.diag(self.values)
        return out

    def gram(self) -> np.ndarray:
        """BB* as a dense 2N x 2N matrix."""
        N = self.values.size
        out = np.zeros((2 * N, 2 * N))
        if self.kind == "rank_one":
            out[1::2, 1::2] = np.outer(self.values, self.values)
        else:
            out[1::2, 1::2] = np.diag(self.values ** 2)
        return out

    def adjoint_apply(self, x: np.ndarray) -> np.ndarray:
        """B* x (real transpose, complex vectors allowed). Works column-wise on 2D input."""
        vel = np.asarray(x)[1::2]
        if self.kind == "rank_one":
            return np.atleast_1d(self.values @ vel)
        if vel.ndim == 1:
            return self.values * vel
        return self.values[:, None] * vel


@dataclass(frozen=True)
class DampedGenerator:
    """A_N - B_N B_N* together with the pieces it was built from."""

    matrix: np.ndarray
    generator: TruncatedGenerator
    damping: DampingMatrix
    modal_system: ModalSystem | None = None

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    @property
    def frequencies(self) -> np.ndarray:
        return self.generator.frequencies


def _generator_matrix(lam: np.ndarray) -> np.ndarray:
    N = lam.size
    A = np.zeros((2 * N, 2 * N))
    idx = np.arange(N)
    A[2 * idx, 2 * idx + 1] = lam
    A[2 * idx + 1, 2 * idx] = -lam
    return A


def assemble_generator(ms: ModalSystem) -> TruncatedGenerator:
    lam = ms.frequencies
    A = _generator_matrix(lam)
    A.setflags(write=False)
    lam.setflags(write=False)
    return TruncatedGenerator(frequencies=lam, matrix=A)


def assemble_damping(ms: ModalSystem) -> DampingMatrix:
    vals = ms.couplings
    vals.setflags(write=False)
    return DampingMatrix(kind=ms.damping_kind, values=vals)


def dissipation_defect(matrix: np.ndarray, damping: DampingMatrix, x: np.ndarray) -> float:
    """|Re<(A - BB*)x, x> + ||B*x||^2| / ||x||^2."""
    x = np.asarray(x)
    lhs = np.real(np.vdot(x, matrix @ x))
    bx = damping.adjoint_apply(x)
    nrm2 = np.real(np.vdot(x, x))
    if nrm2 == 0:
        return 0.0
    return abs(lhs + np.real(np.vdot(bx, bx))) / nrm2


def assemble_damped(gen: TruncatedGenerator, damp: DampingMatrix,
                    ms: ModalSystem | None = None) -> DampedGenerator:
    if gen.dimension != damp.dimension:
        raise DimensionMismatch(
            f"generator has dimension {gen.dimension}, damping has {damp.dimension}"
        )
    M = gen.matrix - damp.gram()
    M.setflags(write=False)
    # Scale of the identity check: rounding in x^T M x grows with ||M||.
    scale = max(1.0, float(np.max(np.abs(M))) if M.size else 1.0)
    rng = np.random.Generator(np.random.Philox(key=_CHECK_SEED))
    for _ in range(_CHECK_SAMPLES):
        x = rng.standard_normal(gen.dimension)
        defect = dissipation_defect(M, damp, x)
        if defect > DISSIPATION_TOL * scale:
            raise AssemblyError(f"dissipation identity violated: relative defect {defect:.3e}")
    return DampedGenerator(matrix=M, generator=gen, damping=damp, modal_system=ms)


def assemble(ms: ModalSystem) -> DampedGenerator:
    """Generator, damping and damped generator of a modal system in one call."""
    return assemble_damped(assemble_generator(ms), assemble_damping(ms), ms)


def dump_matrix(matrix: np.ndarray, path, fmt: str = "text") -> Path:
    """Write a matrix in column-major order.

    Text format: first line ``rows cols``, then one value per line with 17
    significant digits. Binary format: raw little-endian float64.
    """
    path = Path(path)
    data = np.asarray(matrix, dtype=float)
    flat = data.ravel(order="F")
    if fmt == "text":
        with path.open("w") as fh:
            fh.write(f"{data.shape[0]} {data.shape[1]}\n")
            for v in flat:
                fh.write(f"{v:.17g}\n")
    elif fmt == "binary":
        flat.astype("<f8").tofile(path)
    else:
        raise ValueError(f"unknown dump format {fmt!r}")
    return path
