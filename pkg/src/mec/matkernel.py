"""Dense-matrix kernels for the coding-length objective.

Everything here operates on plain float64 numpy arrays: Gram products of
embedding batches, the exact log-determinant of (I + C) via pivoted LU,
truncated matrix-logarithm traces, and cheap/iterative spectral-norm
bounds used to guard the truncated series.

All functions are pure; none keeps mutable state between calls.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Fixed start-vector seed so spectral_bound is reproducible run to run.
_POWER_ITER_SEED = 0x5EC2
_POWER_ITER_TOL = 1e-10
_POWER_ITER_CAP = 1000


class MatrixError(ValueError):
    """Malformed matrix input: wrong rank, wrong shape, or non-finite entries."""


class SingularMatrixError(ArithmeticError):
    """LU factorization hit a zero/non-finite pivot, or det(I + c) came out
    non-positive. Either way the caller violated the spectral-radius
    precondition of the exact log-determinant."""


def as_matrix(a, name: str = "matrix") -> np.ndarray:
    """Validate and return `a` as a 2-D float64 array with finite entries."""
    arr = np.asarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise MatrixError(f"{name} must be 2-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise MatrixError(f"{name} contains non-finite entries")
    return arr


def _square(a: np.ndarray, name: str = "matrix") -> np.ndarray:
    a = as_matrix(a, name)
    if a.shape[0] != a.shape[1]:
        raise MatrixError(f"{name} must be square, got shape {a.shape}")
    return a


UNIT_NORM_TOL = 1e-9


@dataclass(frozen=True)
class EmbeddingBatch:
    """A d x m block of unit-norm embedding columns.

    Column j is the embedding of sample j; every column must have unit
    Euclidean norm within 1e-9.
    """

    columns: np.ndarray

    def __post_init__(self):
        cols = as_matrix(self.columns, "columns")
        if cols.shape[0] < 1 or cols.shape[1] < 1:
            raise MatrixError(f"embedding batch needs d >= 1 and m >= 1, got {cols.shape}")
        norms = np.linalg.norm(cols, axis=0)
        worst = float(np.abs(norms - 1.0).max())
        if worst > UNIT_NORM_TOL:
            raise MatrixError(
                f"embedding columns must be unit-norm within {UNIT_NORM_TOL:g} "
                f"(worst deviation {worst:.3e})"
            )
        object.__setattr__(self, "columns", cols)

    @property
    def dim(self) -> int:
        return self.columns.shape[0]

    @property
    def batch(self) -> int:
        return self.columns.shape[1]

    @classmethod
    def random(cls, d: int, m: int, rng: np.random.Generator) -> "EmbeddingBatch":
        """Gaussian columns normalized onto the unit sphere."""
        z = rng.standard_normal((d, m))
        return cls(z / np.linalg.norm(z, axis=0))


def as_columns(z) -> np.ndarray:
    """Accept an EmbeddingBatch or a raw d x m array and return the array.

    Loss functions are defined on arbitrary (not necessarily unit-norm)
    columns so that finite-difference perturbations stay in-domain.
    """
    if isinstance(z, EmbeddingBatch):
        return z.columns
    return as_matrix(z, "embeddings")


@dataclass(frozen=True)
class CodingConfig:
    """Scalar bundle of the coding-length function.

    m, d are batch size and embedding dimension; eps_d_sq is the
    per-dimension squared distortion. mu = (m + d) / 2 and
    lam = 1 / (m * eps_d_sq) are derived exactly; order is the truncation
    order of the polynomial approximation.
    """

    m: int
    d: int
    eps_d_sq: float
    order: int = 4

    def __post_init__(self):
        if self.m < 1 or self.d < 1:
            raise ValueError(f"m and d must be >= 1, got m={self.m}, d={self.d}")
        if not (self.eps_d_sq > 0 and math.isfinite(self.eps_d_sq)):
            raise ValueError(f"eps_d_sq must be a positive real, got {self.eps_d_sq}")
        if self.order < 1:
            raise ValueError(f"order must be >= 1, got {self.order}")

    @property
    def mu(self) -> float:
        return (self.m + self.d) / 2.0

    @property
    def lam(self) -> float:
        return 1.0 / (self.m * self.eps_d_sq)

    @property
    def lam_m(self) -> float:
        """Worst-case spectral bound lam * m = 1 / eps_d_sq for unit columns."""
        return self.lam * self.m


def gram(a, b, side: str = "batch") -> np.ndarray:
    """Gram product of two equally shaped d x m blocks.

    side="batch" returns the m x m product a^T b; side="feature" returns
    the d x d product a b^T.
    """
    am = as_matrix(a, "a")
    bm = as_matrix(b, "b")
    if am.shape != bm.shape:
        raise MatrixError(f"gram operands must share a shape, got {am.shape} and {bm.shape}")
    if side == "batch":
        return am.T @ bm
    if side == "feature":
        return am @ bm.T
    raise ValueError(f"side must be 'batch' or 'feature', got {side!r}")


def log1p_series_coefficient(k: int) -> float:
    """k-th Maclaurin coefficient of log(1 + x): (-1)^(k+1) / k."""
    return (-1.0) ** (k + 1) / k


@dataclass
class PivotedLU:
    """Packed L\\U factors of P(I + c) with the pivot sequence.

    `lu` stores the unit-lower factor below the diagonal and the upper
    factor on/above it; `piv[k]` is the row swapped into position k.
    """

    lu: np.ndarray
    piv: np.ndarray
    sign: float
    logabsdet: float

    def solve(self, b: np.ndarray) -> np.ndarray:
        """Solve (I + c) x = b for one or many right-hand sides."""
        n = self.lu.shape[0]
        x = np.array(b, dtype=np.float64, copy=True)
        if x.ndim == 1:
            x = x[:, None]
            squeeze = True
        else:
            squeeze = False
        for k in range(n):
            p = self.piv[k]
            if p != k:
                x[[k, p]] = x[[p, k]]
        for i in range(1, n):
            x[i] -= self.lu[i, :i] @ x[:i]
        for i in range(n - 1, -1, -1):
            x[i] = (x[i] - self.lu[i, i + 1:] @ x[i + 1:]) / self.lu[i, i]
        return x[:, 0] if squeeze else x


def lu_factor_ipc(c) -> PivotedLU:
    """Partial-pivoted LU factorization of (I + c), right-looking rank-1 form."""
    c = _square(c, "c")
    n = c.shape[0]
    a = np.eye(n) + c
    piv = np.empty(n, dtype=np.int64)
    sign = 1.0
    logabs = 0.0
    for k in range(n):
        p = k + int(np.argmax(np.abs(a[k:, k])))
        piv[k] = p
        if p != k:
            a[[k, p]] = a[[p, k]]
            sign = -sign
        pivot = a[k, k]
        if pivot == 0.0 or not np.isfinite(pivot):
            raise SingularMatrixError(f"zero or non-finite pivot at step {k}")
        logabs += math.log(abs(pivot))
        if pivot < 0.0:
            sign = -sign
        if k < n - 1:
            col = a[k + 1:, k] / pivot
            a[k + 1:, k] = col
            a[k + 1:, k + 1:] -= np.outer(col, a[k, k + 1:])
    if not math.isfinite(logabs):
        raise SingularMatrixError("non-finite log-determinant accumulator")
    return PivotedLU(a, piv, sign, logabs)


def logdet_ipc(c) -> float:
    """Exact log det(I + c) via pivoted LU of (I + c).

    Precondition: the spectral radius of c is strictly below 1 (callers
    enforce it through spectral_bound), which makes det(I + c) positive.
    A non-positive determinant sign therefore raises SingularMatrixError.
    """
    fac = lu_factor_ipc(c)
    if fac.sign != 1.0:
        raise SingularMatrixError(
            "det(I + c) is not positive; spectral-radius precondition violated"
        )
    return fac.logabsdet


def trace_log_taylor(c, n: int) -> float:
    """Order-n truncation of Tr(log(I + c)) as a matrix polynomial.

    Accumulates powers of c by repeated left-to-right multiplication
    (n - 1 multiplies) and never forms the logarithm of a matrix, so the
    arithmetic path is fixed and deterministic for a given input.
    """
    c = _square(c, "c")
    if n < 1:
        raise ValueError(f"order must be >= 1, got {n}")
    power = c
    total = log1p_series_coefficient(1) * c
    for k in range(2, n + 1):
        power = power @ c
        total += log1p_series_coefficient(k) * power
    return float(np.trace(total))


def _power_iteration_norm(c: np.ndarray) -> float:
    """Largest singular value of c via power iteration on c^T c.

    Fixed-seed start vector; stops when successive estimates agree to
    1e-10 (relative to max(1, estimate)) or after 1000 iterations. The
    returned value never exceeds the true spectral norm.
    """
    n = c.shape[1]
    rng = np.random.default_rng(_POWER_ITER_SEED)
    v = rng.standard_normal(n)
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(_POWER_ITER_CAP):
        u = c.T @ (c @ v)
        lam = float(np.linalg.norm(u))
        if lam == 0.0:
            return 0.0
        new_sigma = math.sqrt(lam)
        v = u / lam
        converged = abs(new_sigma - sigma) <= _POWER_ITER_TOL * max(1.0, new_sigma)
        sigma = new_sigma
        if converged:
            break
    return sigma


def spectral_bound(c) -> tuple[float, float]:
    """(holder_bound, power_iter_estimate) for a square matrix.

    holder_bound = sqrt(max-abs-column-sum * max-abs-row-sum) dominates the
    spectral norm; the power-iteration estimate approaches it from below,
    so power_iter_estimate <= holder_bound always holds (up to roundoff).
    """
    c = _square(c, "c")
    absc = np.abs(c)
    col_sum = float(absc.sum(axis=0).max())
    row_sum = float(absc.sum(axis=1).max())
    holder = math.sqrt(col_sum * row_sum)
    return holder, _power_iteration_norm(c)


def holder_bound(c) -> float:
    """The cheap half of spectral_bound, without running power iteration."""
    c = _square(c, "c")
    absc = np.abs(c)
    return math.sqrt(float(absc.sum(axis=0).max()) * float(absc.sum(axis=1).max()))
