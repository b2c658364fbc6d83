"""The maximum-entropy coding loss and its analytic gradients.

The loss of a two-view embedding pair is -mu * log det(I + lam * G) where
G is either the m x m batch Gram Z1^T Z2 or the d x d feature Gram
Z1 Z2^T (the two are equal by Sylvester's determinant identity). The
truncated form replaces the log-determinant with an order-n matrix
polynomial trace; a spectral guard rejects inputs for which that
truncation diverges.

Gradients are taken with respect to the embedding entries as free
variables. The l2-normalization Jacobian of the encoding pipeline is the
trainer's responsibility, not this module's.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import matkernel
from .matkernel import CodingConfig, as_columns, gram, lu_factor_ipc

FORMS = ("batch", "feature", "auto")

_GRADCHECK_SEED = 0x9D1F
_GRADCHECK_MAX_COORDS = 64


class DivergenceError(ArithmeticError):
    """Spectral norm of the scaled Gram reached 1, so the truncated series
    no longer approximates the log-determinant."""

    def __init__(self, measured_norm: float):
        self.measured_norm = measured_norm
        super().__init__(
            f"truncated series diverges: spectral norm {measured_norm:.6f} >= 1"
        )


@dataclass(frozen=True)
class MecLossConfig:
    """Loss configuration: coding constants plus evaluation switches.

    form selects the Gram side; "auto" resolves to the cheaper side
    (batch when m <= d, feature otherwise). exact switches from the
    truncated polynomial to the LU log-determinant. normalize_by_mu
    divides value and gradients by mu, which keeps learning rates
    comparable across batch sizes.
    """

    coding: CodingConfig
    form: str = "auto"
    exact: bool = False
    normalize_by_mu: bool = True

    def __post_init__(self):
        if self.form not in FORMS:
            raise ValueError(f"form must be one of {FORMS}, got {self.form!r}")

    def resolved_form(self) -> str:
        if self.form != "auto":
            return self.form
        return "batch" if self.coding.m <= self.coding.d else "feature"


@dataclass
class LossResult:
    """Scalar loss plus gradients with respect to both embedding blocks."""

    value: float
    grad_z1: np.ndarray
    grad_z2: np.ndarray

    def __post_init__(self):
        if not np.isfinite(self.value):
            raise ArithmeticError(f"loss value is not finite: {self.value}")
        if self.grad_z1.shape != self.grad_z2.shape:
            raise ValueError("gradients must share the embedding shape")
        if not (np.all(np.isfinite(self.grad_z1)) and np.all(np.isfinite(self.grad_z2))):
            raise ArithmeticError("loss gradients contain non-finite entries")


def _check_pair(z1, z2, coding: CodingConfig) -> tuple[np.ndarray, np.ndarray]:
    a = as_columns(z1)
    b = as_columns(z2)
    if a.shape != b.shape:
        raise matkernel.MatrixError(
            f"view batches must share a shape, got {a.shape} and {b.shape}"
        )
    if a.shape != (coding.d, coding.m):
        raise ValueError(
            f"coding config expects a {(coding.d, coding.m)} block, got {a.shape}"
        )
    return a, b


def _guard_convergence(c: np.ndarray) -> None:
    # Cheap bound first; power iteration only when it is inconclusive.
    if matkernel.holder_bound(c) < 1.0:
        return
    _, power = matkernel.spectral_bound(c)
    if power >= 1.0:
        raise DivergenceError(power)


def mec_loss(z1, z2, cfg: MecLossConfig) -> LossResult:
    """Two-view coding-length loss with analytic gradients.

    value = -mu * log det(I + lam G) on the exact path, or the order-n
    polynomial truncation of the same quantity otherwise. The gradient of
    the polynomial path uses d Tr(C^k)/dC = k (C^(k-1))^T; the exact path
    uses d log det(I + C)/dC = ((I + C)^-1)^T via an LU solve.
    """
    coding = cfg.coding
    a, b = _check_pair(z1, z2, coding)
    form = cfg.resolved_form()
    c = coding.lam * gram(a, b, side=form)

    if cfg.exact:
        fac = lu_factor_ipc(c)
        if fac.sign != 1.0:
            raise matkernel.SingularMatrixError(
                "det(I + lam G) is not positive; embeddings violate the "
                "spectral-radius precondition"
            )
        value = -coding.mu * fac.logabsdet
        dc = -coding.mu * fac.solve(np.eye(c.shape[0])).T
    else:
        _guard_convergence(c)
        # Value terms and the gradient polynomial share the power ladder:
        # d/dC of sum_k coeff_k Tr(C^k) = (sum_k (-1)^(k+1) C^(k-1))^T.
        n = coding.order
        eye = np.eye(c.shape[0])
        poly = eye.copy()
        power = c
        value_acc = matkernel.log1p_series_coefficient(1) * np.trace(power)
        for k in range(2, n + 1):
            poly += ((-1.0) ** (k + 1)) * power  # (-1)^(k+1) C^(k-1) for this k
            power = power @ c
            value_acc += matkernel.log1p_series_coefficient(k) * np.trace(power)
        value = -coding.mu * float(value_acc)
        dc = -coding.mu * poly.T

    lam = coding.lam
    if form == "batch":
        grad_z1 = lam * (b @ dc.T)
        grad_z2 = lam * (a @ dc)
    else:
        grad_z1 = lam * (dc @ b)
        grad_z2 = lam * (dc.T @ a)

    if cfg.normalize_by_mu:
        mu = coding.mu
        return LossResult(value / mu, grad_z1 / mu, grad_z2 / mu)
    return LossResult(value, grad_z1, grad_z2)


def gradient_check(loss_fn, z1, z2, h: float = 1e-5, max_coords: int = _GRADCHECK_MAX_COORDS) -> float:
    """Max relative error between analytic gradients and central differences.

    loss_fn(z1, z2) must return a LossResult. Every coordinate of both
    blocks is perturbed by +-h when the blocks are small; otherwise a
    fixed-seed random subset of at least `max_coords` coordinates per
    block is used. The per-coordinate error is normalized by the larger
    of the two derivatives, floored at 1e-3 of the overall gradient
    magnitude so near-zero entries do not dominate.
    """
    a = np.array(as_columns(z1), copy=True)
    b = np.array(as_columns(z2), copy=True)
    base = loss_fn(a, b)

    scale = max(
        float(np.abs(base.grad_z1).max(initial=0.0)),
        float(np.abs(base.grad_z2).max(initial=0.0)),
        1e-12,
    )
    floor = 1e-3 * scale
    rng = np.random.default_rng(_GRADCHECK_SEED)

    worst = 0.0
    for block, grad in ((a, base.grad_z1), (b, base.grad_z2)):
        size = block.size
        if size <= max_coords:
            coords = np.arange(size)
        else:
            coords = rng.choice(size, size=max_coords, replace=False)
        for idx in coords:
            orig = block.flat[idx]
            block.flat[idx] = orig + h
            f_plus = loss_fn(a, b).value
            block.flat[idx] = orig - h
            f_minus = loss_fn(a, b).value
            block.flat[idx] = orig
            fd = (f_plus - f_minus) / (2.0 * h)
            an = grad.flat[idx]
            err = abs(fd - an) / max(abs(fd), abs(an), floor)
            worst = max(worst, err)
    return worst


def mec_gradcheck(z1, z2, cfg: MecLossConfig, h: float = 1e-5) -> float:
    """Finite-difference validation of mec_loss gradients; see gradient_check."""
    if not 1e-6 <= h <= 1e-4:
        raise ValueError(f"step must lie in [1e-6, 1e-4], got {h}")
    return gradient_check(lambda a, b: mec_loss(a, b, cfg), z1, z2, h=h)


def dual_gap(z1, z2, cfg: MecLossConfig) -> float:
    """Relative disagreement between the batch-side and feature-side exact
    evaluations: |v_batch - v_feature| / max(1, |v_batch|)."""
    coding = cfg.coding
    a, b = _check_pair(z1, z2, coding)
    values = {}
    for form in ("batch", "feature"):
        c = coding.lam * gram(a, b, side=form)
        values[form] = -coding.mu * matkernel.logdet_ipc(c)
    v_batch, v_feature = values["batch"], values["feature"]
    return abs(v_batch - v_feature) / max(1.0, abs(v_batch))


def lambda_schedule(base_lambda: float, step: int, warmup_steps: int) -> float:
    """Linear warm-up of the Gram scale: ramps from base/10 to base over
    warmup_steps, constant afterwards."""
    if warmup_steps < 0:
        raise ValueError(f"warmup_steps must be >= 0, got {warmup_steps}")
    if warmup_steps == 0 or step >= warmup_steps:
        return base_lambda
    frac = step / warmup_steps
    return base_lambda * (0.1 + 0.9 * frac)
