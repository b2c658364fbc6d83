"""Reference self-supervised objectives with analytic gradients.

Three classic Siamese losses (negative cosine similarity, cross-correlation
redundancy reduction, and temperature-scaled in-batch contrastive
cross-entropy) plus a composite mode that adds the coding-length loss as a
regularizer on top of any of them. Low-order truncations of the
coding-length loss coincide with these objectives, which the test suite
checks as exact identities.

All losses consume d x m column blocks (or EmbeddingBatch) and return a
LossResult, mirroring the main objective.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .matkernel import as_columns
from .objective import LossResult, MecLossConfig, mec_loss

BASELINE_KINDS = ("simsiam", "barlow", "infonce")
BARLOW_NORMALIZATIONS = ("l2", "batchnorm")

_BN_EPS = 1e-12


@dataclass(frozen=True)
class BaselineConfig:
    """Which reference objective to run and its scalar knobs.

    temperature applies to the contrastive loss only; lambda_barlow weighs
    the off-diagonal redundancy term; normalization selects how the
    cross-correlation matrix is built (per-sample l2, matching the main
    pipeline, or per-feature batch standardization).
    """

    kind: str = "simsiam"
    temperature: float = 0.5
    lambda_barlow: float = 5e-3
    normalization: str = "l2"

    def __post_init__(self):
        if self.kind not in BASELINE_KINDS:
            raise ValueError(f"kind must be one of {BASELINE_KINDS}, got {self.kind!r}")
        if not self.temperature > 0:
            raise ValueError(f"temperature must be positive, got {self.temperature}")
        if self.lambda_barlow < 0:
            raise ValueError(f"lambda_barlow must be >= 0, got {self.lambda_barlow}")
        if self.normalization not in BARLOW_NORMALIZATIONS:
            raise ValueError(
                f"normalization must be one of {BARLOW_NORMALIZATIONS}, "
                f"got {self.normalization!r}"
            )


@dataclass(frozen=True)
class CompositeConfig:
    """Weighted sum: base loss + reg_weight * coding-length loss."""

    base: BaselineConfig
    mec: MecLossConfig
    reg_weight: float = 1.0

    def __post_init__(self):
        if self.reg_weight < 0:
            raise ValueError(f"reg_weight must be >= 0, got {self.reg_weight}")


def _pair(z1, z2) -> tuple[np.ndarray, np.ndarray]:
    a = as_columns(z1)
    b = as_columns(z2)
    if a.shape != b.shape:
        raise ValueError(f"view batches must share a shape, got {a.shape} and {b.shape}")
    return a, b


def simsiam_loss(z1, z2) -> LossResult:
    """Negative sum of per-pair cosine similarities.

    For unit columns the pairwise dot product is the cosine, so the value
    is -sum_i z1_i . z2_i and each gradient is the partner block negated.
    """
    a, b = _pair(z1, z2)
    value = -float(np.sum(a * b))
    return LossResult(value, -b.copy(), -a.copy())


def _standardize_rows(z: np.ndarray) -> np.ndarray:
    mean = z.mean(axis=1, keepdims=True)
    var = z.var(axis=1, keepdims=True)
    return (z - mean) / np.sqrt(var + _BN_EPS)


def _standardize_rows_backward(z: np.ndarray, dzh: np.ndarray) -> np.ndarray:
    mean = z.mean(axis=1, keepdims=True)
    var = z.var(axis=1, keepdims=True)
    s = np.sqrt(var + _BN_EPS)
    zh = (z - mean) / s
    return (dzh - dzh.mean(axis=1, keepdims=True)
            - zh * (dzh * zh).mean(axis=1, keepdims=True)) / s


def barlow_loss(z1, z2, cfg: BaselineConfig) -> LossResult:
    """Cross-correlation redundancy reduction.

    value = sum_i (1 - C_ii)^2 + lambda_barlow * sum_{i != j} C_ij^2 on the
    d x d cross-correlation C. With l2 normalization C = Z1 Z2^T on the
    (already per-sample normalized) blocks; with batchnorm each feature row
    is standardized across the batch first and C is divided by m.
    """
    a, b = _pair(z1, z2)
    m = a.shape[1]
    if cfg.normalization == "batchnorm":
        ah, bh = _standardize_rows(a), _standardize_rows(b)
        corr = (ah @ bh.T) / m
    else:
        corr = a @ b.T

    diag = np.diag(corr)
    value = float(np.sum((1.0 - diag) ** 2))
    value += cfg.lambda_barlow * float(np.sum(corr ** 2) - np.sum(diag ** 2))

    dcorr = 2.0 * cfg.lambda_barlow * corr
    np.fill_diagonal(dcorr, -2.0 * (1.0 - diag))

    if cfg.normalization == "batchnorm":
        grad_z1 = _standardize_rows_backward(a, (dcorr @ bh) / m)
        grad_z2 = _standardize_rows_backward(b, (dcorr.T @ ah) / m)
    else:
        grad_z1 = dcorr @ b
        grad_z2 = dcorr.T @ a
    return LossResult(value, grad_z1, grad_z2)


def infonce_loss(z1, z2, cfg: BaselineConfig) -> LossResult:
    """Symmetrized in-batch contrastive cross-entropy.

    With similarity matrix S = Z1^T Z2 at temperature tau, one direction
    treats each row as a softmax over candidates of the second view, the
    other direction does the same column-wise; the value is the average of
    the two directional sums. Negatives come from the batch only.
    """
    a, b = _pair(z1, z2)
    tau = cfg.temperature
    s = (a.T @ b) / tau
    m = s.shape[0]

    row_max = s.max(axis=1, keepdims=True)
    row_exp = np.exp(s - row_max)
    row_lse = row_max[:, 0] + np.log(row_exp.sum(axis=1))
    col_max = s.max(axis=0, keepdims=True)
    col_exp = np.exp(s - col_max)
    col_lse = col_max[0] + np.log(col_exp.sum(axis=0))

    diag = np.diag(s)
    value = 0.5 * float((row_lse - diag).sum() + (col_lse - diag).sum())

    p_row = row_exp / row_exp.sum(axis=1, keepdims=True)
    p_col = col_exp / col_exp.sum(axis=0, keepdims=True)
    eye = np.eye(m)
    ds = 0.5 * ((p_row - eye) + (p_col - eye)) / tau
    return LossResult(value, b @ ds.T, a @ ds)


def baseline_loss(z1, z2, cfg: BaselineConfig) -> LossResult:
    if cfg.kind == "simsiam":
        return simsiam_loss(z1, z2)
    if cfg.kind == "barlow":
        return barlow_loss(z1, z2, cfg)
    return infonce_loss(z1, z2, cfg)


def composite_loss(z1, z2, cfg: CompositeConfig) -> LossResult:
    """Base objective plus reg_weight times the coding-length loss."""
    base = baseline_loss(z1, z2, cfg.base)
    if cfg.reg_weight == 0.0:
        return base
    reg = mec_loss(z1, z2, cfg.mec)
    w = cfg.reg_weight
    return LossResult(
        base.value + w * reg.value,
        base.grad_z1 + w * reg.grad_z1,
        base.grad_z2 + w * reg.grad_z2,
    )
