"""Identity and guard suites behind the `verify` subcommand.

Each suite returns CheckRow entries with the worst observed deviation and
its tolerance, so the CLI can print one table and the acceptance tests can
assert on the same numbers.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import partial

import numpy as np

from . import baselines, matkernel, objective
from .matkernel import CodingConfig, EmbeddingBatch, gram, spectral_bound
from .objective import MecLossConfig, gradient_check, mec_loss

DUAL_SHAPES = ((8, 8), (32, 8), (8, 32), (256, 64))
DUAL_SEEDS = 100
IDENTITY_SEEDS = 50
GRADCHECK_SEEDS = 50
HOLDER_TRIALS = 10_000
GUARD_EPS_D_SQ = 1.25  # lam * m = 0.8, comfortably inside the convergence region


@dataclass(frozen=True)
class CheckRow:
    name: str
    deviation: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.deviation < self.tolerance


def _random_pair(rng: np.random.Generator, d: int, m: int) -> tuple[np.ndarray, np.ndarray]:
    return (EmbeddingBatch.random(d, m, rng).columns,
            EmbeddingBatch.random(d, m, rng).columns)


def check_duality(seeds: int = DUAL_SEEDS) -> list[CheckRow]:
    """Batch-side and feature-side exact values agree to 1e-9 relative."""
    worst = 0.0
    for seed in range(seeds):
        rng = np.random.default_rng(seed)
        for d, m in DUAL_SHAPES:
            z1, z2 = _random_pair(rng, d, m)
            cfg = MecLossConfig(CodingConfig(m=m, d=d, eps_d_sq=GUARD_EPS_D_SQ),
                                exact=True, normalize_by_mu=False)
            worst = max(worst, objective.dual_gap(z1, z2, cfg))
    return [CheckRow("sylvester-duality", worst, 1e-9)]


def check_holder_guard(trials: int = HOLDER_TRIALS) -> list[CheckRow]:
    """With eps_d_sq = 1.25 and m = 4, the cheap norm bound stays at or
    below lam * m = 0.8, the iterative estimate stays below 1, and the
    iterative estimate never exceeds the cheap bound."""
    rng = np.random.default_rng(7)
    m, d = 4, 8
    coding = CodingConfig(m=m, d=d, eps_d_sq=GUARD_EPS_D_SQ)
    max_holder = 0.0
    max_power = 0.0
    max_gap = -np.inf
    for _ in range(trials):
        z1, z2 = _random_pair(rng, d, m)
        c = coding.lam * gram(z1, z2, side="batch")
        holder, power = spectral_bound(c)
        max_holder = max(max_holder, holder)
        max_power = max(max_power, power)
        max_gap = max(max_gap, power - holder)
    return [
        CheckRow("holder-bound-vs-lambda-m", max_holder, coding.lam_m + 1e-12),
        CheckRow("power-estimate-below-one", max_power, 1.0),
        CheckRow("power-le-holder-slack", max_gap, 1e-9),
    ]


def check_first_order_identity(seeds: int = IDENTITY_SEEDS) -> list[CheckRow]:
    """Order-1 truncation equals mu * lam times the negative-cosine loss."""
    worst = 0.0
    for seed in range(seeds):
        rng = np.random.default_rng(100 + seed)
        d, m = 8, 4
        z1, z2 = _random_pair(rng, d, m)
        coding = CodingConfig(m=m, d=d, eps_d_sq=GUARD_EPS_D_SQ, order=1)
        cfg = MecLossConfig(coding, form="batch", exact=False, normalize_by_mu=False)
        lhs = mec_loss(z1, z2, cfg)
        rhs = baselines.simsiam_loss(z1, z2)
        scale = coding.mu * coding.lam
        denom = max(1.0, abs(lhs.value))
        worst = max(worst, abs(lhs.value - scale * rhs.value) / denom)
        worst = max(worst, float(np.abs(lhs.grad_z1 - scale * rhs.grad_z1).max()) / denom)
        worst = max(worst, float(np.abs(lhs.grad_z2 - scale * rhs.grad_z2).max()) / denom)
    return [CheckRow("first-order-cosine-identity", worst, 1e-12)]


def second_order_decomposition(z1, z2, coding: CodingConfig) -> tuple[float, float]:
    """(decomposed value, order-2 feature-form value) for the identity check.

    The decomposition splits the order-2 truncation of the feature-side
    loss into diagonal terms mu * (-C_ii + C_ii^2 / 2) and paired
    off-diagonal products (mu / 2) * C_ij C_ji of the scaled feature Gram.
    For z1 = z2 the Gram is symmetric and C_ij C_ji reduces to C_ij^2.
    """
    c = coding.lam * gram(matkernel.as_columns(z1), matkernel.as_columns(z2), side="feature")
    diag = np.diag(c)
    decomposed = coding.mu * float(np.sum(-diag + 0.5 * diag ** 2))
    decomposed += 0.5 * coding.mu * float(np.sum(c * c.T) - np.sum(diag ** 2))
    cfg = MecLossConfig(coding, form="feature", exact=False, normalize_by_mu=False)
    return decomposed, mec_loss(z1, z2, cfg).value


def check_second_order_identity(seeds: int = IDENTITY_SEEDS) -> list[CheckRow]:
    worst_general = 0.0
    worst_shared = 0.0
    for seed in range(seeds):
        rng = np.random.default_rng(200 + seed)
        d, m = 8, 4
        coding = CodingConfig(m=m, d=d, eps_d_sq=GUARD_EPS_D_SQ, order=2)
        z1, z2 = _random_pair(rng, d, m)
        lhs, rhs = second_order_decomposition(z1, z2, coding)
        worst_general = max(worst_general, abs(lhs - rhs) / max(1.0, abs(rhs)))
        # Shared-view case: the Gram is symmetric, squared off-diagonals apply.
        lhs_s, rhs_s = second_order_decomposition(z1, z1, coding)
        worst_shared = max(worst_shared, abs(lhs_s - rhs_s) / max(1.0, abs(rhs_s)))
    return [
        CheckRow("second-order-decomposition", worst_general, 1e-10),
        CheckRow("second-order-shared-view", worst_shared, 1e-10),
    ]


def _gradcheck_cases() -> list[tuple[str, object]]:
    cases: list[tuple[str, object]] = []
    d, m = 8, 4
    for form in ("batch", "feature"):
        for label, exact, order in (("exact", True, 4), ("n1", False, 1),
                                    ("n2", False, 2), ("n4", False, 4)):
            coding = CodingConfig(m=m, d=d, eps_d_sq=GUARD_EPS_D_SQ, order=order)
            cfg = MecLossConfig(coding, form=form, exact=exact, normalize_by_mu=False)
            cases.append((f"mec-{label}-{form}", partial(_mec_case, cfg)))
    cases.append(("simsiam", lambda a, b: baselines.simsiam_loss(a, b)))
    l2 = baselines.BaselineConfig(kind="barlow")
    bn = baselines.BaselineConfig(kind="barlow", normalization="batchnorm")
    cases.append(("barlow-l2", partial(_barlow_case, l2)))
    cases.append(("barlow-batchnorm", partial(_barlow_case, bn)))
    nce = baselines.BaselineConfig(kind="infonce", temperature=0.5)
    cases.append(("infonce", partial(_infonce_case, nce)))
    comp = baselines.CompositeConfig(
        base=baselines.BaselineConfig(kind="simsiam"),
        mec=MecLossConfig(CodingConfig(m=m, d=d, eps_d_sq=GUARD_EPS_D_SQ, order=4),
                          form="batch", normalize_by_mu=True),
        reg_weight=0.7,
    )
    cases.append(("composite", partial(_composite_case, comp)))
    return cases


def _mec_case(cfg, a, b):
    return mec_loss(a, b, cfg)


def _barlow_case(cfg, a, b):
    return baselines.barlow_loss(a, b, cfg)


def _infonce_case(cfg, a, b):
    return baselines.infonce_loss(a, b, cfg)


def _composite_case(cfg, a, b):
    return baselines.composite_loss(a, b, cfg)


def check_gradients(seeds: int = GRADCHECK_SEEDS) -> list[CheckRow]:
    """Central-difference validation of every loss gradient at h = 1e-5."""
    rows = []
    for name, fn in _gradcheck_cases():
        worst = 0.0
        for seed in range(seeds):
            rng = np.random.default_rng(300 + seed)
            z1, z2 = _random_pair(rng, 8, 4)
            worst = max(worst, gradient_check(fn, z1, z2, h=1e-5))
        rows.append(CheckRow(f"gradcheck-{name}", worst, 1e-4))
    return rows


def run_all(gradcheck_seeds: int = GRADCHECK_SEEDS,
            identity_seeds: int = IDENTITY_SEEDS,
            dual_seeds: int = DUAL_SEEDS,
            holder_trials: int = HOLDER_TRIALS) -> list[CheckRow]:
    rows = []
    rows += check_duality(dual_seeds)
    rows += check_holder_guard(holder_trials)
    rows += check_first_order_identity(identity_seeds)
    rows += check_second_order_identity(identity_seeds)
    rows += check_gradients(gradcheck_seeds)
    return rows


def format_table(rows: list[CheckRow]) -> str:
    name_w = max(len(r.name) for r in rows)
    lines = [f"{'identity':<{name_w}}  {'max deviation':>14}  {'tolerance':>10}  result"]
    for r in rows:
        status = "pass" if r.passed else "FAIL"
        lines.append(f"{r.name:<{name_w}}  {r.deviation:>14.3e}  {r.tolerance:>10.1e}  {status}")
    return "\n".join(lines)
