"""Desk-scale Siamese training loop with collapse diagnostics.

One online MLP encoder produces embeddings of two augmented views per
sample. In the symmetric mode both views share the network and gradients
flow through both; in the asymmetric mode a two-layer predictor is
appended to the online branch, the partner view comes from a stop-gradient
target network (an EMA copy when the momentum is positive, the online
weights otherwise), and the loss is symmetrized as
0.5 * [L(p1, t2) + L(p2, t1)].

Optimization is plain SGD with momentum, weight decay, and a cosine
learning-rate schedule with linear warm-up. Runs are deterministic for a
fixed seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import baselines, encoder, matkernel, objective
from .data import DatasetHandle
from .encoder import EncoderArch, EncoderParams
from .matkernel import CodingConfig

LOSSES = ("mec", "simsiam", "barlow", "infonce", "composite")

METRICS_HEADER = ("epoch", "loss", "coding_length", "effective_rank", "knn_acc", "lr", "ema")

_EVAL_CAP = 4096  # diagnostics evaluate at most this many embeddings


class TrainingDiverged(ArithmeticError):
    """Loss became non-finite; carries the offending epoch and step."""

    def __init__(self, epoch: int, step: int, value: float):
        self.epoch = epoch
        self.step = step
        super().__init__(f"non-finite loss {value} at epoch {epoch}, step {step}")


@dataclass(frozen=True)
class AugmentPolicy:
    """Vector-data augmentation: additive Gaussian noise, independent
    coordinate masking, then a global scale jitter."""

    sigma: float = 0.1
    p_mask: float = 0.1
    jitter: tuple[float, float] = (0.8, 1.2)

    def __post_init__(self):
        if self.sigma < 0 or not 0.0 <= self.p_mask <= 1.0:
            raise ValueError("sigma must be >= 0 and p_mask within [0, 1]")
        if self.jitter[0] > self.jitter[1]:
            raise ValueError(f"jitter range is inverted: {self.jitter}")


@dataclass(frozen=True)
class EmaSchedule:
    """Momentum rises from start to end along a half-cosine over the run."""

    start: float = 0.996
    end: float = 1.0

    def at(self, step: int, total_steps: int) -> float:
        if total_steps <= 0:
            return self.end
        t = min(max(step / total_steps, 0.0), 1.0)
        return self.end - (self.end - self.start) * 0.5 * (1.0 + math.cos(math.pi * t))


@dataclass(frozen=True)
class TrainConfig:
    """Everything a training run needs besides the dataset.

    The learning rate follows the linear scaling rule
    (base_lr * batch_size / 256). ema_momentum = 0 means the target branch
    shares the online weights directly; symmetric = True drops the
    predictor and the stop-gradient entirely.
    """

    loss: str = "mec"
    batch_size: int = 128
    embed_dim: int = 64
    feat_dim: int = 128
    hidden_dims: tuple[int, ...] = (256, 256)
    proj_hidden: int = 256
    pred_hidden: int = 32
    epochs: int = 200
    base_lr: float = 0.5
    warmup_epochs: int | None = None  # None -> 10% of epochs
    sgd_momentum: float = 0.9
    weight_decay: float = 1e-5
    ema_momentum: float = 0.996
    symmetric: bool = False
    seed: int = 0
    # coding-length loss knobs
    eps_d_sq: float = 0.06
    order: int = 4
    mec_form: str = "auto"
    mec_exact: bool = False
    normalize_by_mu: bool = True
    lambda_warmup: bool = True
    # baseline / composite knobs
    baseline: baselines.BaselineConfig = field(default_factory=baselines.BaselineConfig)
    reg_weight: float = 1.0
    augment: AugmentPolicy = field(default_factory=AugmentPolicy)
    knn_k: int = 20

    def __post_init__(self):
        if self.loss not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}, got {self.loss!r}")
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if not 0.0 <= self.ema_momentum < 1.0:
            raise ValueError(f"ema_momentum must lie in [0, 1), got {self.ema_momentum}")
        if self.warmup_epochs is not None and self.warmup_epochs < 0:
            raise ValueError("warmup_epochs must be >= 0")

    @property
    def scaled_lr(self) -> float:
        return self.base_lr * self.batch_size / 256.0

    def resolved_warmup_epochs(self) -> int:
        if self.warmup_epochs is not None:
            return self.warmup_epochs
        return max(1, self.epochs // 10)

    def arch(self, input_dim: int) -> EncoderArch:
        backbone = (input_dim, *self.hidden_dims, self.feat_dim)
        projector = (self.feat_dim, self.proj_hidden, self.embed_dim)
        predictor = None if self.symmetric else (self.embed_dim, self.pred_hidden, self.embed_dim)
        return EncoderArch(backbone, projector, predictor)

    def coding(self, m: int, eps_override: float | None = None) -> CodingConfig:
        eps = self.eps_d_sq if eps_override is None else eps_override
        return CodingConfig(m=m, d=self.embed_dim, eps_d_sq=eps, order=self.order)


@dataclass
class CollapseReport:
    """Spread diagnostics of an embedding set.

    effective_rank is the exponentiated entropy of the normalized
    singular-value distribution; coding_length is the exact coding-length
    value of the set under the given constants.
    """

    effective_rank: float
    mean_pairwise_cos: float
    coding_length: float


def augment(x, rng: np.random.Generator, policy: AugmentPolicy) -> np.ndarray:
    """Augment one sample vector or a (n, dim) row block.

    All three random draws happen regardless of the policy values so the
    generator advances identically for any policy, keeping downstream
    draws aligned.
    """
    arr = np.asarray(x, dtype=np.float64)
    single = arr.ndim == 1
    rows = arr[None, :] if single else arr
    noise = rng.standard_normal(rows.shape) * policy.sigma
    keep = rng.random(rows.shape) >= policy.p_mask
    jitter = rng.uniform(policy.jitter[0], policy.jitter[1], size=(rows.shape[0], 1))
    out = (rows + noise) * keep * jitter
    return out[0] if single else out


def collapse_report(embeddings, cfg: CodingConfig) -> CollapseReport:
    """Diagnostics over a d x m unit-column embedding block."""
    z = matkernel.as_columns(embeddings)
    d, m = z.shape
    if m < 2:
        raise ValueError(f"need at least 2 embeddings, got {m}")

    sv = np.linalg.svd(z, compute_uv=False)
    p = sv / sv.sum()
    p = p[p > 0]
    effective_rank = float(np.exp(-(p * np.log(p)).sum()))

    g = z.T @ z
    mean_cos = float((g.sum() - np.trace(g)) / (m * (m - 1)))

    # Both Gram sides give the same coding length; evaluate the smaller one.
    side = "batch" if m <= d else "feature"
    c = cfg.lam * matkernel.gram(z, z, side=side)
    coding_length = cfg.mu * matkernel.logdet_ipc(c)
    return CollapseReport(effective_rank, mean_cos, coding_length)


def knn_probe(params: EncoderParams, train_split, eval_split, k: int) -> float:
    """Cosine-similarity kNN accuracy on backbone features.

    Majority vote over the k nearest training features; vote ties break by
    the larger summed similarity (then by smaller label, for determinism).
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    train_x, train_y = train_split
    eval_x, eval_y = eval_split
    if len(train_x) == 0 or len(eval_x) == 0:
        raise ValueError("knn_probe needs non-empty train and eval splits")

    def unit_rows(a):
        norms = np.linalg.norm(a, axis=1, keepdims=True)
        return a / np.maximum(norms, 1e-12)

    f_train = unit_rows(encoder.backbone_features(params, np.asarray(train_x, float)))
    f_eval = unit_rows(encoder.backbone_features(params, np.asarray(eval_x, float)))
    sims = f_eval @ f_train.T
    k = min(k, f_train.shape[0])
    idx = np.argpartition(-sims, kth=k - 1, axis=1)[:, :k]

    train_y = np.asarray(train_y)
    hits = 0
    for row, (neighbors, y_true) in enumerate(zip(idx, eval_y)):
        labels = train_y[neighbors]
        weights = sims[row, neighbors]
        counts: dict[int, int] = {}
        sums: dict[int, float] = {}
        for lab, w in zip(labels, weights):
            lab = int(lab)
            counts[lab] = counts.get(lab, 0) + 1
            sums[lab] = sums.get(lab, 0.0) + float(w)
        best = min(counts, key=lambda lab: (-counts[lab], -sums[lab], lab))
        hits += int(best == int(y_true))
    return hits / len(eval_y)


def init_encoder(cfg: TrainConfig, input_dim: int) -> EncoderParams:
    """The deterministic initialization train() starts from for cfg.seed."""
    rng = np.random.default_rng(cfg.seed)
    return EncoderParams.init(cfg.arch(input_dim), rng)


def _loss_fn(cfg: TrainConfig, coding: CodingConfig):
    mec_cfg = objective.MecLossConfig(
        coding=coding, form=cfg.mec_form, exact=cfg.mec_exact,
        normalize_by_mu=cfg.normalize_by_mu,
    )
    if cfg.loss == "mec":
        return lambda a, b: objective.mec_loss(a, b, mec_cfg)
    if cfg.loss == "composite":
        comp = baselines.CompositeConfig(base=cfg.baseline, mec=mec_cfg,
                                         reg_weight=cfg.reg_weight)
        return lambda a, b: baselines.composite_loss(a, b, comp)
    return lambda a, b: baselines.baseline_loss(a, b, replace(cfg.baseline, kind=cfg.loss))


def _cosine_lr(step: int, total: int, base: float, warmup: int) -> float:
    if warmup > 0 and step < warmup:
        return base * (step + 1) / warmup
    span = max(1, total - warmup)
    t = (step - warmup) / span
    return 0.5 * base * (1.0 + math.cos(math.pi * t))


def evaluate(params: EncoderParams, cfg: TrainConfig, data: DatasetHandle
             ) -> tuple[CollapseReport, float]:
    """Collapse diagnostics on the eval-split embeddings plus kNN accuracy."""
    eval_x, eval_y = data.eval
    eval_x, eval_y = eval_x[:_EVAL_CAP], eval_y[:_EVAL_CAP]
    z = encoder.embed_samples(params, eval_x)
    coding = CodingConfig(m=z.shape[1], d=cfg.embed_dim,
                          eps_d_sq=cfg.eps_d_sq, order=cfg.order)
    report = collapse_report(z, coding)
    acc = knn_probe(params, data.train, (eval_x, eval_y), cfg.knn_k)
    return report, acc


def train(cfg: TrainConfig, data: DatasetHandle) -> tuple[EncoderParams, list[dict]]:
    """Run the Siamese loop; returns final online parameters and the
    per-epoch metrics log (dict rows matching METRICS_HEADER)."""
    train_x, _ = data.train
    if len(train_x) == 0:
        raise ValueError("dataset has an empty training split")

    rng = np.random.default_rng(cfg.seed)
    online = EncoderParams.init(cfg.arch(data.input_dim), rng)
    asymmetric = not cfg.symmetric
    # ema_momentum = 0 is direct weight sharing: the online net serves as
    # its own (stop-gradient) target, so no copy is kept.
    use_ema = asymmetric and cfg.ema_momentum > 0
    target = online.copy() if use_ema else None
    ema = EmaSchedule(start=cfg.ema_momentum) if use_ema else None

    m = min(cfg.batch_size, len(train_x))
    steps_per_epoch = max(1, len(train_x) // m)
    total_steps = cfg.epochs * steps_per_epoch
    warmup_steps = cfg.resolved_warmup_epochs() * steps_per_epoch
    base_lambda = 1.0 / (m * cfg.eps_d_sq)

    velocity = [np.zeros_like(t) for t in online.tensors]
    log: list[dict] = []
    lr = 0.0
    momentum_now = cfg.ema_momentum
    global_step = 0

    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(len(train_x))
        epoch_loss = 0.0
        for s in range(steps_per_epoch):
            batch = train_x[order[s * m:(s + 1) * m]]
            v1 = augment(batch, rng, cfg.augment).T  # column blocks
            v2 = augment(batch, rng, cfg.augment).T

            if cfg.lambda_warmup and cfg.loss in ("mec", "composite"):
                lam = objective.lambda_schedule(base_lambda, global_step, warmup_steps)
                coding = cfg.coding(m, eps_override=1.0 / (m * lam))
            else:
                coding = cfg.coding(m)
            loss_fn = _loss_fn(cfg, coding)

            if asymmetric:
                src = target if target is not None else online
                t1 = encoder.embed_samples(src, v1.T)
                t2 = encoder.embed_samples(src, v2.T)
                p1, c1 = encoder.encode_branch(online, v1, use_predictor=True)
                p2, c2 = encoder.encode_branch(online, v2, use_predictor=True)
                r1 = loss_fn(p1, t2)
                r2 = loss_fn(p2, t1)
                value = 0.5 * (r1.value + r2.value)
                g1 = encoder.backprop_branch(online, c1, 0.5 * r1.grad_z1)
                g2 = encoder.backprop_branch(online, c2, 0.5 * r2.grad_z1)
                grads = [a + b for a, b in zip(g1, g2)]
            else:
                z1, c1 = encoder.encode_branch(online, v1, use_predictor=False)
                z2, c2 = encoder.encode_branch(online, v2, use_predictor=False)
                res = loss_fn(z1, z2)
                value = res.value
                g1 = encoder.backprop_branch(online, c1, res.grad_z1)
                g2 = encoder.backprop_branch(online, c2, res.grad_z2)
                grads = [a + b for a, b in zip(g1, g2)]

            if not math.isfinite(value):
                raise TrainingDiverged(epoch, s, value)
            epoch_loss += value

            lr = _cosine_lr(global_step, total_steps, cfg.scaled_lr, warmup_steps)
            for w, g, v in zip(online.tensors, grads, velocity):
                v *= cfg.sgd_momentum
                v += g + cfg.weight_decay * w
                w -= lr * v

            if ema is not None:
                momentum_now = ema.at(global_step, total_steps)
                for t, o in zip(target.tensors, online.tensors):
                    t *= momentum_now
                    t += (1.0 - momentum_now) * o
            else:
                momentum_now = 0.0
            global_step += 1

        report, acc = evaluate(online, cfg, data)
        log.append({
            "epoch": epoch,
            "loss": epoch_loss / steps_per_epoch,
            "coding_length": report.coding_length,
            "effective_rank": report.effective_rank,
            "knn_acc": acc,
            "lr": lr,
            "ema": momentum_now if asymmetric else 0.0,
        })
    return online, log


def write_metrics_csv(log: list[dict], path) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(METRICS_HEADER) + "\n")
        for row in log:
            fh.write(",".join(_format_metric(row[k]) for k in METRICS_HEADER) + "\n")


def _format_metric(v) -> str:
    if isinstance(v, int):
        return str(v)
    return f"{v:.10g}"
