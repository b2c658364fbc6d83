"""Flat `key = value` configuration files.

Lines hold one namespaced key each (`train.batch_size = 128`); `#` starts
a comment. Every key must appear in the documented registry below;
unknown or duplicate keys are hard errors, never warnings.
"""

from __future__ import annotations

from pathlib import Path


class ConfigError(ValueError):
    """Bad config syntax, unknown key, or unparsable value."""


def _parse_bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_int_list(s: str) -> tuple[int, ...]:
    return tuple(int(part.strip()) for part in s.split(",") if part.strip())


def _choice(*options: str):
    def parse(s: str) -> str:
        if s not in options:
            raise ValueError(f"must be one of {options}, got {s!r}")
        return s
    return parse


# key -> value parser; this is the complete documented key set.
KNOWN_KEYS: dict[str, object] = {
    "train.loss": _choice("mec", "simsiam", "barlow", "infonce", "composite"),
    "train.batch_size": int,
    "train.embed_dim": int,
    "train.feat_dim": int,
    "train.hidden_dims": _parse_int_list,
    "train.proj_hidden": int,
    "train.pred_hidden": int,
    "train.epochs": int,
    "train.base_lr": float,
    "train.warmup_epochs": int,
    "train.sgd_momentum": float,
    "train.weight_decay": float,
    "train.ema_momentum": float,
    "train.symmetric": _parse_bool,
    "train.seed": int,
    "train.knn_k": int,
    "mec.eps_d_sq": float,
    "mec.order": int,
    "mec.form": _choice("batch", "feature", "auto"),
    "mec.exact": _parse_bool,
    "mec.normalize_by_mu": _parse_bool,
    "mec.lambda_warmup": _parse_bool,
    "baseline.kind": _choice("simsiam", "barlow", "infonce"),
    "baseline.temperature": float,
    "baseline.lambda_barlow": float,
    "baseline.normalization": _choice("l2", "batchnorm"),
    "composite.reg_weight": float,
    "augment.sigma": float,
    "augment.p_mask": float,
    "augment.jitter_lo": float,
    "augment.jitter_hi": float,
    "data.kind": _choice("synthetic", "csv", "cifar10"),
    "data.path": str,
    "data.num_clusters": int,
    "data.input_dim": int,
    "data.per_cluster": int,
    "data.center_scale": float,
    "data.sigma": float,
    "data.seed": int,
    "bench.dims": _parse_int_list,
    "bench.orders": _parse_int_list,
    "bench.eps_d_sq": float,
    "bench.embed_dim": int,
    "bench.repetitions": int,
    "bench.warmup_reps": int,
    "bench.seed": int,
    "probe.k": int,
}


def parse_config_text(text: str, source: str = "<config>") -> dict[str, object]:
    """Parse config text into {key: typed value}; strict about everything."""
    values: dict[str, object] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}: line {lineno}: expected 'key = value', got {raw!r}")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in KNOWN_KEYS:
            raise ConfigError(f"{source}: line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"{source}: line {lineno}: duplicate key {key!r}")
        parser = KNOWN_KEYS[key]
        try:
            values[key] = parser(value)  # type: ignore[operator]
        except ValueError as exc:
            raise ConfigError(f"{source}: line {lineno}: bad value for {key}: {exc}") from None
    return values


def load_config(path) -> dict[str, object]:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(), source=str(path))
