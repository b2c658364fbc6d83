"""Runtime/accuracy benchmark of the exact versus truncated log-determinant.

For each Gram size the harness draws one random unit-column batch, forms
the scaled Gram once, then times the exact LU path and each requested
truncation order on that same matrix. Wall-clock medians over a fixed
repetition count are reported, with warm-up repetitions excluded and the
numeric kernels pinned to a single thread for stable numbers.
"""

from __future__ import annotations

import contextlib
import statistics
import sys
import time
from dataclasses import dataclass

import numpy as np

from .matkernel import EmbeddingBatch, gram, logdet_ipc, trace_log_taylor

try:
    from threadpoolctl import threadpool_limits
except ImportError:  # pragma: no cover - present in the supported environment
    threadpool_limits = None

REL_ERR_GATE = 0.005  # order-4 truncation must stay below 0.5% relative error
CSV_HEADER = "dim,order,exact_ms,approx_ms,speedup,rel_err"

_UNDERFLOW_S = 1e-6


@dataclass(frozen=True)
class BenchConfig:
    """Benchmark axes. dims are the Gram sizes (number of columns drawn);
    embed_dim is the row dimension of the drawn batches."""

    dims: tuple[int, ...] = (256, 512, 1024, 2048)
    orders: tuple[int, ...] = (1, 2, 4)
    eps_d_sq: float = 0.02
    embed_dim: int = 2048
    repetitions: int = 3
    warmup_reps: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.repetitions < 3:
            raise ValueError(f"repetitions must be >= 3, got {self.repetitions}")
        if self.warmup_reps < 0:
            raise ValueError("warmup_reps must be >= 0")
        if list(self.dims) != sorted(self.dims) or len(self.dims) == 0:
            raise ValueError(f"dims must be non-empty and sorted ascending, got {self.dims}")
        if any(n < 1 for n in self.orders) or len(self.orders) == 0:
            raise ValueError(f"orders must be positive, got {self.orders}")
        if not self.eps_d_sq > 0:
            raise ValueError("eps_d_sq must be positive")


@dataclass(frozen=True)
class BenchRow:
    dim: int
    order: int
    exact_ms: float
    approx_ms: float
    speedup: float
    rel_err: float


def _single_thread():
    if threadpool_limits is not None:
        return threadpool_limits(limits=1)
    return contextlib.nullcontext()


def _median_time(fn, reps: int, warmup: int, log=None) -> tuple[float, float]:
    for _ in range(warmup):
        fn()
    times = []
    value = 0.0
    for _ in range(reps):
        t0 = time.perf_counter()
        value = fn()
        times.append(time.perf_counter() - t0)
    med = statistics.median(times)
    if med < _UNDERFLOW_S and log is not None:
        log(f"timing underflow: median {med * 1e9:.0f} ns is below one microsecond")
    return med, value


def run_bench(cfg: BenchConfig, log=None) -> list[BenchRow]:
    """Measure every (dim, order) cell; returns rows in dim-major order."""
    if log is None:
        log = lambda msg: print(msg, file=sys.stderr)
    rng = np.random.default_rng(cfg.seed)
    rows: list[BenchRow] = []
    with _single_thread():
        for m in cfg.dims:
            z = EmbeddingBatch.random(cfg.embed_dim, m, rng).columns
            lam = 1.0 / (m * cfg.eps_d_sq)
            c = lam * gram(z, z, side="batch")
            exact_s, exact_val = _median_time(lambda: logdet_ipc(c),
                                              cfg.repetitions, cfg.warmup_reps, log)
            for order in cfg.orders:
                approx_s, approx_val = _median_time(
                    lambda order=order: trace_log_taylor(c, order),
                    cfg.repetitions, cfg.warmup_reps, log)
                rel_err = abs(approx_val - exact_val) / abs(exact_val)
                rows.append(BenchRow(
                    dim=m, order=order,
                    exact_ms=exact_s * 1e3, approx_ms=approx_s * 1e3,
                    speedup=exact_s / approx_s if approx_s > 0 else float("inf"),
                    rel_err=rel_err,
                ))
                log(f"dim {m} order {order}: exact {exact_s * 1e3:.3f} ms, "
                    f"approx {approx_s * 1e3:.3f} ms, rel_err {rel_err:.3e}")
    return rows


def gate_failures(rows: list[BenchRow]) -> list[BenchRow]:
    """Rows that violate the order-4 accuracy gate."""
    return [r for r in rows if r.order == 4 and r.rel_err >= REL_ERR_GATE]


def format_csv(rows: list[BenchRow]) -> str:
    lines = [CSV_HEADER]
    for r in rows:
        lines.append(f"{r.dim},{r.order},{r.exact_ms:.6g},{r.approx_ms:.6g},"
                     f"{r.speedup:.6g},{r.rel_err:.6g}")
    return "\n".join(lines) + "\n"


PLOT_STUB = '''#!/usr/bin/env python3
"""Plot the benchmark CSV written next to this script."""
import csv
import sys

import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else {csv_path!r}
rows = list(csv.DictReader(open(path)))
dims = sorted({{int(r["dim"]) for r in rows}})
orders = sorted({{int(r["order"]) for r in rows}})

fig, (ax_t, ax_e) = plt.subplots(1, 2, figsize=(10, 4))
exact = {{int(r["dim"]): float(r["exact_ms"]) for r in rows}}
ax_t.plot(dims, [exact[d] for d in dims], "k-o", label="exact")
for n in orders:
    sub = {{int(r["dim"]): r for r in rows if int(r["order"]) == n}}
    ax_t.plot(dims, [float(sub[d]["approx_ms"]) for d in dims], "-o", label=f"order {{n}}")
    ax_e.plot(dims, [100 * float(sub[d]["rel_err"]) for d in dims], "-o", label=f"order {{n}}")
ax_t.set(xlabel="dim", ylabel="median ms", yscale="log", title="running time")
ax_e.set(xlabel="dim", ylabel="relative error (%)", yscale="log", title="approximation error")
for ax in (ax_t, ax_e):
    ax.legend()
fig.tight_layout()
fig.savefig(path.rsplit(".", 1)[0] + ".png", dpi=150)
print("wrote", path.rsplit(".", 1)[0] + ".png")
'''


def write_plot_stub(csv_path, stub_path) -> None:
    with open(stub_path, "w") as fh:
        fh.write(PLOT_STUB.format(csv_path=str(csv_path)))
