"""Small MLP encoder with hand-rolled backward passes.

The encoder is a backbone MLP followed by a projector MLP and an optional
two-layer predictor on the online branch. Every linear layer except the
last of each stack is followed by an affine-free per-sample normalization
and a rectifier. Activations flow as column blocks (features x batch),
matching the embedding convention of the loss modules.

Parameters serialize to a flat binary file: magic `MEC1`, then for each
tensor a 32-bit little-endian rank, the 32-bit little-endian dims, and the
64-bit little-endian values. Tensors appear in declaration order: backbone
weight/bias pairs, projector pairs, then predictor pairs when present.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

MAGIC = b"MEC1"

_NORM_EPS = 1e-6


class ParamsFormatError(ValueError):
    """Parameter file does not follow the `MEC1` layout or does not match
    the requested architecture."""


@dataclass(frozen=True)
class EncoderArch:
    """Layer widths of the three MLP stacks.

    backbone: input_dim -> hidden... -> feat_dim
    projector: feat_dim -> proj_hidden -> embed_dim
    predictor: embed_dim -> pred_hidden -> embed_dim, or None
    """

    backbone: tuple[int, ...]
    projector: tuple[int, ...]
    predictor: tuple[int, ...] | None = None

    def __post_init__(self):
        for name, dims in (("backbone", self.backbone), ("projector", self.projector)):
            if len(dims) < 2 or any(d < 1 for d in dims):
                raise ValueError(f"{name} needs at least two positive widths, got {dims}")
        if self.backbone[-1] != self.projector[0]:
            raise ValueError(
                f"projector input {self.projector[0]} must match backbone output "
                f"{self.backbone[-1]}"
            )
        if self.predictor is not None:
            p = self.predictor
            if len(p) < 2 or any(d < 1 for d in p):
                raise ValueError(f"predictor needs at least two positive widths, got {p}")
            if p[0] != self.projector[-1] or p[-1] != self.projector[-1]:
                raise ValueError(
                    f"predictor must map embed dim {self.projector[-1]} to itself, got {p}"
                )

    @property
    def input_dim(self) -> int:
        return self.backbone[0]

    @property
    def feat_dim(self) -> int:
        return self.backbone[-1]

    @property
    def embed_dim(self) -> int:
        return self.projector[-1]

    def stacks(self) -> list[tuple[int, ...]]:
        out = [self.backbone, self.projector]
        if self.predictor is not None:
            out.append(self.predictor)
        return out


def _init_stack(dims: tuple[int, ...], rng: np.random.Generator) -> list[np.ndarray]:
    # He initialization for rectifier stacks; biases start at zero.
    tensors = []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        w = rng.standard_normal((fan_out, fan_in)) * np.sqrt(2.0 / fan_in)
        tensors.append(w)
        tensors.append(np.zeros(fan_out))
    return tensors


class EncoderParams:
    """Flat list of weight/bias tensors for an EncoderArch."""

    def __init__(self, arch: EncoderArch, tensors: list[np.ndarray]):
        expected = sum(2 * (len(dims) - 1) for dims in arch.stacks())
        if len(tensors) != expected:
            raise ValueError(f"expected {expected} tensors for {arch}, got {len(tensors)}")
        i = 0
        for dims in arch.stacks():
            for fan_in, fan_out in zip(dims[:-1], dims[1:]):
                w, b = tensors[i], tensors[i + 1]
                if w.shape != (fan_out, fan_in) or b.shape != (fan_out,):
                    raise ValueError(
                        f"tensor {i} has shape {w.shape}/{b.shape}, expected "
                        f"({fan_out}, {fan_in})/({fan_out},)"
                    )
                i += 2
        if any(not np.all(np.isfinite(t)) for t in tensors):
            raise ValueError("encoder parameters contain non-finite entries")
        self.arch = arch
        self.tensors = [np.asarray(t, dtype=np.float64) for t in tensors]

    @classmethod
    def init(cls, arch: EncoderArch, rng: np.random.Generator) -> "EncoderParams":
        tensors = []
        for dims in arch.stacks():
            tensors.extend(_init_stack(dims, rng))
        return cls(arch, tensors)

    def copy(self) -> "EncoderParams":
        return EncoderParams(self.arch, [t.copy() for t in self.tensors])

    def _stack_slices(self) -> list[slice]:
        out = []
        start = 0
        for dims in self.arch.stacks():
            n = 2 * (len(dims) - 1)
            out.append(slice(start, start + n))
            start += n
        return out

    def stack_tensors(self, which: str) -> list[np.ndarray]:
        names = ["backbone", "projector"] + (["predictor"] if self.arch.predictor else [])
        slices = self._stack_slices()
        return self.tensors[slices[names.index(which)]]

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(MAGIC)
            for t in self.tensors:
                fh.write(struct.pack("<I", t.ndim))
                for dim in t.shape:
                    fh.write(struct.pack("<I", dim))
                fh.write(np.ascontiguousarray(t, dtype="<f8").tobytes())


def read_tensor_file(path) -> list[np.ndarray]:
    """Parse a `MEC1` file into its raw tensor list."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise ParamsFormatError(f"{path}: bad magic {blob[:4]!r}, expected {MAGIC!r}")
    tensors = []
    off = 4
    while off < len(blob):
        if off + 4 > len(blob):
            raise ParamsFormatError(f"{path}: truncated tensor header at byte {off}")
        (rank,) = struct.unpack_from("<I", blob, off)
        off += 4
        if rank > 8:
            raise ParamsFormatError(f"{path}: implausible tensor rank {rank}")
        if off + 4 * rank > len(blob):
            raise ParamsFormatError(f"{path}: truncated dims at byte {off}")
        shape = struct.unpack_from(f"<{rank}I", blob, off)
        off += 4 * rank
        count = int(np.prod(shape, dtype=np.int64)) if rank else 1
        nbytes = 8 * count
        if off + nbytes > len(blob):
            raise ParamsFormatError(f"{path}: truncated tensor payload at byte {off}")
        data = np.frombuffer(blob, dtype="<f8", count=count, offset=off)
        tensors.append(data.reshape(shape).astype(np.float64))
        off += nbytes
    return tensors


def load_params(path, backbone: tuple[int, ...], projector: tuple[int, ...]) -> EncoderParams:
    """Rebuild EncoderParams from a `MEC1` file.

    Backbone and projector widths come from the caller (they are config,
    not file content); predictor widths are recovered from any tensors
    left over after those two stacks.
    """
    tensors = read_tensor_file(path)
    base_pairs = (len(backbone) - 1) + (len(projector) - 1)
    extra = len(tensors) - 2 * base_pairs
    if extra == 0:
        predictor = None
    elif extra > 0 and extra % 2 == 0:
        pred_ws = [t for t in tensors[2 * base_pairs:][0::2]]
        predictor = tuple([pred_ws[0].shape[1]] + [w.shape[0] for w in pred_ws])
    else:
        raise ParamsFormatError(
            f"{path}: {len(tensors)} tensors do not fit backbone {backbone} "
            f"and projector {projector}"
        )
    arch = EncoderArch(tuple(backbone), tuple(projector), predictor)
    try:
        return EncoderParams(arch, tensors)
    except ValueError as exc:
        raise ParamsFormatError(f"{path}: {exc}") from exc


def _normalize_features(h: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # Affine-free per-sample standardization across the feature axis.
    mean = h.mean(axis=0, keepdims=True)
    centered = h - mean
    inv_std = 1.0 / np.sqrt(centered.var(axis=0, keepdims=True) + _NORM_EPS)
    return centered * inv_std, centered, inv_std


def _normalize_features_backward(dhn: np.ndarray, hn: np.ndarray, inv_std: np.ndarray) -> np.ndarray:
    return (dhn - dhn.mean(axis=0, keepdims=True)
            - hn * (dhn * hn).mean(axis=0, keepdims=True)) * inv_std


def mlp_forward(tensors: list[np.ndarray], x: np.ndarray) -> tuple[np.ndarray, list]:
    """Run one stack on a column block; returns (output, cache for backward)."""
    n_layers = len(tensors) // 2
    a = x
    cache = []
    for i in range(n_layers):
        w, b = tensors[2 * i], tensors[2 * i + 1]
        h = w @ a + b[:, None]
        if i < n_layers - 1:
            hn, _, inv_std = _normalize_features(h)
            r = np.maximum(hn, 0.0)
            cache.append((a, hn, inv_std))
            a = r
        else:
            cache.append((a, None, None))
            a = h
    return a, cache


def mlp_backward(tensors: list[np.ndarray], cache: list, dout: np.ndarray
                 ) -> tuple[np.ndarray, list[np.ndarray]]:
    """Backward through one stack; returns (dinput, per-tensor gradients)."""
    n_layers = len(tensors) // 2
    grads: list[np.ndarray | None] = [None] * len(tensors)
    da = dout
    for i in range(n_layers - 1, -1, -1):
        a_in, hn, inv_std = cache[i]
        if i < n_layers - 1:
            dr = da * (hn > 0.0)
            dh = _normalize_features_backward(dr, hn, inv_std)
        else:
            dh = da
        w = tensors[2 * i]
        grads[2 * i] = dh @ a_in.T
        grads[2 * i + 1] = dh.sum(axis=1)
        da = w.T @ dh
    return da, grads  # type: ignore[return-value]


def l2_normalize_columns(z: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    norms = np.linalg.norm(z, axis=0, keepdims=True)
    return z / norms, norms


def l2_normalize_backward(dzn: np.ndarray, zn: np.ndarray, norms: np.ndarray) -> np.ndarray:
    # Projection Jacobian (I - z z^T) / ||.|| applied column-wise.
    return (dzn - zn * (zn * dzn).sum(axis=0, keepdims=True)) / norms


@dataclass
class BranchCache:
    backbone: list
    projector: list
    predictor: list | None
    zn: np.ndarray
    norms: np.ndarray


def encode_branch(params: EncoderParams, x: np.ndarray, use_predictor: bool
                  ) -> tuple[np.ndarray, BranchCache]:
    """Full branch: backbone -> projector -> optional predictor -> l2 norm.

    x is a (input_dim, batch) column block; the result is a unit-column
    embedding block of shape (embed_dim, batch).
    """
    feats, c_back = mlp_forward(params.stack_tensors("backbone"), x)
    proj, c_proj = mlp_forward(params.stack_tensors("projector"), feats)
    c_pred = None
    out = proj
    if use_predictor:
        if params.arch.predictor is None:
            raise ValueError("encoder has no predictor stack")
        out, c_pred = mlp_forward(params.stack_tensors("predictor"), proj)
    zn, norms = l2_normalize_columns(out)
    return zn, BranchCache(c_back, c_proj, c_pred, zn, norms)


def backprop_branch(params: EncoderParams, cache: BranchCache, dz: np.ndarray
                    ) -> list[np.ndarray]:
    """Gradients of all parameter tensors for one branch evaluation."""
    dout = l2_normalize_backward(dz, cache.zn, cache.norms)
    grads: list[np.ndarray] = []
    if cache.predictor is not None:
        dout, g_pred = mlp_backward(params.stack_tensors("predictor"), cache.predictor, dout)
    else:
        g_pred = []
    dout, g_proj = mlp_backward(params.stack_tensors("projector"), cache.projector, dout)
    _, g_back = mlp_backward(params.stack_tensors("backbone"), cache.backbone, dout)
    grads.extend(g_back)
    grads.extend(g_proj)
    grads.extend(g_pred)
    # Pad with zeros when the predictor exists but this branch skipped it.
    while len(grads) < len(params.tensors):
        grads.append(np.zeros_like(params.tensors[len(grads)]))
    return grads


def backbone_features(params: EncoderParams, samples: np.ndarray) -> np.ndarray:
    """Backbone outputs for row-major samples (n, input_dim) -> (n, feat_dim)."""
    out, _ = mlp_forward(params.stack_tensors("backbone"), samples.T)
    return out.T


def embed_samples(params: EncoderParams, samples: np.ndarray) -> np.ndarray:
    """Unit-norm projector embeddings, (embed_dim, n) columns; no predictor."""
    zn, _ = encode_branch(params, samples.T, use_predictor=False)
    return zn
