"""Core tensor containers and the norms the bounds are built from.

Conventions used everywhere downstream:

- Kernels are (c_out, c_in, k_h, k_w) arrays. A "fiber" is the vector of
  entries along the input-channel axis at one (output-channel, row, col)
  position; the grouped (2,1) norm sums the Euclidean lengths of all fibers.
- Data batches are (n, c, h, w). The batch norm |X| is the Euclidean norm of
  the whole stack, i.e. sqrt(sum_i |x_i|^2).
- Everything is accumulated in float64 regardless of input dtype.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError

__all__ = [
    "KernelTensor",
    "DenseMatrix",
    "DataBatch",
    "group_norm_21",
    "group_norm_matrix_21",
    "slice_norms",
    "data_norm",
    "patch_norms",
]

_SLICE_KINDS = ("l1_outslice", "l2_outslice", "frobenius", "max_l1_outslice")


def _as_f64(values, what: str, ndim: int) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != ndim:
        raise UsageError(f"{what} must have {ndim} axes, got shape {arr.shape}")
    if arr.size == 0:
        raise UsageError(f"{what} must not be empty")
    if not np.all(np.isfinite(arr)):
        raise UsageError(f"{what} contains non-finite entries")
    out = arr.copy()
    out.setflags(write=False)
    return out


@dataclass(frozen=True)
class KernelTensor:
    """Convolution kernel, axes (c_out, c_in, k_h, k_w)."""

    entries: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "entries", _as_f64(self.entries, "kernel", 4))

    @property
    def c_out(self) -> int:
        return self.entries.shape[0]

    @property
    def c_in(self) -> int:
        return self.entries.shape[1]

    @property
    def k_h(self) -> int:
        return self.entries.shape[2]

    @property
    def k_w(self) -> int:
        return self.entries.shape[3]

    @property
    def shape(self) -> tuple[int, int, int, int]:
        return self.entries.shape


@dataclass(frozen=True)
class DenseMatrix:
    """Plain (out_features, in_features) matrix for fully-connected layers."""

    entries: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "entries", _as_f64(self.entries, "matrix", 2))

    @property
    def shape(self) -> tuple[int, int]:
        return self.entries.shape


@dataclass(frozen=True)
class DataBatch:
    """Input batch, axes (n, c, h, w), with its Euclidean norm cached.

    If ``cached_norm`` is supplied (e.g. when rehydrating from disk) it is
    checked against a recomputation to a relative 1e-12.
    """

    samples: np.ndarray
    cached_norm: float = field(default=float("nan"))

    def __post_init__(self):
        object.__setattr__(self, "samples", _as_f64(self.samples, "batch", 4))
        fresh = float(np.sqrt(np.sum(self.samples.astype(np.float64) ** 2)))
        if np.isnan(self.cached_norm):
            object.__setattr__(self, "cached_norm", fresh)
        else:
            tol = 1e-12 * max(1.0, abs(fresh))
            if abs(float(self.cached_norm) - fresh) > tol:
                raise UsageError(
                    f"cached_norm {self.cached_norm!r} disagrees with "
                    f"recomputed batch norm {fresh!r}"
                )
            object.__setattr__(self, "cached_norm", float(self.cached_norm))

    @property
    def n(self) -> int:
        return self.samples.shape[0]

    @property
    def sample_shape(self) -> tuple[int, int, int]:
        return self.samples.shape[1:]


def group_norm_21(kernel: KernelTensor) -> float:
    """Grouped (2,1) kernel norm: sum over (o, a, b) of fiber l2 lengths.

    Fibers run along the input-channel axis.
    """
    k = kernel.entries
    fiber = np.sqrt(np.sum(k * k, axis=1, dtype=np.float64))
    return float(np.sum(fiber, dtype=np.float64))


def group_norm_matrix_21(matrix: DenseMatrix) -> float:
    """Transposed (2,1) norm of a dense matrix: sum of row l2 lengths.

    Rows index outputs, so this matches group_norm_21 on a 1x1-kernel
    reshaped to a matrix.
    """
    a = matrix.entries
    return float(np.sum(np.sqrt(np.sum(a * a, axis=1, dtype=np.float64))))


def slice_norms(kernel: KernelTensor, kind: str):
    """Per-output-channel slice reductions used by the comparison formulas.

    kind:
      l1_outslice      -> vector, l1 norm of each output channel's slice
      l2_outslice      -> vector, l2 (Frobenius) norm of each slice
      frobenius        -> scalar, l2 norm of the whole kernel
      max_l1_outslice  -> scalar, max over the l1_outslice vector
    """
    if kind not in _SLICE_KINDS:
        raise UsageError(f"unknown slice-norm kind {kind!r}; one of {_SLICE_KINDS}")
    k = kernel.entries
    if kind == "l1_outslice":
        return np.sum(np.abs(k), axis=(1, 2, 3), dtype=np.float64)
    if kind == "l2_outslice":
        return np.sqrt(np.sum(k * k, axis=(1, 2, 3), dtype=np.float64))
    if kind == "frobenius":
        return float(np.sqrt(np.sum(k * k, dtype=np.float64)))
    return float(np.max(np.sum(np.abs(k), axis=(1, 2, 3), dtype=np.float64)))


def data_norm(batch: DataBatch) -> float:
    return batch.cached_norm


def offsets(k: int) -> np.ndarray:
    """Spatial offsets covered by a kernel extent k.

    Array index a corresponds to offset a - k//2, i.e. the zero offset sits
    at index k//2 (for k=3: -1,0,1; for k=2: -1,0).
    """
    return np.arange(k) - k // 2


def patch_norms(
    batch: DataBatch,
    k_h: int,
    k_w: int,
    s_h: int = 1,
    s_w: int = 1,
    padding: str = "zero_same",
) -> float:
    """Largest l2 norm over all channel-stack patches seen by a conv layer.

    A patch is the (c, k_h, k_w) window gathered at one output position,
    using the same offset/stride geometry as the conv op. Zero padding
    contributes zeros (so it never increases a patch norm); circular padding
    wraps indices.
    """
    if padding not in ("zero_same", "circular"):
        raise UsageError(f"unknown padding {padding!r}")
    n, c, h, w = batch.samples.shape
    if k_h < 1 or k_w < 1 or s_h < 1 or s_w < 1:
        raise UsageError("kernel extents and strides must be >= 1")
    if padding == "circular" and (k_h > h or k_w > w):
        raise UsageError(
            f"circular padding requires kernel <= spatial dims, got "
            f"({k_h},{k_w}) on ({h},{w})"
        )
    out_h = -(-h // s_h)
    out_w = -(-w // s_w)
    d_h = offsets(k_h)
    d_w = offsets(k_w)

    best = 0.0
    x = batch.samples
    for mu in range(out_h):
        rows = s_h * mu + d_h
        for nu in range(out_w):
            cols = s_w * nu + d_w
            if padding == "circular":
                patch = x[:, :, rows % h, :][:, :, :, cols % w]
                sq = np.sum(patch * patch, axis=(1, 2, 3), dtype=np.float64)
            else:
                rok = (rows >= 0) & (rows < h)
                cok = (cols >= 0) & (cols < w)
                if not rok.any() or not cok.any():
                    continue
                patch = x[:, :, rows[rok], :][:, :, :, cols[cok]]
                sq = np.sum(patch * patch, axis=(1, 2, 3), dtype=np.float64)
            m = float(np.max(sq))
            if m > best:
                best = m
    return float(np.sqrt(best))
