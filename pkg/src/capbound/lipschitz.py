"""Spectral norms of conv operators: iterative, exact, and dense routes.

The exact route only exists for circular padding at stride 1 (the operator
is then block-circulant and a 2D DFT block-diagonalizes it, one small
c_out x c_in matrix per frequency). Everything else falls back to power
iteration on the forward/adjoint pair, or a dense SVD when the operator is
small enough to materialize.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .convop import ConvSpec, conv_adjoint, conv_forward, materialize
from .errors import UsageError
from .tensors import DenseMatrix, KernelTensor, offsets

__all__ = [
    "SpectralEstimate",
    "SpectrumReport",
    "power_iteration",
    "fft_exact_spectrum",
    "fft_exact_norm",
    "dense_spectral_norm",
    "operator_norm",
    "embed_kernel_grid",
    "extract_kernel_grid",
]


@dataclass(frozen=True)
class SpectralEstimate:
    value: float
    method: str  # power_iteration | fft_exact | dense_svd
    iterations_used: int
    residual: float  # last relative change (power iteration) or 0.0


@dataclass(frozen=True)
class SpectrumReport:
    """Full singular-value multiset of the conv operator, sorted descending."""

    values: np.ndarray
    max_value: float


def power_iteration(kernel: KernelTensor, spec: ConvSpec, tol: float = 1e-6,
                    max_iters: int = 1000, seed: int = 0) -> SpectralEstimate:
    """Largest singular value via forward/adjoint alternation.

    Stops when the relative change of the norm estimate drops below tol.
    Deterministic for a given seed. A zero kernel reports 0 after one step.
    """
    if tol <= 0 or max_iters < 1:
        raise UsageError("tol must be > 0 and max_iters >= 1")
    spec.check_kernel(kernel)
    rng = np.random.default_rng(seed)
    v = rng.standard_normal(spec.input_shape)
    v /= np.sqrt(np.sum(v * v))
    sigma_prev = None
    sigma = 0.0
    rel = np.inf
    iters = 0
    for iters in range(1, max_iters + 1):
        u = conv_forward(kernel, spec, v)
        sigma = float(np.sqrt(np.sum(u * u)))
        if sigma == 0.0:
            return SpectralEstimate(0.0, "power_iteration", iters, 0.0)
        if sigma_prev is not None:
            rel = abs(sigma - sigma_prev) / sigma
            if rel < tol:
                break
        sigma_prev = sigma
        w = conv_adjoint(kernel, spec, u / sigma)
        nw = float(np.sqrt(np.sum(w * w)))
        if nw == 0.0:
            break
        v = w / nw
    return SpectralEstimate(sigma, "power_iteration", iters,
                            0.0 if np.isinf(rel) else rel)


def _require_fft_eligible(kernel: KernelTensor, spec: ConvSpec) -> None:
    if spec.padding != "circular":
        raise UsageError("exact spectra require circular padding")
    if spec.strides != (1, 1):
        raise UsageError("exact spectra require stride 1")
    spec.check_kernel(kernel)


def fft_eligible(spec: ConvSpec) -> bool:
    return spec.padding == "circular" and spec.strides == (1, 1)


def embed_kernel_grid(kernel: KernelTensor, spec: ConvSpec) -> np.ndarray:
    """Place kernel taps on the full (c_out, c_in, h, w) circular grid.

    Array index a lands on grid row (a - k//2) mod h, matching the conv
    op's offsets, so the embedded grid kernel realizes the identical
    operator.
    """
    _require_fft_eligible(kernel, spec)
    _, h, w = spec.input_shape
    rows = offsets(kernel.k_h) % h
    cols = offsets(kernel.k_w) % w
    grid = np.zeros((kernel.c_out, kernel.c_in, h, w))
    grid[:, :, rows[:, None], cols[None, :]] = kernel.entries
    return grid


def extract_kernel_grid(grid: np.ndarray, k_h: int, k_w: int) -> np.ndarray:
    """Inverse of embed_kernel_grid on the support window (values only)."""
    h, w = grid.shape[2], grid.shape[3]
    rows = offsets(k_h) % h
    cols = offsets(k_w) % w
    return grid[:, :, rows[:, None], cols[None, :]].copy()


def fft_exact_spectrum(kernel: KernelTensor, spec: ConvSpec) -> SpectrumReport:
    """All singular values of the circular stride-1 operator, exactly.

    One SVD of the c_out x c_in DFT matrix per frequency; the union over
    the h*w frequencies is the operator's full multiset (up to padding
    zeros when channel counts differ, which the dense operator also has).
    """
    _require_fft_eligible(kernel, spec)
    _, h, w = spec.input_shape
    grid = embed_kernel_grid(kernel, spec)
    f = np.fft.fft2(grid, axes=(2, 3))
    stacked = np.moveaxis(f, (2, 3), (0, 1)).reshape(h * w, kernel.c_out, kernel.c_in)
    sv = np.linalg.svd(stacked, compute_uv=False)
    values = np.sort(sv.ravel())[::-1]
    return SpectrumReport(values=values, max_value=float(values[0]))


def fft_exact_norm(kernel: KernelTensor, spec: ConvSpec) -> SpectralEstimate:
    report = fft_exact_spectrum(kernel, spec)
    return SpectralEstimate(report.max_value, "fft_exact", 0, 0.0)


def dense_spectral_norm(matrix: DenseMatrix) -> SpectralEstimate:
    value = float(np.linalg.svd(matrix.entries, compute_uv=False)[0])
    return SpectralEstimate(value, "dense_svd", 0, 0.0)


def operator_norm(kernel: KernelTensor, spec: ConvSpec, tol: float = 1e-6,
                  max_iters: int = 1000, seed: int = 0) -> SpectralEstimate:
    """Exact spectral norm where available, power iteration otherwise."""
    if fft_eligible(spec):
        return fft_exact_norm(kernel, spec)
    return power_iteration(kernel, spec, tol=tol, max_iters=max_iters, seed=seed)


def dense_operator_norm(kernel: KernelTensor, spec: ConvSpec) -> SpectralEstimate:
    return dense_spectral_norm(materialize(kernel, spec))
