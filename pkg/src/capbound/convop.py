"""Strided 2D convolution as an explicit linear operator.

The op is cross-correlation with kernel array index a at spatial offset
a - k//2 (see tensors.offsets), output position mu reading input row
s_h*mu + offset. Output spatial extent is ceil(h/s_h) x ceil(w/s_w) for both
padding modes. No dilation, no channel groups, no bias; summation order over
kernel offsets is fixed so results are bit-reproducible.
"""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from .errors import ResourceError, UsageError
from .tensors import DenseMatrix, KernelTensor, group_norm_21, offsets, slice_norms

__all__ = [
    "ConvSpec",
    "conv_forward",
    "conv_forward_batch",
    "conv_adjoint",
    "materialize",
    "materialize_cap",
    "NormIdentityReport",
    "mk_norm_identities",
]

_PADDINGS = ("zero_same", "circular")


@dataclass(frozen=True)
class ConvSpec:
    """Geometry of one conv layer: strides, padding, and shapes."""

    input_shape: tuple[int, int, int]   # (c_in, h, w)
    kernel_shape: tuple[int, int]       # (k_h, k_w)
    strides: tuple[int, int] = (1, 1)
    padding: str = "circular"

    def __post_init__(self):
        c, h, w = self.input_shape
        k_h, k_w = self.kernel_shape
        s_h, s_w = self.strides
        if min(c, h, w, k_h, k_w) < 1:
            raise UsageError("shapes must be positive")
        if s_h < 1 or s_w < 1:
            raise UsageError("strides must be >= 1")
        if self.padding not in _PADDINGS:
            raise UsageError(f"padding must be one of {_PADDINGS}")
        if self.padding == "circular" and (k_h > h or k_w > w):
            raise UsageError(
                "circular padding requires kernel extents <= spatial dims"
            )

    @property
    def out_spatial(self) -> tuple[int, int]:
        c, h, w = self.input_shape
        s_h, s_w = self.strides
        return (-(-h // s_h), -(-w // s_w))

    def check_kernel(self, kernel: KernelTensor) -> None:
        if kernel.c_in != self.input_shape[0]:
            raise UsageError(
                f"kernel expects {kernel.c_in} input channels, spec has "
                f"{self.input_shape[0]}"
            )
        if (kernel.k_h, kernel.k_w) != self.kernel_shape:
            raise UsageError(
                f"kernel spatial extents {(kernel.k_h, kernel.k_w)} do not "
                f"match spec {self.kernel_shape}"
            )


def _gather_plan(spec: ConvSpec):
    """Per-offset index arrays shared by forward/adjoint/materialize."""
    _, h, w = spec.input_shape
    k_h, k_w = spec.kernel_shape
    s_h, s_w = spec.strides
    out_h, out_w = spec.out_spatial
    d_h = offsets(k_h)
    d_w = offsets(k_w)
    plan = []
    for a in range(k_h):
        rows = s_h * np.arange(out_h) + d_h[a]
        for b in range(k_w):
            cols = s_w * np.arange(out_w) + d_w[b]
            if spec.padding == "circular":
                plan.append((a, b, rows % h, cols % w,
                             np.arange(out_h), np.arange(out_w)))
            else:
                rok = (rows >= 0) & (rows < h)
                cok = (cols >= 0) & (cols < w)
                if not rok.any() or not cok.any():
                    continue
                plan.append((a, b, rows[rok], cols[cok],
                             np.arange(out_h)[rok], np.arange(out_w)[cok]))
    return plan


def conv_forward(kernel: KernelTensor, spec: ConvSpec, x: np.ndarray) -> np.ndarray:
    """Apply the conv operator to a single (c_in, h, w) input."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != spec.input_shape:
        raise UsageError(f"input shape {x.shape} != spec {spec.input_shape}")
    spec.check_kernel(kernel)
    k = kernel.entries
    out_h, out_w = spec.out_spatial
    out = np.zeros((kernel.c_out, out_h, out_w))
    for a, b, rows, cols, mus, nus in _gather_plan(spec):
        gathered = x[:, rows[:, None], cols[None, :]]
        out[:, mus[:, None], nus[None, :]] += np.einsum(
            "oi,ixy->oxy", k[:, :, a, b], gathered
        )
    return out


def conv_forward_batch(kernel: KernelTensor, spec: ConvSpec, xs: np.ndarray) -> np.ndarray:
    """Apply the conv operator to a stack of inputs (n, c_in, h, w)."""
    xs = np.asarray(xs, dtype=np.float64)
    if xs.ndim != 4 or xs.shape[1:] != spec.input_shape:
        raise UsageError(f"batch shape {xs.shape} != (n,)+{spec.input_shape}")
    spec.check_kernel(kernel)
    k = kernel.entries
    out_h, out_w = spec.out_spatial
    out = np.zeros((xs.shape[0], kernel.c_out, out_h, out_w))
    for a, b, rows, cols, mus, nus in _gather_plan(spec):
        gathered = xs[:, :, rows[:, None], cols[None, :]]
        out[:, :, mus[:, None], nus[None, :]] += np.einsum(
            "oi,nixy->noxy", k[:, :, a, b], gathered
        )
    return out


def conv_adjoint(kernel: KernelTensor, spec: ConvSpec, y: np.ndarray) -> np.ndarray:
    """Adjoint operator: <conv(x), y> == <x, adjoint(y)> exactly."""
    y = np.asarray(y, dtype=np.float64)
    out_h, out_w = spec.out_spatial
    spec.check_kernel(kernel)
    if y.shape != (kernel.c_out, out_h, out_w):
        raise UsageError(
            f"adjoint input shape {y.shape} != {(kernel.c_out, out_h, out_w)}"
        )
    k = kernel.entries
    adj = np.zeros(spec.input_shape)
    for a, b, rows, cols, mus, nus in _gather_plan(spec):
        contrib = np.einsum("oi,oxy->ixy", k[:, :, a, b],
                            y[:, mus[:, None], nus[None, :]])
        # For a fixed offset the target rows/cols are pairwise distinct
        # (stride spacing < one wrap), so a buffered += cannot drop updates.
        adj[:, rows[:, None], cols[None, :]] += contrib
    return adj


def conv_adjoint_batch(kernel: KernelTensor, spec: ConvSpec, ys: np.ndarray) -> np.ndarray:
    ys = np.asarray(ys, dtype=np.float64)
    out_h, out_w = spec.out_spatial
    spec.check_kernel(kernel)
    if ys.ndim != 4 or ys.shape[1:] != (kernel.c_out, out_h, out_w):
        raise UsageError("bad adjoint batch shape")
    k = kernel.entries
    adj = np.zeros((ys.shape[0],) + spec.input_shape)
    for a, b, rows, cols, mus, nus in _gather_plan(spec):
        contrib = np.einsum("oi,noxy->nixy", k[:, :, a, b],
                            ys[:, :, mus[:, None], nus[None, :]])
        adj[:, :, rows[:, None], cols[None, :]] += contrib
    return adj


def materialize_cap() -> int:
    raw = os.environ.get("CAPBOUND_MATERIALIZE_CAP", "")
    if raw:
        try:
            return int(raw)
        except ValueError as exc:
            raise UsageError(
                f"CAPBOUND_MATERIALIZE_CAP must be an int, got {raw!r}"
            ) from exc
    return 10**7


def materialize(kernel: KernelTensor, spec: ConvSpec) -> DenseMatrix:
    """Dense matrix of the conv operator acting on row-major flattened input.

    Row index is the row-major flattening of (c_out, out_h, out_w), column
    index of (c_in, h, w), so materialize(K) @ x.ravel() reproduces
    conv_forward(K, x).ravel(). Refuses to build more than
    CAPBOUND_MATERIALIZE_CAP entries (default 1e7).
    """
    spec.check_kernel(kernel)
    c_in, h, w = spec.input_shape
    out_h, out_w = spec.out_spatial
    n_rows = kernel.c_out * out_h * out_w
    n_cols = c_in * h * w
    cap = materialize_cap()
    if n_rows * n_cols > cap:
        raise ResourceError(
            f"materialized matrix would hold {n_rows * n_cols} entries, "
            f"cap is {cap}"
        )
    k = kernel.entries
    m6 = np.zeros((kernel.c_out, c_in, out_h, out_w, h, w))
    for a, b, rows, cols, mus, nus in _gather_plan(spec):
        m6[:, :, mus[:, None], nus[None, :], rows[:, None], cols[None, :]] += (
            k[:, :, a, b][:, :, None, None]
        )
    m = np.transpose(m6, (0, 2, 3, 1, 4, 5)).reshape(n_rows, n_cols)
    return DenseMatrix(m)


def _vec_pnorm(v: np.ndarray, p: float) -> np.ndarray:
    if np.isinf(p):
        return np.max(np.abs(v), axis=-1)
    return np.sum(np.abs(v) ** p, axis=-1) ** (1.0 / p)


def _rows_pq(m: np.ndarray, p: float, q: float) -> float:
    row_p = _vec_pnorm(m, p)
    if np.isinf(q):
        return float(np.max(row_p))
    return float(np.sum(row_p**q) ** (1.0 / q))


@dataclass(frozen=True)
class NormIdentityReport:
    """Measured vs predicted grid-operator norms for one kernel.

    measured/predicted are keyed by norm name; identities are exact for the
    circular, square, stride-dividing geometry this report requires.
    ok is True when every relative disagreement is <= 1e-8. The (2,1)
    lower-bound inequality against the kernel group norm is reported
    separately. (Striding also shrinks these norms by 1/(s_h*s_w) versus the
    unstrided operator; that ratio is visible here as a diagnostic but feeds
    no bound.)
    """

    measured: dict
    predicted: dict
    max_rel_error: float
    ok: bool
    inequality_lhs: float
    inequality_rhs: float
    inequality_ok: bool


def mk_norm_identities(kernel: KernelTensor, spec: ConvSpec,
                       pq_pairs: tuple = ()) -> NormIdentityReport:
    """Check the closed-form (p,q) norms of the materialized operator.

    Requires circular padding, square input h == w == d, equal strides t
    dividing d, and square kernel k <= d. Always checks (2,1), Frobenius,
    and (1,inf); extra (p,q) pairs may be passed and are checked against the
    general closed form (d/t)^(2/q) * (sum_o |K_o|_p^q)^(1/q).
    """
    c_in, h, w = spec.input_shape
    k_h, k_w = spec.kernel_shape
    s_h, s_w = spec.strides
    if spec.padding != "circular":
        raise UsageError("norm identities require circular padding")
    if h != w:
        raise UsageError("norm identities require square inputs")
    if s_h != s_w:
        raise UsageError("norm identities require equal strides")
    if h % s_h != 0:
        raise UsageError("norm identities require stride dividing the width")
    if k_h != k_w:
        raise UsageError("norm identities require square kernels")
    spec.check_kernel(kernel)

    d, t, k = h, s_h, k_h
    m = materialize(kernel, spec).entries
    kk = kernel.entries

    def predicted_pq(p: float, q: float) -> float:
        slice_p = _vec_pnorm(kk.reshape(kernel.c_out, -1), p)
        if np.isinf(q):
            return float(np.max(slice_p))
        return float((d / t) ** (2.0 / q) * np.sum(slice_p**q) ** (1.0 / q))

    pairs = [("l21", 2.0, 1.0), ("frobenius", 2.0, 2.0), ("l1_inf", 1.0, np.inf)]
    for p, q in pq_pairs:
        pairs.append((f"pq_{p}_{q}", float(p), float(q)))

    measured, predicted = {}, {}
    worst = 0.0
    for name, p, q in pairs:
        got = _rows_pq(m, p, q)
        want = predicted_pq(p, q)
        measured[name] = got
        predicted[name] = want
        rel = abs(got - want) / max(abs(want), 1e-300)
        worst = max(worst, rel)

    # Lower bound: |M^T|_{2,1} >= (d/(t*k))^2 * k * |K|_{2,1}.
    lhs = measured["l21"]
    rhs = (d / (t * k)) ** 2 * k * group_norm_21(kernel)
    return NormIdentityReport(
        measured=measured,
        predicted=predicted,
        max_rel_error=worst,
        ok=worst <= 1e-8,
        inequality_lhs=lhs,
        inequality_rhs=rhs,
        inequality_ok=lhs >= rhs * (1.0 - 1e-12),
    )
