"""Projections onto the three constraint sets and their combinations.

The sets, for one layer with reference kernel K0 on an h x w circular grid:

  C1: kernels within grouped (2,1) distance b of K0,
  C2: kernels whose conv operator has spectral norm <= s (full grid),
  C3: kernels supported on the k_h x k_w tap window.

C1 and C3 are exact orthogonal projections in the Frobenius geometry; C2 is
exact for circular stride-1 operators via per-frequency singular value
clipping (the DFT is a scaled isometry, so clipping each frequency's matrix
is the orthogonal projection onto the full-grid Lipschitz ball). Strides
above 1 have no such frequency split and are rejected.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .convop import ConvSpec
from .errors import NumericalError, UsageError
from .lipschitz import embed_kernel_grid, extract_kernel_grid, operator_norm
from .tensors import KernelTensor, group_norm_21

__all__ = [
    "ConstraintSet",
    "FeasibilityReport",
    "project_l21_ball",
    "project_spectral",
    "project_support",
    "alternating_projections",
    "dykstra",
    "dykstra_iterate",
    "radial_project",
    "init_scale_to_feasible",
]

_DEFAULT_ORDER = ("l21", "spectral", "support")


@dataclass(frozen=True)
class ConstraintSet:
    """One layer's constraint data: reference kernel, radii, and geometry."""

    reference: KernelTensor
    distance_bound: float
    lipschitz_bound: float
    conv: ConvSpec

    def __post_init__(self):
        if self.distance_bound < 0:
            raise UsageError("distance bound must be >= 0")
        if self.lipschitz_bound < 0:
            raise UsageError("lipschitz bound must be >= 0")
        self.conv.check_kernel(self.reference)

    @property
    def support(self) -> tuple[int, int]:
        return self.conv.kernel_shape


@dataclass(frozen=True)
class FeasibilityReport:
    """Constraint violations along a projection run.

    trajectory holds one (dist_rel_violation, lip_rel_violation) pair per
    completed cycle; relative means excess over the bound divided by the
    bound. Non-convergence is reported through `converged`, never raised.
    """

    rounds_run: int
    trajectory: list
    final_dist: float
    final_lip: float
    distance_bound: float
    lipschitz_bound: float
    converged: bool
    tol: float


def _fiber_norms(diff: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(diff * diff, axis=1))


def _l1_ball_threshold(v: np.ndarray, budget: float) -> float:
    """Sort-and-threshold lam with sum(max(0, v - lam)) == budget.

    Ties in v need no care: the threshold depends only on the sorted values,
    and equal fiber norms receive equal shrinkage.
    """
    u = np.sort(v.ravel())[::-1]
    css = np.cumsum(u)
    j = np.arange(1, u.size + 1)
    mask = u - (css - budget) / j > 0
    rho = int(np.nonzero(mask)[0][-1])
    return float((css[rho] - budget) / (rho + 1))


def project_l21_ball(kernel: KernelTensor, center: KernelTensor, b: float) -> KernelTensor:
    """Orthogonal projection onto {K : |K - center|_{2,1} <= b}.

    Shift by the center, shrink each input-channel fiber's length by the
    l1-ball threshold of the fiber-norm vector (factor max(0, 1 - lam/|v|)),
    shift back. b = 0 returns the center.
    """
    if b < 0:
        raise UsageError("radius must be >= 0")
    if kernel.shape != center.shape:
        raise UsageError("kernel and center shapes differ")
    if b == 0:
        return KernelTensor(center.entries.copy())
    diff = kernel.entries - center.entries
    v = _fiber_norms(diff)
    if float(v.sum()) <= b:
        return kernel
    lam = _l1_ball_threshold(v, b)
    scale = np.maximum(0.0, 1.0 - lam / np.maximum(v, 1e-300))
    shrunk = diff * scale[:, None, :, :]
    return KernelTensor(center.entries + shrunk)


def project_spectral(kernel: KernelTensor, spec: ConvSpec, s: float) -> KernelTensor:
    """Orthogonal projection onto the full-grid spectral ball Lip <= s.

    Embeds the kernel on the circular grid, clips every frequency matrix's
    singular values at s, and inverts the transform. The result generally
    has full grid support (no re-restriction to the tap window here).
    Circular stride-1 only.
    """
    if s < 0:
        raise UsageError("lipschitz bound must be >= 0")
    grid = embed_kernel_grid(kernel, spec)  # validates eligibility
    return KernelTensor(_grid_spectral_clip(grid, s))


def _grid_spectral_clip(grid: np.ndarray, s: float) -> np.ndarray:
    c_out, c_in, h, w = grid.shape
    f = np.fft.fft2(grid, axes=(2, 3))
    stacked = np.moveaxis(f, (2, 3), (0, 1)).reshape(h * w, c_out, c_in)
    u, sv, vh = np.linalg.svd(stacked, full_matrices=False)
    clipped = np.minimum(sv, s)
    rebuilt = np.einsum("fij,fj,fjk->fik", u, clipped, vh)
    f_new = np.moveaxis(rebuilt.reshape(h, w, c_out, c_in), (0, 1), (2, 3))
    out = np.fft.ifft2(f_new, axes=(2, 3))
    worst_imag = float(np.max(np.abs(out.imag))) if out.size else 0.0
    scale = max(1.0, float(np.max(np.abs(grid))))
    if worst_imag > 1e-9 * scale:
        raise NumericalError(
            f"spectral clip produced imaginary residue {worst_imag}"
        )
    return np.ascontiguousarray(out.real)


def _grid_lip(grid: np.ndarray) -> float:
    f = np.fft.fft2(grid, axes=(2, 3))
    h, w = grid.shape[2], grid.shape[3]
    stacked = np.moveaxis(f, (2, 3), (0, 1)).reshape(h * w, grid.shape[0], grid.shape[1])
    return float(np.max(np.linalg.svd(stacked, compute_uv=False)))


def project_support(grid_kernel: KernelTensor, k_h: int, k_w: int) -> KernelTensor:
    """Zero all grid entries outside the k_h x k_w tap window."""
    g = grid_kernel.entries
    h, w = g.shape[2], g.shape[3]
    if k_h > h or k_w > w:
        raise UsageError("support window exceeds the grid")
    rows = (np.arange(k_h) - k_h // 2) % h
    cols = (np.arange(k_w) - k_w // 2) % w
    mask = np.zeros((h, w), dtype=bool)
    mask[rows[:, None], cols[None, :]] = True
    return KernelTensor(np.where(mask[None, None, :, :], g, 0.0))


def _grid_projections(cs: ConstraintSet, order):
    """Projection callables acting on grid arrays, in cycle order."""
    c_in, h, w = cs.conv.input_shape
    k_h, k_w = cs.support
    center_grid = embed_kernel_grid(cs.reference, cs.conv)
    b = cs.distance_bound
    s = cs.lipschitz_bound

    def p_l21(g):
        if math.isinf(b):
            return g
        kt = project_l21_ball(
            KernelTensor(g), KernelTensor(center_grid), b
        )
        return kt.entries

    def p_spec(g):
        if math.isinf(s):
            return g
        return _grid_spectral_clip(g, s)

    def p_supp(g):
        kt = project_support(KernelTensor(g), k_h, k_w)
        return kt.entries

    table = {"l21": p_l21, "spectral": p_spec, "support": p_supp}
    unknown = [name for name in order if name not in table]
    if unknown:
        raise UsageError(f"unknown projection names {unknown}")
    return [table[name] for name in order], center_grid


def _measure(grid: np.ndarray, center_grid: np.ndarray) -> tuple[float, float]:
    dist = group_norm_21(KernelTensor(grid - center_grid))
    return dist, _grid_lip(grid)


def _rel_excess(value: float, bound: float) -> float:
    excess = max(0.0, value - bound)
    if excess == 0.0:
        return 0.0
    if bound <= 0.0:
        return math.inf
    return excess / bound


def _prepare(kernel: KernelTensor, cs: ConstraintSet) -> np.ndarray:
    cs.conv.check_kernel(kernel)
    if kernel.c_out != cs.reference.c_out:
        raise UsageError("kernel and reference output channels differ")
    return embed_kernel_grid(kernel, cs.conv)


def _finish(grid: np.ndarray, cs: ConstraintSet, rounds: int, trajectory: list,
            tol: float) -> tuple[KernelTensor, FeasibilityReport]:
    center_grid = embed_kernel_grid(cs.reference, cs.conv)
    dist, lip = _measure(grid, center_grid)
    worst = max(_rel_excess(dist, cs.distance_bound),
                _rel_excess(lip, cs.lipschitz_bound))
    report = FeasibilityReport(
        rounds_run=rounds,
        trajectory=trajectory,
        final_dist=dist,
        final_lip=lip,
        distance_bound=cs.distance_bound,
        lipschitz_bound=cs.lipschitz_bound,
        converged=worst <= tol,
        tol=tol,
    )
    k_h, k_w = cs.support
    out = KernelTensor(extract_kernel_grid(grid, k_h, k_w))
    return out, report


def alternating_projections(kernel: KernelTensor, cs: ConstraintSet,
                            rounds: int = 15, order=_DEFAULT_ORDER,
                            tol: float = 1e-3):
    """Cyclic projections C1 -> C2 -> C3 (configurable order).

    Violations are measured at the end of each full cycle; the support
    constraint holds exactly after its projection, the other two are
    approached. Returns the support-restricted iterate and a report.
    """
    if rounds < 1:
        raise UsageError("rounds must be >= 1")
    projs, center_grid = _grid_projections(cs, order)
    grid = _prepare(kernel, cs)
    trajectory = []
    for _ in range(rounds):
        for p in projs:
            grid = p(grid)
        dist, lip = _measure(grid, center_grid)
        trajectory.append((
            _rel_excess(dist, cs.distance_bound),
            _rel_excess(lip, cs.lipschitz_bound),
        ))
    return _finish(grid, cs, rounds, trajectory, tol)


def dykstra_iterate(x0: np.ndarray, projections, iterations: int) -> np.ndarray:
    """Generic Dykstra cycle over any list of projection callables.

    Converges to the orthogonal projection of x0 onto the intersection of
    the (convex) sets, unlike plain alternation which only reaches some
    intersection point.
    """
    if iterations < 1:
        raise UsageError("iterations must be >= 1")
    x = np.array(x0, dtype=float)
    corrections = [np.zeros_like(x) for _ in projections]
    for _ in range(iterations):
        for i, p in enumerate(projections):
            y = p(x + corrections[i])
            corrections[i] = x + corrections[i] - y
            x = y
    return x


def dykstra(kernel: KernelTensor, cs: ConstraintSet, iterations: int = 100,
            order=_DEFAULT_ORDER, tol: float = 1e-3):
    """Dykstra's corrected cycle over C1/C2/C3 on the grid.

    The per-iteration distance log exists for diagnosis; Dykstra iterates
    are not Fejer monotone so no monotonicity is promised.
    """
    projs, center_grid = _grid_projections(cs, order)
    grid = _prepare(kernel, cs)
    corrections = [np.zeros_like(grid) for _ in projs]
    trajectory = []
    for _ in range(iterations):
        for i, p in enumerate(projs):
            y = p(grid + corrections[i])
            corrections[i] = grid + corrections[i] - y
            grid = y
        dist, lip = _measure(grid, center_grid)
        trajectory.append((
            _rel_excess(dist, cs.distance_bound),
            _rel_excess(lip, cs.lipschitz_bound),
        ))
    return _finish(grid, cs, iterations, trajectory, tol)


def radial_project(kernel: KernelTensor, center: KernelTensor, radius: float,
                   norm: str, spec: ConvSpec | None = None) -> KernelTensor:
    """Scale the offset from the center straight onto the ball surface.

    norm is 'l21' (grouped kernel norm) or 'spectral' (conv operator norm,
    needs `spec`). Never closer to the ball than the orthogonal projection,
    and never a shorter move.
    """
    if radius < 0:
        raise UsageError("radius must be >= 0")
    if kernel.shape != center.shape:
        raise UsageError("kernel and center shapes differ")
    diff = kernel.entries - center.entries
    if norm == "l21":
        dist = group_norm_21(KernelTensor(diff)) if np.any(diff) else 0.0
    elif norm == "spectral":
        if spec is None:
            raise UsageError("spectral radial projection needs a ConvSpec")
        dist = operator_norm(KernelTensor(diff), spec).value if np.any(diff) else 0.0
    else:
        raise UsageError(f"unknown norm {norm!r}")
    if dist <= radius:
        return kernel
    return KernelTensor(center.entries + diff * (radius / dist))


def init_scale_to_feasible(kernel: KernelTensor, spec: ConvSpec, s: float) -> KernelTensor:
    """Rescale a start kernel so its operator norm equals s exactly.

    The rescaled kernel then sits inside C2, and C1 centered on it holds
    with distance zero. Zero kernels cannot be rescaled.
    """
    if s <= 0:
        raise UsageError("target lipschitz bound must be > 0")
    lip = operator_norm(kernel, spec).value
    if lip == 0.0:
        raise UsageError("cannot rescale a zero kernel to a spectral target")
    return KernelTensor(kernel.entries * (s / lip))
