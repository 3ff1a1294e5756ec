"""Projected-SGD training of tiny conv nets on synthetic 8x8 tasks.

Desk-scale stand-in for the full pipeline: small circular stride-1 conv
nets with max-pool blocks, optional residual shortcuts, and a fixed
simplex classifier, trained under per-layer Lipschitz and distance
constraints enforced through alternating projections.
"""

import math
from dataclasses import dataclass, replace

import numpy as np

from .capacity import BlockRecord, CapacityInput, ComparisonDataStats, \
    ComparisonLayerStats, LayerRecord
from .convop import ConvSpec, conv_adjoint_batch, conv_forward_batch
from .errors import UsageError
from .lipschitz import fft_exact_norm
from .project import ConstraintSet, alternating_projections, \
    init_scale_to_feasible
from .tensors import DataBatch, KernelTensor, data_norm, group_norm_21, \
    patch_norms

GRID_SIDE = 8
MAXPOOL_LIP = 2.0       # 3x3 windows at stride 2: every input feeds <= 4
SHORTCUT_LIP = math.sqrt(2.0)   # two disjoint 1-Lipschitz pooled halves


# ---------------------------------------------------------------------------
# margins and the ramp


def margin_values(logits, labels) -> np.ndarray:
    """Per-sample margin: own logit minus the best competing logit."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise UsageError("logits must be (n, kappa) with kappa >= 2")
    if labels.shape != (logits.shape[0],):
        raise UsageError("labels must be one integer per row of logits")
    if labels.min() < 0 or labels.max() >= logits.shape[1]:
        raise UsageError("label out of range")
    idx = np.arange(logits.shape[0])
    own = logits[idx, labels]
    rest = logits.copy()
    rest[idx, labels] = -np.inf
    return own - rest.max(axis=1)


def ramp_loss(r, gamma: float):
    """Piecewise-linear ramp: 0 below -gamma, 1 above 0, linear between."""
    if not (gamma > 0):
        raise UsageError("gamma must be > 0")
    out = np.clip(1.0 + np.asarray(r, dtype=np.float64) / gamma, 0.0, 1.0)
    return float(out) if out.ndim == 0 else out


def ramp_risk(logits, labels, gamma: float) -> float:
    return float(np.mean(ramp_loss(-margin_values(logits, labels), gamma)))


def zero_one_error(logits, labels) -> float:
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    return float(np.mean(logits.argmax(axis=1) != labels))


def softmax_cross_entropy(logits, labels):
    """Mean CE loss and its gradient with respect to the logits."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    z = logits - logits.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=1, keepdims=True))
    idx = np.arange(logits.shape[0])
    loss = float(np.mean(log_norm[idx, 0] - z[idx, labels]))
    grad = np.exp(z - log_norm)
    grad[idx, labels] -= 1.0
    grad /= logits.shape[0]
    return loss, grad


# ---------------------------------------------------------------------------
# fixed simplex classifier


def _helmert_basis(kappa: int) -> np.ndarray:
    """(kappa-1, kappa) orthonormal rows, all orthogonal to the ones vector."""
    basis = np.zeros((kappa - 1, kappa))
    for k in range(1, kappa):
        basis[k - 1, :k] = 1.0
        basis[k - 1, k] = -float(k)
        basis[k - 1] /= math.sqrt(k * (k + 1))
    return basis


def _spread_basis(rows: int, dim: int) -> np.ndarray:
    """(rows, dim) orthonormal rows that touch every coordinate.

    Cosine rows are orthogonal already; the QR pass just cleans them up to
    machine precision and keeps the construction deterministic.
    """
    if rows == dim:
        return np.eye(dim)
    grid = np.arange(dim)
    raw = np.stack([np.cos(math.pi * (2 * grid + 1) * (k + 1) / (2 * dim))
                    for k in range(rows)])
    q, _ = np.linalg.qr(raw.T)
    return q.T


def simplex_classifier(kappa: int, dim: int) -> np.ndarray:
    """(kappa, dim) fixed classifier: rows are regular-simplex vertices.

    Rows are unit norm with pairwise inner products -1/(kappa-1); the
    operator norm is sqrt(kappa/(kappa-1)).
    """
    if kappa < 2:
        raise UsageError("need at least two classes")
    if dim < kappa - 1:
        raise UsageError(f"{kappa} simplex vertices need dim >= {kappa - 1}")
    centered = np.eye(kappa) - 1.0 / kappa
    vertices = centered / math.sqrt(1.0 - 1.0 / kappa)
    coords = vertices @ _helmert_basis(kappa).T
    return coords @ _spread_basis(kappa - 1, dim)


# ---------------------------------------------------------------------------
# ops with backward caches


class Relu:
    def forward(self, x: np.ndarray) -> np.ndarray:
        self._mask = x > 0
        self.kink_margin = float(np.abs(x).min()) if x.size else math.inf
        return x * self._mask

    def backward(self, g: np.ndarray) -> np.ndarray:
        return g * self._mask


def _pool_plan(h: int, w: int, size: int, stride: int, centered: bool):
    offs = np.arange(size) - (size // 2 if centered else 0)
    out_h = -(-h // stride)
    out_w = -(-w // stride)
    rows = (np.arange(out_h)[:, None] * stride + offs[None, :]) % h
    cols = (np.arange(out_w)[:, None] * stride + offs[None, :]) % w
    flat = rows[:, None, :, None] * w + cols[None, :, None, :]
    return out_h, out_w, flat.reshape(out_h, out_w, size * size)


class MaxPool:
    """Max pooling with circular wrap, matching the conv offset convention."""

    def __init__(self, h: int, w: int, size: int, stride: int,
                 centered: bool = True):
        if size > min(h, w):
            raise UsageError("pool window larger than the input")
        self._h, self._w = h, w
        self.out_h, self.out_w, self._idx = _pool_plan(h, w, size, stride,
                                                       centered)

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._shape = x.shape
        n, c = x.shape[:2]
        windows = x.reshape(n, c, self._h * self._w)[:, :, self._idx]
        self._arg = windows.argmax(axis=-1)
        top2 = np.partition(windows, windows.shape[-1] - 2, axis=-1)
        self.kink_margin = float((top2[..., -1] - top2[..., -2]).min())
        return np.take_along_axis(windows, self._arg[..., None],
                                  axis=-1)[..., 0]

    def backward(self, g: np.ndarray) -> np.ndarray:
        n, c = g.shape[:2]
        taps = self._idx.shape[-1]
        broad = np.broadcast_to(self._idx, (n, c, self.out_h, self.out_w, taps))
        pos = np.take_along_axis(broad, self._arg[..., None], axis=-1)[..., 0]
        dx = np.zeros((n, c, self._h * self._w))
        np.add.at(dx, (np.arange(n)[:, None, None, None],
                       np.arange(c)[None, :, None, None], pos), g)
        return dx.reshape(self._shape)


class DoublingShortcut:
    """Fixed channel-doubling map: plain and one-pixel-shifted 2x2/2 pools."""

    def __init__(self, h: int, w: int):
        if h % 2 or w % 2:
            raise UsageError("doubling shortcut needs even spatial dims")
        self._plain = MaxPool(h, w, 2, 2, centered=False)
        self._shifted = MaxPool(h, w, 2, 2, centered=False)

    @property
    def kink_margin(self) -> float:
        return min(self._plain.kink_margin, self._shifted.kink_margin)

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._c = x.shape[1]
        rolled = np.roll(x, (1, 1), axis=(2, 3))
        return np.concatenate([self._plain.forward(x),
                               self._shifted.forward(rolled)], axis=1)

    def backward(self, g: np.ndarray) -> np.ndarray:
        plain = self._plain.backward(g[:, :self._c])
        shifted = self._shifted.backward(g[:, self._c:])
        return plain + np.roll(shifted, (-1, -1), axis=(2, 3))


class ConvLayer:
    """Trainable circular stride-1 convolution; gradients accumulate."""

    def __init__(self, kernel: np.ndarray, spec: ConvSpec):
        if spec.strides != (1, 1) or spec.padding != "circular":
            raise UsageError("trainable convolutions are circular, stride 1")
        kernel = np.array(kernel, dtype=np.float64)
        spec.check_kernel(KernelTensor(kernel))
        self.kernel = kernel
        self.spec = spec
        self.grad = np.zeros_like(kernel)

    def forward(self, x: np.ndarray) -> np.ndarray:
        self._x = x
        return conv_forward_batch(KernelTensor(self.kernel), self.spec, x)

    def backward(self, g: np.ndarray) -> np.ndarray:
        c_out, c_in, k_h, k_w = self.kernel.shape
        for a in range(k_h):
            for b in range(k_w):
                rolled = np.roll(self._x, (-(a - k_h // 2), -(b - k_w // 2)),
                                 axis=(2, 3))
                self.grad[:, :, a, b] += np.einsum("nopq,nrpq->or", g, rolled)
        return conv_adjoint_batch(KernelTensor(self.kernel), self.spec, g)


# ---------------------------------------------------------------------------
# net assembly


@dataclass(frozen=True)
class BlockSpec:
    """One block: conv + ReLU, optional 3x3/2 max-pool, optional shortcut.

    shortcut "identity" needs matching shapes (same channels, no pool);
    "double" pairs the pooled main path with the fixed channel-doubling map,
    so it needs pool == "max3" and c_out == 2 * c_in.
    """

    c_in: int
    c_out: int
    k: int
    pool: str = "none"
    shortcut: str = "none"

    def __post_init__(self):
        if min(self.c_in, self.c_out, self.k) < 1:
            raise UsageError("block shape fields must be >= 1")
        if self.pool not in ("none", "max3"):
            raise UsageError(f"unknown pool {self.pool!r}")
        if self.shortcut not in ("none", "identity", "double"):
            raise UsageError(f"unknown shortcut {self.shortcut!r}")
        if self.shortcut == "identity" and (self.pool != "none"
                                            or self.c_in != self.c_out):
            raise UsageError("identity shortcut needs unchanged shapes")
        if self.shortcut == "double" and (self.pool != "max3"
                                          or self.c_out != 2 * self.c_in):
            raise UsageError(
                "doubling shortcut needs max3 pool and c_out == 2 c_in")

    @property
    def post_lip(self) -> float:
        """Lipschitz factor of the fixed tail after the conv (ReLU, pool)."""
        return MAXPOOL_LIP if self.pool == "max3" else 1.0


class Block:
    def __init__(self, spec: BlockSpec, h: int, w: int, kernel: np.ndarray):
        self.spec = spec
        self.conv = ConvLayer(kernel, ConvSpec((spec.c_in, h, w),
                                               (spec.k, spec.k)))
        self.relu = Relu()
        self.pool = MaxPool(h, w, 3, 2) if spec.pool == "max3" else None
        self.shortcut = (DoublingShortcut(h, w) if spec.shortcut == "double"
                         else None)
        if spec.pool == "max3":
            self.out_h, self.out_w = self.pool.out_h, self.pool.out_w
        else:
            self.out_h, self.out_w = h, w

    def forward(self, x: np.ndarray) -> np.ndarray:
        y = self.relu.forward(self.conv.forward(x))
        if self.pool is not None:
            y = self.pool.forward(y)
        if self.spec.shortcut == "identity":
            y = y + x
        elif self.spec.shortcut == "double":
            y = y + self.shortcut.forward(x)
        return y

    def backward(self, g: np.ndarray) -> np.ndarray:
        gm = self.pool.backward(g) if self.pool is not None else g
        dx = self.conv.backward(self.relu.backward(gm))
        if self.spec.shortcut == "identity":
            dx = dx + g
        elif self.spec.shortcut == "double":
            dx = dx + self.shortcut.backward(g)
        return dx

    def kink_margin(self) -> float:
        margin = self.relu.kink_margin
        if self.pool is not None:
            margin = min(margin, self.pool.kink_margin)
        if self.shortcut is not None:
            margin = min(margin, self.shortcut.kink_margin)
        return margin


class TinyNet:
    """Small conv net with a fixed simplex head on flattened features."""

    def __init__(self, blocks, kappa: int = 2, h: int = GRID_SIDE,
                 w: int = GRID_SIDE, seed: int = 0):
        if not blocks:
            raise UsageError("need at least one block")
        rng = np.random.default_rng(seed)
        self.kappa = kappa
        self.input_shape = (blocks[0].c_in, h, w)
        self.blocks = []
        for spec in blocks:
            if self.blocks and spec.c_in != self.blocks[-1].spec.c_out:
                raise UsageError("block channel counts do not chain")
            fan_in = spec.c_in * spec.k * spec.k
            kernel = rng.standard_normal(
                (spec.c_out, spec.c_in, spec.k, spec.k)
            ) * math.sqrt(2.0 / fan_in)
            self.blocks.append(Block(spec, h, w, kernel))
            h, w = self.blocks[-1].out_h, self.blocks[-1].out_w
        self.feature_dim = self.blocks[-1].spec.c_out * h * w
        self.classifier = simplex_classifier(kappa, self.feature_dim)

    @property
    def classifier_lip(self) -> float:
        return math.sqrt(self.kappa / (self.kappa - 1.0))

    @property
    def kernels(self):
        return [blk.conv.kernel for blk in self.blocks]

    def set_kernels(self, kernels) -> None:
        if len(kernels) != len(self.blocks):
            raise UsageError("kernel count does not match block count")
        for blk, kernel in zip(self.blocks, kernels):
            if kernel.shape != blk.conv.kernel.shape:
                raise UsageError("kernel shape changed")
            blk.conv.kernel = np.array(kernel, dtype=np.float64)

    def zero_grads(self) -> None:
        for blk in self.blocks:
            blk.conv.grad = np.zeros_like(blk.conv.kernel)

    def grads(self):
        return [blk.conv.grad for blk in self.blocks]

    def forward(self, xs: np.ndarray) -> np.ndarray:
        xs = np.asarray(xs, dtype=np.float64)
        if xs.ndim != 4 or xs.shape[1:] != self.input_shape:
            raise UsageError(
                f"batch shape {xs.shape} != (n,)+{self.input_shape}")
        y = xs
        for blk in self.blocks:
            y = blk.forward(y)
        self._feat_shape = y.shape
        return y.reshape(y.shape[0], -1) @ self.classifier.T

    def backward(self, g_logits: np.ndarray) -> None:
        g = (np.asarray(g_logits) @ self.classifier).reshape(self._feat_shape)
        for blk in reversed(self.blocks):
            g = blk.backward(g)

    def kink_margin(self) -> float:
        """Smallest ReLU preactivation / pool runner-up gap last forward."""
        return min(blk.kink_margin() for blk in self.blocks)

    def lipschitz(self):
        return tuple(
            fft_exact_norm(KernelTensor(blk.conv.kernel), blk.conv.spec).value
            for blk in self.blocks)

    def distances(self, references):
        return tuple(
            group_norm_21(KernelTensor(blk.conv.kernel - ref))
            for blk, ref in zip(self.blocks, references))


# ---------------------------------------------------------------------------
# training


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-4
    batch_size: int = 16
    epochs: int = 30
    cadence: int = 15       # SGD steps between projection cycles
    post_rounds: int = 15   # projection cycles after the last update
    seed: int = 0
    decay_epochs: tuple = ()
    decay_factor: float = 5.0
    log_gamma: float = 1.0  # gamma used for the trajectory's ramp risk

    def __post_init__(self):
        if not (self.lr > 0) or not (0 <= self.momentum < 1):
            raise UsageError("need lr > 0 and momentum in [0, 1)")
        if self.weight_decay < 0:
            raise UsageError("weight decay must be >= 0")
        if min(self.batch_size, self.epochs, self.cadence) < 1:
            raise UsageError("batch size, epochs and cadence must be >= 1")
        if self.post_rounds < 0 or self.decay_factor <= 0:
            raise UsageError("bad post_rounds or decay_factor")
        if not (self.log_gamma > 0):
            raise UsageError("log_gamma must be > 0")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_error: float
    test_error: float
    mean_loss: float
    ramp: float
    lips: tuple
    dists: tuple


@dataclass(frozen=True)
class TrainResult:
    net: TinyNet
    references: tuple
    trajectory: tuple
    diverged: bool
    feasible: bool
    lip_bound: float
    dist_bound: float

    @property
    def final(self) -> EpochStats:
        return self.trajectory[-1]


def _constraint_sets(net: TinyNet, references, lip_bound, dist_bound):
    return [ConstraintSet(KernelTensor(ref), dist_bound, lip_bound,
                          blk.conv.spec)
            for blk, ref in zip(net.blocks, references)]


def _project_all(net: TinyNet, sets, rounds: int) -> float:
    """One projection pass per layer; returns the worst relative violation."""
    worst = 0.0
    for blk, cs in zip(net.blocks, sets):
        projected, report = alternating_projections(
            KernelTensor(blk.conv.kernel), cs, rounds=rounds)
        blk.conv.kernel = projected.entries
        if report.trajectory:
            dist_rel, lip_rel = report.trajectory[-1]
            worst = max(worst, dist_rel, lip_rel)
    return worst


def train_projected(net: TinyNet, batch: DataBatch, labels: np.ndarray,
                    config: TrainConfig, lip_bound: float = math.inf,
                    dist_bound: float = math.inf, test_batch=None,
                    test_labels=None, project: bool = True) -> TrainResult:
    """SGD with momentum under per-layer distance/Lipschitz constraints.

    Kernels are first rescaled so every layer meets the Lipschitz bound
    exactly (making the constraint intersection nonempty around the start),
    then one alternating-projection cycle runs every `cadence` updates and
    `post_rounds` cycles run after the final update, repeated until joint
    violations drop under 1e-3 relative (hard cap 40x the budget; running
    out is reported through `feasible`). Infinite bounds leave the
    trajectory bit-identical to plain SGD. Divergence is reported via the
    result, never raised.
    """
    labels = np.asarray(labels)
    if labels.shape != (batch.n,):
        raise UsageError("labels must be one integer per sample")
    if lip_bound <= 0 or dist_bound < 0:
        raise UsageError("need lip_bound > 0 and dist_bound >= 0")
    if math.isfinite(lip_bound):
        for blk in net.blocks:
            blk.conv.kernel = init_scale_to_feasible(
                KernelTensor(blk.conv.kernel), blk.conv.spec,
                lip_bound).entries
    references = tuple(blk.conv.kernel.copy() for blk in net.blocks)
    sets = _constraint_sets(net, references, lip_bound, dist_bound)

    rng = np.random.default_rng(config.seed)
    velocity = [np.zeros_like(k) for k in net.kernels]
    lr = config.lr
    step = 0
    diverged = False
    trajectory = []
    for epoch in range(config.epochs):
        if epoch in config.decay_epochs:
            lr /= config.decay_factor
        order = rng.permutation(batch.n)
        losses = []
        for lo in range(0, batch.n, config.batch_size):
            take = order[lo:lo + config.batch_size]
            logits = net.forward(batch.samples[take])
            loss, g_logits = softmax_cross_entropy(logits, labels[take])
            if not math.isfinite(loss):
                diverged = True
                break
            losses.append(loss)
            net.zero_grads()
            net.backward(g_logits)
            for blk, vel in zip(net.blocks, velocity):
                vel *= config.momentum
                vel -= lr * (blk.conv.grad
                             + config.weight_decay * blk.conv.kernel)
                blk.conv.kernel = blk.conv.kernel + vel
            step += 1
            if project and step % config.cadence == 0:
                _project_all(net, sets, rounds=1)
        if diverged:
            break
        train_logits = net.forward(batch.samples)
        test_error = math.nan
        if test_batch is not None:
            test_error = zero_one_error(net.forward(test_batch.samples),
                                        test_labels)
        trajectory.append(EpochStats(
            epoch=epoch,
            train_error=zero_one_error(train_logits, labels),
            test_error=test_error,
            mean_loss=float(np.mean(losses)) if losses else math.nan,
            ramp=ramp_risk(train_logits, labels, config.log_gamma),
            lips=net.lipschitz(),
            dists=net.distances(references),
        ))
    feasible = True
    if project and not diverged and config.post_rounds > 0:
        worst = _project_all(net, sets, rounds=config.post_rounds)
        used = config.post_rounds
        while worst > 1e-3 and used < 40 * config.post_rounds:
            worst = _project_all(net, sets, rounds=config.post_rounds)
            used += config.post_rounds
        feasible = worst <= 1e-3
    return TrainResult(net=net, references=references,
                       trajectory=tuple(trajectory), diverged=diverged,
                       feasible=feasible, lip_bound=lip_bound,
                       dist_bound=dist_bound)


# ---------------------------------------------------------------------------
# synthetic tasks


def synth_data(task: str, n: int, seed: int = 0):
    """Deterministic 8x8 single-channel tasks: easy blobs, harder rings.

    Blobs put the class into the pixel mean (+-0.3 under noise 0.4), so a
    zero threshold on the mean separates them. Rings use a disk against an
    annulus scaled to the same total mass, which leaves the pixel mean
    uninformative.
    """
    if n < 2:
        raise UsageError("need n >= 2 samples")
    rng = np.random.default_rng(seed)
    labels = rng.permutation(n) % 2
    side = GRID_SIDE
    if task == "blobs":
        means = np.where(labels == 1, 0.3, -0.3)[:, None, None, None]
        xs = means + 0.4 * rng.standard_normal((n, 1, side, side))
    elif task == "rings":
        ii, jj = np.mgrid[0:side, 0:side]
        rho = np.hypot(ii - (side - 1) / 2.0, jj - (side - 1) / 2.0)
        disk = (rho <= 2.0).astype(np.float64)
        ring = ((rho > 2.0) & (rho <= 3.6)).astype(np.float64)
        ring *= disk.sum() / ring.sum()
        base = np.where(labels[:, None, None, None] == 1,
                        ring[None, None], disk[None, None])
        xs = base + 0.2 * rng.standard_normal((n, 1, side, side))
    else:
        raise UsageError(f"unknown task {task!r}")
    return DataBatch(xs), labels.astype(np.int64)


def pixel_mean_threshold_error(batch: DataBatch, labels: np.ndarray) -> float:
    """Best achievable error of a threshold on the per-sample pixel mean."""
    feats = batch.samples.mean(axis=(1, 2, 3))
    order = np.argsort(feats)
    sorted_labels = np.asarray(labels)[order]
    n = len(sorted_labels)
    ones_left = np.concatenate([[0], np.cumsum(sorted_labels == 1)])
    zeros_left = np.arange(n + 1) - ones_left
    # cut after position i, both orientations
    errs_up = ones_left + (zeros_left[-1] - zeros_left)
    errs_down = zeros_left + (ones_left[-1] - ones_left)
    return float(min(errs_up.min(), errs_down.min())) / n


# ---------------------------------------------------------------------------
# bridges into the capacity calculus


def capacity_input_from_net(net: TinyNet, references, n: int,
                            data_norm_value: float,
                            gamma: float) -> CapacityInput:
    """Measure the trained net into per-layer capacity records.

    Each block contributes one conv layer whose post-conv factor covers the
    ReLU and any pool; the fixed classifier folds into the last block's
    scale. Lipschitz constants are exact circular-operator norms.
    """
    shortcut_kind = {"none": "zero", "identity": "identity",
                     "double": "fixed"}
    blocks = []
    for blk, ref in zip(net.blocks, references):
        lip = fft_exact_norm(KernelTensor(blk.conv.kernel),
                             blk.conv.spec).value
        layer = LayerRecord(
            kind="conv",
            lip=lip,
            dist=group_norm_21(KernelTensor(blk.conv.kernel - ref)),
            rho=blk.spec.post_lip,
            weight=KernelTensor(blk.conv.kernel),
            reference=KernelTensor(ref),
        )
        kind = shortcut_kind[blk.spec.shortcut]
        blocks.append(BlockRecord(
            layers=(layer,),
            shortcut=kind,
            shortcut_lip=SHORTCUT_LIP if kind == "fixed" else None,
        ))
    blocks[-1] = replace(blocks[-1], rho=net.classifier_lip)
    return CapacityInput(blocks=tuple(blocks), n=n,
                         data_norm=data_norm_value, gamma=gamma)


def _out_slices(kernel: np.ndarray) -> np.ndarray:
    return kernel.reshape(kernel.shape[0], -1)


def comparison_stats_from_net(net: TinyNet, references, batch: DataBatch):
    """Per-layer and data statistics for the published-bound comparison.

    Layers are the composite conv + fixed tail maps of a plain chain, so a
    block's pool factor folds into both its Lipschitz constant and its
    distance (the tail pushes a cover of the conv class outward by exactly
    that factor). Kernel norm statistics stay raw measurements. The fixed
    simplex head enters as a terminal dense layer with zero distance so
    every row sees the same end-to-end function.
    """
    stats = []
    acts = [batch.samples]
    for blk in net.blocks:
        acts.append(blk.forward(acts[-1]))
    b_vals = []
    for blk, act in zip(net.blocks, acts):
        b_vals.append(patch_norms(DataBatch(act), blk.spec.k, blk.spec.k,
                                  padding="circular"))
    for blk, ref in zip(net.blocks, references):
        kernel = blk.conv.kernel
        diff = kernel - ref
        rows, rows_diff = _out_slices(kernel), _out_slices(diff)
        lip = fft_exact_norm(KernelTensor(kernel), blk.conv.spec).value
        stats.append(ComparisonLayerStats(
            lip=lip * blk.spec.post_lip,
            w=kernel.size,
            d=blk.conv.spec.input_shape[1],
            t=1,
            k=blk.spec.k,
            c_in=blk.spec.c_in,
            c_out=blk.spec.c_out,
            dist_21=group_norm_21(KernelTensor(diff)) * blk.spec.post_lip,
            sum_out_l2=float(np.linalg.norm(rows, axis=1).sum()),
            sum_out_l2_diff=float(np.linalg.norm(rows_diff, axis=1).sum()),
            max_out_l1=float(np.abs(rows).sum(axis=1).max()),
            max_out_l1_diff=float(np.abs(rows_diff).sum(axis=1).max()),
            max_out_l2=float(np.linalg.norm(rows, axis=1).max()),
            frob=float(np.linalg.norm(kernel)),
            frob_diff=float(np.linalg.norm(diff)),
        ))
    flat = acts[-1].reshape(acts[-1].shape[0], -1)
    b_vals.append(float(np.linalg.norm(flat, axis=1).max()))
    head = net.classifier
    logits = flat @ head.T
    b_vals.append(float(np.linalg.norm(logits, axis=1).max()))
    stats.append(ComparisonLayerStats(
        lip=net.classifier_lip,
        w=head.size,
        d=1, t=1, k=1,
        c_in=net.feature_dim,
        c_out=net.kappa,
        dist_21=0.0,
        sum_out_l2=float(np.linalg.norm(head, axis=1).sum()),
        sum_out_l2_diff=0.0,
        max_out_l1=float(np.abs(head).sum(axis=1).max()),
        max_out_l1_diff=0.0,
        max_out_l2=float(np.linalg.norm(head, axis=1).max()),
        frob=float(np.linalg.norm(head)),
        frob_diff=0.0,
    ))
    data = ComparisonDataStats(
        data_norm=data_norm(batch),
        max_linf=float(np.abs(batch.samples).max()),
        max_coord_sq_sum=float((batch.samples ** 2).sum(axis=0).max()),
        patch_norm_input=b_vals[0],
        patch_norms=tuple(b_vals),
    )
    return tuple(stats), data
