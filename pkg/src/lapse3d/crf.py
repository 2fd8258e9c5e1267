"""Dense CRF refinement of a watershed labeling.

The Gibbs energy is

    E(X) = sum_i U_i(x_i) + sum_{i<j} [x_i != x_j] * (w(x_i) + w(x_j)) / 2 * k(f_i, f_j)

with ``U_i = -log P_i`` and the two-Gaussian appearance/smoothness kernel
``k`` over voxel position and wall probability. Minimisation is by
synchronous mean-field updates.

Two message-passing back ends are provided:

* ``exact``: all-pairs sums, O(N^2); used for small grids.
* ``truncated``: each voxel only considers labels present within ``band``
  voxels of it in the input (default: the 3-sigma truncation radius), and
  the Gaussian sums are evaluated on downsampled lattices (a bilateral
  lattice for the appearance kernel) with multilinear splatting and a
  3-sigma truncated blur. Smaller ``band`` and coarser ``grid_step`` trade
  fidelity for speed.
"""

from __future__ import annotations

from dataclasses import dataclass, field
import numpy as np
from scipy import ndimage as ndi

from . import kernels
from .errors import GeometryMismatch, TooLargeForExactEnergy
from .stackio import VoxelGrid

EXACT_MAX_VOXELS = 4096


@dataclass(frozen=True)
class CrfParams:
    gamma1: float = 1.0
    gamma2: float = 1.0
    sigma_alpha: float = 5.0  # voxels
    sigma_beta: float = 0.1  # probability units
    sigma_gamma: float = 3.0  # voxels
    label_weights: dict = field(default_factory=dict)  # label -> w(m); missing labels weigh 1
    iterations: int = 3
    epsilon: float = 1e-6
    mode: str = "auto"  # auto | exact | truncated
    band: int | None = None  # candidate-label radius (truncated mode); None = 3 sigma
    grid_step: float = 0.5  # lattice spacing in units of sigma
    exact_max: int = EXACT_MAX_VOXELS

    def __post_init__(self):
        for name in ("sigma_alpha", "sigma_beta", "sigma_gamma"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.gamma1 < 0 or self.gamma2 < 0:
            raise ValueError("kernel weights must be >= 0")
        if not 1 <= self.iterations <= 10:
            raise ValueError("iterations must lie in 1..10")
        if not 0 < self.epsilon < 1:
            raise ValueError("epsilon must lie in (0, 1)")
        if self.mode not in ("auto", "exact", "truncated"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.band is not None and self.band < 1:
            raise ValueError("band must be >= 1")
        if not 0 < self.grid_step <= 2:
            raise ValueError("grid_step must lie in (0, 2]")

    @property
    def band_radius(self) -> int:
        if self.band is not None:
            return int(self.band)
        return int(np.ceil(3 * max(self.sigma_alpha, self.sigma_gamma)))

    def weight(self, label) -> float:
        return float(self.label_weights.get(int(label), 1.0))


@dataclass(frozen=True)
class UnaryField:
    """Sparse unary costs.

    Voxel ``i`` pays ``assigned_cost[i]`` for its input label and
    ``other_cost[i]`` for any other label in ``labels``.
    """

    labels: np.ndarray  # sorted label values taking part
    assigned: np.ndarray  # (N,) index into ``labels``
    assigned_cost: np.ndarray  # (N,)
    other_cost: np.ndarray  # (N,)
    shape: tuple

    def cost(self, voxel, label_index):
        voxel = np.asarray(voxel)
        label_index = np.asarray(label_index)
        return np.where(
            self.assigned[voxel] == label_index, self.assigned_cost[voxel], self.other_cost[voxel]
        )

    def distribution(self) -> np.ndarray:
        """Dense ``(N, L)`` probabilities, mostly for checks."""
        n, nl = len(self.assigned), len(self.labels)
        out = np.repeat(np.exp(-self.other_cost)[:, None], nl, axis=1)
        out[np.arange(n), self.assigned] = np.exp(-self.assigned_cost)
        return out


def _check_geometry(prob: VoxelGrid, labels: VoxelGrid):
    if prob.shape != labels.shape:
        raise GeometryMismatch(f"probability {prob.shape} vs labels {labels.shape}")


def build_unary(prob: VoxelGrid, labels: VoxelGrid, p: CrfParams = CrfParams()) -> UnaryField:
    """``P(input label) = max(1 - q, eps)``, ``P(other) = eps``, renormalised."""
    _check_geometry(prob, labels)
    lab = np.asarray(labels.data).ravel()
    values, assigned = np.unique(lab, return_inverse=True)
    q = np.asarray(prob.data, dtype=np.float64).ravel()
    eps = p.epsilon
    pa = np.maximum(1.0 - q, eps)
    z = pa + (len(values) - 1) * eps
    return UnaryField(
        values,
        assigned.astype(np.int64),
        -np.log(pa / z),
        -np.log(eps / z),
        labels.shape,
    )


def pairwise_kernel(fi, fj, p: CrfParams = CrfParams()):
    """``k(f_i, f_j)`` for features ``f = (position, probability)``.

    Positions are voxel coordinates; array inputs broadcast over leading axes.
    """
    pi, qi = fi
    pj, qj = fj
    d2 = np.sum((np.asarray(pi, dtype=np.float64) - np.asarray(pj, dtype=np.float64)) ** 2, axis=-1)
    dq2 = (np.asarray(qi, dtype=np.float64) - np.asarray(qj, dtype=np.float64)) ** 2
    app = np.exp(-d2 / (2 * p.sigma_alpha**2) - dq2 / (2 * p.sigma_beta**2))
    smooth = np.exp(-d2 / (2 * p.sigma_gamma**2))
    return p.gamma1 * app + p.gamma2 * smooth


def _coords(shape):
    return np.indices(shape, dtype=np.float64).reshape(3, -1).T  # (N, 3) as (z, y, x)


def _kernel_rows(coords, q, rows, p):
    d2 = ((coords[rows, None, :] - coords[None, :, :]) ** 2).sum(-1)
    dq2 = (q[rows, None] - q[None, :]) ** 2
    return p.gamma1 * np.exp(-d2 / (2 * p.sigma_alpha**2) - dq2 / (2 * p.sigma_beta**2)) + p.gamma2 * np.exp(
        -d2 / (2 * p.sigma_gamma**2)
    )


def energy(labels: VoxelGrid, unary: UnaryField, prob: VoxelGrid, p: CrfParams = CrfParams()) -> float:
    """Exact Gibbs energy; ``O(N^2)``, limited to ``N <= 4096`` voxels."""
    _check_geometry(prob, labels)
    n = int(np.prod(labels.shape))
    if n > EXACT_MAX_VOXELS:
        raise TooLargeForExactEnergy(f"{n} voxels exceed the exact-energy limit of {EXACT_MAX_VOXELS}")
    lab = np.asarray(labels.data).ravel()
    idx = np.searchsorted(unary.labels, lab)
    known = (idx < len(unary.labels)) & (unary.labels[np.minimum(idx, len(unary.labels) - 1)] == lab)
    u = np.where(known & (idx == unary.assigned), unary.assigned_cost, unary.other_cost).sum()
    if p.gamma1 == 0 and p.gamma2 == 0:
        return float(u)
    coords = _coords(labels.shape)
    q = np.asarray(prob.data, dtype=np.float64).ravel()
    w = np.array([p.weight(v) for v in lab])
    total = 0.0
    for start in range(0, n, 512):
        rows = np.arange(start, min(start + 512, n))
        k = _kernel_rows(coords, q, rows, p)
        differ = lab[rows, None] != lab[None, :]
        upper = rows[:, None] < np.arange(n)[None, :]
        pair_w = 0.5 * (w[rows, None] + w[None, :])
        total += float((k * pair_w * (differ & upper)).sum())
    return float(u + total)


# ---------------------------------------------------------------- candidates


@dataclass
class _Pairs:
    """Candidate (voxel, label) pairs sorted by voxel."""

    vox: np.ndarray
    lab: np.ndarray  # label index
    starts: np.ndarray  # first pair of each voxel
    n_vox: int

    @classmethod
    def build(cls, vox, lab, n_vox):
        order = np.lexsort((lab, vox))
        vox, lab = vox[order], lab[order]
        starts = np.flatnonzero(np.r_[True, vox[1:] != vox[:-1]])
        return cls(vox, lab, starts, n_vox)


def _all_pairs(n_vox, n_lab):
    vox = np.repeat(np.arange(n_vox), n_lab)
    lab = np.tile(np.arange(n_lab), n_vox)
    return _Pairs(vox, lab, np.arange(0, n_vox * n_lab, n_lab), n_vox)


def _band_pairs(assigned_grid, n_lab, band):
    """Labels present within Chebyshev radius ``band`` of each voxel."""
    shape = assigned_grid.shape
    flat_ids = np.arange(assigned_grid.size).reshape(shape)
    vox_parts, lab_parts = [], []
    objs = ndi.find_objects(assigned_grid + 1)
    for li, sl in enumerate(objs):
        if sl is None:
            continue
        box = tuple(slice(max(s.start - band, 0), min(s.stop + band, n)) for s, n in zip(sl, shape))
        mask = ndi.distance_transform_cdt(assigned_grid[box] != li, metric="chessboard") <= band
        ids = flat_ids[box][mask]
        vox_parts.append(ids)
        lab_parts.append(np.full(ids.size, li, dtype=np.int64))
    return _Pairs.build(np.concatenate(vox_parts), np.concatenate(lab_parts), assigned_grid.size)


def _segment_softmax(logits, pairs: _Pairs):
    mx = np.maximum.reduceat(logits, pairs.starts)
    e = np.exp(logits - np.repeat(mx, np.diff(np.r_[pairs.starts, len(logits)])))
    z = np.add.reduceat(e, pairs.starts)
    return e / np.repeat(z, np.diff(np.r_[pairs.starts, len(logits)]))


# ---------------------------------------------------------------- exact messages


class _ExactMessages:
    def __init__(self, shape, q, weights, p: CrfParams):
        self.coords = _coords(shape)
        self.q = q
        self.p = p
        self.n = len(q)
        self.w = weights
        self.kself = p.gamma1 + p.gamma2

    def __call__(self, pairs: _Pairs, Q):
        n_lab = len(self.w)
        dense = np.zeros((self.n, n_lab))
        dense[pairs.vox, pairs.lab] = Q
        M = np.empty_like(dense)
        K = np.empty(self.n)
        for start in range(0, self.n, 512):
            rows = np.arange(start, min(start + 512, self.n))
            k = _kernel_rows(self.coords, self.q, rows, self.p)
            k[np.arange(len(rows)), rows] = 0.0
            M[rows] = k @ dense
            K[rows] = k.sum(axis=1)
        W = M @ self.w
        return M[pairs.vox, pairs.lab], K[pairs.vox], W[pairs.vox]


# ---------------------------------------------------------------- grid messages


def _gauss_taps(sigma_cells):
    """Unnormalised Gaussian taps, variance reduced to offset the two tent passes."""
    sig = np.sqrt(max(sigma_cells**2 - 1.0 / 3.0, 0.0))
    r = int(np.ceil(3 * sigma_cells))
    t = np.arange(-r, r + 1, dtype=np.float64)
    if sig == 0:
        return (t == 0).astype(np.float64), sig, r
    return np.exp(-(t**2) / (2 * sig**2)), sig, r


class _GridKernel:
    """Gaussian sum over a downsampled lattice: splat, blur, slice."""

    def __init__(self, pos, steps, sigmas, gain):
        # pos: (N, D) physical-ish coordinates; steps/sigmas per dim
        self.steps = np.asarray(steps, dtype=np.float64)
        g = pos / self.steps
        self.taps = []
        self.pad = []
        for s, st in zip(sigmas, self.steps):
            taps, sig, r = _gauss_taps(s / st)
            self.taps.append(taps)
            self.pad.append(r)
        self.g = np.ascontiguousarray(g, dtype=np.float64)
        self.base = np.floor(g).astype(np.int64)
        self.frac = g - self.base
        self.gain = gain
        # per-voxel self weight of the splat-blur-slice operator
        selfw = np.ones(len(g))
        for d, taps in enumerate(self.taps):
            c = len(taps) // 2
            g1 = taps[c + 1] if len(taps) > 1 else 0.0
            f = self.frac[:, d]
            selfw *= (1 - f) ** 2 + f**2 + 2 * f * (1 - f) * g1
        self.selfw = gain * selfw

    def apply(self, idx, values, out_idx):
        """Sum over ``idx`` voxels carrying ``values``, evaluated at ``out_idx``."""
        if len(idx) == 0:
            return np.zeros(len(out_idx))
        idx = np.ascontiguousarray(idx, dtype=np.intp)
        out_idx = np.ascontiguousarray(out_idx, dtype=np.intp)
        both = self.base[idx] if out_idx is idx else self.base[np.concatenate([idx, out_idx])]
        pad = np.asarray(self.pad, dtype=np.intp)
        lo = (both.min(axis=0) - pad).astype(np.intp)
        hi = both.max(axis=0) + 1 + pad
        dims = tuple(int(v) for v in hi - lo + 1)
        strides = np.array([int(np.prod(dims[d + 1 :])) for d in range(len(dims))], dtype=np.intp)
        grid = np.zeros(int(np.prod(dims)))
        kernels.lattice_splat(self.g, idx, np.ascontiguousarray(values, dtype=np.float64), lo, strides, grid)
        grid = grid.reshape(dims)
        for d, taps in enumerate(self.taps):
            if len(taps) > 1:
                grid = ndi.correlate1d(grid, taps, axis=d, mode="constant")
        res = np.empty(len(out_idx))
        kernels.lattice_slice(self.g, out_idx, lo, strides, np.ascontiguousarray(grid).ravel(), res)
        return self.gain * res


class _GridMessages:
    def __init__(self, shape, q, weights, p: CrfParams):
        pos = _coords(shape)
        st = p.grid_step
        rng = max(float(q.max() - q.min()), 1e-12)
        range_step = max(p.sigma_beta * st, rng / 128.0)
        self.kernels = []
        if p.gamma1 > 0:
            pos4 = np.column_stack([pos, q])
            steps = [p.sigma_alpha * st] * 3 + [range_step]
            sig = [p.sigma_alpha] * 3 + [p.sigma_beta]
            self.kernels.append(_GridKernel(pos4, steps, sig, p.gamma1))
        if p.gamma2 > 0:
            self.kernels.append(_GridKernel(pos, [p.sigma_gamma * st] * 3, [p.sigma_gamma] * 3, p.gamma2))
        self.w = weights
        self.n = len(q)
        every = np.arange(self.n)
        self.K = np.zeros(self.n)
        for kern in self.kernels:
            self.K += kern.apply(every, np.ones(self.n), every) - kern.selfw
        self.selfw = sum((k.selfw for k in self.kernels), np.zeros(self.n))
        self.uniform = bool(np.all(weights == weights[0]))

    def __call__(self, pairs: _Pairs, Q):
        M = np.zeros(len(Q))
        order = np.argsort(pairs.lab, kind="stable")
        labs = pairs.lab[order]
        cuts = np.flatnonzero(np.r_[True, labs[1:] != labs[:-1], True])
        for a, b in zip(cuts[:-1], cuts[1:]):
            sel = order[a:b]
            vox = pairs.vox[sel]
            vals = Q[sel]
            acc = np.zeros(len(sel))
            for kern in self.kernels:
                acc += kern.apply(vox, vals, vox)
            M[sel] = acc - self.selfw[vox] * vals
        Kp = self.K[pairs.vox]
        if self.uniform:
            Wp = self.w[0] * Kp
        else:
            wq = np.bincount(pairs.vox, weights=self.w[pairs.lab] * Q, minlength=self.n)
            every = np.arange(self.n)
            W = np.zeros(self.n)
            for kern in self.kernels:
                W += kern.apply(every, wq, every) - kern.selfw * wq
            Wp = W[pairs.vox]
        return M, Kp, Wp


# ---------------------------------------------------------------- inference


def _resolve_mode(p: CrfParams, n):
    if p.mode != "auto":
        return p.mode
    return "exact" if n <= p.exact_max else "truncated"


def mean_field_refine(prob: VoxelGrid, labels: VoxelGrid, p: CrfParams = CrfParams(), callback=None) -> VoxelGrid:
    """Mean-field refinement; returns the per-voxel argmax labeling.

    Ties go to the input label, so a vanishing pairwise term returns the
    input unchanged. ``callback(iteration, voxel_index, label_values, Q)``
    is invoked after the initial and each updated set of marginals.
    """
    _check_geometry(prob, labels)
    unary = build_unary(prob, labels, p)
    lab_values = unary.labels
    n = unary.assigned.size
    if len(lab_values) == 1 or (p.gamma1 == 0 and p.gamma2 == 0):
        return VoxelGrid(np.asarray(labels.data).copy(), labels.spacing)
    mode = _resolve_mode(p, n)
    q = np.asarray(prob.data, dtype=np.float64).ravel()
    weights = np.array([p.weight(v) for v in lab_values])
    if mode == "exact":
        pairs = _all_pairs(n, len(lab_values))
        messages = _ExactMessages(labels.shape, q, weights, p)
    else:
        pairs = _band_pairs(unary.assigned.reshape(labels.shape), len(lab_values), p.band_radius)
        messages = _GridMessages(labels.shape, q, weights, p)
    is_assigned = pairs.lab == unary.assigned[pairs.vox]
    U = np.where(is_assigned, unary.assigned_cost[pairs.vox], unary.other_cost[pairs.vox])
    Q = _segment_softmax(-U, pairs)
    if callback is not None:
        callback(0, pairs.vox, lab_values[pairs.lab], Q)
    wl = weights[pairs.lab]
    for it in range(1, p.iterations + 1):
        M, K, W = messages(pairs, Q)
        pen = 0.5 * (wl * (K - M) + (W - wl * M))
        Q = _segment_softmax(-U - pen, pairs)
        if callback is not None:
            callback(it, pairs.vox, lab_values[pairs.lab], Q)
    # argmax per voxel, ties to the input label
    order = np.lexsort((is_assigned, Q, pairs.vox))
    last = np.r_[np.flatnonzero(np.diff(pairs.vox[order])), len(order) - 1]
    win = order[last]
    out = np.empty(n, dtype=np.asarray(labels.data).dtype)
    out[pairs.vox[win]] = lab_values[pairs.lab[win]]
    return VoxelGrid(out.reshape(labels.shape), labels.spacing)
