"""Octahedral-group equivariant 3D convolutions (forward pass only).

Feature maps carry 24 group slots per filter, one per proper rotation of
the cube. Rotations are signed permutation matrices acting on ``(x, y, z)``
coordinates about the grid centre, so rotating an array is an exact axis
transpose plus flips.

Array layout: spatial axes are the trailing ``(z, y, x)`` axes. A lifted or
group feature map has shape ``(filters, 24, nz, ny, nx)``.
"""

from __future__ import annotations

import itertools
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import BadWeightsFile, KernelTooLarge, NonCubicGrid, ShapeMismatch
from .stackio import VoxelGrid

N_ROT = 24
LIFT, GROUP = 0, 1
_KIND_NAMES = {LIFT: "lift", GROUP: "group"}


@dataclass(frozen=True, eq=False)
class Rotation:
    index: int
    matrix: np.ndarray

    def __eq__(self, other):
        return isinstance(other, Rotation) and np.array_equal(self.matrix, other.matrix)

    __hash__ = None


def _build_group():
    mats = []
    for perm in itertools.permutations(range(3)):
        for signs in itertools.product((1, -1), repeat=3):
            m = np.zeros((3, 3), dtype=np.int64)
            for row, (col, s) in enumerate(zip(perm, signs)):
                m[row, col] = s
            if round(np.linalg.det(m)) == 1:
                mats.append(m)
    return mats


_MATS = _build_group()


def _lookup(mat):
    for k, m in enumerate(_MATS):
        if np.array_equal(m, mat):
            return k
    raise ValueError("matrix is not an element of the octahedral group")


CAYLEY = np.array([[_lookup(a @ b) for b in _MATS] for a in _MATS], dtype=np.int64)
INVERSE = np.array([int(np.flatnonzero(row == 0)[0]) for row in CAYLEY], dtype=np.int64)


def octahedral_group() -> list[Rotation]:
    """The 24 proper rotations of the cube; index 0 is the identity."""
    return [Rotation(k, m.copy()) for k, m in enumerate(_MATS)]


def _matrix(g) -> np.ndarray:
    if isinstance(g, Rotation):
        return g.matrix
    if isinstance(g, (int, np.integer)):
        return _MATS[int(g)]
    return np.asarray(g)


def rotate_grid(arr, g, strict: bool = False):
    """Rotate the trailing three (z, y, x) axes of ``arr`` by ``g``.

    The voxel at centred position ``p`` moves to ``g @ p``. Non-cubic grids
    come back with permuted dims unless ``strict`` is set, which raises
    :class:`NonCubicGrid` instead. Leading axes are left untouched.
    """
    if isinstance(arr, VoxelGrid):
        rotated = rotate_grid(arr.data, g, strict)
        return VoxelGrid(np.ascontiguousarray(rotated), arr.spacing)
    arr = np.asarray(arr)
    spatial = arr.shape[-3:]
    if strict and len(set(spatial)) != 1:
        raise NonCubicGrid(f"exact rotation needs a cubic grid, got {spatial}")
    m = _matrix(g)
    lead = arr.ndim - 3
    perm = [int(np.flatnonzero(m[a])[0]) for a in range(3)]  # q_a = s_a * p_perm[a]
    axes = list(range(lead))
    for k in range(3):
        a = 2 - k
        axes.append(lead + 2 - perm[a])
    out = np.transpose(arr, axes)
    flips = [lead + (2 - a) for a in range(3) if m[a, perm[a]] < 0]
    if flips:
        out = np.flip(out, axis=flips)
    return out


def _valid_shape(shape, k):
    out = tuple(n - k + 1 for n in shape)
    if any(n < 1 for n in out):
        raise KernelTooLarge(f"kernel of size {k} does not fit input of shape {shape}")
    return out


def _correlate_many(inputs, kernels):
    """Valid correlation of a channel stack with a bank of kernels.

    ``inputs`` is ``(C, nz, ny, nx)``, ``kernels`` is ``(O, C, k, k, k)``;
    returns ``(O, nz', ny', nx')``. Accumulates in float64 in a fixed
    offset order, so results do not depend on BLAS threading.
    """
    n_out, n_in, k = kernels.shape[0], kernels.shape[1], kernels.shape[-1]
    oz, oy, ox = _valid_shape(inputs.shape[1:], k)
    acc = np.zeros((n_out, oz * oy * ox), dtype=np.float64)
    inputs = np.asarray(inputs, dtype=np.float64)
    kernels = np.asarray(kernels, dtype=np.float64)
    for a, b, c in itertools.product(range(k), repeat=3):
        window = inputs[:, a : a + oz, b : b + oy, c : c + ox].reshape(n_in, -1)
        acc += np.einsum("oc,cv->ov", kernels[:, :, a, b, c], window, optimize=False)
    return acc.reshape(n_out, oz, oy, ox)


@dataclass(eq=False)
class ConvLayer:
    """One layer's weights.

    ``kernel`` is ``(out, in_slots, k, k, k)`` with ``in_slots == 1`` for a
    lifting layer and ``in * 24`` for a group layer (slot-major within each
    input filter). ``bias`` is ``(out,)``.
    """

    kind: int
    kernel: np.ndarray
    bias: np.ndarray

    def __post_init__(self):
        self.kernel = np.asarray(self.kernel, dtype=np.float32)
        self.bias = np.asarray(self.bias, dtype=np.float32)
        if self.kind not in _KIND_NAMES:
            raise ShapeMismatch(f"unknown layer kind {self.kind}")
        if self.kernel.ndim != 5:
            raise ShapeMismatch("kernel must be (out, in_slots, k, k, k)")
        k = self.kernel.shape[-1]
        if self.kernel.shape[-3:] != (k, k, k) or k % 2 == 0:
            raise ShapeMismatch(f"kernel must be cubic with odd size, got {self.kernel.shape[-3:]}")
        if self.kind == LIFT and self.kernel.shape[1] != 1:
            raise ShapeMismatch("lifting layer takes a single input channel")
        if self.kind == GROUP and self.kernel.shape[1] % N_ROT:
            raise ShapeMismatch("group layer input slots must be a multiple of 24")
        if self.bias.shape != (self.kernel.shape[0],):
            raise ShapeMismatch("bias length must equal the number of filters")
        if not (np.all(np.isfinite(self.kernel)) and np.all(np.isfinite(self.bias))):
            raise ShapeMismatch("weights must be finite")

    @property
    def k(self) -> int:
        return self.kernel.shape[-1]

    @property
    def out_channels(self) -> int:
        return self.kernel.shape[0]

    @property
    def in_channels(self) -> int:
        return 1 if self.kind == LIFT else self.kernel.shape[1] // N_ROT

    @property
    def spec(self) -> tuple[str, int, int, int]:
        return (_KIND_NAMES[self.kind], self.in_channels, self.out_channels, self.k)


def lift_conv(x, layer: ConvLayer) -> np.ndarray:
    """Lift a single-channel volume to a group feature map.

    Slot ``g`` of filter ``f`` is the valid correlation of ``x`` with the
    ``g``-rotated kernel of ``f``, plus the filter bias.
    """
    if layer.kind != LIFT:
        raise ShapeMismatch("lift_conv needs a lifting layer")
    x = np.asarray(x.data if isinstance(x, VoxelGrid) else x)
    if x.ndim != 3:
        raise ShapeMismatch(f"lift_conv expects a 3D volume, got shape {x.shape}")
    base = layer.kernel[:, 0]  # (F, k, k, k)
    rotated = np.stack([rotate_grid(base, g) for g in range(N_ROT)], axis=1)
    bank = rotated.reshape(-1, 1, *rotated.shape[-3:])
    out = _correlate_many(x[None], bank)
    out = out.reshape(layer.out_channels, N_ROT, *out.shape[1:])
    out += layer.bias.astype(np.float64)[:, None, None, None, None]
    return out.astype(np.float32)


def group_conv(x, layer: ConvLayer) -> np.ndarray:
    """Group convolution of a ``(C, 24, ...)`` map.

    Output slot ``g`` sums, over input filters ``c`` and slots ``h``, the
    correlation of input ``(c, h)`` with the stored kernel for relative slot
    ``g^-1 h`` rotated by ``g``.
    """
    if layer.kind != GROUP:
        raise ShapeMismatch("group_conv needs a group layer")
    x = np.asarray(x)
    if x.ndim != 5 or x.shape[1] != N_ROT:
        raise ShapeMismatch(f"group_conv input must be (C, 24, nz, ny, nx), got {x.shape}")
    n_in = x.shape[0]
    if layer.in_channels != n_in:
        raise ShapeMismatch(
            f"layer expects {layer.in_channels} input filters, input has {n_in}"
        )
    k = layer.k
    w = layer.kernel.reshape(layer.out_channels, n_in, N_ROT, k, k, k)
    bank = np.empty((layer.out_channels, N_ROT, n_in, N_ROT, k, k, k), dtype=np.float32)
    for g in range(N_ROT):
        rel = CAYLEY[INVERSE[g]]  # rel[h] = g^-1 h
        bank[:, g] = rotate_grid(w[:, :, rel], g)
    bank = bank.reshape(layer.out_channels * N_ROT, n_in * N_ROT, k, k, k)
    out = _correlate_many(x.reshape(n_in * N_ROT, *x.shape[2:]), bank)
    out = out.reshape(layer.out_channels, N_ROT, *out.shape[1:])
    out += layer.bias.astype(np.float64)[:, None, None, None, None]
    return out.astype(np.float32)


def group_pool(x, mode: str = "max") -> np.ndarray:
    """Collapse the 24 group slots of each filter."""
    x = np.asarray(x)
    if mode == "max":
        return x.max(axis=1)
    if mode == "mean":
        return x.mean(axis=1, dtype=np.float64).astype(x.dtype)
    raise ValueError(f"unknown pooling mode {mode!r}")


def slot_action(fmap, g):
    """Apply the group action on a ``(C, 24, ...)`` map: rotate space by
    ``g`` and move slot ``g^-1 h`` to slot ``h``."""
    g = g.index if isinstance(g, Rotation) else int(g)
    perm = CAYLEY[INVERSE[g]]
    return rotate_grid(np.asarray(fmap)[:, perm], g)


def check_arch(layers, arch) -> None:
    """Raise :class:`ShapeMismatch` unless ``layers`` match ``arch``."""
    if arch is None:
        return
    specs = [layer.spec for layer in layers]
    wanted = [tuple(s) for s in arch]
    if specs != wanted:
        raise ShapeMismatch(f"weights {specs} do not match architecture {wanted}")


def _validate_stack(layers):
    if not layers:
        raise ShapeMismatch("network needs at least one layer")
    if layers[0].kind != LIFT:
        raise ShapeMismatch("first layer must be a lifting layer")
    for prev, layer in zip(layers, layers[1:]):
        if layer.kind != GROUP:
            raise ShapeMismatch("only the first layer may lift")
        if layer.in_channels != prev.out_channels:
            raise ShapeMismatch("consecutive layers disagree on channel count")
    if layers[-1].out_channels != 1:
        raise ShapeMismatch("last layer must have a single filter")


def forward_logits(x, layers, arch=None) -> np.ndarray:
    """Pre-squash network output: lift, rectified group convs, max pool."""
    check_arch(layers, arch)
    _validate_stack(layers)
    fmap = lift_conv(x, layers[0])
    for layer in layers[1:]:
        np.maximum(fmap, 0.0, out=fmap)
        fmap = group_conv(fmap, layer)
    return group_pool(fmap, "max")[0]


def forward_network(x, layers, arch=None) -> VoxelGrid:
    """Wall-probability map from the equivariant stack (valid convolution,
    so the output shrinks by ``sum(k - 1)`` voxels per axis)."""
    spacing = x.spacing if isinstance(x, VoxelGrid) else (1.0, 1.0, 1.0)
    logits = forward_logits(x, layers, arch).astype(np.float64)
    prob = 0.5 * (1.0 + np.tanh(0.5 * logits))  # logistic without overflow
    return VoxelGrid(prob.astype(np.float32), spacing)


def receptive_margin(layers) -> int:
    return sum((layer.k - 1) // 2 for layer in layers)


def predict_probability(grid: VoxelGrid, layers, arch=None) -> VoxelGrid:
    """Run the network on a reflection-padded copy so the output keeps the
    input geometry."""
    m = receptive_margin(layers)
    data = np.asarray(grid.data, dtype=np.float32)
    if m:
        data = np.pad(data, m, mode="reflect" if min(data.shape) > m else "edge")
    out = forward_network(data, layers, arch)
    return VoxelGrid(out.data, grid.spacing)


def random_layers(arch, seed=0, scale=0.5) -> list[ConvLayer]:
    """Random weights for ``arch`` (a list of ``(kind, in, out, k)``)."""
    rng = np.random.Generator(np.random.Philox(seed))
    layers = []
    for kind, n_in, n_out, k in arch:
        code = LIFT if kind in ("lift", LIFT) else GROUP
        slots = 1 if code == LIFT else n_in * N_ROT
        kernel = rng.normal(0.0, scale, size=(n_out, slots, k, k, k))
        bias = rng.normal(0.0, scale, size=n_out)
        layers.append(ConvLayer(code, kernel, bias))
    return layers


# weights container: magic, layer count, 16-byte table rows, then payloads
_W_MAGIC = b"VXW1"
_W_HEAD = struct.Struct("<4sI")
_W_ROW = struct.Struct("<B3xIII")


def write_weights(layers, path) -> None:
    parts = [_W_HEAD.pack(_W_MAGIC, len(layers))]
    for layer in layers:
        parts.append(_W_ROW.pack(layer.kind, layer.in_channels, layer.out_channels, layer.k))
    for layer in layers:
        parts.append(np.ascontiguousarray(layer.kernel, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(layer.bias, dtype="<f4").tobytes())
    Path(path).write_bytes(b"".join(parts))


def read_weights(path) -> list[ConvLayer]:
    raw = Path(path).read_bytes()
    if len(raw) < _W_HEAD.size or raw[:4] != _W_MAGIC:
        raise BadWeightsFile(f"{path}: not a VXW1 weights file")
    _, count = _W_HEAD.unpack_from(raw)
    pos = _W_HEAD.size
    rows = []
    for _ in range(count):
        if pos + _W_ROW.size > len(raw):
            raise BadWeightsFile(f"{path}: layer table truncated")
        rows.append(_W_ROW.unpack_from(raw, pos))
        pos += _W_ROW.size
    layers = []
    for kind, n_in, n_out, k in rows:
        if kind not in _KIND_NAMES:
            raise BadWeightsFile(f"{path}: unknown layer kind {kind}")
        slots = 1 if kind == LIFT else n_in * N_ROT
        n_kernel = n_out * slots * k**3
        need = 4 * (n_kernel + n_out)
        if pos + need > len(raw):
            raise BadWeightsFile(f"{path}: payload truncated")
        kernel = np.frombuffer(raw, "<f4", n_kernel, pos).reshape(n_out, slots, k, k, k)
        bias = np.frombuffer(raw, "<f4", n_out, pos + 4 * n_kernel)
        pos += need
        try:
            layers.append(ConvLayer(kind, kernel.copy(), bias.copy()))
        except ShapeMismatch as exc:
            raise BadWeightsFile(f"{path}: {exc}") from exc
    if pos != len(raw):
        raise BadWeightsFile(f"{path}: {len(raw) - pos} trailing bytes")
    return layers
