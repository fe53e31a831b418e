"""
Dense 2D/3D grids for images, masks and deformation fields.

Array axis ``k`` always holds coordinate ``k`` (x first), so a grid with
``dims == (nx, ny)`` is backed by an array of shape ``(nx, ny)``.  Serialized
node order puts x fastest, which is Fortran order on these arrays.

Deformation fields store absolute lookup coordinates in pixel units, not
displacements.  Grids are immutable once built.
"""
from __future__ import annotations

from dataclasses import dataclass
from itertools import product
from typing import Sequence

import numpy as np

__all__ = [
    "ScalarGrid",
    "MaskGrid",
    "DeformationField",
    "make_identity_field",
    "sample_linear",
    "downsample",
    "upsample",
    "upsample_field",
    "pad_to_multiple",
    "crop",
]


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=np.float64, copy=True)
    arr.setflags(write=False)
    return arr


def _check_spacing(spacing, ndim):
    if spacing is None:
        return (1.0,) * ndim
    spacing = tuple(float(s) for s in spacing)
    if len(spacing) != ndim:
        raise ValueError(f"spacing has {len(spacing)} entries, expected {ndim}")
    return spacing


@dataclass(frozen=True)
class ScalarGrid:
    """Scalar intensities on a regular lattice."""

    data: np.ndarray
    spacing: tuple = None

    def __post_init__(self):
        arr = _frozen(self.data)
        if arr.ndim not in (2, 3):
            raise ValueError(f"grids must be 2D or 3D, got {arr.ndim} axes")
        if min(arr.shape) < 1:
            raise ValueError(f"empty grid with dims {arr.shape}")
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "spacing", _check_spacing(self.spacing, arr.ndim))

    @property
    def dims(self) -> tuple:
        return tuple(self.data.shape)

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def _replace(self, data):
        return type(self)(data, self.spacing)

    def normalize_intensity(self) -> "ScalarGrid":
        """Affinely rescale to [0, 1]; a constant grid maps to all zeros."""
        lo, hi = float(self.data.min()), float(self.data.max())
        if hi == lo:
            return self._replace(np.zeros_like(self.data))
        return self._replace((self.data - lo) / (hi - lo))


@dataclass(frozen=True)
class MaskGrid(ScalarGrid):
    """Soft or binary mask with values in [0, 1]."""

    threshold: float = 0.5

    def __post_init__(self):
        super().__post_init__()
        if not 0.0 < self.threshold < 1.0:
            raise ValueError(f"threshold must lie in (0, 1), got {self.threshold}")
        d = self.data
        if not np.all(np.isfinite(d)) or d.min() < 0.0 or d.max() > 1.0:
            raise ValueError("mask values must lie in [0, 1]")

    def _replace(self, data):
        return MaskGrid(data, self.spacing, self.threshold)

    def binarize(self) -> "MaskGrid":
        return self._replace((self.data >= self.threshold).astype(np.float64))

    @property
    def is_binary(self) -> bool:
        return bool(np.all((self.data == 0.0) | (self.data == 1.0)))

    def as_bool(self) -> np.ndarray:
        return self.data >= self.threshold


@dataclass(frozen=True)
class DeformationField:
    """Absolute lookup coordinates, array shape ``dims + (D,)``."""

    data: np.ndarray
    spacing: tuple = None

    def __post_init__(self):
        arr = _frozen(self.data)
        if arr.ndim < 3 or arr.shape[-1] != arr.ndim - 1 or arr.ndim - 1 not in (2, 3):
            raise ValueError(
                f"field array must have shape dims + (D,) with D in {{2, 3}}, got {arr.shape}"
            )
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "spacing", _check_spacing(self.spacing, arr.ndim - 1))

    @property
    def dims(self) -> tuple:
        return tuple(self.data.shape[:-1])

    @property
    def ndim(self) -> int:
        return self.data.ndim - 1

    @property
    def channels(self) -> int:
        return self.data.shape[-1]

    def displacement(self) -> np.ndarray:
        return self.data - _identity_array(self.dims)


def _identity_array(dims) -> np.ndarray:
    axes = [np.arange(n, dtype=np.float64) for n in dims]
    return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)


def make_identity_field(dims: Sequence[int], spacing=None) -> DeformationField:
    """Field whose value at integer node ``x`` is ``x`` itself."""
    dims = tuple(int(n) for n in dims)
    if len(dims) not in (2, 3):
        raise ValueError(f"identity field needs 2 or 3 dims, got {len(dims)}")
    if min(dims) < 2:
        raise ValueError(f"all dims must be >= 2, got {dims}")
    return DeformationField(_identity_array(dims), spacing)


# ---------------------------------------------------------------------------
# interpolation
# ---------------------------------------------------------------------------

def _cell_coords(coords: np.ndarray, dims):
    """Split clamped coordinates into base index, fraction and in-range flag.

    ``coords`` has shape ``(..., D)``.  The base index is clamped so that
    ``base + 1`` is always valid; the flag is False where clamping froze the
    coordinate (zero derivative there).
    """
    base, frac, inside = [], [], []
    for k, n in enumerate(dims):
        c = coords[..., k]
        inside.append((c >= 0.0) & (c <= n - 1))
        c = np.clip(c, 0.0, n - 1)
        if n == 1:
            i0 = np.zeros(c.shape, dtype=np.intp)
            t = np.zeros_like(c)
        else:
            i0 = np.minimum(np.floor(c).astype(np.intp), n - 2)
            t = c - i0
        base.append(i0)
        frac.append(t)
    return base, frac, inside


def interpolate(values: np.ndarray, coords: np.ndarray, with_grad: bool = False):
    """Multilinear interpolation of ``values`` at ``coords`` (shape ``(..., D)``).

    Coordinates are clamped to the grid box.  With ``with_grad`` the partial
    derivatives with respect to each coordinate are returned as well, stacked
    on a trailing axis; at integer coordinates the derivative of the cell
    above is used.
    """
    dims = values.shape
    D = len(dims)
    base, frac, inside = _cell_coords(coords, dims)
    strides = [int(np.prod(dims[k + 1:])) for k in range(D)]
    flat = values.ravel()
    lin0 = base[0] * strides[0]
    for k in range(1, D):
        lin0 = lin0 + base[k] * strides[k]
    lo_w = [1.0 - t for t in frac]
    out = np.zeros(coords.shape[:-1])
    grad = np.zeros(coords.shape) if with_grad else None
    for corner in product((0, 1), repeat=D):
        if any(c and n == 1 for c, n in zip(corner, dims)):
            continue
        offset = sum(s for c, s in zip(corner, strides) if c)
        v = flat.take(lin0 + offset)
        w = [frac[k] if c else lo_w[k] for k, c in enumerate(corner)]
        wprod = w[0]
        for wk in w[1:]:
            wprod = wprod * wk
        out += wprod * v
        if with_grad:
            for k in range(D):
                dw = v if corner[k] else -v
                for j in range(D):
                    if j != k:
                        dw = dw * w[j]
                grad[..., k] += dw
    if with_grad:
        for k in range(D):
            grad[..., k] *= inside[k]
        return out, grad
    return out


def sample_linear(grid: ScalarGrid, point: Sequence[float]) -> float:
    """Bilinear/trilinear value of ``grid`` at one point, clamped to the box."""
    p = np.asarray(point, dtype=np.float64)
    if p.shape != (grid.ndim,):
        raise ValueError(f"point must have {grid.ndim} components, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise ValueError(f"non-finite sample coordinate {tuple(p)}")
    return float(interpolate(grid.data, p[None, :])[0])


# ---------------------------------------------------------------------------
# resampling
# ---------------------------------------------------------------------------

def pad_to_multiple(arr: np.ndarray, multiple: int, spatial_ndim: int = None):
    """Edge-replicate ``arr`` up to the next multiple per spatial axis.

    Returns the padded array and the per-axis amount of padding added at the
    high end.
    """
    spatial_ndim = arr.ndim if spatial_ndim is None else spatial_ndim
    pads = [(-n) % multiple for n in arr.shape[:spatial_ndim]]
    if not any(pads):
        return arr, tuple(pads)
    widths = [(0, p) for p in pads] + [(0, 0)] * (arr.ndim - spatial_ndim)
    return np.pad(arr, widths, mode="edge"), tuple(pads)


def crop(grid, dims):
    """Keep the low-index corner of ``grid`` with extent ``dims``."""
    sl = tuple(slice(0, n) for n in dims)
    if isinstance(grid, DeformationField):
        return DeformationField(grid.data[sl], grid.spacing)
    return grid._replace(grid.data[sl])


def _block_mean(arr: np.ndarray, factor: int) -> np.ndarray:
    D = arr.ndim
    shape = []
    for n in arr.shape:
        shape += [n // factor, factor]
    return arr.reshape(shape).mean(axis=tuple(range(1, 2 * D, 2)))


def downsample(grid, factor: int):
    """Block-average by ``factor`` along every axis.

    Dims that are not multiples of ``factor`` are first padded by edge
    replication; the padding amount is stored on the result as
    ``downsample_padding``.
    """
    factor = int(factor)
    if factor < 1:
        raise ValueError(f"downsample factor must be >= 1, got {factor}")
    arr, pads = pad_to_multiple(grid.data, factor)
    out = grid._replace(_block_mean(arr, factor))
    object.__setattr__(out, "downsample_padding", pads)
    return out


def _fine_to_coarse(n_fine: int, factor: int) -> np.ndarray:
    # Coarse node j is the centre of fine block [j*f, (j+1)*f - 1].
    return (np.arange(n_fine, dtype=np.float64) - (factor - 1) / 2.0) / factor


def _resample_axes(arr: np.ndarray, factor: int, extrapolate: bool) -> np.ndarray:
    """Separable linear resampling of the leading ``D`` axes onto the fine lattice."""
    out = arr
    D = arr.ndim if not extrapolate else arr.ndim - 1
    for k in range(D):
        n = out.shape[k]
        c = _fine_to_coarse(n * factor, factor)
        if n == 1:
            out = np.repeat(out, factor, axis=k)
            continue
        if not extrapolate:
            c = np.clip(c, 0.0, n - 1)
        i0 = np.clip(np.floor(c).astype(np.intp), 0, n - 2)
        t = c - i0
        shape = [1] * out.ndim
        shape[k] = -1
        t = t.reshape(shape)
        lo = np.take(out, i0, axis=k)
        hi = np.take(out, i0 + 1, axis=k)
        out = lo + t * (hi - lo)
    return out


def upsample(grid, factor: int):
    """Linear interpolation onto a lattice ``factor`` times finer.

    Fine node ``i`` sits at coarse coordinate ``(i - (factor - 1) / 2) / factor``,
    the inverse of the block layout used by :func:`downsample`.  Values beyond
    the outermost coarse nodes are held constant.
    """
    factor = int(factor)
    if factor < 1:
        raise ValueError(f"upsample factor must be >= 1, got {factor}")
    if factor == 1:
        return grid
    data = _resample_axes(grid.data, factor, extrapolate=False)
    if isinstance(grid, MaskGrid):
        data = np.clip(data, 0.0, 1.0)
    return grid._replace(data)


def upsample_field(f: DeformationField, factor: int) -> DeformationField:
    """Transfer a field to a lattice ``factor`` times finer.

    Coordinates are interpolated per channel (linearly extrapolated at the
    border) and mapped into fine pixel units, so affine fields, including the
    identity, stay exactly affine.
    """
    factor = int(factor)
    if factor < 1:
        raise ValueError(f"upsample factor must be >= 1, got {factor}")
    if factor == 1:
        return f
    coarse = _resample_axes(f.data, factor, extrapolate=True)
    return DeformationField(coarse * factor + (factor - 1) / 2.0, f.spacing)
