"""Discrete differential operators on deformation fields and mask warping."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grids import DeformationField, MaskGrid, ScalarGrid, interpolate


@dataclass(frozen=True)
class JacobianGrid(ScalarGrid):
    """Cell-centred Jacobian determinants; dims are field dims minus one."""

    def min(self) -> float:
        return float(self.data.min())


def jacobian_matrices(f: np.ndarray) -> np.ndarray:
    """Forward-difference Jacobians, shape ``cells + (D, D)``.

    Column ``k`` of the matrix at the cell with base node ``x`` is
    ``f(x + e_k) - f(x)``.
    """
    D = f.ndim - 1
    base = tuple(slice(0, -1) for _ in range(D))
    cols = []
    for k in range(D):
        shifted = tuple(slice(1, None) if j == k else slice(0, -1) for j in range(D))
        cols.append(f[shifted] - f[base])
    return np.stack(cols, axis=-1)


def det_and_cofactor(J: np.ndarray):
    """Determinants of a stack of 2x2/3x3 matrices and their cofactor matrices.

    ``cof[..., i, k]`` is d(det)/d(J[..., i, k]).
    """
    D = J.shape[-1]
    if D == 2:
        a, b = J[..., 0, 0], J[..., 0, 1]
        c, d = J[..., 1, 0], J[..., 1, 1]
        det = a * d - b * c
        cof = np.stack([np.stack([d, -c], -1), np.stack([-b, a], -1)], -2)
        return det, cof
    # Columns of the cofactor matrix are cross products of the other two columns.
    cof = np.empty_like(J)
    for k in range(3):
        a, b = (k + 1) % 3, (k + 2) % 3
        for i in range(3):
            i1, i2 = (i + 1) % 3, (i + 2) % 3
            cof[..., i, k] = J[..., i1, a] * J[..., i2, b] - J[..., i2, a] * J[..., i1, b]
    det = J[..., 0, 0] * cof[..., 0, 0] + J[..., 1, 0] * cof[..., 1, 0] + J[..., 2, 0] * cof[..., 2, 0]
    return det, cof


def jacobian_determinant(f: DeformationField) -> JacobianGrid:
    if min(f.dims) < 2:
        raise ValueError(f"Jacobian needs all dims >= 2, got {f.dims}")
    det, _ = det_and_cofactor(jacobian_matrices(f.data))
    return JacobianGrid(det, f.spacing)


def min_determinant(j: JacobianGrid) -> float:
    return float(np.min(j.data))


def laplacian_array(f: np.ndarray) -> np.ndarray:
    """Central-difference Laplacian per channel at interior nodes."""
    D = f.ndim - 1
    if min(f.shape[:-1]) < 3:
        raise ValueError(f"Laplacian needs all dims >= 3, got {f.shape[:-1]}")
    inner = tuple(slice(1, -1) for _ in range(D))
    out = -2.0 * D * f[inner]
    for k in range(D):
        for lo, hi in ((0, -2), (2, None)):
            sl = tuple(slice(lo, hi) if j == k else slice(1, -1) for j in range(D))
            out = out + f[sl]
    return out


def laplacian(f: DeformationField) -> np.ndarray:
    """Per-channel Laplacian on the interior lattice, shape ``(dims - 2) + (D,)``."""
    return laplacian_array(f.data)


def warp_values(template: np.ndarray, f: np.ndarray, with_grad: bool = False):
    """Backward warp: output at node ``x`` is the template sampled at ``f(x)``."""
    if with_grad:
        vals, grad = interpolate(template, f, with_grad=True)
        return np.clip(vals, 0.0, 1.0), grad
    return np.clip(interpolate(template, f), 0.0, 1.0)


def warp_mask(template: MaskGrid, f: DeformationField) -> MaskGrid:
    """Soft mask ``template(f(x))``; binarize it separately."""
    if template.dims != f.dims:
        raise ValueError(f"template dims {template.dims} != field dims {f.dims}")
    return MaskGrid(warp_values(template.data, f.data), template.spacing, template.threshold)
