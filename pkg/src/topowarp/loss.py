"""
Segmentation loss: soft Dice fidelity, margin-ReLU Jacobian penalty and L1
Laplacian smoothness, with analytic gradients with respect to the field.

The Jacobian penalty is summed over cells, so that with unit weight it acts
as an exact penalty for ``det >= epsilon``.  Inside the total objective the
Laplacian term is the mean of ``|Laplacian|`` over interior node channels;
summed, it outweighs the Dice term by the number of nodes and pins the field
to harmonic maps.  :func:`laplacian_loss` itself returns the plain sum.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields

import numpy as np

from .deform import det_and_cofactor, jacobian_matrices, laplacian_array, warp_values
from .grids import DeformationField, MaskGrid


@dataclass(frozen=True)
class LossConfig:
    lambda_dice: float = 1.0
    lambda_jac: float = 1.0
    lambda_lap: float = 0.1
    epsilon: float = 0.1
    dice_smoothing: float = 1.0

    def __post_init__(self):
        for name in ("lambda_dice", "lambda_jac", "lambda_lap", "epsilon"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0:
                raise ValueError(f"{name} must be a finite non-negative number, got {v}")
        if not np.isfinite(self.dice_smoothing) or self.dice_smoothing <= 0:
            raise ValueError(f"dice_smoothing must be positive, got {self.dice_smoothing}")

    @classmethod
    def from_dict(cls, d: dict) -> "LossConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown LossConfig field(s): {', '.join(unknown)}")
        return cls(**{k: float(v) for k, v in d.items()})

    @classmethod
    def from_json(cls, text: str) -> "LossConfig":
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


@dataclass(frozen=True)
class LossBreakdown:
    dice: float
    jacobian: float
    laplacian: float
    total: float


def _check_dims(a, b):
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")


def _dice(p: np.ndarray, g: np.ndarray, s: float):
    inter = np.sum(p * g)
    denom = np.sum(p) + np.sum(g) + s
    return 1.0 - (2.0 * inter + s) / denom, inter, denom


def dice_loss(pred: MaskGrid, label: MaskGrid, smoothing: float = 1.0) -> float:
    """``1 - (2 sum(p g) + s) / (sum(p) + sum(g) + s)``."""
    _check_dims(pred.data, label.data)
    return float(_dice(pred.data, label.data, smoothing)[0])


def _as_array(f):
    return f.data if isinstance(f, DeformationField) else np.asarray(f, dtype=np.float64)


def jacobian_loss(f, epsilon: float = 0.1) -> float:
    """Sum over cells of ``max(0, epsilon - det)``."""
    det, _ = det_and_cofactor(jacobian_matrices(_as_array(f)))
    return float(np.sum(np.maximum(epsilon - det, 0.0)))


def laplacian_loss(f, reduction: str = "sum") -> float:
    """L1 norm of the per-channel Laplacian over interior nodes.

    ``reduction="mean"`` divides by the number of interior node channels.
    """
    lap = np.abs(laplacian_array(_as_array(f)))
    if reduction == "sum":
        return float(np.sum(lap))
    if reduction == "mean":
        return float(np.sum(lap) / lap.size)
    raise ValueError(f"reduction must be 'sum' or 'mean', got {reduction!r}")


def total_loss(pred: MaskGrid, label: MaskGrid, f, config: LossConfig = LossConfig()) -> LossBreakdown:
    """Weighted loss of a field whose warped template ``pred`` the caller supplies.

    ``LossBreakdown.laplacian`` is the per-entry mean, ``jacobian`` the sum.
    """
    d = dice_loss(pred, label, config.dice_smoothing)
    j = jacobian_loss(f, config.epsilon)
    lap = laplacian_loss(f, "mean")
    total = config.lambda_dice * d + config.lambda_jac * j + config.lambda_lap * lap
    return LossBreakdown(d, j, lap, total)


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------

def _jacobian_loss_grad(f: np.ndarray, epsilon: float):
    D = f.ndim - 1
    det, cof = det_and_cofactor(jacobian_matrices(f))
    short = epsilon - det
    loss = np.sum(np.maximum(short, 0.0))
    # d loss / d det is -1 strictly inside the penalised region, 0 at the kink.
    w = -(short > 0.0).astype(np.float64)
    dJ = w[..., None, None] * cof  # d loss / d J[i, k]
    grad = np.zeros_like(f)
    base = tuple(slice(0, -1) for _ in range(D))
    grad[base] -= dJ.sum(axis=-1)
    for k in range(D):
        shifted = tuple(slice(1, None) if j == k else slice(0, -1) for j in range(D))
        grad[shifted] += dJ[..., k]
    return loss, grad


def _laplacian_loss_grad(f: np.ndarray):
    """Mean ``|Laplacian|`` and its gradient."""
    D = f.ndim - 1
    lap = laplacian_array(f)
    loss = np.sum(np.abs(lap)) / lap.size
    s = np.sign(lap) / lap.size  # sign(0) == 0 is the chosen subgradient
    grad = np.zeros_like(f)
    inner = tuple(slice(1, -1) for _ in range(D))
    grad[inner] -= 2.0 * D * s
    for k in range(D):
        for lo, hi in ((0, -2), (2, None)):
            sl = tuple(slice(lo, hi) if j == k else slice(1, -1) for j in range(D))
            grad[sl] += s
    return loss, grad


def loss_and_gradient(template: np.ndarray, label: np.ndarray, f: np.ndarray, config: LossConfig):
    """Loss breakdown of field array ``f`` and the gradient of its total.

    Also returns the soft warped template so callers need not warp twice.
    """
    D = f.ndim - 1
    grad = np.zeros_like(f)

    pred, dpred = warp_values(template, f, with_grad=True)
    d, inter, denom = _dice(pred, label, config.dice_smoothing)
    if config.lambda_dice:
        numer = 2.0 * inter + config.dice_smoothing
        dd_dp = -(2.0 * label * denom - numer) / denom**2
        grad += config.lambda_dice * dd_dp[..., None] * dpred

    j, gj = _jacobian_loss_grad(f, config.epsilon)
    if config.lambda_jac:
        grad += config.lambda_jac * gj

    if min(f.shape[:D]) >= 3:
        lap, gl = _laplacian_loss_grad(f)
    else:
        lap, gl = 0.0, 0.0
    if config.lambda_lap:
        grad += config.lambda_lap * gl

    total = config.lambda_dice * d + config.lambda_jac * j + config.lambda_lap * lap
    return LossBreakdown(float(d), float(j), float(lap), float(total)), grad, pred


def total_loss_gradient(template: MaskGrid, label: MaskGrid, f: DeformationField,
                        config: LossConfig = LossConfig()) -> np.ndarray:
    """Gradient of the total loss w.r.t. every coordinate of ``f``.

    Returned with the field's array shape ``dims + (D,)``.
    """
    if template.dims != f.dims or label.dims != f.dims:
        raise ValueError(f"dimension mismatch: template {template.dims}, label {label.dims}, field {f.dims}")
    _, grad, _ = loss_and_gradient(template.data, label.data, f.data, config)
    return grad
