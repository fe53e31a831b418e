"""
Per-image optimisation of the deformation field, single level and
coarse-to-fine.

The field starts at the identity and is updated by plain gradient descent or
Adam on the total loss.  Each pyramid level restarts from the identity; only
the predicted soft mask is carried to the next, finer level as its template.

A positive Jacobian does not stop a thresholded mask from pinching apart
where the warp compresses a neck below one pixel.  The solver therefore
returns the lowest-loss iterate whose binarized mask still has the
template's component count and Euler characteristic, falling back to the
lowest-loss iterate overall (reported as a mismatch) only if none does.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .deform import jacobian_determinant
from .grids import (DeformationField, MaskGrid, ScalarGrid, crop, downsample,
                    make_identity_field, pad_to_multiple, upsample)
from .loss import LossBreakdown, LossConfig, loss_and_gradient
from .topology import TopologyReport, certify, connected_components, euler_characteristic

log = logging.getLogger(__name__)

OPTIMIZERS = ("gradient-descent", "adaptive-moment")
TARGET_METHODS = ("otsu-threshold", "provided")

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


class SolverDivergedError(RuntimeError):
    """The loss became non-finite during optimisation."""


@dataclass(frozen=True)
class SolveConfig:
    loss: LossConfig = field(default_factory=LossConfig)
    max_iters: int = 500
    step_size: float = 0.05
    optimizer: str = "adaptive-moment"
    convergence_tol: float = 1e-6
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.loss, dict):
            object.__setattr__(self, "loss", LossConfig.from_dict(self.loss))
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ValueError(f"max_iters must be a positive integer, got {self.max_iters}")
        if not self.step_size > 0:
            raise ValueError(f"step_size must be positive, got {self.step_size}")
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if not self.convergence_tol >= 0:
            raise ValueError(f"convergence_tol must be >= 0, got {self.convergence_tol}")
        object.__setattr__(self, "max_iters", int(self.max_iters))
        object.__setattr__(self, "seed", int(self.seed))

    @classmethod
    def from_dict(cls, d: dict) -> "SolveConfig":
        known = {f.name for f in fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ValueError(f"unknown SolveConfig field(s): {', '.join(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, text: str) -> "SolveConfig":
        return cls.from_dict(json.loads(text))

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def replace(self, **changes) -> "SolveConfig":
        d = self.to_dict()
        loss_changes = changes.pop("loss", {})
        d.update(changes)
        d["loss"] = {**d["loss"], **loss_changes}
        return SolveConfig.from_dict(d)


@dataclass(frozen=True)
class SolveResult:
    field: DeformationField
    soft_mask: MaskGrid
    mask: MaskGrid
    loss_history: list
    topology: TopologyReport
    iterations: int  # optimizer updates taken on the (final) level


def loss_history_csv(history) -> str:
    lines = ["iter,dice,jacobian,laplacian,total"]
    for i, b in enumerate(history):
        lines.append(f"{i},{b.dice!r},{b.jacobian!r},{b.laplacian!r},{b.total!r}")
    return "\n".join(lines) + "\n"


def _check_inputs(image, template, target):
    if not (image.dims == template.dims == target.dims):
        raise ValueError(
            f"dimension mismatch: image {image.dims}, template {template.dims}, target {target.dims}"
        )


def _finish(f: np.ndarray, soft: np.ndarray, history, iterations: int, template: MaskGrid, spacing) -> SolveResult:
    field_ = DeformationField(f, spacing)
    soft_mask = MaskGrid(soft, spacing, template.threshold)
    mask = soft_mask.binarize()
    report = certify(mask, template.binarize(), jacobian_determinant(field_))
    return SolveResult(field_, soft_mask, mask, history, report, iterations)


def _topology_signature(binary: np.ndarray) -> tuple[int, int]:
    return connected_components(binary)[1], euler_characteristic(binary)


def _keeps_topology(soft: np.ndarray, want, threshold: float, handoff: int) -> bool:
    if handoff > 1:
        soft = upsample(MaskGrid(soft, threshold=threshold), handoff).data
    return _topology_signature((soft >= threshold).astype(np.float64)) == want


def solve_single_level(image: ScalarGrid, template: MaskGrid, target: MaskGrid,
                       config: SolveConfig = SolveConfig()) -> SolveResult:
    """Warp ``template`` onto ``target`` by optimising a deformation field.

    The loop stops after ``config.max_iters`` updates, when the relative
    change of the total loss drops below ``config.convergence_tol``, or as
    soon as the total reaches zero (the loss is non-negative, so zero is
    optimal).  The iterate returned is the lowest-loss one whose binarized
    mask keeps the template's topology.

    Raises
    ------
    ValueError
        Inputs do not share dims.
    SolverDivergedError
        The loss became NaN or infinite, usually a step size that is too large.
    """
    _check_inputs(image, template, target)
    want = _topology_signature(template.binarize().data)
    return _solve(template, target, config, want, handoff=1)


def _solve(template: MaskGrid, target: MaskGrid, config: SolveConfig, want, handoff: int) -> SolveResult:
    cfg = config.loss
    thr = template.threshold
    tmpl, label = template.data, target.data
    f = make_identity_field(template.dims).data.copy()
    m = np.zeros_like(f)
    v = np.zeros_like(f)

    history: list[LossBreakdown] = []
    best = None  # (total, field, soft, breakdown) of the best topology-keeping iterate
    fallback = None
    # overflow shows up as a non-finite loss and is reported as divergence
    with np.errstate(over="ignore", invalid="ignore"):
        for it in range(config.max_iters + 1):
            breakdown, grad, soft = loss_and_gradient(tmpl, label, f, cfg)
            if not np.isfinite(breakdown.total) or not np.all(np.isfinite(grad)):
                raise SolverDivergedError(
                    f"non-finite loss at iteration {it} (total={breakdown.total}); "
                    f"reduce step_size (currently {config.step_size})"
                )
            history.append(breakdown)
            if best is None or breakdown.total < best[0]:
                if _keeps_topology(soft, want, thr, handoff):
                    best = (breakdown.total, f.copy(), soft, breakdown)
                elif fallback is None or breakdown.total < fallback[0]:
                    fallback = (breakdown.total, f.copy(), soft, breakdown)
            if breakdown.total == 0.0 or it == config.max_iters:
                break
            if it > 0:
                prev = history[-2].total
                if abs(prev - breakdown.total) <= config.convergence_tol * abs(prev):
                    break

            if config.optimizer == "adaptive-moment":
                t = it + 1
                m = ADAM_BETA1 * m + (1.0 - ADAM_BETA1) * grad
                v = ADAM_BETA2 * v + (1.0 - ADAM_BETA2) * grad * grad
                m_hat = m / (1.0 - ADAM_BETA1**t)
                v_hat = v / (1.0 - ADAM_BETA2**t)
                f = f - config.step_size * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
            else:
                f = f - config.step_size * grad

    if best is None:
        log.warning("no iterate kept the template topology; returning the lowest-loss one")
        best = fallback
    total, best_f, best_soft, best_breakdown = best
    iterations = len(history) - 1
    # the last history row is always the returned iterate, even when an earlier one was kept
    if history[-1] is not best_breakdown:
        history.append(best_breakdown)
    log.debug("solve: %d iterations, total %.6g", iterations, total)
    return _finish(best_f, best_soft, history, iterations, template, template.spacing)


def solve_multilevel(image: ScalarGrid, template: MaskGrid, target: MaskGrid, levels: int = 3,
                     config: SolveConfig = SolveConfig()) -> SolveResult:
    """Coarse-to-fine solve over ``levels`` resolutions (factors ..., 4, 2, 1).

    The coarsest level deforms the block-averaged user template; every finer
    level deforms the upsampled soft prediction of the level before.  The
    returned topology report compares the final mask with the user template.
    """
    _check_inputs(image, template, target)
    levels = int(levels)
    if levels < 1:
        raise ValueError(f"levels must be >= 1, got {levels}")
    if levels == 1:
        return solve_single_level(image, template, target, config)

    dims = image.dims
    coarsest = 2 ** (levels - 1)
    img = ScalarGrid(pad_to_multiple(image.data, coarsest)[0], image.spacing)
    tgt = MaskGrid(pad_to_multiple(target.data, coarsest)[0], target.spacing, target.threshold)
    tmpl0 = MaskGrid(pad_to_multiple(template.data, coarsest)[0], template.spacing, template.threshold)
    if min(img.dims) // coarsest < 2:
        raise ValueError(f"dims {dims} too small for {levels} levels")

    want = _topology_signature(template.binarize().data)
    level_template = downsample(tmpl0, coarsest)
    result = None
    for k in range(levels):
        factor = 2 ** (levels - 1 - k)
        if result is not None:
            level_template = upsample(result.soft_mask, 2)
        handoff = 2 if factor > 1 else 1
        result = _solve(level_template, downsample(tgt, factor), config, want, handoff)
        log.debug("level %d/%d (1/%d): Dice loss %.4f", k + 1, levels, factor, result.loss_history[-1].dice)

    f = crop(result.field, dims).data
    soft = crop(result.soft_mask, dims).data
    final = _finish(f, soft, result.loss_history, result.iterations, template, template.spacing)
    return final


def otsu_threshold(values: np.ndarray, bins: int = 256) -> float:
    """Threshold maximising the between-class variance of a histogram."""
    values = np.asarray(values, dtype=np.float64).ravel()
    lo, hi = float(values.min()), float(values.max())
    if hi == lo:
        raise ValueError("cannot threshold a constant image")
    hist, edges = np.histogram(values, bins=bins, range=(lo, hi))
    centers = 0.5 * (edges[:-1] + edges[1:])
    w0 = np.cumsum(hist).astype(np.float64)
    w1 = w0[-1] - w0
    s0 = np.cumsum(hist * centers)
    m0 = s0 / np.where(w0 > 0, w0, 1.0)
    m1 = (s0[-1] - s0) / np.where(w1 > 0, w1, 1.0)
    between = w0 * w1 * (m0 - m1) ** 2
    # class 0 is bins 0..k, so the cut sits on the upper edge of bin k
    return float(edges[int(np.argmax(between[:-1])) + 1])


def derive_target_mask(image: ScalarGrid, method: str = "otsu-threshold",
                       provided: MaskGrid | None = None) -> MaskGrid:
    """Fidelity target: an Otsu mask of the image, or a supplied mask."""
    if method == "provided":
        if provided is None:
            raise ValueError("method 'provided' needs a mask")
        return provided
    if method != "otsu-threshold":
        raise ValueError(f"method must be one of {TARGET_METHODS}, got {method!r}")
    t = otsu_threshold(image.data)
    return MaskGrid((image.data >= t).astype(np.float64), image.spacing)
