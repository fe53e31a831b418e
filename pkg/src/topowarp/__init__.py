"""Topology-preserving segmentation by deforming a template mask."""
from .deform import JacobianGrid, jacobian_determinant, laplacian, min_determinant, warp_mask
from .grids import (DeformationField, MaskGrid, ScalarGrid, downsample, interpolate,
                    make_identity_field, sample_linear, upsample, upsample_field)
from .io import GridFormatError, read_grid, read_pgm, write_grid, write_pgm
from .loss import (LossBreakdown, LossConfig, dice_loss, jacobian_loss, laplacian_loss, total_loss,
                   total_loss_gradient)
from .metrics import ScoreRow, ScoreTable, aggregate, dice_score, iou_score
from .solver import (SolveConfig, SolveResult, SolverDivergedError, derive_target_mask, otsu_threshold,
                     solve_multilevel, solve_single_level)
from .topology import (EmptyMaskWarning, TopologyReport, cca_postprocess, certify, connected_components,
                       euler_characteristic)

__version__ = "0.1.0"

__all__ = [
    "ScalarGrid", "MaskGrid", "DeformationField", "make_identity_field", "interpolate", "sample_linear",
    "downsample", "upsample", "upsample_field",
    "JacobianGrid", "jacobian_determinant", "min_determinant", "laplacian", "warp_mask",
    "LossConfig", "LossBreakdown", "dice_loss", "jacobian_loss", "laplacian_loss", "total_loss",
    "total_loss_gradient",
    "SolveConfig", "SolveResult", "SolverDivergedError", "solve_single_level", "solve_multilevel",
    "derive_target_mask", "otsu_threshold",
    "TopologyReport", "EmptyMaskWarning", "connected_components", "euler_characteristic", "cca_postprocess",
    "certify",
    "ScoreRow", "ScoreTable", "aggregate", "dice_score", "iou_score",
    "GridFormatError", "read_grid", "write_grid", "read_pgm", "write_pgm",
]
