import json

import numpy as np
import pytest
from scipy.ndimage import distance_transform_edt

from oracles import gaussian_blob
from topowarp.grids import MaskGrid, ScalarGrid, make_identity_field
from topowarp.loss import LossConfig
from topowarp.metrics import dice_score
from topowarp.solver import (SolveConfig, SolverDivergedError, derive_target_mask, loss_history_csv, otsu_threshold,
                             solve_multilevel, solve_single_level)
from topowarp.synth import make_fixture
from topowarp.topology import connected_components


def same_result(a, b):
    return (np.array_equal(a.field.data, b.field.data) and np.array_equal(a.soft_mask.data, b.soft_mask.data)
            and a.loss_history == b.loss_history and a.topology == b.topology)


@pytest.fixture(scope="module")
def disk():
    return make_fixture("disk", (64, 64), 0.0, 0, radius=20, template_offset=(6, 4))


# --- SolveConfig -----------------------------------------------------------

def test_config_defaults_and_json():
    c = SolveConfig()
    assert (c.max_iters, c.step_size, c.optimizer, c.convergence_tol, c.seed) == (500, 0.05, "adaptive-moment",
                                                                                 1e-6, 0)
    d = json.loads(c.to_json())
    assert set(d) == {"loss", "max_iters", "step_size", "optimizer", "convergence_tol", "seed"}
    assert SolveConfig.from_json(c.to_json()) == c


def test_config_rejects_unknown_and_invalid():
    with pytest.raises(ValueError, match="momentum"):
        SolveConfig.from_dict({"momentum": 0.9})
    with pytest.raises(ValueError, match="lambda_x"):
        SolveConfig.from_dict({"loss": {"lambda_x": 1.0}})
    for kw in ({"max_iters": 0}, {"step_size": 0.0}, {"convergence_tol": -1.0}, {"optimizer": "rmsprop"}):
        with pytest.raises(ValueError):
            SolveConfig(**kw)


def test_config_replace_merges_loss():
    c = SolveConfig().replace(max_iters=7, loss={"epsilon": 0.2})
    assert c.max_iters == 7 and c.loss == LossConfig(epsilon=0.2)


# --- solve_single_level ----------------------------------------------------

def test_target_equal_to_template_stops_at_identity(disk):
    r = solve_single_level(disk.image, disk.template, disk.template)
    assert r.iterations <= 1
    assert r.loss_history[-1].total == 0.0
    assert np.array_equal(r.field.data, make_identity_field((64, 64)).data)


@pytest.mark.xfail(strict=True, reason="single-level solve plateaus near Dice 0.65 on this fixture; "
                                       "the multi-level solve reaches it (see next test)")
def test_single_level_disk_example(disk):
    r = solve_single_level(disk.image, disk.template, disk.mask)
    assert r.topology.min_determinant > 0
    assert dice_score(r.mask, disk.mask) >= 0.98


def test_multilevel_disk_example(disk):
    r = solve_multilevel(disk.image, disk.template, disk.mask)
    assert r.topology.min_determinant > 0
    assert dice_score(r.mask, disk.mask) >= 0.98


def test_topology_overrides_fidelity():
    fx = make_fixture("two-blobs", (32, 32), 0.0, 0)
    assert connected_components(fx.mask)[1] == 2
    r = solve_single_level(fx.image, fx.template, fx.mask)
    assert connected_components(r.mask)[1] == 1
    assert dice_score(r.mask, fx.mask) < 1.0


def test_result_invariants(disk):
    r = solve_single_level(disk.image, disk.template, disk.mask, SolveConfig(max_iters=60))
    assert r.loss_history and r.loss_history[-1].total <= r.loss_history[0].total
    assert np.array_equal(r.mask.data, r.soft_mask.binarize().data)
    assert r.field.dims == (64, 64)


def test_iterations_never_exceed_max_iters(disk):
    # an earlier kept iterate adds a history row but is not an extra update
    r = solve_single_level(disk.image, disk.template, disk.mask, SolveConfig(max_iters=40, convergence_tol=0.0))
    assert r.iterations == 40
    assert len(r.loss_history) in (41, 42)


def test_gradient_descent_small_step_is_monotone():
    fx = make_fixture("disk", (64, 64), 0.05, 0, radius=20)
    cfg = SolveConfig(optimizer="gradient-descent", step_size=1e-3, convergence_tol=0.0, max_iters=300)
    r = solve_single_level(fx.image, fx.template, derive_target_mask(fx.image), cfg)
    totals = np.array([b.total for b in r.loss_history])
    assert r.iterations == 300
    assert np.all(np.diff(totals[5:]) <= 0.0)


def test_solve_is_deterministic(disk):
    cfg = SolveConfig(max_iters=80)
    a = solve_single_level(disk.image, disk.template, disk.mask, cfg)
    b = solve_single_level(disk.image, disk.template, disk.mask, cfg)
    assert same_result(a, b)


def test_divergence_raises():
    fx = make_fixture("disk", (16, 16), 0.0, 0, radius=5)
    cfg = SolveConfig(optimizer="gradient-descent", step_size=1e300, max_iters=5)
    with pytest.raises(SolverDivergedError, match="step_size"):
        solve_single_level(fx.image, fx.template, fx.mask, cfg)


def test_dims_mismatch():
    a = ScalarGrid(np.zeros((8, 8)))
    with pytest.raises(ValueError, match="mismatch"):
        solve_single_level(a, MaskGrid(np.zeros((8, 8))), MaskGrid(np.zeros((8, 9))))


def test_loss_history_csv():
    fx = make_fixture("disk", (16, 16), 0.0, 0, radius=5)
    r = solve_single_level(fx.image, fx.template, fx.mask, SolveConfig(max_iters=3))
    lines = loss_history_csv(r.loss_history).splitlines()
    assert lines[0] == "iter,dice,jacobian,laplacian,total"
    assert len(lines) == len(r.loss_history) + 1
    assert float(lines[1].split(",")[4]) == r.loss_history[0].total


# --- solve_multilevel ------------------------------------------------------

def test_one_level_is_single_level(disk):
    cfg = SolveConfig(max_iters=50)
    assert same_result(solve_multilevel(disk.image, disk.template, disk.mask, 1, cfg),
                       solve_single_level(disk.image, disk.template, disk.mask, cfg))


def test_multilevel_beats_single_on_elongated_star():
    fx = make_fixture("star", (128, 128), 0.0, 0, radius=36, arms=5, amplitude=0.3, stretch=1.3)
    one = solve_multilevel(fx.image, fx.template, fx.mask, 1)
    three = solve_multilevel(fx.image, fx.template, fx.mask, 3)
    assert dice_score(three.mask, fx.mask) >= dice_score(one.mask, fx.mask)


def test_empty_problem():
    z = np.zeros((16, 16))
    r = solve_multilevel(ScalarGrid(z), MaskGrid(z), MaskGrid(z), 3)
    assert not r.mask.data.any()
    assert r.loss_history[-1].total == 0.0


def test_multilevel_pads_and_crops():
    fx = make_fixture("disk", (30, 34), 0.0, 0, radius=9)
    r = solve_multilevel(fx.image, fx.template, fx.mask, 3, SolveConfig(max_iters=100))
    assert r.mask.dims == (30, 34) and r.field.dims == (30, 34)
    assert r.topology.matches_template


def test_multilevel_rejects_bad_levels():
    z = np.zeros((8, 8))
    with pytest.raises(ValueError):
        solve_multilevel(ScalarGrid(z), MaskGrid(z), MaskGrid(z), 0)
    with pytest.raises(ValueError, match="too small"):
        solve_multilevel(ScalarGrid(z), MaskGrid(z), MaskGrid(z), 4)


# --- derive_target_mask ----------------------------------------------------

def test_bimodal_image_gives_blob_support():
    fx = make_fixture("disk", (32, 32), 0.0, 0, radius=8)
    assert np.array_equal(derive_target_mask(fx.image).data, fx.mask.data)


def test_provided_passthrough():
    m = MaskGrid(np.eye(6))
    assert derive_target_mask(ScalarGrid(np.zeros((6, 6))), "provided", m) is m
    with pytest.raises(ValueError):
        derive_target_mask(ScalarGrid(np.zeros((6, 6))), "provided")


def test_constant_image_rejected():
    with pytest.raises(ValueError, match="constant"):
        derive_target_mask(ScalarGrid(np.full((6, 6), 0.3)))
    with pytest.raises(ValueError):
        derive_target_mask(ScalarGrid(np.eye(6)), "k-means")


def _hausdorff(a, b):
    da = distance_transform_edt(~a)
    db = distance_transform_edt(~b)
    return max(da[b].max(), db[a].max())


def test_otsu_on_gaussian_blob_near_half_maximum():
    g = gaussian_blob((64, 64), (31.5, 31.5), 4.0)
    m = derive_target_mask(ScalarGrid(g)).as_bool()
    assert _hausdorff(m, g >= 0.5) <= 2.0


def test_otsu_threshold_separates_two_levels():
    v = np.r_[np.full(100, 0.1), np.full(50, 0.9)]
    t = otsu_threshold(v)
    assert 0.1 < t <= 0.9
