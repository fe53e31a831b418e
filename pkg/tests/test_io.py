import json

import numpy as np
import pytest

from topowarp.deform import jacobian_determinant
from topowarp.grids import DeformationField, MaskGrid, ScalarGrid, make_identity_field
from topowarp.io import GridFormatError, grid_paths, load_any, read_grid, read_pgm, write_grid, write_pgm


def test_grid_paths_accepts_stem_raw_or_json(tmp_path):
    want = (tmp_path / "a.raw", tmp_path / "a.json")
    for name in ("a", "a.raw", "a.json"):
        assert grid_paths(tmp_path / name) == want


@pytest.mark.parametrize("grid", [
    ScalarGrid(np.random.default_rng(0).random((4, 5)), spacing=(0.5, 2.0)),
    MaskGrid(np.random.default_rng(1).random((3, 4, 5))),
    DeformationField(np.random.default_rng(2).normal(size=(4, 3, 2))),
    DeformationField(np.random.default_rng(3).normal(size=(2, 3, 4, 3))),
])
def test_round_trip(tmp_path, grid):
    write_grid(tmp_path / "g", grid)
    back = read_grid(tmp_path / "g")
    assert type(back) is type(grid)
    assert back.dims == grid.dims and back.spacing == grid.spacing
    np.testing.assert_array_equal(back.data, grid.data.astype(np.float32).astype(np.float64))


def test_node_order_x_fastest(tmp_path):
    data = np.arange(6, dtype=float).reshape(3, 2)  # data[x, y] = 2x + y
    write_grid(tmp_path / "s", ScalarGrid(data))
    raw = np.fromfile(tmp_path / "s.raw", dtype="<f4")
    # node (x, y) at offset x + 3y
    assert raw.tolist() == [data[x, y] for y in range(2) for x in range(3)]


def test_field_channels_innermost(tmp_path):
    f = make_identity_field((3, 2))
    write_grid(tmp_path / "f", f)
    raw = np.fromfile(tmp_path / "f.raw", dtype="<f4").reshape(-1, 2)
    assert raw.tolist() == [[x, y] for y in range(2) for x in range(3)]


def test_sidecar_fields(tmp_path):
    write_grid(tmp_path / "f", make_identity_field((3, 4, 5)))
    meta = json.loads((tmp_path / "f.json").read_text())
    assert meta == {"dims": [3, 4, 5], "spacing": [1.0, 1.0, 1.0], "channels": 3, "kind": "field"}


def test_jacobian_exports_as_scalar(tmp_path):
    write_grid(tmp_path / "j", jacobian_determinant(make_identity_field((4, 4))))
    meta = json.loads((tmp_path / "j.json").read_text())
    assert meta["kind"] == "scalar" and meta["dims"] == [3, 3]


def _write_pair(tmp_path, meta, n_floats):
    (tmp_path / "g.json").write_text(json.dumps(meta))
    np.zeros(n_floats, dtype="<f4").tofile(tmp_path / "g.raw")


@pytest.mark.parametrize("meta,n,field", [
    ({"dims": [2, 2], "spacing": [1, 1], "channels": 1}, 4, "kind"),
    ({"dims": [2, 2], "spacing": [1, 1], "channels": 1, "kind": "vector"}, 4, "kind"),
    ({"dims": [2, 2], "spacing": [1, 1], "channels": 1, "kind": "scalar"}, 5, "dims"),
    ({"dims": [2, 2], "spacing": [1, 1], "channels": 1, "kind": "field"}, 8, "channels"),
    ({"dims": [4], "spacing": [1], "channels": 1, "kind": "scalar"}, 4, "dims"),
])
def test_format_errors_name_the_field(tmp_path, meta, n, field):
    _write_pair(tmp_path, meta, n)
    with pytest.raises(GridFormatError, match=f"'{field}'"):
        read_grid(tmp_path / "g")


def test_kind_mismatch_rejected(tmp_path):
    write_grid(tmp_path / "g", ScalarGrid(np.zeros((2, 2))))
    with pytest.raises(GridFormatError, match="expected 'mask'"):
        read_grid(tmp_path / "g", kind="mask")


def test_missing_files(tmp_path):
    with pytest.raises(GridFormatError, match="sidecar"):
        read_grid(tmp_path / "nope")
    (tmp_path / "g.json").write_text('{"dims": [2, 2], "spacing": [1, 1], "channels": 1, "kind": "scalar"}')
    with pytest.raises(GridFormatError, match="raw"):
        read_grid(tmp_path / "g")


def test_bad_json(tmp_path):
    (tmp_path / "g.json").write_text("{not json")
    with pytest.raises(GridFormatError, match="invalid JSON"):
        read_grid(tmp_path / "g")


def test_mask_values_checked_on_read(tmp_path):
    write_grid(tmp_path / "g", ScalarGrid(np.full((2, 2), 3.0)))
    meta = json.loads((tmp_path / "g.json").read_text())
    meta["kind"] = "mask"
    (tmp_path / "g.json").write_text(json.dumps(meta))
    with pytest.raises(GridFormatError):
        read_grid(tmp_path / "g")


def test_pgm_round_trip(tmp_path):
    vals = np.random.default_rng(4).integers(0, 256, (7, 5)) / 255.0
    write_pgm(tmp_path / "a.pgm", ScalarGrid(vals))
    payload = (tmp_path / "a.pgm").read_bytes()
    assert payload.startswith(b"P5\n7 5\n255\n")
    back = read_pgm(tmp_path / "a.pgm")
    np.testing.assert_allclose(back.data, vals, atol=1e-12)
    assert isinstance(load_any(tmp_path / "a.pgm", "mask"), MaskGrid)


def test_pgm_scales_and_rounds(tmp_path):
    write_pgm(tmp_path / "b.pgm", ScalarGrid(np.array([[0.0, 0.5], [1.0, 0.2]])))
    body = (tmp_path / "b.pgm").read_bytes()[-4:]
    # rows run along x: (0,0) (1,0) then (0,1) (1,1)
    assert list(body) == [0, 255, 128, 51]


def test_pgm_rejects_3d_and_bad_magic(tmp_path):
    with pytest.raises(ValueError):
        write_pgm(tmp_path / "c.pgm", ScalarGrid(np.zeros((2, 2, 2))))
    (tmp_path / "d.pgm").write_bytes(b"P2\n2 2\n255\n0 0 0 0")
    with pytest.raises(GridFormatError, match="P5"):
        read_pgm(tmp_path / "d.pgm")


def test_atomic_write_leaves_no_temp_files(tmp_path):
    write_grid(tmp_path / "g", ScalarGrid(np.zeros((3, 3))))
    assert sorted(p.name for p in tmp_path.iterdir()) == ["g.json", "g.raw"]
