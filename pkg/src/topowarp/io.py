"""Grid file formats: raw float32 + JSON sidecar, and binary PGM for 2D."""
from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path

import numpy as np

from .grids import DeformationField, MaskGrid, ScalarGrid

KINDS = ("scalar", "mask", "field")


class GridFormatError(ValueError):
    """Malformed or inconsistent grid file."""


def atomic_write_bytes(path, payload: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str) -> None:
    atomic_write_bytes(path, text.encode("utf-8"))


def grid_paths(path) -> tuple[Path, Path]:
    """``(raw, sidecar)`` for a path given as stem, ``.raw`` or ``.json``."""
    p = Path(path)
    if p.suffix in (".raw", ".json"):
        p = p.with_suffix("")
    return p.with_name(p.name + ".raw"), p.with_name(p.name + ".json")


def _kind_of(grid) -> str:
    if isinstance(grid, DeformationField):
        return "field"
    if isinstance(grid, MaskGrid):
        return "mask"
    return "scalar"


def encode_raw(grid) -> bytes:
    """Node-major little-endian float32 bytes, x fastest, channels innermost."""
    data = grid.data
    if isinstance(grid, DeformationField):
        data = np.moveaxis(data, -1, 0)
    return np.asarray(data, dtype="<f4").ravel(order="F").tobytes()


def sidecar(grid) -> dict:
    return {
        "dims": list(grid.dims),
        "spacing": list(grid.spacing),
        "channels": grid.channels if isinstance(grid, DeformationField) else 1,
        "kind": _kind_of(grid),
    }


def write_grid(path, grid) -> tuple[Path, Path]:
    raw, meta = grid_paths(path)
    atomic_write_bytes(raw, encode_raw(grid))
    atomic_write_text(meta, json.dumps(sidecar(grid)) + "\n")
    return raw, meta


def read_grid(path, kind: str | None = None):
    """Load a raw+sidecar grid; ``kind`` (if given) must match the sidecar."""
    raw, meta_path = grid_paths(path)
    try:
        meta = json.loads(meta_path.read_text())
    except FileNotFoundError:
        raise GridFormatError(f"{meta_path}: sidecar not found") from None
    except json.JSONDecodeError as exc:
        raise GridFormatError(f"{meta_path}: invalid JSON ({exc})") from None
    for key in ("dims", "spacing", "channels", "kind"):
        if key not in meta:
            raise GridFormatError(f"{meta_path}: missing field '{key}'")
    if meta["kind"] not in KINDS:
        raise GridFormatError(f"{meta_path}: field 'kind' must be one of {KINDS}")
    if kind is not None and meta["kind"] != kind:
        raise GridFormatError(f"{meta_path}: field 'kind' is {meta['kind']!r}, expected {kind!r}")
    dims = [int(n) for n in meta["dims"]]
    if len(dims) not in (2, 3):
        raise GridFormatError(f"{meta_path}: field 'dims' must have 2 or 3 entries")
    channels = int(meta["channels"])
    expected_channels = len(dims) if meta["kind"] == "field" else 1
    if channels != expected_channels:
        raise GridFormatError(f"{meta_path}: field 'channels' is {channels}, expected {expected_channels}")
    try:
        buf = np.fromfile(raw, dtype="<f4")
    except FileNotFoundError:
        raise GridFormatError(f"{raw}: raw data not found") from None
    n = int(np.prod(dims)) * channels
    if buf.size != n:
        raise GridFormatError(f"{raw}: holds {buf.size} floats, 'dims' x 'channels' needs {n}")
    data = buf.astype(np.float64)
    spacing = meta["spacing"]
    try:
        if meta["kind"] == "field":
            arr = data.reshape([channels] + dims, order="F")
            return DeformationField(np.moveaxis(arr, 0, -1), spacing)
        arr = data.reshape(dims, order="F")
        if meta["kind"] == "mask":
            return MaskGrid(arr, spacing)
        return ScalarGrid(arr, spacing)
    except ValueError as exc:
        raise GridFormatError(f"{raw}: {exc}") from None


def write_pgm(path, grid) -> None:
    if grid.ndim != 2:
        raise ValueError("PGM export is 2D only")
    vals = np.clip(np.rint(np.asarray(grid.data) * 255.0), 0, 255).astype(np.uint8)
    nx, ny = grid.dims
    header = f"P5\n{nx} {ny}\n255\n".encode("ascii")
    # PGM rows run along x, one row per y.
    atomic_write_bytes(path, header + vals.T.tobytes())


def read_pgm(path, mask: bool = False):
    payload = Path(path).read_bytes()
    tokens, pos = [], 0
    while len(tokens) < 4:
        while pos < len(payload) and payload[pos:pos + 1].isspace():
            pos += 1
        if payload[pos:pos + 1] == b"#":
            while pos < len(payload) and payload[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(payload) and not payload[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise GridFormatError(f"{path}: truncated PGM header")
        tokens.append(payload[start:pos])
    if tokens[0] != b"P5":
        raise GridFormatError(f"{path}: not a binary PGM (P5)")
    nx, ny, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise GridFormatError(f"{path}: only maxval 255 is supported")
    body = payload[pos + 1:pos + 1 + nx * ny]
    if len(body) != nx * ny:
        raise GridFormatError(f"{path}: pixel data truncated")
    arr = np.frombuffer(body, dtype=np.uint8).reshape(ny, nx).T / 255.0
    return MaskGrid(arr) if mask else ScalarGrid(arr)


def load_any(path, kind: str | None = None):
    """Read either a PGM or a raw+sidecar grid."""
    if Path(path).suffix.lower() == ".pgm":
        return read_pgm(path, mask=(kind == "mask"))
    return read_grid(path, kind)
