"""Command-line front end.

Exit codes: 0 success, 1 usage / I/O / format error, 2 topology check failed.
"""
from __future__ import annotations

import argparse
import json
import logging
import shutil
import sys
import tempfile
from pathlib import Path

import numpy as np
from scipy import ndimage

from . import __version__
from .deform import jacobian_determinant
from .grids import MaskGrid, ScalarGrid
from .io import GridFormatError, atomic_write_text, grid_paths, load_any, write_grid, write_pgm
from .metrics import ScoreRow, aggregate, dice_score, iou_score
from .solver import (OPTIMIZERS, SolveConfig, SolverDivergedError, derive_target_mask,
                     loss_history_csv, solve_multilevel)
from .synth import SHAPES, make_fixture
from .topology import cca_postprocess, certify

log = logging.getLogger("topowarp")

EXIT_OK, EXIT_ERROR, EXIT_TOPOLOGY = 0, 1, 2


class CliError(Exception):
    pass


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------

def _load(path, kind=None, what="input"):
    if path is None:
        raise CliError(f"missing {what} path")
    p = Path(path)
    raw, meta = grid_paths(p)
    if not (p.exists() or meta.exists()):
        raise CliError(f"{what}: {path} not found")
    try:
        return load_any(p, kind)
    except GridFormatError as exc:
        raise CliError(f"{what}: {exc}") from None
    except ValueError as exc:
        raise CliError(f"{what} {path}: {exc}") from None


def _as_mask(grid, what):
    if isinstance(grid, MaskGrid):
        return grid
    try:
        return MaskGrid(grid.data, grid.spacing)
    except ValueError as exc:
        raise CliError(f"{what}: {exc}") from None


class _Staging:
    """Write outputs into a hidden sibling directory, then move them into place."""

    def __init__(self, out: Path):
        self.out = Path(out)
        self.out.parent.mkdir(parents=True, exist_ok=True)
        self.dir = Path(tempfile.mkdtemp(dir=self.out.parent, prefix=f".{self.out.name}."))
        self.names: list[str] = []

    def path(self, name: str) -> Path:
        self.names.append(name)
        return self.dir / name

    def grid(self, stem: str, grid):
        raw, meta = write_grid(self.dir / stem, grid)
        self.names += [raw.name, meta.name]

    def commit(self):
        self.out.mkdir(parents=True, exist_ok=True)
        for name in self.names:  # manifest first: it was staged first
            (self.dir / name).replace(self.out / name)
        shutil.rmtree(self.dir, ignore_errors=True)

    def abort(self):
        shutil.rmtree(self.dir, ignore_errors=True)


def _overlay(image: ScalarGrid, mask: MaskGrid) -> ScalarGrid:
    """Image dimmed to half intensity with the mask boundary drawn white."""
    m = mask.as_bool()
    inner = ndimage.binary_erosion(m, border_value=0)
    data = 0.5 * np.asarray(image.data)
    data[m & ~inner] = 1.0
    return ScalarGrid(data)


# ---------------------------------------------------------------------------
# segment
# ---------------------------------------------------------------------------

def _solve_config(args) -> SolveConfig:
    cfg = SolveConfig()
    if args.config:
        try:
            cfg = SolveConfig.from_json(Path(args.config).read_text())
        except FileNotFoundError:
            raise CliError(f"config: {args.config} not found") from None
        except (ValueError, TypeError) as exc:
            raise CliError(f"config {args.config}: {exc}") from None
    changes, loss_changes = {}, {}
    for flag, key in (("max_iters", "max_iters"), ("step_size", "step_size"),
                      ("optimizer", "optimizer"), ("seed", "seed")):
        if getattr(args, flag, None) is not None:
            changes[key] = getattr(args, flag)
    if getattr(args, "epsilon", None) is not None:
        loss_changes["epsilon"] = args.epsilon
    if changes or loss_changes:
        try:
            cfg = cfg.replace(loss=loss_changes, **changes)
        except ValueError as exc:
            raise CliError(str(exc)) from None
    return cfg


def run_segment(image_path, template_path, target_path, config: SolveConfig, levels: int, out) -> int:
    image = _load(image_path, what="image")
    template = _as_mask(_load(template_path, what="template"), "template")
    if target_path is not None:
        target = _as_mask(_load(target_path, what="target"), "target")
        method = "provided"
    else:
        target, method = None, "otsu-threshold"
    dims = {"image": image.dims, "template": template.dims}
    if target is not None:
        dims["target"] = target.dims
    if len(set(dims.values())) != 1:
        raise CliError("dims mismatch: " + ", ".join(f"{k} {v}" for k, v in dims.items()))
    if levels < 1:
        raise CliError(f"--levels must be >= 1, got {levels}")

    image = ScalarGrid(image.data, image.spacing).normalize_intensity()
    try:
        target = derive_target_mask(image, method, target)
    except ValueError as exc:
        raise CliError(f"target: {exc}") from None

    manifest = {
        "command": "segment",
        "inputs": {  # absolute, so a replay works from any directory
            "image": str(Path(image_path).resolve()),
            "template": str(Path(template_path).resolve()),
            "target": None if target_path is None else str(Path(target_path).resolve()),
        },
        "target_method": method,
        "levels": levels,
        "config": config.to_dict(),
        "seed": config.seed,
        "out": str(Path(out).resolve()),
        "version": __version__,
    }
    stage = _Staging(Path(out))
    try:
        atomic_write_text(stage.path("manifest.json"), json.dumps(manifest, indent=2) + "\n")
        try:
            result = solve_multilevel(image, template, target, levels, config)
        except (ValueError, SolverDivergedError) as exc:
            raise CliError(f"solve failed: {exc}") from None
        stage.grid("mask", result.mask)
        stage.grid("soft_mask", result.soft_mask)
        stage.grid("field", result.field)
        stage.grid("jacobian", jacobian_determinant(result.field))
        atomic_write_text(stage.path("loss_history.csv"), loss_history_csv(result.loss_history))
        atomic_write_text(stage.path("topology.json"), result.topology.to_json() + "\n")
        if image.ndim == 2:
            write_pgm(stage.path("mask.pgm"), result.mask)
            write_pgm(stage.path("overlay.pgm"), _overlay(image, result.mask))
        stage.commit()
    except BaseException:
        stage.abort()
        raise
    print(result.topology.to_json())
    return EXIT_OK if result.topology.matches_template else EXIT_TOPOLOGY


def cmd_segment(args) -> int:
    return run_segment(args.image, args.template, args.target, _solve_config(args), args.levels, args.out)


def cmd_replay(args) -> int:
    try:
        m = json.loads(Path(args.manifest).read_text())
    except FileNotFoundError:
        raise CliError(f"manifest: {args.manifest} not found") from None
    except json.JSONDecodeError as exc:
        raise CliError(f"manifest: invalid JSON ({exc})") from None
    if m.get("command") != "segment":
        raise CliError("manifest: field 'command' must be 'segment'")
    try:
        cfg = SolveConfig.from_dict(m["config"])
        inputs = m["inputs"]
        return run_segment(inputs["image"], inputs["template"], inputs.get("target"), cfg,
                           int(m["levels"]), args.out or m["out"])
    except KeyError as exc:
        raise CliError(f"manifest: missing field {exc}") from None
    except (TypeError, ValueError) as exc:
        raise CliError(f"manifest: {exc}") from None


# ---------------------------------------------------------------------------
# synth / corrupt / topo-check / score
# ---------------------------------------------------------------------------

def cmd_synth(args) -> int:
    kwargs = {}
    if args.arms is not None:
        kwargs["arms"] = args.arms
    if args.amplitude is not None:
        kwargs["amplitude"] = args.amplitude
    if args.stretch is not None:
        kwargs["stretch"] = args.stretch
    try:
        fx = make_fixture(args.shape, args.dims, args.noise, args.seed, radius=args.radius,
                          template_offset=args.template_offset, template_fraction=args.template_fraction,
                          **kwargs)
    except (ValueError, TypeError) as exc:
        raise CliError(str(exc)) from None
    stage = _Staging(Path(args.out))
    try:
        manifest = {"command": "synth", "shape": args.shape, "dims": list(args.dims), "noise": args.noise,
                    "seed": args.seed, "radius": args.radius, "template_offset": args.template_offset,
                    "template_fraction": args.template_fraction, "shape_args": kwargs,
                    "out": str(Path(args.out).resolve()), "version": __version__}
        atomic_write_text(stage.path("manifest.json"), json.dumps(manifest, indent=2) + "\n")
        for name, grid in (("image", fx.image), ("mask", fx.mask), ("template", fx.template)):
            stage.grid(name, grid)
            if grid.ndim == 2:
                write_pgm(stage.path(f"{name}.pgm"), grid)
        stage.commit()
    except BaseException:
        stage.abort()
        raise
    return EXIT_OK


def parse_slices(text: str, depth: int) -> range:
    """``"a..b"`` is the half-open slice range [a, b); an empty string is no slices."""
    text = text.strip()
    if not text:
        return range(0)
    try:
        lo, hi = (int(t) for t in text.split(".."))
    except ValueError:
        raise CliError(f"--slices must look like 'a..b', got {text!r}") from None
    if lo > hi:
        raise CliError(f"--slices range {text!r} is reversed")
    if lo < 0 or hi > depth:
        raise CliError(f"--slices range {text!r} outside depth 0..{depth}")
    return range(lo, hi)


def corrupt_slices(image: ScalarGrid, slices: range) -> ScalarGrid:
    """Zero the given slices along the last (depth) axis."""
    data = np.array(image.data)
    data[..., slices.start:slices.stop] = 0.0
    return ScalarGrid(data, image.spacing)


def cmd_corrupt(args) -> int:
    image = _load(args.image, what="image")
    if image.ndim != 3:
        raise CliError(f"image: corruption needs a 3D volume, got dims {image.dims}")
    slices = parse_slices(args.slices, image.dims[-1])
    out = corrupt_slices(image, slices)
    if isinstance(image, MaskGrid):
        out = MaskGrid(out.data, out.spacing)
    write_grid(args.out, out)
    return EXIT_OK


def cmd_topo_check(args) -> int:
    mask = _as_mask(_load(args.mask, what="mask"), "mask")
    template = _as_mask(_load(args.template, what="template"), "template")
    if mask.dims != template.dims:
        raise CliError(f"dims mismatch: mask {mask.dims}, template {template.dims}")
    report = certify(mask.binarize(), template.binarize())
    print(report.to_json())
    return EXIT_OK if report.matches_template else EXIT_TOPOLOGY


def _case_files(directory: Path) -> dict:
    if not directory.is_dir():
        raise CliError(f"{directory} is not a directory")
    cases = {}
    for p in sorted(directory.iterdir()):
        if p.suffix == ".json":
            try:
                meta = json.loads(p.read_text())
            except json.JSONDecodeError:
                continue
            if isinstance(meta, dict) and meta.get("kind") in ("mask", "scalar"):
                cases[p.stem] = p
        elif p.suffix.lower() == ".pgm":
            cases.setdefault(p.stem, p)
    return cases


def cmd_score(args) -> int:
    preds = _case_files(Path(args.pred_dir))
    labels = _case_files(Path(args.label_dir))
    if set(preds) != set(labels):
        only_p = sorted(set(preds) - set(labels))
        only_l = sorted(set(labels) - set(preds))
        raise CliError(f"case sets differ (only in predictions: {only_p}; only in labels: {only_l})")
    if not preds:
        raise CliError("no cases found")
    rows = []
    for case in sorted(preds):
        pred = _as_mask(_load(preds[case], what=f"prediction {case}"), case).binarize()
        label = _as_mask(_load(labels[case], what=f"label {case}"), case).binarize()
        if pred.dims != label.dims:
            raise CliError(f"case {case}: dims mismatch {pred.dims} vs {label.dims}")
        if args.cca:
            pred = cca_postprocess(pred)
        rows.append(ScoreRow(case, dice_score(pred, label), iou_score(pred, label),
                             certify(pred, label).matches_template))
    table = aggregate(rows)
    out = Path(args.out) if args.out else Path(args.pred_dir)
    atomic_write_text(out / "scores.csv", table.to_csv())
    text = table.render(args.spread)
    atomic_write_text(out / "scores.txt", text)
    print(text, end="")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="topowarp", description="Topology-preserving template segmentation.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("--verbose", "-v", action="count", default=0)
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("segment", help="deform a template onto an image")
    s.add_argument("image")
    s.add_argument("template")
    s.add_argument("--target", help="ground-truth mask; Otsu threshold of the image if omitted")
    s.add_argument("--config", help="SolveConfig JSON")
    s.add_argument("--levels", type=int, default=3)
    s.add_argument("--max-iters", dest="max_iters", type=int)
    s.add_argument("--step-size", dest="step_size", type=float)
    s.add_argument("--optimizer", choices=OPTIMIZERS)
    s.add_argument("--epsilon", type=float)
    s.add_argument("--seed", type=int)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_segment)

    s = sub.add_parser("replay", help="re-run a segment command from its manifest")
    s.add_argument("manifest")
    s.add_argument("--out", help="output directory (default: the manifest's)")
    s.set_defaults(func=cmd_replay)

    s = sub.add_parser("synth", help="write a synthetic image / mask / template fixture")
    s.add_argument("shape", choices=SHAPES)
    s.add_argument("--dims", type=int, nargs="+", required=True)
    s.add_argument("--noise", type=float, default=0.0, help="Gaussian noise sd")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--radius", type=float)
    s.add_argument("--template-offset", dest="template_offset", type=float, nargs="+")
    s.add_argument("--template-fraction", dest="template_fraction", type=float, default=0.6)
    s.add_argument("--arms", type=int)
    s.add_argument("--amplitude", type=float)
    s.add_argument("--stretch", type=float)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("corrupt", help="zero a range of depth slices in a volume")
    s.add_argument("image")
    s.add_argument("--slices", required=True, help="half-open range 'a..b'")
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_corrupt)

    s = sub.add_parser("topo-check", help="compare a mask's topology with a template")
    s.add_argument("mask")
    s.add_argument("template")
    s.set_defaults(func=cmd_topo_check)

    s = sub.add_parser("score", help="Dice / IoU table for matching prediction and label files")
    s.add_argument("pred_dir")
    s.add_argument("label_dir")
    s.add_argument("--cca", action="store_true", help="keep only the largest component before scoring")
    s.add_argument("--spread", choices=("stderr", "stddev"), default="stderr")
    s.add_argument("--out", help="directory for scores.csv / scores.txt (default: pred_dir)")
    s.set_defaults(func=cmd_score)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * args.verbose, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"topowarp {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except OSError as exc:
        print(f"topowarp {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
