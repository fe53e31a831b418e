"""Synthetic image/mask/template fixtures standing in for real scans."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grids import MaskGrid, ScalarGrid

SHAPES = ("disk", "ball", "star", "two-blobs")

FOREGROUND = 0.9
BACKGROUND = 0.1
TEMPLATE_FRACTION = 0.6


@dataclass(frozen=True)
class Fixture:
    image: ScalarGrid
    mask: MaskGrid
    template: MaskGrid


def _coords(dims, center):
    axes = [np.arange(n, dtype=np.float64) - c for n, c in zip(dims, center)]
    return np.meshgrid(*axes, indexing="ij")


def default_center(dims):
    return tuple((n - 1) / 2.0 for n in dims)


def ball_mask(dims, radius, center=None) -> np.ndarray:
    center = default_center(dims) if center is None else center
    r2 = sum(c**2 for c in _coords(dims, center))
    return (r2 <= radius**2).astype(np.float64)


def star_mask(dims, radius, arms=5, amplitude=0.35, phase=0.0, stretch=1.0, center=None) -> np.ndarray:
    """2D star ``r(theta) = radius * (1 + amplitude * cos(arms * theta + phase))``.

    ``stretch`` scales the x axis, giving an elongated star.
    """
    if len(dims) != 2:
        raise ValueError("star fixtures are 2D only")
    center = default_center(dims) if center is None else center
    x, y = _coords(dims, center)
    x = x / stretch
    r = np.hypot(x, y)
    theta = np.arctan2(y, x)
    return (r <= radius * (1.0 + amplitude * np.cos(arms * theta + phase))).astype(np.float64)


def equivalent_radius(mask: np.ndarray) -> float:
    """Radius of the disk/ball with the same area/volume as ``mask``."""
    size = float(mask.sum())
    if mask.ndim == 2:
        return float(np.sqrt(size / np.pi))
    return float(np.cbrt(3.0 * size / (4.0 * np.pi)))


def render_image(mask: np.ndarray, noise_sd: float, rng: np.random.Generator) -> np.ndarray:
    img = np.where(mask > 0, FOREGROUND, BACKGROUND)
    if noise_sd > 0:
        img = img + rng.normal(0.0, noise_sd, size=mask.shape)
    return np.clip(img, 0.0, 1.0)


def template_for(mask: np.ndarray, fraction: float = TEMPLATE_FRACTION, offset=None) -> np.ndarray:
    dims = mask.shape
    center = default_center(dims)
    if offset is not None:
        center = tuple(c + o for c, o in zip(center, offset))
    return ball_mask(dims, fraction * equivalent_radius(mask), center)


def make_fixture(shape: str, dims, noise_sd: float = 0.0, seed: int = 0, radius: float | None = None,
                 template_offset=None, template_fraction: float = TEMPLATE_FRACTION, **shape_args) -> Fixture:
    """Build an image, its ground-truth mask and a centred one-blob template.

    ``radius`` defaults to 5/16 of the smallest dim (20 px on a 64 grid).
    Extra keyword arguments go to the shape generator (star arms, blob gap...).
    """
    dims = tuple(int(n) for n in dims)
    if shape not in SHAPES:
        raise ValueError(f"unknown shape {shape!r}; choose from {', '.join(SHAPES)}")
    if len(dims) not in (2, 3) or min(dims) < 2:
        raise ValueError(f"dims must be 2 or 3 extents >= 2, got {dims}")
    radius = min(dims) * 5.0 / 16.0 if radius is None else float(radius)
    center = shape_args.pop("center", None)

    if shape in ("disk", "ball"):
        want = 2 if shape == "disk" else 3
        if len(dims) != want:
            raise ValueError(f"{shape} needs {want} dims, got {len(dims)}")
        mask = ball_mask(dims, radius, center)
    elif shape == "star":
        mask = star_mask(dims, radius, center=center, **shape_args)
    else:
        gap = shape_args.pop("gap", 0.25 * radius)
        if shape_args:
            raise TypeError(f"unexpected arguments {sorted(shape_args)}")
        r = 0.5 * radius
        c = default_center(dims) if center is None else center
        shift = r + gap / 2.0
        a = (c[0] - shift,) + tuple(c[1:])
        b = (c[0] + shift,) + tuple(c[1:])
        mask = np.maximum(ball_mask(dims, r, a), ball_mask(dims, r, b))

    rng = np.random.default_rng(seed)
    image = render_image(mask, noise_sd, rng)
    template = template_for(mask, template_fraction, template_offset)
    return Fixture(ScalarGrid(image), MaskGrid(mask), MaskGrid(template))


def star_suite(n_cases: int = 20, dims=(64, 64), noise_sd: float = 0.05):
    """Seeded family of elongated stars with varying arm count, depth and angle."""
    cases = []
    for seed in range(n_cases):
        rng = np.random.default_rng(1000 + seed)
        arms = int(rng.integers(3, 6))
        amplitude = float(rng.uniform(0.2, 0.35))
        phase = float(rng.uniform(0.0, 2.0 * np.pi))
        stretch = float(rng.uniform(1.0, 1.3))
        radius = float(rng.uniform(0.22, 0.26)) * min(dims)
        cases.append(make_fixture("star", dims, noise_sd, seed, radius=radius, arms=arms,
                                  amplitude=amplitude, phase=phase, stretch=stretch))
    return cases


def mixed_fixture(seed: int) -> Fixture:
    """One case of the mixed suite; ``seed % 5`` picks the family.

    0: centred disk, 1: shifted disk with offset template, 2: round star,
    3: elongated star, 4: ball in 32^3.  Sizes and offsets are drawn from
    ``seed`` so every case is reproducible on its own.
    """
    rng = np.random.default_rng(seed)
    kind = seed % 5
    if kind == 4:
        return make_fixture("ball", (32, 32, 32), 0.05, seed, radius=rng.uniform(8, 11),
                            template_offset=tuple(rng.uniform(-2, 2, 3)))
    if kind in (2, 3):
        return make_fixture("star", (64, 64), 0.05, seed, radius=rng.uniform(14, 18),
                            arms=int(rng.integers(3, 7)), amplitude=rng.uniform(0.15, 0.4),
                            phase=rng.uniform(0, 6.3), stretch=1.0 if kind == 2 else rng.uniform(1.1, 1.4),
                            template_offset=tuple(rng.uniform(-4, 4, 2)))
    radius = rng.uniform(14, 22)
    if kind == 1:
        center = tuple(31.5 + rng.uniform(-6, 6, 2))
        offset = tuple(rng.uniform(-6, 6, 2))
        return make_fixture("disk", (64, 64), 0.05, seed, radius=radius, center=center, template_offset=offset)
    return make_fixture("disk", (64, 64), 0.05, seed, radius=radius)


def mixed_suite(n_cases: int = 50):
    """Disks, offset disks, stars and balls for seeds ``0 .. n_cases-1``."""
    return [mixed_fixture(seed) for seed in range(n_cases)]
