import numpy as np
import pytest

from topowarp.synth import (BACKGROUND, FOREGROUND, equivalent_radius, make_fixture, mixed_fixture, star_suite)
from topowarp.topology import connected_components


def test_disk_area_matches_analytic():
    fx = make_fixture("disk", (64, 64), 0.0, 0)
    assert abs(fx.mask.data.sum() - np.pi * 20**2) <= 0.01 * np.pi * 20**2


def test_ball_volume_matches_analytic():
    fx = make_fixture("ball", (32, 32, 32), 0.0, 0)
    r = 10.0
    assert abs(fx.mask.data.sum() - 4 / 3 * np.pi * r**3) <= 0.02 * 4 / 3 * np.pi * r**3


def test_two_blobs_have_two_components():
    for dims in ((64, 64), (32, 32, 32)):
        fx = make_fixture("two-blobs", dims, 0.0, 0)
        assert connected_components(fx.mask)[1] == 2
        assert connected_components(fx.template)[1] == 1


def test_noise_free_image_levels():
    fx = make_fixture("star", (64, 64), 0.0, 0)
    assert set(np.unique(fx.image.data)) == {BACKGROUND, FOREGROUND}


def test_noise_is_clipped_and_seeded():
    a = make_fixture("disk", (32, 32), 0.5, 3)
    b = make_fixture("disk", (32, 32), 0.5, 3)
    c = make_fixture("disk", (32, 32), 0.5, 4)
    assert a.image.data.min() >= 0.0 and a.image.data.max() <= 1.0
    assert np.array_equal(a.image.data, b.image.data)
    assert not np.array_equal(a.image.data, c.image.data)


def test_template_is_centred_ball_at_sixty_percent():
    fx = make_fixture("star", (64, 64), 0.0, 0)
    want = 0.6 * equivalent_radius(fx.mask.data)
    assert equivalent_radius(fx.template.data) == pytest.approx(want, abs=0.5)
    idx = np.argwhere(fx.template.data > 0).mean(axis=0)
    np.testing.assert_allclose(idx, [31.5, 31.5], atol=1e-9)


def test_template_offset_moves_centre():
    fx = make_fixture("disk", (64, 64), 0.0, 0, template_offset=(6, -4))
    np.testing.assert_allclose(np.argwhere(fx.template.data > 0).mean(axis=0), [37.5, 27.5], atol=1e-9)


@pytest.mark.parametrize("shape,dims", [("moon", (8, 8)), ("disk", (8, 8, 8)), ("ball", (8, 8)),
                                        ("star", (8, 8, 8)), ("disk", (8,))])
def test_bad_requests_rejected(shape, dims):
    with pytest.raises(ValueError):
        make_fixture(shape, dims)


def test_suites_are_reproducible():
    a, b = star_suite(3), star_suite(3)
    assert all(np.array_equal(x.image.data, y.image.data) for x, y in zip(a, b))
    assert np.array_equal(mixed_fixture(7).mask.data, mixed_fixture(7).mask.data)
    assert mixed_fixture(4).mask.ndim == 3 and mixed_fixture(3).mask.ndim == 2
