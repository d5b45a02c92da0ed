import numpy as np
import pytest
import torch

from tripletswap.analysis.render import RESOLUTION, geometry_of, region_masks, render, render_with_masks, to_pixel
from tripletswap.domain.errors import FactorValidationError
from tripletswap.domain.factors import FactorVector, midpoint_factors, sample_factors


def _changed(a: torch.Tensor, b: torch.Tensor) -> np.ndarray:
    return (a != b).any(dim=0).numpy()


def test_render_shape_range_and_purity():
    f = sample_factors(3)
    img = render(f)
    assert img.shape == (3, RESOLUTION, RESOLUTION)
    assert img.dtype == torch.float32
    assert float(img.min()) >= 0.0 and float(img.max()) <= 1.0
    assert torch.equal(img, render(f))


def test_render_rejects_out_of_interval_factors():
    bad = FactorVector.model_construct(
        identity=midpoint_factors().identity,
        attributes=(0.1, 0.5, 0.9, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0),
    )
    with pytest.raises(FactorValidationError):
        render(bad)


def test_background_hue_changes_only_background_pixels():
    f = sample_factors(11).replace(background_hue=0.1)
    g = f.replace(background_hue=0.6)
    img_f, masks = render_with_masks(f)
    changed = _changed(img_f, render(g))
    assert changed.any()
    assert not (changed & ~masks.background).any()


def test_glasses_change_only_glasses_region():
    base = sample_factors(5).replace(glasses_flag=0.0, glasses_darkness=0.8)
    with_glasses = base.replace(glasses_flag=1.0)
    img, masks = render_with_masks(base)
    changed = _changed(img, render(with_glasses))
    assert changed.any()
    assert not (changed & ~masks.glasses).any()


def test_glasses_darkness_ignored_without_glasses():
    base = sample_factors(5).replace(glasses_flag=0.0, glasses_darkness=0.1)
    assert torch.equal(render(base), render(base.replace(glasses_darkness=0.9)))


def test_mouth_curvature_changes_only_mouth_region():
    f = sample_factors(8).replace(mouth_curvature=-0.8)
    img, masks = render_with_masks(f)
    changed = _changed(img, render(f.replace(mouth_curvature=0.8)))
    assert changed.any()
    assert not (changed & ~masks.mouth).any()


@pytest.mark.parametrize("yaw,pitch", [(0.0, 0.0), (0.3, -0.2)])
def test_masks_depend_on_geometry_only(yaw, pitch):
    f = sample_factors(21).replace(yaw=yaw, pitch=pitch)
    masks = region_masks(geometry_of(f))
    other = region_masks(geometry_of(f.replace(background_hue=0.7, mouth_curvature=0.2, glasses_flag=1.0)))
    assert np.array_equal(masks.glasses, other.glasses)
    assert np.array_equal(masks.face, other.face)


def test_eye_pixels_centre_on_geometry_eye_centres():
    f = midpoint_factors().replace(yaw=0.25)
    geom = geometry_of(f)
    masks = region_masks(geom)
    ys, xs = np.nonzero(masks.eyes)
    split = to_pixel(np.array(geom.cx), np.array(geom.cy))[0]
    for (pc, qc), side in zip(geom.eye_centers_local(), (xs < split, xs >= split)):
        ex, ey = to_pixel(*geom.local_to_image(np.array(pc), np.array(qc)))
        assert abs(xs[side].mean() - float(ex)) <= 1.0
        assert abs(ys[side].mean() - float(ey)) <= 1.0
