import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from platerec.rectify import (
    DegenerateQuadError,
    SingularTransformError,
    apply_affine,
    canonical_quad,
    compose_affine,
    fit_affine,
    fit_residual,
    invert_affine,
    psnr,
    quad_area,
    rectify_plate,
    resize,
    warp_bilinear,
)


def random_affine(rng):
    """Well-conditioned random affine map (rotation, shear, scale, translation)."""
    th, sh = rng.uniform(-0.5, 0.5), rng.uniform(-0.4, 0.4)
    sx, sy = rng.uniform(0.5, 2.0, size=2)
    rot = np.array([[np.cos(th), -np.sin(th)], [np.sin(th), np.cos(th)]])
    lin = rot @ np.array([[1.0, sh], [0.0, 1.0]]) @ np.diag([sx, sy])
    return np.column_stack([lin, rng.uniform(-50, 50, size=2)])


@pytest.mark.parametrize("seed", range(50))
def test_fit_recovers_true_map(seed):
    rng = np.random.default_rng(seed)
    m = random_affine(rng)
    src = canonical_quad() + rng.normal(scale=3.0, size=(4, 2))
    np.testing.assert_allclose(fit_affine(src, apply_affine(m, src)), m, atol=1e-9)


def test_fit_residual_zero_for_affine_pair_positive_for_perspective(rng):
    src = canonical_quad()
    assert fit_residual(src, apply_affine(random_affine(rng), src)) < 1e-9
    trapezoid = np.array([[10, 0], [117, 0], [127, 31], [0, 31]], dtype=float)
    assert fit_residual(src, trapezoid) > 1.0


@pytest.mark.parametrize(
    "quad",
    [
        [[0, 0], [1, 1], [2, 2], [3, 3]],
        [[5, 5], [5, 5], [5, 5], [5, 5]],
        [[0, 0], [10, 0], [20, 0], [30, 0]],
    ],
)
def test_degenerate_quads_raise(quad):
    with pytest.raises(DegenerateQuadError):
        fit_affine(quad, canonical_quad())


def test_non_finite_quad_raises():
    with pytest.raises(DegenerateQuadError):
        fit_affine([[0, 0], [np.nan, 0], [1, 1], [0, 1]], canonical_quad())


def test_singular_map_cannot_be_inverted():
    with pytest.raises(SingularTransformError):
        invert_affine(np.array([[1.0, 2.0, 0.0], [2.0, 4.0, 0.0]]))
    with pytest.raises(SingularTransformError):
        warp_bilinear(np.zeros((4, 4)), np.zeros((2, 3)), 4, 4)


def test_invert_and_compose(rng):
    m = random_affine(rng)
    ident = compose_affine(m, invert_affine(m))
    np.testing.assert_allclose(ident, [[1, 0, 0], [0, 1, 0]], atol=1e-12)


def test_quad_area_sign_and_value():
    q = canonical_quad(11, 5)
    assert quad_area(q) == pytest.approx(40.0)
    assert quad_area(q[::-1]) == pytest.approx(-40.0)


@settings(max_examples=30, deadline=None)
@given(dx=st.integers(-6, 6), dy=st.integers(-4, 4))
def test_integer_translation_is_pixel_exact(dx, dy):
    img = np.random.default_rng(7).random((20, 30))
    m = np.array([[1.0, 0.0, dx], [0.0, 1.0, dy]])
    out = warp_bilinear(img, m, 30, 20)
    # output (u, v) reads input (u - dx, v - dy)
    ys, xs = slice(max(dy, 0), 20 + min(dy, 0)), slice(max(dx, 0), 30 + min(dx, 0))
    ys_in, xs_in = slice(max(-dy, 0), 20 + min(-dy, 0)), slice(max(-dx, 0), 30 + min(-dx, 0))
    np.testing.assert_array_equal(out[ys, xs], img[ys_in, xs_in])


def test_constant_border_fills_outside(rng):
    img = rng.random((8, 8))
    out = warp_bilinear(img, np.array([[1.0, 0, 4], [0, 1.0, 0]]), 8, 8, border="constant", fill=-1.0)
    assert np.all(out[:, :3] == -1.0)
    np.testing.assert_array_equal(out[:, 4:], img[:, :4])
    clamped = warp_bilinear(img, np.array([[1.0, 0, 4], [0, 1.0, 0]]), 8, 8)
    np.testing.assert_array_equal(clamped[:, :4], np.repeat(img[:, :1], 4, axis=1))


def test_rectify_inverts_a_known_warp(rng):
    # smooth test image so bilinear resampling error stays small
    yy, xx = np.mgrid[0:32, 0:128].astype(float)
    plate = 0.5 + 0.25 * np.sin(xx / 9.0) * np.cos(yy / 5.0)
    m = np.array([[0.9, 0.15, 20.0], [-0.05, 0.8, 15.0]])
    scene = warp_bilinear(plate, m, 180, 70)
    quad = apply_affine(m, canonical_quad())
    back = rectify_plate(scene, quad)
    assert back.shape == (32, 128)
    assert psnr(back, plate) > 35.0


def test_rectify_identity_quad_is_exact(rng):
    img = rng.random((32, 128, 3))
    np.testing.assert_allclose(rectify_plate(img, canonical_quad()), img, atol=1e-12)


def test_resize_preserves_constant_and_mean(rng):
    np.testing.assert_allclose(resize(np.full((10, 20), 0.3), 40, 7), 0.3)
    img = rng.random((16, 64))
    assert resize(img, 128, 32).shape == (32, 128)
    assert abs(resize(img, 128, 32).mean() - img.mean()) < 0.01


def test_psnr_infinite_for_identical():
    assert psnr(np.ones(3), np.ones(3)) == np.inf
