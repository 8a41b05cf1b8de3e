import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import ndimage

from raremix.patching import (GeometryError, InpaintError, Patch, classical_inpaint, contour_layers,
                              crop_patch, crop_window, dilate, embed_patch, remove_center)


def brute_dilate(mask, k):
    """Chebyshev-distance dilation by enumeration: pixel set iff some mask pixel within k."""
    h, w = mask.shape
    out = np.zeros_like(mask, dtype=bool)
    pts = np.argwhere(mask)
    for r in range(h):
        for c in range(w):
            if len(pts) and np.min(np.maximum(abs(pts[:, 0] - r), abs(pts[:, 1] - c))) <= k:
                out[r, c] = True
    return out


def test_interior_crop_is_plain_window():
    img = np.random.default_rng(0).integers(0, 256, (1000, 1000, 3), dtype=np.uint8)
    p = crop_patch(img, (500, 500))
    assert p.pixels.shape == (224, 224, 3)
    assert p.origin == (388, 388)
    assert p.center == (112, 112)
    np.testing.assert_array_equal(p.pixels, img[388:612, 388:612])
    assert p.known_mask.all()


def test_corner_crop_matches_explicit_reflect():
    img = np.arange(8 * 8 * 3, dtype=np.uint8).reshape(8, 8, 3)
    p = crop_patch(img, (0, 0), size=6)
    # oracle: reflect (edge not repeated) by explicit index mapping
    def refl(i, n):
        while i < 0 or i >= n:
            i = -i if i < 0 else 2 * (n - 1) - i
        return i
    expected = np.empty((6, 6, 3), dtype=np.uint8)
    for a in range(6):
        for b in range(6):
            expected[a, b] = img[refl(a - 3, 8), refl(b - 3, 8)]
    np.testing.assert_array_equal(p.pixels, expected)
    assert p.origin == (-3, -3)


def test_crop_rejects_oversized_window():
    with pytest.raises(GeometryError):
        crop_patch(np.zeros((50, 50, 3), np.uint8), (10, 10), size=224)


def test_crop_embed_round_trip():
    rng = np.random.default_rng(1)
    img = rng.integers(0, 256, (300, 280, 3), dtype=np.uint8)
    for center in [(0, 0), (150, 140), (299, 279), (10, 270)]:
        p = crop_patch(img, center)
        target = np.zeros_like(img)
        embed_patch(target, p)
        again, _ = crop_window(target, center, 224)
        inside = crop_window(np.ones(img.shape[:2], bool), center, 224, mode="constant")[0]
        np.testing.assert_array_equal(again[inside], p.pixels[inside])


def test_remove_center_counts():
    p = crop_patch(np.full((400, 400, 3), 9, np.uint8), (200, 200))
    q = remove_center(p, 112)
    assert (~q.known_mask).sum() == 12544
    assert (q.pixels[~q.known_mask] == 0).all()
    assert remove_center(p, 0).known_mask.all()
    assert not remove_center(p, 224).known_mask.any()


def test_inpaint_identity_when_all_known():
    p = crop_patch(np.random.default_rng(2).integers(0, 256, (300, 300, 3), dtype=np.uint8), (150, 150))
    np.testing.assert_array_equal(classical_inpaint(p).pixels, p.pixels)


@pytest.mark.parametrize("method", ["harmonic", "navier-stokes"])
def test_inpaint_constant_fill(method):
    p = remove_center(crop_patch(np.full((300, 300, 3), 137, np.uint8), (150, 150)))
    out = classical_inpaint(p, method=method)
    assert np.abs(out.pixels.astype(int) - 137).max() == 0
    assert out.known_mask.all()


def test_inpaint_linear_ramp_is_reproduced():
    # a linear field is discretely harmonic, so the fill must equal it up to rounding
    r, c = np.mgrid[:32, :32]
    ramp = (3 * r + 2 * c + 20).astype(np.uint8)
    img = np.repeat(ramp[..., None], 3, axis=2)
    known = np.ones((32, 32), bool)
    known[8:24, 10:26] = False
    p = Patch(img.copy(), (0, 0), (16, 16), known)
    p.pixels[~known] = 0
    out = classical_inpaint(p)
    assert np.abs(out.pixels.astype(int) - img.astype(int)).max() <= 2


def test_inpaint_preserves_known_pixels_bit_exact():
    rng = np.random.default_rng(3)
    img = rng.integers(0, 256, (224, 224, 3), dtype=np.uint8)
    known = rng.random((224, 224)) > 0.3
    p = Patch(img, (0, 0), (112, 112), known)
    for method in ("harmonic", "navier-stokes"):
        out = classical_inpaint(p, method=method)
        np.testing.assert_array_equal(out.pixels[known], img[known])


def test_inpaint_fill_within_boundary_range():
    rng = np.random.default_rng(4)
    img = rng.integers(80, 120, (64, 64, 3), dtype=np.uint8)
    known = np.ones((64, 64), bool)
    known[20:40, 20:40] = False
    out = classical_inpaint(Patch(img, (0, 0), (32, 32), known))
    ring = ndimage.binary_dilation(~known) & known
    for ch in range(3):
        lo, hi = img[..., ch][ring].min(), img[..., ch][ring].max()
        fill = out.pixels[..., ch][~known]
        assert fill.min() >= lo - 1 and fill.max() <= hi + 1


def test_inpaint_fully_unknown_raises():
    p = Patch(np.zeros((16, 16, 3), np.uint8), (0, 0), (8, 8), np.zeros((16, 16), bool))
    with pytest.raises(InpaintError):
        classical_inpaint(p)


def test_contour_layers_point():
    m = np.zeros((21, 21), bool)
    m[10, 10] = True
    rings = contour_layers(m, 3)
    assert [int(r.sum()) for r in rings] == [8, 16, 24]
    assert contour_layers(m, 0) == []


def test_contour_layers_clipped_corner_disjoint():
    m = np.zeros((5, 5), bool)
    m[0, 0] = m[0, 1] = m[1, 0] = True
    rings = contour_layers(m, 3)
    stack = [m] + rings
    for i in range(len(stack)):
        for j in range(i + 1, len(stack)):
            assert not (stack[i] & stack[j]).any()
    np.testing.assert_array_equal(np.logical_or.reduce(stack), brute_dilate(m, 3))


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 4))
def test_ring_union_equals_dilation(seed, n):
    rng = np.random.default_rng(seed)
    m = rng.random((12, 12)) > 0.85
    rings = contour_layers(m, n)
    np.testing.assert_array_equal(np.logical_or.reduce([m] + rings), dilate(m, n))
    np.testing.assert_array_equal(dilate(m, n), brute_dilate(m, n))
