import numpy as np
import pytest

from ortholoc.errors import SingularHomography
from ortholoc.estimation import RansacConfig, apply_homography, dlt_homography, homography_dlt_ransac, warp_by_homography


def test_unit_square_identity():
    sq = np.array([[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]])
    H = homography_dlt_ransac(sq, sq, RansacConfig(inlier_threshold=1e-3)).matrix
    np.testing.assert_allclose(H, np.eye(3), atol=1e-12)


def test_known_h_recovered():
    Hgt = np.array([[2.0, 0.0, 5.0], [0.0, 2.0, -3.0], [0.0, 0.0, 1.0]])
    src = np.random.default_rng(0).uniform(0, 100, (30, 2))
    H = homography_dlt_ransac(src, apply_homography(Hgt, src)).matrix
    assert np.max(np.abs(H - Hgt)) <= 1e-8
    assert H[2, 2] == 1.0


def _random_h(rng):
    H = np.eye(3) + rng.normal(0, 0.1, (3, 3))
    H[2, :2] = rng.normal(0, 5e-4, 2)
    return H / H[2, 2]


@pytest.mark.parametrize("seed", range(5))
def test_contamination_recall(seed):
    rng = np.random.default_rng(seed)
    Hgt = _random_h(rng)
    n_in, n_out = 140, 60
    src = rng.uniform(0, 400, (n_in + n_out, 2))
    dst = apply_homography(Hgt, src)
    dst[n_in:] = rng.uniform(-50, 450, (n_out, 2))
    h = homography_dlt_ransac(src, dst, RansacConfig(inlier_threshold=2.0, rng_seed=seed))
    assert h.inlier_mask[:n_in].mean() >= 0.95
    assert h.condition_number < 1e10


def test_dlt_normalised_scale():
    rng = np.random.default_rng(2)
    Hgt = _random_h(rng)
    src = rng.uniform(0, 1000, (4, 2))
    H = dlt_homography(src, apply_homography(Hgt, src))
    H = H / H[2, 2]
    np.testing.assert_allclose(H, Hgt, atol=1e-7)


def _texture(h=40, w=50):
    rng = np.random.default_rng(0)
    return (rng.random((h, w, 3)) * 255).astype(np.uint8)


def test_warp_identity():
    img = _texture()
    out, valid = warp_by_homography(img, np.eye(3), (img.shape[1], img.shape[0]))
    assert valid.all()
    assert np.array_equal(out, img)


def test_warp_translation():
    img = _texture().astype(float)
    H = np.array([[1.0, 0, 3.0], [0, 1.0, -2.0], [0, 0, 1.0]])
    out, valid = warp_by_homography(img, H, (img.shape[1], img.shape[0]), fill=0.0)
    # out(x, y) = img(x - 3, y + 2)
    ref = np.zeros_like(img)
    ref[:-2, 3:] = img[2:, :-3]
    assert np.all(np.abs(out[valid] - ref[valid]) <= 1.0 / 255 * 255 / 255)
    assert valid[:-2, 3:].all() and not valid[:, :3].any()


def test_warp_fill_is_channel_mean():
    img = _texture()
    H = np.array([[1.0, 0, 100.0], [0, 1.0, 0], [0, 0, 1.0]])
    out, valid = warp_by_homography(img.astype(float), H, (10, 10))
    assert not valid.any()
    np.testing.assert_allclose(out[0, 0], img.reshape(-1, 3).mean(0))


def test_coordinate_round_trip():
    rng = np.random.default_rng(1)
    H = _random_h(rng)
    pts = rng.uniform(0, 200, (100, 2))
    back = apply_homography(np.linalg.inv(H), apply_homography(H, pts))
    assert np.max(np.abs(back - pts)) < 1e-6


def test_singular_warp():
    with pytest.raises(SingularHomography):
        warp_by_homography(_texture(), np.zeros((3, 3)), (5, 5))
