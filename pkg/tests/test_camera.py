import numpy as np
import pytest

from microflake.camera import (Camera, camera_rays, generate_ray, load_cameras, psnr, read_pfm,
                               ring_cameras, save_cameras, write_pfm, write_png)


def cam(width=32, height=24, focal=40.0):
    return Camera.look_at([2.0, -1.0, 1.5], [0.1, 0.2, 0.0], [0.0, 0.0, 1.0], focal, width, height)


def test_principal_ray_is_camera_minus_z():
    c = cam()
    o, d = generate_ray(c, c.principal[0], c.principal[1])
    np.testing.assert_array_equal(o, c.center)
    np.testing.assert_allclose(d, -c.pose[:, 2], atol=1e-15)


def test_symmetric_pixels_mirror():
    c = cam()
    cu, cv = c.principal
    _, a = generate_ray(c, cu - 7.5, cv + 3.5)
    _, b = generate_ray(c, cu + 7.5, cv + 3.5)
    right = c.pose[:, 0]
    # reflecting across the camera's vertical plane flips the right component only
    np.testing.assert_allclose(b, a - 2.0 * (a @ right) * right, atol=1e-6)


def test_corner_field_of_view():
    c = cam(width=32, height=32, focal=40.0)
    _, d = generate_ray(c, 32.0, 16.0)
    angle = np.arccos(d @ -c.pose[:, 2])
    assert angle == pytest.approx(np.arctan(0.5 * 32 / 40.0), abs=1e-12)


def test_image_v_grows_downward():
    c = cam()
    _, top = generate_ray(c, c.principal[0], 0.5)
    assert top @ c.pose[:, 1] > 0.0


def test_rays_are_unit_and_row_major():
    c = cam(width=5, height=3)
    o, d = camera_rays(c)
    assert d.shape == (15, 3)
    np.testing.assert_allclose(np.linalg.norm(d, axis=1), 1.0)
    _, d01 = generate_ray(c, 1.5, 0.5)
    np.testing.assert_allclose(d[1], d01)


def test_camera_validation():
    with pytest.raises(ValueError):
        Camera(np.eye(3, 4), 0.0, (1, 1), 2, 2)
    bad = np.eye(3, 4)
    bad[0, 0] = 1.1
    with pytest.raises(ValueError):
        Camera(bad, 1.0, (1, 1), 2, 2)
    mirror = np.eye(3, 4)
    mirror[0, 0] = -1.0
    with pytest.raises(ValueError):
        Camera(mirror, 1.0, (1, 1), 2, 2)


def test_ring_cameras_look_at_origin():
    for c in ring_cameras(6, radius=3.0):
        assert np.linalg.norm(c.center) == pytest.approx(3.0)
        _, d = generate_ray(c, *c.principal)
        np.testing.assert_allclose(d, -c.center / 3.0, atol=1e-12)


def test_camera_json_round_trip(tmp_path):
    cams = ring_cameras(3)
    save_cameras(cams, tmp_path / "c.json")
    back = load_cameras(tmp_path / "c.json")
    for a, b in zip(cams, back):
        np.testing.assert_array_equal(a.pose, b.pose)
        assert (a.focal, a.principal, a.width, a.height) == (b.focal, b.principal, b.width, b.height)


def test_pfm_round_trip_and_orientation(tmp_path, rng):
    img = rng.uniform(0, 5, size=(4, 3, 3)).astype(np.float32)
    write_pfm(tmp_path / "a.pfm", img)
    np.testing.assert_array_equal(read_pfm(tmp_path / "a.pfm"), img)
    raw = (tmp_path / "a.pfm").read_bytes()
    assert raw.startswith(b"PF\n3 4\n-1.0\n")
    first = np.frombuffer(raw[len(b"PF\n3 4\n-1.0\n"):], "<f4", count=3)
    # rows are stored bottom-up
    np.testing.assert_array_equal(first, img[-1, 0])


def test_pfm_grayscale_and_errors(tmp_path):
    img = np.arange(6, dtype=np.float32).reshape(2, 3)
    write_pfm(tmp_path / "g.pfm", img)
    np.testing.assert_array_equal(read_pfm(tmp_path / "g.pfm"), img)
    (tmp_path / "bad.pfm").write_bytes(b"P6\n1 1\n255\n")
    with pytest.raises(ValueError):
        read_pfm(tmp_path / "bad.pfm")
    with pytest.raises(ValueError):
        write_pfm(tmp_path / "x.pfm", np.zeros((2, 2, 2)))


def test_png_is_clamped_and_gamma_mapped(tmp_path):
    from PIL import Image
    img = np.array([[[0.0, 0.5, 2.0]]])
    write_png(tmp_path / "a.png", img)
    px = np.asarray(Image.open(tmp_path / "a.png"))[0, 0]
    np.testing.assert_array_equal(px, [0, round(255 * 0.5 ** (1 / 2.2)), 255])


def test_psnr():
    a = np.zeros((4, 4, 3))
    assert psnr(a, a) == np.inf
    assert psnr(a, a + 0.1) == pytest.approx(20.0)
