import math
import os

import numpy as np
import pytest

import diver

DATA = os.path.join(os.path.dirname(__file__), "..", "data", "fixture.divr")


def test_basis_integral_diagonal():
    w = diver.basis_integral([0, 0, 0], [1, 1, 1])
    assert len(w) == 8
    assert math.isclose(sum(w), 1.0, abs_tol=1e-12)
    assert math.isclose(w[0], 0.25, abs_tol=1e-12)
    assert math.isclose(w[6], 1.0 / 12.0, abs_tol=1e-12)


def test_fixture_load_and_round_trip(tmp_path):
    s = diver.load_scene(DATA)
    assert s.dims == [2, 2, 2]
    assert s.feature_dim == 4
    assert s.active_vertices == 15
    assert s.occupied_voxels == 2
    assert s.features().shape == (15, 4)
    raw = open(DATA, "rb").read()
    assert diver.serialize_scene(s) == raw
    out = tmp_path / "copy.divr"
    diver.save_scene(s, str(out))
    assert out.read_bytes() == raw


def test_corrupt_bytes_raise_parse_error():
    raw = bytearray(open(DATA, "rb").read())
    raw[0] = ord("X")
    with pytest.raises(diver.ParseError):
        diver.parse_scene(bytes(raw))


def test_render_png_and_pose_json():
    s = diver.make_random_scene([4, 4, 4], seed=3)
    pose = diver.look_at([1.5, 1.2, 1.0], [0.5, 0.5, 0.5], [0, 0, 1], 24, 16, 45.0)
    img, stats = diver.render(s, pose)
    assert img.shape == (16, 24, 3)
    assert np.isfinite(img).all()
    assert stats["rays"] == 24 * 16
    again = diver.pose_from_json(pose.to_json())
    img2, _ = diver.render(s, again)
    assert np.abs(img - img2).max() < 1e-6
    png = diver.encode_png(img)
    assert png[:8] == b"\x89PNG\r\n\x1a\n"
    assert diver.psnr(img, img) == math.inf or diver.psnr(img, img) > 100


def test_swap_is_an_involution():
    s = diver.make_two_object_scene([12, 6, 6], [1, 2, 2], [7, 2, 2], 2)
    a = (0, 0, 0, 4, 5, 5)
    b = (6, 0, 0, 10, 5, 5)
    once = diver.swap_objects(s, a, b)
    twice = diver.swap_objects(once, a, b)
    assert diver.serialize_scene(once) != diver.serialize_scene(s)
    assert diver.serialize_scene(twice) == diver.serialize_scene(s)
    with pytest.raises(ValueError):
        diver.swap_objects(s, a, (3, 0, 0, 7, 5, 5))


def test_variance_law_and_suites():
    r = diver.variance_law_check(power=1, n=16, replications=20000, seed=2)
    assert abs(r["mean"] - 0.5) < 0.01
    assert abs(r["variance"] / r["predicted_variance"] - 1.0) < 0.1
    assert "quadrature" in diver.suite_names()
    summary = diver.run_suite("quadrature")
    assert summary["pass"] is True
