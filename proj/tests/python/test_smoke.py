"""Smoke tests for the python bindings."""

import math

import numpy as np
import pytest

import oga


def test_fusion_orthonormal_pair():
    a = np.zeros((16, 16, 3))
    b = np.zeros((16, 16, 3))
    a.flat[0] = 1.0
    b.flat[1] = 1.0
    fused = oga.oga_fuse([a, b], [0.5, 0.5], patch=16)
    assert fused.shape == (16, 16, 3)
    assert fused.flat[0] == pytest.approx(0.5)
    assert fused.flat[1] == pytest.approx(0.5)
    assert np.linalg.norm(fused) == pytest.approx(math.sqrt(2.0) / 2.0)


def test_fused_norm_identity_against_equal_sum():
    rng = np.random.default_rng(3)
    g1 = rng.standard_normal((16, 16, 3))
    g1 /= np.linalg.norm(g1)
    u = rng.standard_normal((16, 16, 3))
    u -= (u * g1).sum() * g1
    u /= np.linalg.norm(u)
    theta = math.radians(179.0)
    g2 = math.cos(theta) * g1 + math.sin(theta) * u
    fused = oga.oga_fuse([g1, g2], [0.5, 0.5], patch=16)
    eq = oga.baseline_fuse([g1, g2], [0.5, 0.5], "equal-sum")
    assert np.linalg.norm(fused) == pytest.approx(math.sqrt(0.5), rel=1e-8)
    assert np.linalg.norm(fused) / np.linalg.norm(eq) >= 10.0


def test_greedy_selection_examples():
    m = np.array([[1, 0.9, 0.1], [0.9, 1, 0.2], [0.1, 0.2, 1]])
    assert oga.greedy_select(m, 2) == [0, 2]
    assert oga.greedy_select(m, 3) == [0, 1, 2]


def test_render_front_view_returns_texture():
    tex = np.full((12, 18, 3), 0.5)
    out = oga.render(tex, azimuth=0.0, elevation=0.0, distance=2.6,
                     ambient=1.0, image_size=64)
    assert out["image"].shape == (64, 64, 3)
    assert out["image"][32, 32] == pytest.approx([0.5, 0.5, 0.5])
    assert out["screen_mask"][32, 32] == pytest.approx(1.0)
    assert out["screen_mask"][2, 2] == 0.0
    vis = out["texel_visibility"]
    # +Z face rect fully visible, opposite face hidden
    assert vis[6:, 6:12].min() == 1.0
    assert vis[6:, 12:].max() == 0.0


def test_loss_hand_values():
    checker = np.array([[[0.0], [1.0]], [[1.0], [0.0]]])
    assert oga.smooth_loss(checker) == pytest.approx(math.sqrt(2.0), abs=1e-6)
    prob = np.full((2, 2), 0.5)
    mask = np.ones((2, 2))
    assert oga.segmentation_loss(prob, mask) == pytest.approx(0.5, rel=1e-6)
    depth = np.full((2, 2), 2.0)
    assert oga.depth_loss(depth, mask) == pytest.approx(0.5, rel=1e-6)
    assert oga.iou((0, 0, 2, 2), (1, 1, 3, 3)) == pytest.approx(1.0 / 7.0)
    conf = np.array([0.9, 0.9])
    expect = (0.9 + math.log(2.0)) ** 2
    assert oga.detection_loss(conf, [True, True]) == pytest.approx(expect)


def test_std_mask_fraction():
    mask = oga.std_mask(250, 400, 0.3, block=8, seed=5)
    frac = (mask == 0).mean()
    assert 0.295 <= frac <= 0.305


def test_ogaf_round_trip(tmp_path):
    rng = np.random.default_rng(9)
    t = rng.random((4, 5, 3))
    path = str(tmp_path / "t.ogaf")
    oga.write_ogaf(path, t)
    back = oga.read_ogaf(path)
    # payload is float32 on disk
    assert back == pytest.approx(t.astype(np.float32).astype(np.float64))
    oga.write_ogaf(str(tmp_path / "t2.ogaf"), back)
    assert (tmp_path / "t.ogaf").read_bytes() == (tmp_path / "t2.ogaf").read_bytes()
