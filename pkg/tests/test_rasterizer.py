import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from splatflow.camera import CameraExtrinsics, CameraIntrinsics, CameraRig, project_point
from splatflow.errors import Clipped
from splatflow.rasterizer import (
    FramePairScene,
    RasterConfig,
    composite_color,
    composite_flow,
    per_splat_displacement,
    rasterize_pair,
    render,
    render_frame,
)
from splatflow.splat import GaussianCloud, ProjectedSplat, project_gaussians

from oracles import naive_render, random_scene

STRICT = RasterConfig().strict()


def _ps(opacity, payload, depth=1.0):
    return ProjectedSplat((5.0, 5.0), np.eye(2), depth, opacity, payload)


def _render_with(scene, disps, config=STRICT):
    proj = project_gaussians(scene.gaussians, scene.camera_t)
    cam = scene.camera_t
    return render(proj, scene.gaussians.colors, disps, cam.width, cam.height, config)


def _naive(scene, disps, min_transmittance=0.0):
    proj = project_gaussians(scene.gaussians, scene.camera_t)
    v = proj.valid
    return naive_render(proj.means[v], proj.cov2d[v], proj.depths[v], proj.opacities[v],
                        scene.gaussians.colors[v], disps[v], scene.camera_t.width,
                        scene.camera_t.height, min_transmittance=min_transmittance)


class TestCompositePixel:
    def test_single_clamped(self):
        assert np.allclose(composite_color([_ps(1.0, (1, 0, 0))], (5, 5)), [0.99, 0, 0])

    def test_two_splats_color(self):
        out = composite_color([_ps(0.5, (1, 0, 0)), _ps(1.0, (0, 1, 0), 2.0)], (5, 5))
        assert np.allclose(out, [0.5, 0.495, 0.0], atol=1e-15)

    def test_empty(self):
        assert np.array_equal(composite_color([], (0, 0)), [0.0, 0.0, 0.0])
        assert np.array_equal(composite_flow([], (0, 0)), [0.0, 0.0])

    def test_single_flow(self):
        assert np.allclose(composite_flow([_ps(0.5, (2.0, 0.0))], (5, 5)), [1.0, 0.0])

    def test_two_splats_flow(self):
        out = composite_flow([_ps(0.5, (2.0, 0.0)), _ps(1.0, (0.0, 4.0), 2.0)], (5, 5))
        assert np.allclose(out, [1.0, 1.98], atol=1e-15)

    def test_zero_displacements(self):
        splats = [_ps(0.7, (0.0, 0.0)), _ps(0.4, (0.0, 0.0))]
        assert np.array_equal(composite_flow(splats, (5, 5)), [0.0, 0.0])

    def test_early_exit_bounded(self):
        splats = [_ps(1.0, (1.0, 1.0, 1.0), d) for d in range(5)]
        full = composite_color(splats, (5, 5), min_transmittance=0.0)
        cut = composite_color(splats, (5, 5))
        assert np.all(np.abs(full - cut) < 1e-3)


def _translation_scene(delta, rig_next=None):
    rig = CameraRig(CameraIntrinsics(100.0, 100.0, 64, 64, 0.1, 100.0))
    cloud = GaussianCloud(np.array([[0.1, -0.2, 2.0]]), np.full((1, 3), 0.1),
                          np.array([[1.0, 0, 0, 0]]), np.array([0.8]), np.ones((1, 3)))
    return FramePairScene(cloud, cloud.centers + delta, rig, rig_next or rig)


class TestDisplacement:
    def test_identical(self):
        assert per_splat_displacement(_translation_scene([0, 0, 0]), 0) == (0.0, 0.0)

    def test_fronto_parallel(self):
        du, dv = per_splat_displacement(_translation_scene([0.05, 0, 0]), 0)
        assert du == pytest.approx(100.0 * 63 / 64 * 0.05 / 2.0, rel=1e-12)
        assert dv == pytest.approx(0.0, abs=1e-12)

    def test_camera_parallax(self):
        moved = CameraRig(CameraIntrinsics(100.0, 100.0, 64, 64, 0.1, 100.0),
                          CameraExtrinsics(np.eye(3), np.array([0.03, 0.01, 0.0])))
        scene = _translation_scene([0, 0, 0], moved)
        p0 = project_point([0.1, -0.2, 2.0], scene.camera_t)
        p1 = project_point([0.1, -0.2, 2.0], moved)
        du, dv = per_splat_displacement(scene, 0)
        assert (du, dv) == pytest.approx((p1.u - p0.u, p1.v - p0.v), abs=1e-12)
        assert du != 0.0

    def test_clipped(self):
        with pytest.raises(Clipped):
            per_splat_displacement(_translation_scene([0, 0, -5.0]), 0)


class TestRasterize:
    def test_empty_scene(self):
        rig = CameraRig(CameraIntrinsics(50.0, 50.0, 40, 30))
        cloud = GaussianCloud.empty()
        out = rasterize_pair(FramePairScene(cloud, np.zeros((0, 3)), rig, rig))
        assert out.color.shape == (30, 40, 3) and out.flow.shape == (30, 40, 2)
        assert not out.alpha.any() and not out.mask.any() and not out.flow.any()

    @pytest.mark.parametrize("seed", [0, 1])
    def test_matches_naive_oracle(self, seed):
        scene = random_scene(seed, n_splats=150, size=40)
        from splatflow.rasterizer import splat_displacements

        disps, _ = splat_displacements(scene)
        out = _render_with(scene, disps)
        color, flow, alpha = _naive(scene, disps)
        assert np.abs(out.color - color).max() < 1e-5
        assert np.abs(out.flow - flow).max() < 1e-5
        assert np.abs(out.alpha - alpha).max() < 1e-5

    def test_early_exit_matches_oracle_with_same_threshold(self):
        scene = random_scene(4, n_splats=300, size=32)
        from splatflow.rasterizer import splat_displacements

        disps, _ = splat_displacements(scene)
        out = _render_with(scene, disps, RasterConfig())
        color, flow, alpha = _naive(scene, disps, min_transmittance=1e-4)
        assert np.abs(out.color - color).max() < 1e-5
        assert np.abs(out.alpha - alpha).max() < 1e-5

    def test_alpha_range_and_mask(self):
        out = rasterize_pair(random_scene(2), RasterConfig(mask_threshold=0.3))
        assert out.alpha.min() >= 0.0 and out.alpha.max() <= 1.0
        assert np.array_equal(out.mask, out.alpha >= 0.3)
        assert np.isfinite(out.flow).all()

    def test_thread_count_bit_identical(self):
        scene = random_scene(5, n_splats=800, size=96)
        ref = rasterize_pair(scene, RasterConfig(threads=1))
        for t in (2, 3, 8):
            out = rasterize_pair(scene, RasterConfig(threads=t))
            for name in ("color", "flow", "alpha", "mask"):
                assert np.array_equal(getattr(out, name), getattr(ref, name))

    def test_odd_tile_size_same_image(self):
        scene = random_scene(6, n_splats=200, size=50)
        a = rasterize_pair(scene, STRICT)
        b = rasterize_pair(scene, RasterConfig(tile_size=7).strict())
        assert np.abs(a.color - b.color).max() < 1e-12

    def test_render_frame_zero_flow(self):
        scene = random_scene(7, n_splats=100, size=32)
        out = render_frame(scene.gaussians, scene.camera_t)
        assert not out.flow.any()
        assert out.alpha.max() > 0

    def test_clipped_splats_dropped(self):
        scene = _translation_scene([0, 0, -5.0])
        out = rasterize_pair(scene)
        assert not out.alpha.any()

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10_000), st.sampled_from([0.0, 0.5, 2.0, -1.5]))
    def test_flow_linearity(self, seed, k):
        scene = random_scene(seed, n_splats=120, size=32)
        rng = np.random.default_rng(seed)
        disps = rng.normal(scale=3.0, size=(120, 2))
        base = _render_with(scene, disps, RasterConfig())
        scaled = _render_with(scene, k * disps, RasterConfig())
        assert np.allclose(scaled.flow, k * base.flow, rtol=1e-9, atol=1e-12)
        assert np.array_equal(scaled.alpha, base.alpha)

    def test_transmittance_monotone(self):
        scene = random_scene(8, n_splats=60, size=16)
        proj = project_gaussians(scene.gaussians, scene.camera_t)
        order = np.argsort(proj.depths, kind="stable")
        splats = [proj.splat(i) for i in order]
        from splatflow.splat import splat_weight

        for px in [(3, 3), (8, 8), (12, 5)]:
            trans = [1.0]
            for s in splats:
                trans.append(trans[-1] * (1.0 - splat_weight(s, px)))
            assert all(b <= a for a, b in zip(trans, trans[1:]))
