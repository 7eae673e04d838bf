import numpy as np
import pytest

from hybridcal.errors import BehindCamera, ConfigInvalid, OutOfWorkingRange
from hybridcal.simulator import (
    GridSpec,
    RationalLens,
    SceneConfig,
    TwoViewConfig,
    distort_scale,
    exact_pixels,
    generate_scene,
    generate_two_view_scene,
    load_preset,
    pinhole_lens,
    project,
)


class TestDistortScale:
    def test_zero_radius_is_one(self, fisheye_lens):
        assert distort_scale(0.0, fisheye_lens) == 1.0

    def test_zero_coefficients_identity(self):
        lens = pinhole_lens()
        r = np.linspace(0, 3, 50)
        assert np.allclose(distort_scale(r, lens), 1.0)

    def test_matches_extended_precision(self, fisheye_lens):
        import mpmath

        mpmath.mp.dps = 50
        k = [mpmath.mpf(repr(v)) for v in fisheye_lens.k]
        for r in np.linspace(0.001, fisheye_lens.r_max, 200):
            rm = mpmath.mpf(repr(float(r))) ** 2
            num = 1 + k[0] * rm + k[1] * rm**2 + k[2] * rm**3
            den = 1 + k[3] * rm + k[4] * rm**2 + k[5] * rm**3
            ref = float(num / den)
            got = float(distort_scale(float(r), fisheye_lens))
            assert abs(got - ref) / abs(ref) < 1e-12

    def test_out_of_range_raises(self, linear_lens):
        with pytest.raises(OutOfWorkingRange):
            distort_scale(linear_lens.r_max * 1.01, linear_lens)

    def test_continuity(self):
        for name in ("linear", "wide", "fisheye"):
            lens = load_preset(name)
            r = np.arange(0.0, min(lens.r_max, 4.0), 1e-3)
            s = distort_scale(r, lens)
            sp = distort_scale(r + 1e-6, lens)
            assert np.max(np.abs(sp - s)) < 1e-3


class TestProject:
    def test_optical_axis_hits_principal_point(self, fisheye_lens):
        uv = project(np.array([0.0, 0.0, 777.0]), fisheye_lens)
        assert np.allclose(uv, fisheye_lens.principal_point)

    def test_pinhole_formula(self):
        lens = pinhole_lens(focal=900.0, cx=640.0, cy=400.0, alpha=1.002)
        X = np.array([30.0, -40.0, 500.0])
        uv = project(X, lens)
        assert np.allclose(uv, [640.0 + 900.0 * 30.0 / 500.0,
                                400.0 + 900.0 * 1.002 * (-40.0) / 500.0])

    def test_matches_extended_precision(self, fisheye_lens):
        import mpmath

        mpmath.mp.dps = 50
        rng = np.random.default_rng(0)
        k = [mpmath.mpf(repr(v)) for v in fisheye_lens.k]
        f = mpmath.mpf(repr(fisheye_lens.focal))
        al = mpmath.mpf(repr(fisheye_lens.alpha))
        for _ in range(100):
            X = [rng.uniform(-300, 300), rng.uniform(-300, 300), rng.uniform(400, 1200)]
            uv = project(np.array(X), fisheye_lens)
            Xm = [mpmath.mpf(repr(v)) for v in X]
            x = Xm[0] / Xm[2]
            y = al * Xm[1] / Xm[2]
            r2 = x * x + y * y
            num = 1 + k[0] * r2 + k[1] * r2**2 + k[2] * r2**3
            den = 1 + k[3] * r2 + k[4] * r2**2 + k[5] * r2**3
            s = num / den
            ref_u = float(mpmath.mpf(repr(fisheye_lens.cx)) + f * s * x)
            ref_v = float(mpmath.mpf(repr(fisheye_lens.cy)) + f * s * y)
            assert abs(uv[0] - ref_u) < 1e-9 and abs(uv[1] - ref_v) < 1e-9

    def test_behind_camera(self, linear_lens):
        with pytest.raises(BehindCamera):
            project(np.array([0.0, 0.0, -5.0]), linear_lens)

    def test_radial_symmetry_alpha_one(self):
        lens = pinhole_lens(focal=700.0, alpha=1.0)
        lens = RationalLens(k=load_preset("fisheye").k, focal=440.0, cx=640.0, cy=400.0,
                            alpha=1.0, width=1280, height=800)
        rng = np.random.default_rng(1)
        X = np.column_stack([rng.uniform(-200, 200, 50), rng.uniform(-200, 200, 50),
                             rng.uniform(500, 900, 50)])
        uv = project(X, lens)
        Xr = X.copy()
        Xr[:, 0] *= -1
        Xr[:, 1] *= -1
        uvr = project(Xr, lens)
        reflected = 2 * lens.principal_point - uv
        assert np.max(np.abs(uvr - reflected)) < 1e-12


class TestGenerateScene:
    def test_deterministic(self, fisheye_lens):
        cfg = SceneConfig(lens=fisheye_lens, noise_sigma=0.2)
        a = generate_scene(cfg, rng_seed=5)
        b = generate_scene(cfg, rng_seed=5)
        for oa, ob in zip(a.observations, b.observations):
            assert np.array_equal(oa.pixels, ob.pixels)
            assert np.array_equal(oa.grid_ids, ob.grid_ids)

    def test_zero_noise_matches_projection(self, fisheye_scene_clean):
        for idx in range(len(fisheye_scene_clean.observations)):
            obs = fisheye_scene_clean.observations[idx]
            assert np.max(np.abs(obs.pixels - exact_pixels(fisheye_scene_clean, idx))) < 1e-12

    def test_pixels_inside_image(self, fisheye_scene_noisy):
        lens = fisheye_scene_noisy.lens
        for obs in fisheye_scene_noisy.observations:
            assert np.all(obs.pixels[:, 0] >= 0) and np.all(obs.pixels[:, 0] <= lens.width)
            assert np.all(obs.pixels[:, 1] >= 0) and np.all(obs.pixels[:, 1] <= lens.height)

    def test_noise_std_matches_sigma(self, linear_lens):
        sigma = 0.5
        cfg = SceneConfig(lens=linear_lens, noise_sigma=sigma, n_poses=55)
        scene = generate_scene(cfg, rng_seed=8)
        diffs = []
        for idx, obs in enumerate(scene.observations):
            diffs.append(obs.pixels - exact_pixels(scene, idx))
        diffs = np.vstack(diffs).ravel()
        assert diffs.size >= 10_000
        assert abs(diffs.std() - sigma) / sigma < 0.05

    def test_invalid_config(self, linear_lens):
        with pytest.raises(ConfigInvalid):
            generate_scene(SceneConfig(lens=linear_lens, n_poses=0), rng_seed=1)
        with pytest.raises(ConfigInvalid):
            generate_scene(SceneConfig(lens=linear_lens, noise_sigma=-1.0), rng_seed=1)

    def test_min_visible_fraction(self, fisheye_scene_clean):
        n_grid = fisheye_scene_clean.grid.rows * fisheye_scene_clean.grid.cols
        for obs in fisheye_scene_clean.observations:
            assert len(obs) >= 0.5 * n_grid


class TestTwoViewScene:
    def test_epipolar_exact_pure_translation(self):
        lens = pinhole_lens(focal=800.0, alpha=1.0)
        cfg = TwoViewConfig(lens=lens, n_points=100, noise_sigma=0.0,
                            right_box=((200.0, 200.0), (0.0, 0.0), (0.0, 0.0)),
                            euler_std_deg=(0.0, 0.0, 0.0))
        sc = generate_two_view_scene(cfg, rng_seed=3)
        assert np.allclose(sc.rotation, np.eye(3))
        t = sc.translation
        tx = np.array([[0, -t[2], t[1]], [t[2], 0, -t[0]], [-t[1], t[0], 0]])
        E = tx @ sc.rotation
        for X in sc.points:
            x = X / X[2]
            Xr = sc.rotation @ X + sc.translation
            xr = Xr / Xr[2]
            assert abs(xr @ E @ x) < 1e-12

    def test_deterministic(self, wide_lens):
        cfg = TwoViewConfig(lens=wide_lens, n_points=60, noise_sigma=1.0)
        a = generate_two_view_scene(cfg, rng_seed=9)
        b = generate_two_view_scene(cfg, rng_seed=9)
        assert np.array_equal(a.pixels_left, b.pixels_left)
        assert np.array_equal(a.points, b.points)

    def test_monte_carlo_statistics(self, fisheye_lens):
        cfg = TwoViewConfig(lens=fisheye_lens, n_points=40, noise_sigma=0.0)
        centers, eulers = [], []
        for seed in range(100):
            sc = generate_two_view_scene(cfg, rng_seed=seed)
            centers.append(-sc.rotation.T @ sc.translation)
            # recover zyx euler angles
            R = sc.rotation
            ay = -np.arcsin(np.clip(R[2, 0], -1, 1))
            ax = np.arctan2(R[2, 1], R[2, 2])
            az = np.arctan2(R[1, 0], R[0, 0])
            eulers.append([ax, ay, az])
        centers = np.array(centers)
        eulers = np.rad2deg(np.array(eulers))
        assert np.all(centers[:, 0] >= -300) and np.all(centers[:, 0] <= 300)
        assert np.all(centers[:, 1] >= -300) and np.all(centers[:, 1] <= 300)
        assert np.all(centers[:, 2] >= -100) and np.all(centers[:, 2] <= 100)
        std = eulers.std(axis=0)
        for got, want in zip(std, (10.0, 10.0, 20.0)):
            assert abs(got - want) / want < 0.15
