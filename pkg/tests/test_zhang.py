import numpy as np
import pytest

from hybridcal.errors import DegenerateMotion, InsufficientViews
from hybridcal.geometry import rotation_distance
from hybridcal.simulator import PatternObservation, SceneConfig, generate_scene
from hybridcal.zhang import init_extrinsics


class TestInitExtrinsics:
    def test_exact_on_pinhole_scene(self, pinhole_scene_clean):
        scene = pinhole_scene_clean
        est = init_extrinsics(scene.observations)
        lens = scene.lens
        assert abs(est.K[0, 0] - lens.focal) < 1e-4
        assert abs(est.K[1, 1] - lens.focal * lens.alpha) < 1e-4
        assert abs(est.K[0, 2] - lens.cx) < 1e-4
        assert abs(est.K[1, 2] - lens.cy) < 1e-4
        for pose, truth in zip(est.poses, scene.true_poses):
            assert rotation_distance(pose.rotation, truth.rotation) < 1e-8
            assert np.linalg.norm(pose.translation - truth.translation) < 1e-6

    def test_repeated_pose_degenerate(self, pinhole_scene_clean):
        obs0 = pinhole_scene_clean.observations[0]
        clones = [
            PatternObservation(i, obs0.grid_ids, obs0.plane_points, obs0.pixels)
            for i in range(5)
        ]
        with pytest.raises(DegenerateMotion):
            init_extrinsics(clones)

    def test_fisheye_seed_quality(self, fisheye_scene_clean):
        # distortion is unmodeled here, so the seed deviates; the bound is
        # frozen from observed behavior on the fisheye preset and the seed's
        # adequacy is demonstrated by the global-optimization convergence tests
        est = init_extrinsics(fisheye_scene_clean.observations)
        errs = [rotation_distance(p.rotation, t.rotation)
                for p, t in zip(est.poses, fisheye_scene_clean.true_poses)]
        assert max(errs) < 0.7
        assert np.mean(errs) < 0.45

    def test_insufficient_views(self, pinhole_scene_clean):
        with pytest.raises(InsufficientViews):
            init_extrinsics(pinhole_scene_clean.observations[:2])

    def test_permutation_invariance(self, linear_scene_clean):
        obs = list(linear_scene_clean.observations)
        est = init_extrinsics(obs)
        perm = [obs[i] for i in np.random.default_rng(0).permutation(len(obs))]
        est_p = init_extrinsics(perm)
        assert np.linalg.norm(est.K - est_p.K) < 1e-9
        lookup = {o.pose_index: p for o, p in zip(perm, est_p.poses)}
        for o, p in zip(obs, est.poses):
            q = lookup[o.pose_index]
            assert rotation_distance(p.rotation, q.rotation) < 1e-9
            assert np.linalg.norm(p.translation - q.translation) < 1e-9

    def test_orthonormal_columns(self, fisheye_scene_clean):
        est = init_extrinsics(fisheye_scene_clean.observations)
        for pose in est.poses:
            r1, r2 = pose.rotation[:, 0], pose.rotation[:, 1]
            assert abs(np.linalg.norm(r1) - 1) < 1e-9
            assert abs(r1 @ r2) < 1e-9

    def test_cheirality(self, fisheye_scene_clean):
        est = init_extrinsics(fisheye_scene_clean.observations)
        for pose, obs in zip(est.poses, fisheye_scene_clean.observations):
            depths = pose.transform(obs.plane_points)[:, 2]
            assert depths.mean() > 0

    def test_center_crop_improves_fisheye(self, fisheye_scene_clean):
        scene = fisheye_scene_clean
        full = init_extrinsics(scene.observations)
        crop = init_extrinsics(scene.observations, center_fraction=0.5,
                               image_center=scene.lens.principal_point)
        err_full = np.mean([rotation_distance(p.rotation, t.rotation)
                            for p, t in zip(full.poses, scene.true_poses)])
        err_crop = np.mean([rotation_distance(p.rotation, t.rotation)
                            for p, t in zip(crop.poses, scene.true_poses)])
        assert err_crop < err_full
