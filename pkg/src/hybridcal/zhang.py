"""Distortion-ignoring extrinsic initialization from planar homographies.

Per-image plane-to-image homographies feed the absolute-conic linear system
(zero skew), giving a pinhole intrinsic estimate; extrinsics follow in
closed form and are re-orthonormalized by polar projection.  The solution
is unique (no pose ambiguity), which makes it the canonical seed for the
model-free global optimization.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CheiralityFailure, DegenerateMotion, InsufficientViews
from .geometry import RigidPose, estimate_homography, nearest_rotation


@dataclass(frozen=True)
class PinholeEstimate:
    """Zero-skew intrinsic matrix plus per-image pattern poses."""

    K: np.ndarray
    poses: list

    def __post_init__(self):
        K = np.asarray(self.K, dtype=float)
        if K[2, 2] != 1.0 or K[0, 0] <= 0 or K[1, 1] <= 0:
            raise ValueError("invalid intrinsic matrix")
        if K[0, 2] <= 0 or K[1, 2] <= 0:
            raise ValueError("principal point must have positive components")
        object.__setattr__(self, "K", K)
        self.K.setflags(write=False)


def _conic_row(H, i, j):
    """Constraint row for B = K^-T K^-1 with zero skew (5 parameters:
    B11, B22, B13, B23, B33)."""
    h = H.matrix
    return np.array([
        h[0, i] * h[0, j],
        h[1, i] * h[1, j],
        h[2, i] * h[0, j] + h[0, i] * h[2, j],
        h[2, i] * h[1, j] + h[1, i] * h[2, j],
        h[2, i] * h[2, j],
    ])


def _crop_observation(obs, fraction, center):
    d = np.linalg.norm(obs.pixels - center, axis=1)
    keep = d <= np.quantile(d, fraction)
    return obs.plane_points[keep], obs.pixels[keep]


def init_extrinsics(observations, center_fraction=None, image_center=None) -> PinholeEstimate:
    """Pinhole intrinsics and per-image poses, ignoring lens distortion.

    ``center_fraction`` optionally restricts homography/conic estimation to
    the centermost fraction of each pattern's points (useful under heavy
    distortion, off by default).
    """
    if len(observations) < 3:
        raise InsufficientViews(f"need >= 3 observations, got {len(observations)}")
    if center_fraction is not None:
        if image_center is None:
            allpix = np.vstack([o.pixels for o in observations])
            image_center = allpix.mean(axis=0)
        pairs = [_crop_observation(o, center_fraction, np.asarray(image_center))
                 for o in observations]
    else:
        pairs = [(o.plane_points, o.pixels) for o in observations]

    homs = [estimate_homography(list(zip(plane, pix)))[0] for plane, pix in pairs]

    V = np.zeros((2 * len(homs), 5))
    for k, H in enumerate(homs):
        V[2 * k] = _conic_row(H, 0, 1)
        V[2 * k + 1] = _conic_row(H, 0, 0) - _conic_row(H, 1, 1)
    sv = np.linalg.svd(V, compute_uv=False)
    if sv[3] < 1e-8 * sv[0]:
        raise DegenerateMotion("absolute-conic system is rank-deficient "
                               "(pattern poses lack orientation diversity)")
    _, _, Vt = np.linalg.svd(V)
    B11, B22, B13, B23, B33 = Vt[-1]
    if B11 < 0:
        B11, B22, B13, B23, B33 = -B11, -B22, -B13, -B23, -B33
    v0 = -B23 / B22
    lam = B33 - B13 * B13 / B11 + v0 * B23
    if lam / B11 <= 0 or lam / B22 <= 0:
        raise DegenerateMotion("conic solution is not positive definite")
    fx = float(np.sqrt(lam / B11))
    fy = float(np.sqrt(lam / B22))
    u0 = float(-B13 * fx * fx / lam)
    K = np.array([[fx, 0.0, u0], [0.0, fy, v0], [0.0, 0.0, 1.0]])

    Kinv = np.linalg.inv(K)
    poses = []
    for (plane, _), obs, H in zip(pairs, observations, homs):
        h = H.matrix
        r1p = Kinv @ h[:, 0]
        r2p = Kinv @ h[:, 1]
        scale = 1.0 / np.linalg.norm(r1p)
        for sign in (1.0, -1.0):
            r1 = sign * scale * r1p
            r2 = sign * scale * r2p
            t = sign * scale * (Kinv @ h[:, 2])
            R = nearest_rotation(np.column_stack([r1, r2, np.cross(r1, r2)]))
            pose = RigidPose(R, t)
            depths = pose.transform(obs.plane_points)[:, 2]
            if depths.mean() > 0:
                poses.append(pose)
                break
        else:
            raise CheiralityFailure(f"pattern {obs.pose_index}: no pose places "
                                    "the grid in front of the camera")
    return PinholeEstimate(K=K, poses=poses)
