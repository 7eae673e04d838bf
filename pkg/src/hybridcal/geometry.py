"""Rigid-motion, homography, and ambiguity-transform algebra.

Conventions: a pattern pose maps pattern-plane coordinates (millimeters,
implicit z = 0) into the camera frame via ``X_c = R @ X + t``.  Homographies
relate the planar coordinates of two pattern poses whose points project to
the same pixel; they are defined up to scale and normalized here so the
entry of largest magnitude equals +1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import (
    DegenerateConfiguration,
    InsufficientData,
    SingularConfiguration,
)

ROTATION_TOL = 1e-9
_COND_LIMIT = 1e12


def _check_rotation(R: np.ndarray, tol: float = ROTATION_TOL) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    if R.shape != (3, 3):
        raise ValueError(f"rotation must be 3x3, got {R.shape}")
    if np.linalg.norm(R.T @ R - np.eye(3)) > tol:
        raise ValueError("matrix is not orthonormal")
    if abs(np.linalg.det(R) - 1.0) > tol:
        raise ValueError("matrix has determinant != +1")
    return R


def nearest_rotation(M: np.ndarray) -> np.ndarray:
    """Closest rotation in Frobenius norm (polar projection)."""
    U, _, Vt = np.linalg.svd(np.asarray(M, dtype=float))
    R = U @ Vt
    if np.linalg.det(R) < 0:
        R = U @ np.diag([1.0, 1.0, -1.0]) @ Vt
    return R


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform-ish random rotation from a QR decomposition."""
    Q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    if np.linalg.det(Q) < 0:
        Q[:, 2] *= -1.0
    return Q


def rotation_about(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rotation by ``angle`` radians about a (not necessarily unit) axis."""
    axis = np.asarray(axis, dtype=float)
    n = np.linalg.norm(axis)
    if n < 1e-15:
        return np.eye(3)
    return axis_angle_to_rotation(axis / n * angle)


def axis_angle_to_rotation(w: np.ndarray) -> np.ndarray:
    """Exponential map of an axis-angle 3-vector."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w)
    K = np.array([[0.0, -w[2], w[1]],
                  [w[2], 0.0, -w[0]],
                  [-w[1], w[0], 0.0]])
    if theta < 1e-12:
        # second-order expansion keeps the map smooth through zero
        return np.eye(3) + K + 0.5 * (K @ K)
    return np.eye(3) + np.sin(theta) / theta * K + (1.0 - np.cos(theta)) / theta**2 * (K @ K)


def rotation_to_axis_angle(R: np.ndarray) -> np.ndarray:
    """Logarithm map: axis-angle vector of a rotation."""
    R = np.asarray(R, dtype=float)
    cos_t = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos_t)
    if theta < 1e-12:
        return np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]]) / 2.0
    if np.pi - theta < 1e-6:
        # near pi the anti-symmetric part vanishes; recover axis from R + I
        A = (R + np.eye(3)) / 2.0
        axis = np.sqrt(np.clip(np.diag(A), 0.0, None))
        k = int(np.argmax(axis))
        axis = A[:, k] / max(axis[k], 1e-15)
        axis /= np.linalg.norm(axis)
        return axis * theta
    axis = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return axis / (2.0 * np.sin(theta)) * theta


def rotation_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Geodesic angle in [0, pi] between two rotations.

    Uses the trace formula with clamped arccos; small angles switch to the
    equivalent Frobenius form 2*asin(|a-b|_F / (2*sqrt(2))), which keeps
    sub-1e-8 differences measurable (arccos loses them to rounding).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    fro = np.linalg.norm(a - b)
    if fro < 0.5:
        return float(2.0 * np.arcsin(np.clip(fro / (2.0 * np.sqrt(2.0)), -1.0, 1.0)))
    cos_t = np.clip((np.trace(a.T @ b) - 1.0) / 2.0, -1.0, 1.0)
    return float(np.arccos(cos_t))


@dataclass(frozen=True)
class RigidPose:
    """Pattern-to-camera transform: rotation (orthonormal, det +1) and
    translation in millimeters."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = _check_rotation(self.rotation)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if not np.all(np.isfinite(t)):
            raise ValueError("translation must be finite")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)
        self.rotation.setflags(write=False)
        self.translation.setflags(write=False)

    def transform(self, points: np.ndarray) -> np.ndarray:
        """Map pattern-plane points (N,2) or camera-frame points (N,3) into
        the camera frame."""
        P = np.asarray(points, dtype=float)
        if P.ndim == 1:
            P = P[None, :]
        if P.shape[1] == 2:
            P = np.column_stack([P, np.zeros(len(P))])
        return P @ self.rotation.T + self.translation

    def plane_matrix(self) -> np.ndarray:
        """The 3x3 matrix (r1 r2 t) mapping homogeneous plane coords to the
        camera frame."""
        return np.column_stack([self.rotation[:, 0], self.rotation[:, 1], self.translation])


@dataclass(frozen=True)
class Homography:
    """3x3 plane-to-plane map, scale-normalized so the entry of largest
    magnitude is +1."""

    matrix: np.ndarray = field(repr=False)

    def __post_init__(self):
        H = np.asarray(self.matrix, dtype=float)
        if H.shape != (3, 3):
            raise ValueError("homography must be 3x3")
        sv = np.linalg.svd(H, compute_uv=False)
        if sv[-1] <= 1e-10 * sv[0]:
            raise DegenerateConfiguration("homography is numerically rank-deficient")
        k = np.unravel_index(np.argmax(np.abs(H)), H.shape)
        object.__setattr__(self, "matrix", H / H[k])
        self.matrix.setflags(write=False)

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Map planar points (N,2) through the homography."""
        P = np.asarray(points, dtype=float)
        if P.ndim == 1:
            P = P[None, :]
        q = np.column_stack([P, np.ones(len(P))]) @ self.matrix.T
        return q[:, :2] / q[:, 2:3]

    def inverse(self) -> "Homography":
        return Homography(np.linalg.inv(self.matrix))


def homography_gap(a: Homography | np.ndarray, b: Homography | np.ndarray) -> float:
    """Frobenius distance between two homographies after each is normalized
    so its largest-magnitude entry equals +1."""
    Ha = a.matrix if isinstance(a, Homography) else Homography(a).matrix
    Hb = b.matrix if isinstance(b, Homography) else Homography(b).matrix
    return float(np.linalg.norm(Ha - Hb))


def compose_homography(pose_i: RigidPose, pose_j: RigidPose) -> Homography:
    """Homography taking pattern-i planar coordinates to the pattern-j plane
    for points sharing a projection ray.

    Raises SingularConfiguration when pattern j's plane passes through the
    camera center (its plane matrix is numerically singular).
    """
    Mj = pose_j.plane_matrix()
    cond = np.linalg.cond(Mj)
    if not np.isfinite(cond) or cond > _COND_LIMIT:
        raise SingularConfiguration("target pattern plane passes through the camera center")
    Mi = pose_i.plane_matrix()
    return Homography(np.linalg.solve(Mj, Mi))


def _normalize_points(pts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Hartley isotropic normalization: centroid at origin, RMS distance
    sqrt(2).  Returns normalized points and the 3x3 transform."""
    centroid = pts.mean(axis=0)
    d = pts - centroid
    rms = np.sqrt(np.mean(np.sum(d * d, axis=1)))
    s = np.sqrt(2.0) / max(rms, 1e-15)
    T = np.array([[s, 0.0, -s * centroid[0]],
                  [0.0, s, -s * centroid[1]],
                  [0.0, 0.0, 1.0]])
    return d * s, T


def _has_collinear_triple_only(src: np.ndarray) -> bool:
    """True when no 4 points of ``src`` are in general position (all point
    triples collinear, or duplicates reduce the span)."""
    n = len(src)
    # rank test on the homogeneous coordinates catches global collinearity
    A = np.column_stack([src, np.ones(n)])
    sv = np.linalg.svd(A, compute_uv=False)
    return sv[-1] < 1e-9 * sv[0]


def estimate_homography(correspondences) -> tuple[Homography, float]:
    """Least-squares DLT homography from (source, target) planar point pairs.

    Returns the homography and the RMS mapping residual in target units.
    Raises InsufficientData for fewer than 4 pairs and
    DegenerateConfiguration for collinear/duplicate source or target sets.
    """
    pairs = list(correspondences)
    if len(pairs) < 4:
        raise InsufficientData(f"need >= 4 correspondences, got {len(pairs)}")
    src = np.asarray([np.asarray(p[0], dtype=float) for p in pairs])
    dst = np.asarray([np.asarray(p[1], dtype=float) for p in pairs])
    if _has_collinear_triple_only(src) or _has_collinear_triple_only(dst):
        raise DegenerateConfiguration("correspondences are collinear or duplicated")
    sn, Ts = _normalize_points(src)
    dn, Td = _normalize_points(dst)
    n = len(pairs)
    A = np.zeros((2 * n, 9))
    X, Y = sn[:, 0], sn[:, 1]
    u, v = dn[:, 0], dn[:, 1]
    A[0::2, 0] = -X
    A[0::2, 1] = -Y
    A[0::2, 2] = -1.0
    A[0::2, 6] = u * X
    A[0::2, 7] = u * Y
    A[0::2, 8] = u
    A[1::2, 3] = -X
    A[1::2, 4] = -Y
    A[1::2, 5] = -1.0
    A[1::2, 6] = v * X
    A[1::2, 7] = v * Y
    A[1::2, 8] = v
    _, _, Vt = np.linalg.svd(A)
    Hn = Vt[-1].reshape(3, 3)
    try:
        H = Homography(np.linalg.inv(Td) @ Hn @ Ts)
    except DegenerateConfiguration:
        raise DegenerateConfiguration("estimated homography is rank-deficient")
    resid = H.apply(src) - dst
    rms = float(np.sqrt(np.mean(np.sum(resid * resid, axis=1))))
    return H, rms


def apply_ambiguity(pose: RigidPose, lam: np.ndarray, kind: str) -> RigidPose:
    """Transform a pose by an ambiguity rotation.

    kind="rotation":   (R, t) -> (lam R, lam t)
    kind="reflection": (R, t) -> (lam R, lam R diag(1,1,-1) R^T t)
    """
    lam = _check_rotation(lam)
    R, t = pose.rotation, pose.translation
    if kind == "rotation":
        return RigidPose(lam @ R, lam @ t)
    if kind == "reflection":
        flip = R @ np.diag([1.0, 1.0, -1.0]) @ R.T
        return RigidPose(lam @ R, lam @ flip @ t)
    raise ValueError(f"unknown ambiguity kind: {kind!r}")


def recover_ambiguity(ambiguous: RigidPose, true: RigidPose) -> np.ndarray:
    """Per-pattern ambiguity rotation implied by a pose pair: R~ R^T."""
    return ambiguous.rotation @ true.rotation.T
