"""Synthetic-lens ground-truth oracle.

Generates rational-distortion lenses, pattern poses, exact projections,
and noisy observations.  Everything is deterministic per seed (Philox
counter-based streams) so every downstream test can rely on frozen
reference values.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np

from .errors import BehindCamera, ConfigInvalid, OutOfWorkingRange
from .geometry import RigidPose, rotation_about
from .rng import stream_rng

_DENOMINATOR_FLOOR = 0.1


@dataclass(frozen=True)
class RationalLens:
    """Rational radial-distortion camera: scale(r) = num(r^2)/den(r^2)."""

    k: tuple  # k1..k6
    focal: float
    cx: float
    cy: float
    alpha: float
    width: int
    height: int
    name: str = "custom"
    r_max: float = field(init=False)

    def __post_init__(self):
        if len(self.k) != 6:
            raise ConfigInvalid("rational lens needs 6 coefficients")
        object.__setattr__(self, "k", tuple(float(v) for v in self.k))
        object.__setattr__(self, "r_max", _working_range(self.k))

    @property
    def principal_point(self) -> np.ndarray:
        return np.array([self.cx, self.cy])

    @property
    def image_size(self) -> tuple[int, int]:
        return (self.width, self.height)


def _working_range(k, r_limit=50.0, samples=20000):
    """Largest radius before the rational denominator drops below 0.1 or the
    scale stops being positive and finite."""
    r = np.linspace(0.0, r_limit, samples)
    r2 = r * r
    den = 1.0 + k[3] * r2 + k[4] * r2**2 + k[5] * r2**3
    num = 1.0 + k[0] * r2 + k[1] * r2**2 + k[2] * r2**3
    bad = (den < _DENOMINATOR_FLOOR) | (num <= 0.0)
    idx = np.argmax(bad)
    if not bad.any():
        return float(r_limit)
    return float(r[max(idx - 1, 0)])


def load_preset(name: str) -> RationalLens:
    """Load one of the versioned lens presets (linear, wide, fisheye)."""
    raw = json.loads(resources.files("hybridcal.data").joinpath("lens_presets.json").read_text())
    for entry in raw["presets"]:
        if entry["name"] == name:
            return RationalLens(
                k=tuple(entry["k"]), focal=entry["focal"], cx=entry["cx"], cy=entry["cy"],
                alpha=entry["alpha"], width=entry["width"], height=entry["height"],
                name=entry["name"],
            )
    raise ConfigInvalid(f"unknown lens preset {name!r}")


def preset_names() -> list[str]:
    raw = json.loads(resources.files("hybridcal.data").joinpath("lens_presets.json").read_text())
    return [e["name"] for e in raw["presets"]]


def distort_scale(r, lens: RationalLens):
    """Radial distortion scale at normalized radius ``r`` (scalar or array)."""
    r = np.asarray(r, dtype=float)
    if np.any(r < 0) or np.any(r > lens.r_max):
        raise OutOfWorkingRange(f"radius outside [0, {lens.r_max:.3f}]")
    k = lens.k
    r2 = r * r
    num = 1.0 + k[0] * r2 + k[1] * r2**2 + k[2] * r2**3
    den = 1.0 + k[3] * r2 + k[4] * r2**2 + k[5] * r2**3
    return num / den


def project(points, lens: RationalLens):
    """Project camera-frame points (mm) to pixels.

    The aspect ratio multiplies the normalized y-coordinate before
    distortion, so the distorted offset stays radially aligned with
    (X/Z, alpha*Y/Z).
    """
    P = np.asarray(points, dtype=float)
    single = P.ndim == 1
    if single:
        P = P[None, :]
    Z = P[:, 2]
    if np.any(Z <= 0):
        raise BehindCamera("projection requires positive depth")
    chi = np.column_stack([P[:, 0] / Z, lens.alpha * P[:, 1] / Z])
    r = np.linalg.norm(chi, axis=1)
    s = distort_scale(r, lens)
    uv = lens.principal_point + lens.focal * s[:, None] * chi
    return uv[0] if single else uv


@dataclass(frozen=True)
class PatternObservation:
    """Detected grid points of one pattern pose: ids, plane coords (mm), pixels."""

    pose_index: int
    grid_ids: np.ndarray      # (n,) int
    plane_points: np.ndarray  # (n, 2) mm
    pixels: np.ndarray        # (n, 2) px

    def __post_init__(self):
        ids = np.asarray(self.grid_ids, dtype=int)
        if len(np.unique(ids)) != len(ids):
            raise ConfigInvalid("grid ids must be unique per observation")
        object.__setattr__(self, "grid_ids", ids)
        object.__setattr__(self, "plane_points", np.asarray(self.plane_points, dtype=float))
        object.__setattr__(self, "pixels", np.asarray(self.pixels, dtype=float))

    def __len__(self):
        return len(self.grid_ids)


@dataclass(frozen=True)
class GridSpec:
    """Planar calibration grid: rows x cols points at ``spacing`` mm."""

    rows: int = 10
    cols: int = 14
    spacing: float = 30.0

    def points(self) -> np.ndarray:
        """(rows*cols, 2) plane coordinates, centered on the grid."""
        jj, ii = np.meshgrid(np.arange(self.cols), np.arange(self.rows))
        x = (jj.ravel() - (self.cols - 1) / 2.0) * self.spacing
        y = (ii.ravel() - (self.rows - 1) / 2.0) * self.spacing
        return np.column_stack([x, y])

    def grid_rc(self, grid_id):
        return divmod(int(grid_id), self.cols)


@dataclass(frozen=True)
class SceneConfig:
    lens: RationalLens
    grid: GridSpec = GridSpec()
    n_poses: int = 30
    noise_sigma: float = 0.2
    min_visible_fraction: float = 0.5
    distance_range: tuple = (400.0, 1400.0)
    tilt_max_deg: float = 45.0


@dataclass(frozen=True)
class SyntheticScene:
    lens: RationalLens
    grid: GridSpec
    true_poses: list
    observations: list
    noise_sigma: float
    rng_seed: int


def _sample_pose(cfg: SceneConfig, rng: np.random.Generator) -> RigidPose:
    """Look-at pose toward the camera with random offset, tilt, and roll."""
    lens = cfg.lens
    # aim the pattern center at a random image location (biased to cover edges)
    u = rng.uniform(0.08, 0.92) * lens.width
    v = rng.uniform(0.08, 0.92) * lens.height
    # invert the radial map approximately: direction through that pixel
    d = np.array([u - lens.cx, (v - lens.cy)])
    rho = np.linalg.norm(d) / lens.focal
    # solve s(r)*r = rho for r by bisection on the monotone working range
    lo, hi = 0.0, cfg.lens.r_max
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if distort_scale(mid, lens) * mid < rho:
            lo = mid
        else:
            hi = mid
    r = 0.5 * (lo + hi)
    direction = np.array([*(d / max(np.linalg.norm(d), 1e-12) * r), 1.0])
    direction /= np.linalg.norm(direction)
    dist = rng.uniform(*cfg.distance_range)
    center = direction * dist
    # pattern normal looks back at the camera, tilted
    z_axis = -center / np.linalg.norm(center)
    tilt = np.deg2rad(rng.uniform(0.0, cfg.tilt_max_deg))
    azim = rng.uniform(0.0, 2.0 * np.pi)
    seed_x = np.array([1.0, 0.0, 0.0])
    if abs(z_axis @ seed_x) > 0.9:
        seed_x = np.array([0.0, 1.0, 0.0])
    x_axis = seed_x - (seed_x @ z_axis) * z_axis
    x_axis /= np.linalg.norm(x_axis)
    y_axis = np.cross(z_axis, x_axis)
    tilt_axis = np.cos(azim) * x_axis + np.sin(azim) * y_axis
    Rt = rotation_about(tilt_axis, tilt)
    z_axis = Rt @ z_axis
    x_axis = Rt @ x_axis
    y_axis = np.cross(z_axis, x_axis)
    roll = rng.uniform(0.0, 2.0 * np.pi)
    Rr = rotation_about(z_axis, roll)
    R = np.column_stack([Rr @ x_axis, Rr @ y_axis, z_axis])
    # pattern frame: grid is centered, so translation = camera-frame center
    return RigidPose(R, center)


def _observe(pose: RigidPose, cfg: SceneConfig):
    """Exact projection of the grid through the lens; returns visible subset."""
    lens = cfg.lens
    plane = cfg.grid.points()
    cam = pose.transform(plane)
    ok = cam[:, 2] > 1e-6
    chi = np.zeros((len(cam), 2))
    chi[ok] = np.column_stack([cam[ok, 0] / cam[ok, 2], lens.alpha * cam[ok, 1] / cam[ok, 2]])
    r = np.linalg.norm(chi, axis=1)
    ok &= r < lens.r_max
    uv = np.zeros((len(cam), 2))
    if ok.any():
        s = distort_scale(r[ok], lens)
        uv[ok] = lens.principal_point + lens.focal * s[:, None] * chi[ok]
    ok &= (uv[:, 0] >= 0) & (uv[:, 0] <= lens.width) & (uv[:, 1] >= 0) & (uv[:, 1] <= lens.height)
    ids = np.flatnonzero(ok)
    return ids, plane[ok], uv[ok]


def generate_scene(config: SceneConfig, rng_seed: int) -> SyntheticScene:
    """Deterministic synthetic scene with guaranteed image coverage.

    Poses are rejection-sampled look-at placements; a pose is kept only if
    at least ``min_visible_fraction`` of the grid is visible.  Accepted
    poses are steered across image regions so pairwise overlaps exist and
    the resulting connectivity graph is connected.
    """
    if config.n_poses < 1:
        raise ConfigInvalid("n_poses must be >= 1")
    if config.noise_sigma < 0:
        raise ConfigInvalid("noise_sigma must be >= 0")
    grid_n = config.grid.rows * config.grid.cols
    poses = []
    observations = []
    for i in range(config.n_poses):
        rng = stream_rng(rng_seed, 1, i)
        for attempt in range(200):
            pose = _sample_pose(config, rng)
            ids, plane, uv = _observe(pose, config)
            if len(ids) >= config.min_visible_fraction * grid_n:
                break
        else:
            raise ConfigInvalid("could not sample a visible pose; check config")
        noise_rng = stream_rng(rng_seed, 2, i)
        noisy = uv + (config.noise_sigma * noise_rng.standard_normal(uv.shape)
                      if config.noise_sigma > 0 else 0.0)
        inside = ((noisy[:, 0] >= 0) & (noisy[:, 0] <= config.lens.width)
                  & (noisy[:, 1] >= 0) & (noisy[:, 1] <= config.lens.height))
        poses.append(pose)
        observations.append(PatternObservation(i, ids[inside], plane[inside], noisy[inside]))
    return SyntheticScene(config.lens, config.grid, poses, observations,
                          config.noise_sigma, rng_seed)


def exact_pixels(scene: SyntheticScene, pose_index: int) -> np.ndarray:
    """Noise-free reprojection of the points recorded for one observation."""
    obs = scene.observations[pose_index]
    cam = scene.true_poses[pose_index].transform(obs.plane_points)
    return project(cam, scene.lens)


def ray_plane_point(pose_src: RigidPose, plane_point, pose_dst: RigidPose):
    """Exact pattern-plane coordinates where the ray through a source-pattern
    point pierces the destination pattern's plane.

    This is the interpolation-free oracle for cross-pattern correspondences.
    """
    p = np.asarray(plane_point, dtype=float)
    xc = pose_src.transform(p)[0]
    M = pose_dst.plane_matrix()
    q = np.linalg.solve(M, xc)
    if abs(q[2]) < 1e-15:
        raise BehindCamera("ray parallel to destination plane")
    return q[:2] / q[2]


@dataclass(frozen=True)
class TwoViewConfig:
    lens: RationalLens
    n_points: int = 300
    noise_sigma: float = 1.0
    point_box: tuple = ((-500.0, 500.0), (-500.0, 500.0), (0.0, 500.0))
    right_box: tuple = ((-300.0, 300.0), (-300.0, 300.0), (-100.0, 100.0))
    euler_std_deg: tuple = (10.0, 10.0, 20.0)
    min_depth: float = 50.0


@dataclass(frozen=True)
class TwoViewScene:
    lens: RationalLens
    points: np.ndarray        # (n, 3) world = left-camera frame
    rotation: np.ndarray      # right-view world-to-camera rotation
    translation: np.ndarray   # right-view world-to-camera translation
    pixels_left: np.ndarray
    pixels_right: np.ndarray
    noise_sigma: float
    rng_seed: int


def _euler_zyx(angles):
    az, ay, ax = angles[2], angles[1], angles[0]
    Rz = rotation_about([0, 0, 1], az)
    Ry = rotation_about([0, 1, 0], ay)
    Rx = rotation_about([1, 0, 0], ax)
    return Rz @ Ry @ Rx


def generate_two_view_scene(config: TwoViewConfig, rng_seed: int) -> TwoViewScene:
    """Random two-view geometry with lens-projected, noise-perturbed pixels.

    World frame = left camera.  Points are drawn from the configured box and
    kept only when visible in both views (positive depth, inside the image,
    within the lens working range), so the emitted set is exactly
    ``n_points`` visible correspondences.
    """
    if config.n_points < 8:
        raise ConfigInvalid("need at least 8 points")
    rng = stream_rng(rng_seed, 10)
    (xb, yb, zb) = config.point_box
    (xr, yr, zr) = config.right_box
    angles = np.deg2rad(np.array(config.euler_std_deg)) * rng.standard_normal(3)
    R = _euler_zyx(angles)
    center = np.array([rng.uniform(*xr), rng.uniform(*yr), rng.uniform(*zr)])
    t = -R @ center
    pts, uv_l, uv_r = [], [], []
    attempts = 0
    while len(pts) < config.n_points and attempts < 400 * config.n_points:
        attempts += 1
        X = np.array([rng.uniform(*xb), rng.uniform(*yb), rng.uniform(*zb)])
        Xr = R @ X + t
        if X[2] < config.min_depth or Xr[2] < config.min_depth:
            continue
        try:
            ul = project(X, config.lens)
            ur = project(Xr, config.lens)
        except (BehindCamera, OutOfWorkingRange):
            continue
        w, h = config.lens.width, config.lens.height
        if not (0 <= ul[0] <= w and 0 <= ul[1] <= h and 0 <= ur[0] <= w and 0 <= ur[1] <= h):
            continue
        pts.append(X)
        uv_l.append(ul)
        uv_r.append(ur)
    if len(pts) < config.n_points:
        raise ConfigInvalid("could not place requested number of visible points")
    pts = np.array(pts)
    uv_l = np.array(uv_l)
    uv_r = np.array(uv_r)
    if config.noise_sigma > 0:
        noise = stream_rng(rng_seed, 11)
        uv_l = uv_l + config.noise_sigma * noise.standard_normal(uv_l.shape)
        uv_r = uv_r + config.noise_sigma * noise.standard_normal(uv_r.shape)
    return TwoViewScene(config.lens, pts, R, t, uv_l, uv_r, config.noise_sigma, rng_seed)


def pinhole_lens(focal=1000.0, cx=640.0, cy=400.0, alpha=1.0, width=1280, height=800,
                 name="pinhole") -> RationalLens:
    """Distortion-free lens, handy as an analytic oracle."""
    return RationalLens(k=(0.0,) * 6, focal=focal, cx=cx, cy=cy, alpha=alpha,
                        width=width, height=height, name=name)


def with_aspect(lens: RationalLens, alpha: float) -> RationalLens:
    """Copy of a lens with a different aspect ratio (a 'custom' variant)."""
    return replace(lens, alpha=alpha, name=f"{lens.name}-a{alpha:g}")
