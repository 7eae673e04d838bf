"""Pattern-overlap connectivity graph and model-free global extrinsic
optimization.

Pattern projections are reduced to bounding quadrilaterals for fast overlap
tests; overlapping pairs contribute cross-pattern correspondences obtained
by inverse-bilinear interpolation inside the observed grid cells.  The
extrinsics of all patterns are then optimized jointly by minimizing robust
homography transfer error, with the root pose frozen as the gauge.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateObservation, Diverged, EmptyGraph, GaugeUnderconstrained
from .geometry import RigidPose, axis_angle_to_rotation
from .optimize import huber_weights, levenberg_marquardt_normal

logger = logging.getLogger(__name__)

MIN_EDGE_CORRESPONDENCES = 8
_DEHOM_GUARD = 1e-12
_DEHOM_PENALTY = 1e6


@dataclass(frozen=True)
class Quadrilateral:
    """Convex CCW quadrilateral with its half-plane system A u <= b."""

    vertices: np.ndarray          # (4, 2), counter-clockwise
    half_planes: np.ndarray       # (4, 3): rows (a1, a2, b)

    def contains(self, points: np.ndarray, slack: float = 1e-6) -> np.ndarray:
        P = np.atleast_2d(np.asarray(points, dtype=float))
        A = self.half_planes[:, :2]
        b = self.half_planes[:, 2]
        return np.all(P @ A.T <= b + slack, axis=1)


def _convex_hull(points: np.ndarray) -> np.ndarray:
    """Andrew's monotone chain; returns CCW hull vertices (image axes)."""
    pts = np.unique(np.asarray(points, dtype=float), axis=0)
    if len(pts) < 3:
        raise DegenerateObservation("need at least 3 distinct points")
    order = np.lexsort((pts[:, 1], pts[:, 0]))
    pts = pts[order]

    def cross(o, a, b):
        return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])

    lower = []
    for p in pts:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper = []
    for p in pts[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = np.array(lower[:-1] + upper[:-1])
    if len(hull) < 3:
        raise DegenerateObservation("observed points are collinear")
    return hull


def _quad_area(v):
    x, y = v[:, 0], v[:, 1]
    return 0.5 * abs(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def _max_area_quad_vertices(hull: np.ndarray) -> np.ndarray:
    """Pick the 4 hull vertices spanning maximal area (vectorized exhaustive
    search; hulls of detected grids stay small)."""
    n = len(hull)
    if n == 3:
        raise DegenerateObservation("hull is a triangle; quadrilateral undefined")
    if n == 4:
        return hull
    from itertools import combinations

    idx = np.array(list(combinations(range(n), 4)), dtype=int)
    v = hull[idx]  # (m, 4, 2), CCW order preserved by index order
    x, y = v[..., 0], v[..., 1]
    areas = 0.5 * np.abs(
        np.sum(x * np.roll(y, -1, axis=1), axis=1) - np.sum(y * np.roll(x, -1, axis=1), axis=1))
    return hull[idx[np.argmax(areas)]]


def bounding_quadrilateral(observation) -> Quadrilateral:
    """Quadrilateral covering all observed pixels of one pattern.

    The 4 support directions come from the maximal-area hull vertices; each
    edge is then pushed outward until every observed pixel satisfies it, so
    curved (fisheye) boundaries stay fully covered.
    """
    pixels = observation.pixels if hasattr(observation, "pixels") else np.asarray(observation)
    if len(pixels) < 4:
        raise DegenerateObservation("need at least 4 observed points")
    hull = _convex_hull(pixels)
    verts = _max_area_quad_vertices(hull)
    # hull is CCW in standard axes; build edge normals pointing outward
    half = np.zeros((4, 3))
    for k in range(4):
        p, q = verts[k], verts[(k + 1) % 4]
        e = q - p
        n = np.array([e[1], -e[0]])  # outward for CCW polygon
        nn = np.linalg.norm(n)
        if nn < 1e-12:
            raise DegenerateObservation("degenerate quadrilateral edge")
        n /= nn
        b = float(np.max(pixels @ n))  # support value covers every pixel
        half[k] = (n[0], n[1], b)
    # rebuild vertices as intersections of adjacent edges (after the push-out)
    new_verts = np.zeros((4, 2))
    for k in range(4):
        a1, b1 = half[k - 1][:2], half[k - 1][2]
        a2, b2 = half[k][:2], half[k][2]
        A = np.vstack([a1, a2])
        new_verts[k] = np.linalg.solve(A, np.array([b1, b2]))
    quad = Quadrilateral(vertices=new_verts, half_planes=half)
    if not np.all(quad.contains(pixels, slack=1e-6)):
        raise DegenerateObservation("quadrilateral failed to cover its points")
    return quad


def _segments_intersect(p1, p2, p3, p4):
    d1 = np.cross(p4 - p3, p1 - p3)
    d2 = np.cross(p4 - p3, p2 - p3)
    d3 = np.cross(p2 - p1, p3 - p1)
    d4 = np.cross(p2 - p1, p4 - p1)
    return ((d1 * d2) < 0) and ((d3 * d4) < 0)


def overlap_test(qa: Quadrilateral, qb: Quadrilateral, vertex_only: bool = False) -> bool:
    """True when the quadrilateral interiors intersect.

    The vertex-inclusion test (either quad owns a vertex of the other) is
    extended with an edge-crossing fallback; ``vertex_only=True`` restricts
    to pure vertex inclusion.
    """
    if np.any(qb.contains(qa.vertices)) or np.any(qa.contains(qb.vertices)):
        return True
    if vertex_only:
        return False
    for i in range(4):
        for j in range(4):
            if _segments_intersect(qa.vertices[i], qa.vertices[(i + 1) % 4],
                                   qb.vertices[j], qb.vertices[(j + 1) % 4]):
                return True
    return False


@dataclass(frozen=True)
class CrossCorrespondence:
    """A source grid point of pattern i seen inside pattern j's grid:
    interpolated pattern-j plane coordinates for the shared pixel."""

    source_pose: int
    source_grid_id: int
    source_plane: np.ndarray   # (2,) pattern-i coords, mm
    target_pose: int
    target_plane: np.ndarray   # (2,) interpolated pattern-j coords, mm
    weights: np.ndarray        # (4,) bilinear weights, sum to 1


@dataclass(frozen=True)
class ConnectivityGraph:
    n_nodes: int
    edges: list                     # [(i, j, weight)]
    root: int
    component_labels: np.ndarray    # (n_nodes,) int
    excluded: np.ndarray            # nodes outside the largest component

    def edge_dict(self):
        return {(i, j): w for i, j, w in self.edges}

    def to_json_dict(self):
        return {
            "nodes": self.n_nodes,
            "edges": [{"i": int(i), "j": int(j), "weight": int(w)} for i, j, w in self.edges],
            "root": int(self.root),
            "excluded": [int(k) for k in self.excluded],
        }


class _CellIndex:
    """Grid-cell lookup for one observation: maps query pixels to the
    surrounding quad of 4 detected corners (full cells only)."""

    def __init__(self, obs, grid):
        self.obs = obs
        self.grid = grid
        rc = {tuple(grid.grid_rc(g)): k for k, g in enumerate(obs.grid_ids)}
        cells = []
        for (r, c), k00 in rc.items():
            k10 = rc.get((r, c + 1))
            k11 = rc.get((r + 1, c + 1))
            k01 = rc.get((r + 1, c))
            if None in (k10, k11, k01):
                continue
            cells.append((k00, k10, k11, k01))
        self.cells = np.array(cells, dtype=int) if cells else np.zeros((0, 4), dtype=int)
        self.corners = obs.pixels[self.cells] if len(self.cells) else np.zeros((0, 4, 2))
        if len(self.corners):
            self.bb_min = self.corners.min(axis=1)
            self.bb_max = self.corners.max(axis=1)

    def locate_batch(self, pixels):
        """For each query pixel, the containing cell and its inverse-bilinear
        coordinates.  Returns (query_idx, cell_idx, s, t) arrays."""
        if not len(self.cells) or not len(pixels):
            return (np.zeros(0, dtype=int),) * 2 + (np.zeros(0),) * 2
        P = np.asarray(pixels)
        inx = (P[:, 0:1] >= self.bb_min[None, :, 0]) & (P[:, 0:1] <= self.bb_max[None, :, 0])
        iny = (P[:, 1:2] >= self.bb_min[None, :, 1]) & (P[:, 1:2] <= self.bb_max[None, :, 1])
        qi, ci = np.nonzero(inx & iny)
        if not len(qi):
            return (np.zeros(0, dtype=int),) * 2 + (np.zeros(0),) * 2
        s, t, ok = _inverse_bilinear_batch(self.corners[ci], P[qi])
        qi, ci, s, t = qi[ok], ci[ok], s[ok], t[ok]
        # keep at most one cell per query (ties at shared cell edges)
        _, first = np.unique(qi, return_index=True)
        return qi[first], ci[first], s[first], t[first]


def _inverse_bilinear_batch(corners, p, tol=1e-12, max_iter=25):
    """Solve p = bilinear(corners; s, t) by Newton, vectorized over rows.

    corners: (m, 4, 2) with rows P00, P10, P11, P01; p: (m, 2).
    Returns (s, t, valid) with valid marking converged in-cell solutions.
    """
    m = len(p)
    s = np.full(m, 0.5)
    t = np.full(m, 0.5)
    alive = np.ones(m, dtype=bool)
    P00, P10, P11, P01 = corners[:, 0], corners[:, 1], corners[:, 2], corners[:, 3]
    for _ in range(max_iter):
        w0 = (1 - s) * (1 - t)
        w1 = s * (1 - t)
        w2 = s * t
        w3 = (1 - s) * t
        f = (w0[:, None] * P00 + w1[:, None] * P10 + w2[:, None] * P11
             + w3[:, None] * P01 - p)
        if not np.any(np.sum(f * f, axis=1)[alive] > tol * tol):
            break
        ds = (-(1 - t)[:, None] * P00 + (1 - t)[:, None] * P10
              + t[:, None] * P11 - t[:, None] * P01)
        dt = (-(1 - s)[:, None] * P00 - s[:, None] * P10
              + s[:, None] * P11 + (1 - s)[:, None] * P01)
        det = ds[:, 0] * dt[:, 1] - ds[:, 1] * dt[:, 0]
        sing = np.abs(det) < 1e-14
        alive &= ~sing
        det[sing] = 1.0
        du = (dt[:, 1] * f[:, 0] - dt[:, 0] * f[:, 1]) / det
        dv = (-ds[:, 1] * f[:, 0] + ds[:, 0] * f[:, 1]) / det
        s = np.where(alive, s - du, s)
        t = np.where(alive, t - dv, t)
        alive &= np.isfinite(s) & np.isfinite(t)
    w0 = (1 - s) * (1 - t)
    f = (w0[:, None] * P00 + (s * (1 - t))[:, None] * P10 + (s * t)[:, None] * P11
         + ((1 - s) * t)[:, None] * P01 - p)
    eps = 1e-9
    ok = (alive & (np.sum(f * f, axis=1) < 1e-16)
          & (s >= -eps) & (s <= 1 + eps) & (t >= -eps) & (t <= 1 + eps))
    return np.clip(s, 0.0, 1.0), np.clip(t, 0.0, 1.0), ok


def _pair_correspondences(obs_i, obs_j, quad_j, index_j, grid):
    """Correspondences from pattern i's points seen inside pattern j's cells."""
    inside = np.flatnonzero(quad_j.contains(obs_i.pixels))
    if not len(inside):
        return []
    qi, ci, s, t = index_j.locate_batch(obs_i.pixels[inside])
    out = []
    for q, c, ss, tt in zip(qi, ci, s, t):
        k = inside[q]
        w = np.array([(1 - ss) * (1 - tt), ss * (1 - tt), ss * tt, (1 - ss) * tt])
        target_plane = w @ obs_j.plane_points[index_j.cells[c]]
        out.append(CrossCorrespondence(
            source_pose=obs_i.pose_index,
            source_grid_id=int(obs_i.grid_ids[k]),
            source_plane=obs_i.plane_points[k],
            target_pose=obs_j.pose_index,
            target_plane=target_plane,
            weights=w,
        ))
    return out


def build_graph(observations, quads, grid, min_correspondences=MIN_EDGE_CORRESPONDENCES,
                vertex_only_overlap=False):
    """Connectivity graph plus the cross-correspondences backing each edge.

    Edges require quadrilateral overlap and at least ``min_correspondences``
    interpolated point pairs (counting both directions).  The root is the
    node with the highest cumulative edge weight in the largest component
    (ties broken toward the lowest index); nodes outside that component are
    flagged excluded.
    """
    n = len(observations)
    if n == 0:
        raise EmptyGraph("no observations")
    indexes = [_CellIndex(o, grid) for o in observations]
    edges = []
    edge_corr = {}
    for i in range(n):
        for j in range(i + 1, n):
            if not overlap_test(quads[i], quads[j], vertex_only=vertex_only_overlap):
                continue
            fwd = _pair_correspondences(observations[i], observations[j], quads[j],
                                        indexes[j], grid)
            rev = _pair_correspondences(observations[j], observations[i], quads[i],
                                        indexes[i], grid)
            weight = len(fwd) + len(rev)
            if weight >= min_correspondences:
                edges.append((i, j, weight))
                edge_corr[(i, j)] = fwd + rev

    labels = -np.ones(n, dtype=int)
    comp = 0
    adj = {k: [] for k in range(n)}
    for i, j, _ in edges:
        adj[i].append(j)
        adj[j].append(i)
    for start in range(n):
        if labels[start] >= 0:
            continue
        stack = [start]
        labels[start] = comp
        while stack:
            u = stack.pop()
            for v in adj[u]:
                if labels[v] < 0:
                    labels[v] = comp
                    stack.append(v)
        comp += 1
    sizes = np.bincount(labels, minlength=comp)
    largest = int(np.argmax(sizes))
    excluded = np.flatnonzero(labels != largest)
    cumweight = np.zeros(n)
    for i, j, w in edges:
        cumweight[i] += w
        cumweight[j] += w
    in_largest = labels == largest
    masked = np.where(in_largest, cumweight, -1.0)
    root = int(np.argmax(masked))  # argmax takes the lowest index on ties
    graph = ConnectivityGraph(n_nodes=n, edges=edges, root=root,
                              component_labels=labels, excluded=excluded)
    correspondences = [c for key in sorted(edge_corr) for c in edge_corr[key]]
    return graph, correspondences


def generate_cross_correspondences(observations, graph, grid):
    """Regenerate the correspondence list for an existing graph's edges."""
    indexes = {o.pose_index: _CellIndex(o, grid) for o in observations}
    by_pose = {o.pose_index: o for o in observations}
    quads = {o.pose_index: bounding_quadrilateral(o) for o in observations}
    out = []
    for i, j, _ in graph.edges:
        out.extend(_pair_correspondences(by_pose[i], by_pose[j], quads[j], indexes[j], grid))
        out.extend(_pair_correspondences(by_pose[j], by_pose[i], quads[i], indexes[i], grid))
    return out


# --- global extrinsic optimization ------------------------------------------


def _transfer_residuals(plane_mats, inv_mats, corr_arrays):
    """Homography transfer residuals for all correspondences, vectorized.

    Returns (m, 2) residuals: dehom(M_j^-1 M_i [X_il; 1]) - X_jp.
    """
    src_idx, dst_idx, src_h, dst = corr_arrays
    cam = np.einsum("kab,kb->ka", plane_mats[src_idx], src_h)
    q = np.einsum("kab,kb->ka", inv_mats[dst_idx], cam)
    w = q[:, 2].copy()
    bad = np.abs(w) < _DEHOM_GUARD
    w[bad] = 1.0
    res = q[:, :2] / w[:, None] - dst
    res[bad] = _DEHOM_PENALTY
    return res


def _corr_arrays(correspondences, node_of_pose):
    src_idx = np.array([node_of_pose[c.source_pose] for c in correspondences], dtype=int)
    dst_idx = np.array([node_of_pose[c.target_pose] for c in correspondences], dtype=int)
    src_h = np.array([[c.source_plane[0], c.source_plane[1], 1.0] for c in correspondences])
    dst = np.array([c.target_plane for c in correspondences])
    return src_idx, dst_idx, src_h, dst


class _PoseBlocks:
    """Pose set with a frozen root; packs/unpacks 6-parameter local steps."""

    def __init__(self, poses, root):
        self.poses = list(poses)
        self.root = root
        self.free = [k for k in range(len(poses)) if k != root]
        self.slot = {k: s for s, k in enumerate(self.free)}

    def plane_mats(self):
        return np.array([p.plane_matrix() for p in self.poses])

    def inv_mats(self):
        return np.linalg.inv(self.plane_mats())

    def step(self, dx):
        new = list(self.poses)
        for k in self.free:
            s = 6 * self.slot[k]
            w = dx[s:s + 3]
            dt = dx[s + 3:s + 6]
            p = self.poses[k]
            new[k] = RigidPose(axis_angle_to_rotation(w) @ p.rotation, p.translation + dt)
        out = _PoseBlocks(new, self.root)
        return out


def _edge_pairs(correspondences):
    """Group correspondences by undirected edge into (plane_i, plane_j) pairs
    keyed by (min(i,j), max(i,j))."""
    pairs = {}
    for c in correspondences:
        i, j = c.source_pose, c.target_pose
        if i < j:
            pairs.setdefault((i, j), []).append((c.source_plane, c.target_plane))
        else:
            pairs.setdefault((j, i), []).append((c.target_plane, c.source_plane))
    return pairs


def _tree_initialize(initial, correspondences, observations_by_pose, root):
    """Chain poses from the root along a maximum-weight spanning tree using
    per-edge DLT homographies: M_child = M_parent @ H(child->parent).

    This produces a homography-consistent pose set in the root's gauge,
    placing the joint optimization inside its convergence basin regardless
    of how inconsistent the seed poses are.
    """
    from .geometry import estimate_homography, nearest_rotation

    pairs = _edge_pairs(correspondences)
    n = len(initial)
    poses = list(initial)
    adj = {}
    for (i, j), pl in pairs.items():
        adj.setdefault(i, []).append((j, len(pl)))
        adj.setdefault(j, []).append((i, len(pl)))
    # Prim from the root, strongest edges first
    visited = {root}
    import heapq

    heap = [(-w, root, nb) for nb, w in adj.get(root, [])]
    heapq.heapify(heap)
    while heap:
        negw, parent, child = heapq.heappop(heap)
        if child in visited:
            continue
        key = (min(parent, child), max(parent, child))
        pl = pairs[key]
        if len(pl) < 4:
            continue
        if key[0] == child:
            corr = pl  # pairs are (child_plane, parent_plane)
        else:
            corr = [(b, a) for a, b in pl]
        try:
            H, _ = estimate_homography(corr)
        except Exception:
            continue
        M = poses[parent].plane_matrix() @ H.matrix
        for sign in (1.0, -1.0):
            Ms = sign * M
            s = 2.0 / (np.linalg.norm(Ms[:, 0]) + np.linalg.norm(Ms[:, 1]))
            r1, r2, t = s * Ms[:, 0], s * Ms[:, 1], s * Ms[:, 2]
            R = nearest_rotation(np.column_stack([r1, r2, np.cross(r1, r2)]))
            pose = RigidPose(R, t)
            obs = observations_by_pose.get(child)
            pts = obs.plane_points if obs is not None else np.zeros((1, 2))
            if pose.transform(pts)[:, 2].mean() > 0:
                poses[child] = pose
                break
        else:
            continue
        visited.add(child)
        for nb, w in adj.get(child, []):
            if nb not in visited:
                heapq.heappush(heap, (-w, child, nb))
    return poses


def optimize_extrinsics(initial, correspondences, grid_spacing, root=0,
                        huber_scale_factor=0.05, max_iter=60, irls_passes=4,
                        observations=None):
    """Minimize robust homography transfer error over all pattern poses.

    The root pose is frozen (gauge).  A spanning-tree homography chain
    re-initializes the free poses when it lowers the loss (the seed poses
    are typically mutually inconsistent, which strands plain joint descent
    in local minima).  Robustness is IRLS-wrapped: Huber weights at scale
    ``huber_scale_factor * grid_spacing`` are refreshed between damped
    Gauss-Newton runs.  Raises Diverged if the final loss exceeds the
    initial loss, GaugeUnderconstrained without any edge.
    """
    if not correspondences:
        raise GaugeUnderconstrained("no correspondences to optimize over")
    n = len(initial)
    node_of_pose = {k: k for k in range(n)}
    arrays = _corr_arrays(correspondences, node_of_pose)
    delta = huber_scale_factor * grid_spacing
    blocks = _PoseBlocks(initial, root)

    def robust_loss(blocks_):
        res = _transfer_residuals(blocks_.plane_mats(), blocks_.inv_mats(), arrays)
        e = np.linalg.norm(res, axis=1)
        # Huber rho on distances
        quad = e <= delta
        return float(np.sum(np.where(quad, 0.5 * e * e, delta * (e - 0.5 * delta))))

    initial_loss = robust_loss(blocks)
    loss_curve = [initial_loss]

    obs_by_pose = {o.pose_index: o for o in observations} if observations else {}
    tree_poses = _tree_initialize(initial, correspondences, obs_by_pose, root)
    tree_blocks = _PoseBlocks(tree_poses, root)
    if robust_loss(tree_blocks) < initial_loss:
        blocks = tree_blocks
        loss_curve.append(robust_loss(blocks))

    for irls_pass in range(irls_passes):
        if irls_pass == 0:
            # plain pass first: Huber weights at a far-off seed would crush
            # the gradient and stall global convergence
            weights = np.ones(len(correspondences))
        else:
            res = _transfer_residuals(blocks.plane_mats(), blocks.inv_mats(), arrays)
            weights = huber_weights(np.linalg.norm(res, axis=1), delta)

        def weighted_cost(blocks_):
            r = _transfer_residuals(blocks_.plane_mats(), blocks_.inv_mats(), arrays)
            return float(np.sum(weights * np.sum(r * r, axis=1)))

        def normal(blocks_):
            JtJ, g, cost = _accumulate_normal(blocks_, arrays, weights)
            return JtJ, g, cost

        result = levenberg_marquardt_normal(
            normal, lambda b, dx: b.step(dx), weighted_cost, blocks,
            max_iter=max_iter, ftol=1e-14, gtol=1e-12)
        blocks = result.x
        loss_curve.append(robust_loss(blocks))

    final_loss = robust_loss(blocks)
    if final_loss > initial_loss * (1.0 + 1e-9) + 1e-12:
        raise Diverged("global extrinsic optimization increased the loss")
    info = {"initial_loss": initial_loss, "final_loss": final_loss,
            "loss_curve": loss_curve, "n_correspondences": len(correspondences)}
    return blocks.poses, info


def _skew_batch(v):
    """(m, 3) -> (m, 3, 3) cross-product matrices."""
    S = np.zeros((len(v), 3, 3))
    S[:, 0, 1] = -v[:, 2]
    S[:, 0, 2] = v[:, 1]
    S[:, 1, 0] = v[:, 2]
    S[:, 1, 2] = -v[:, 0]
    S[:, 2, 0] = -v[:, 1]
    S[:, 2, 1] = v[:, 0]
    return S


def _accumulate_normal(blocks, arrays, weights):
    """Gauss-Newton normal equations, accumulated per 6-dof pose block."""
    src_idx, dst_idx, src_h, dst = arrays
    poses = blocks.poses
    plane = blocks.plane_mats()
    inv = blocks.inv_mats()
    n_free = len(blocks.free)
    m = len(src_idx)

    cam = np.einsum("kab,kb->ka", plane[src_idx], src_h)         # X^C in camera frame
    q = np.einsum("kab,kb->ka", inv[dst_idx], cam)               # plane-j homogeneous
    w3 = q[:, 2].copy()
    bad = np.abs(w3) < _DEHOM_GUARD
    w3[bad] = 1.0
    res = q[:, :2] / w3[:, None] - dst
    res[bad] = _DEHOM_PENALTY
    cost = float(np.sum(weights * np.sum(res * res, axis=1)))

    # dehomogenization Jacobian, (k, 2, 3)
    Jpi = np.zeros((m, 2, 3))
    inv_w = 1.0 / w3
    Jpi[:, 0, 0] = inv_w
    Jpi[:, 1, 1] = inv_w
    Jpi[:, 0, 2] = -q[:, 0] * inv_w * inv_w
    Jpi[:, 1, 2] = -q[:, 1] * inv_w * inv_w
    Jpi[bad] = 0.0

    A = np.einsum("kab,kbc->kac", Jpi, inv[dst_idx])             # (k, 2, 3)
    trans = np.array([p.translation for p in poses])

    # source pose: X^C = R_i X + t_i with left increment R_i <- exp(w) R_i,
    # so dX^C/dw = -[R_i X]_x and dX^C/dt = I
    J_src = np.concatenate(
        [-np.einsum("kab,kbc->kac", A, _skew_batch(cam - trans[src_idx])), A], axis=2)
    # destination pose: y = M_j^-1 X^C gives
    # dy/dw = M_j^-1 [X^C - y3 t_j]_x, dy/dt = -y3 M_j^-1
    J_dst = np.concatenate(
        [np.einsum("kab,kbc->kac", A, _skew_batch(cam - q[:, 2:3] * trans[dst_idx])),
         -q[:, 2][:, None, None] * A],
        axis=2)

    slot_map = np.full(len(poses), -1, dtype=int)
    for pose_k, s in blocks.slot.items():
        slot_map[pose_k] = s
    s_src = slot_map[src_idx]
    s_dst = slot_map[dst_idx]
    ok_src = s_src >= 0
    ok_dst = s_dst >= 0

    g_blocks = np.zeros((n_free, 6))
    H_blocks = np.zeros((n_free, n_free, 6, 6))
    wres = weights[:, None] * res

    def scatter_grad(ok, slots, J):
        np.add.at(g_blocks, slots[ok], np.einsum("kca,kc->ka", J[ok], wres[ok]))

    def scatter_hess(ok, sa, Ja, sb, Jb):
        np.add.at(H_blocks, (sa[ok], sb[ok]),
                  weights[ok, None, None] * np.einsum("kca,kcb->kab", Ja[ok], Jb[ok]))

    scatter_grad(ok_src, s_src, J_src)
    scatter_grad(ok_dst, s_dst, J_dst)
    scatter_hess(ok_src, s_src, J_src, s_src, J_src)
    scatter_hess(ok_dst, s_dst, J_dst, s_dst, J_dst)
    both = ok_src & ok_dst
    scatter_hess(both, s_src, J_src, s_dst, J_dst)
    scatter_hess(both, s_dst, J_dst, s_src, J_src)

    JtJ = H_blocks.transpose(0, 2, 1, 3).reshape(6 * n_free, 6 * n_free)
    g = g_blocks.reshape(6 * n_free)
    return JtJ, g, cost
