"""Convex hulls of 3D point sets, including degenerate ranks.

The 3D hull is built incrementally: start from an extreme tetrahedron, then
insert each remaining point by deleting the faces it sees and stitching new
faces around the horizon. Point sets of affine rank < 3 (planes, segments,
single points) are detected up front and reported with their rank so
callers can fall back to voxel-set semantics.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class Hull:
    """Convex hull of a point set.

    rank : affine rank of the input (0 point, 1 segment, 2 polygon, 3 solid)
    vertex_indices : indices into the input points that lie on the hull,
        ordered (2D: boundary order; 3D: ascending)
    equations : for rank 3, (f, 4) array of outward face planes [n | -d]
        with n . p <= d inside; empty otherwise
    faces : for rank 3, (f, 3) vertex-index triples (into the input points)
    """

    points: np.ndarray
    rank: int
    vertex_indices: np.ndarray
    equations: np.ndarray
    faces: np.ndarray

    @property
    def vertices(self) -> np.ndarray:
        return self.points[self.vertex_indices]

    def contains(self, query: np.ndarray, tol: float = 1e-9) -> np.ndarray:
        """Membership test for rank-3 hulls, inclusive within tol."""
        if self.rank != 3:
            raise ValueError(f"containment requires a rank-3 hull, got rank {self.rank}")
        query = np.atleast_2d(np.asarray(query, dtype=np.float64))
        scale = 1.0 + np.abs(self.points).max()
        # equations rows are [nx, ny, nz, -d]; inside means n.p - d <= tol.
        vals = query @ self.equations[:, :3].T + self.equations[:, 3]
        return np.all(vals <= tol * scale, axis=1)


def _affine_rank(points: np.ndarray) -> tuple[int, np.ndarray]:
    centered = points - points.mean(axis=0)
    scale = np.abs(centered).max()
    if scale < 1e-12:
        return 0, np.eye(3)
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    rank = int(np.sum(s > 1e-9 * max(s[0], 1.0)))
    return rank, vt


def _hull_2d_indices(pts2: np.ndarray) -> np.ndarray:
    """Monotone-chain hull of 2D points; returns indices in boundary order."""
    order = np.lexsort((pts2[:, 1], pts2[:, 0]))

    def cross(o, a, b) -> float:
        return (pts2[a, 0] - pts2[o, 0]) * (pts2[b, 1] - pts2[o, 1]) - (
            pts2[a, 1] - pts2[o, 1]
        ) * (pts2[b, 0] - pts2[o, 0])

    lower: list[int] = []
    for i in order:
        while len(lower) >= 2 and cross(lower[-2], lower[-1], i) <= 0:
            lower.pop()
        lower.append(int(i))
    upper: list[int] = []
    for i in order[::-1]:
        while len(upper) >= 2 and cross(upper[-2], upper[-1], i) <= 0:
            upper.pop()
        upper.append(int(i))
    return np.array(lower[:-1] + upper[:-1], dtype=np.int64)


def _initial_tetrahedron(points: np.ndarray, eps: float) -> list[int] | None:
    n = len(points)
    i0 = int(np.argmin(points[:, 0]))
    i1 = int(np.argmax(points[:, 0]))
    if i0 == i1 or np.linalg.norm(points[i1] - points[i0]) < eps:
        spread = points.max(axis=0) - points.min(axis=0)
        axis = int(np.argmax(spread))
        i0 = int(np.argmin(points[:, axis]))
        i1 = int(np.argmax(points[:, axis]))
        if i0 == i1:
            return None
    d01 = points[i1] - points[i0]
    rel = points - points[i0]
    cross = np.cross(np.broadcast_to(d01, rel.shape), rel)
    dist_line = np.linalg.norm(cross, axis=1)
    i2 = int(np.argmax(dist_line))
    if dist_line[i2] < eps:
        return None
    normal = np.cross(d01, points[i2] - points[i0])
    dist_plane = np.abs(rel @ normal) / np.linalg.norm(normal)
    i3 = int(np.argmax(dist_plane))
    if dist_plane[i3] < eps:
        return None
    assert len({i0, i1, i2, i3}) == 4 and max(i0, i1, i2, i3) < n
    return [i0, i1, i2, i3]


def convex_hull(points_in: np.ndarray) -> Hull:
    """Convex hull of (n, 3) points, handling degenerate ranks.

    rank 3: vertex indices, triangular faces and outward plane equations.
    rank 2: boundary-ordered polygon vertices (no faces).
    rank 1: the two segment endpoints. rank 0: one representative point.
    """
    points = np.asarray(points_in, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] != 3:
        raise ValueError(f"points must have shape (n, 3), got {points.shape}")
    if len(points) == 0:
        raise ValueError("cannot build a hull of zero points")

    rank, vt = _affine_rank(points)
    empty_eq = np.zeros((0, 4))
    empty_faces = np.zeros((0, 3), dtype=np.int64)
    if rank == 0:
        return Hull(points, 0, np.array([0], dtype=np.int64), empty_eq, empty_faces)
    if rank == 1:
        axis_dir = vt[0]
        t = (points - points.mean(axis=0)) @ axis_dir
        ends = np.array([int(np.argmin(t)), int(np.argmax(t))], dtype=np.int64)
        return Hull(points, 1, ends, empty_eq, empty_faces)
    if rank == 2:
        proj = (points - points.mean(axis=0)) @ vt[:2].T
        verts = _hull_2d_indices(proj)
        return Hull(points, 2, verts, empty_eq, empty_faces)

    scale = 1.0 + float(np.abs(points).max())
    eps = 1e-9 * scale
    seed = _initial_tetrahedron(points, eps)
    if seed is None:  # rank said 3, geometry disagrees only on pathological noise
        raise ValueError("degenerate point set slipped past the rank check")

    centroid = points[seed].mean(axis=0)
    faces: dict[int, tuple[int, int, int]] = {}
    normals: dict[int, np.ndarray] = {}
    offsets: dict[int, float] = {}
    next_id = 0

    def add_face(a: int, b: int, c: int) -> None:
        nonlocal next_id
        n_vec = np.cross(points[b] - points[a], points[c] - points[a])
        norm = np.linalg.norm(n_vec)
        if norm < 1e-300:
            return
        n_vec = n_vec / norm
        d = float(n_vec @ points[a])
        if n_vec @ centroid - d > 0:  # orient outward from the seed centroid
            a, b, c = a, c, b
            n_vec = -n_vec
            d = -d
        faces[next_id] = (a, b, c)
        normals[next_id] = n_vec
        offsets[next_id] = d
        next_id += 1

    s0, s1, s2, s3 = seed
    add_face(s0, s1, s2)
    add_face(s0, s1, s3)
    add_face(s0, s2, s3)
    add_face(s1, s2, s3)

    in_seed = np.zeros(len(points), dtype=bool)
    in_seed[seed] = True
    for p_idx in np.nonzero(~in_seed)[0]:
        p = points[p_idx]
        visible = [
            fid for fid, n_vec in normals.items() if float(n_vec @ p) - offsets[fid] > eps
        ]
        if not visible:
            continue
        visible_set = set(visible)
        # Horizon: directed edges of visible faces whose reverse edge belongs
        # to a face that survives.
        edge_owner: dict[tuple[int, int], int] = {}
        for fid in visible:
            a, b, c = faces[fid]
            for ea, eb in ((a, b), (b, c), (c, a)):
                edge_owner[(ea, eb)] = fid
        horizon: list[tuple[int, int]] = []
        for (ea, eb), fid in edge_owner.items():
            owner_rev = edge_owner.get((eb, ea))
            if owner_rev is None or owner_rev not in visible_set:
                horizon.append((ea, eb))
        for fid in visible:
            del faces[fid], normals[fid], offsets[fid]
        for ea, eb in horizon:
            add_face(ea, eb, int(p_idx))

    face_arr = np.array([faces[fid] for fid in sorted(faces)], dtype=np.int64)
    eqs = np.array(
        [
            np.concatenate([normals[fid], [-offsets[fid]]])
            for fid in sorted(faces)
        ]
    )
    vert_idx = np.unique(face_arr)
    return Hull(points, 3, vert_idx, eqs, face_arr)
