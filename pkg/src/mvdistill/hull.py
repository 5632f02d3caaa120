"""Incremental 3D quickhull with a relative merge tolerance.

Faces are triangles with unit outward normals. A point counts as outside a
face when its signed distance exceeds eps = 1e-9 * diameter; points closer
than that are merged into the hull surface and never become vertices. Unit
normals keep every outside test scale-equivariant, which the visibility
module relies on.

The insertion loop runs inside a numba kernel: hidden point removal computes
one hull per cloud per view, so hull throughput bounds the whole teacher
pipeline. After the conflict queue drains, a containment sweep re-checks
every point against every live face and re-queues violators, so the
postcondition (no input point more than eps outside any face) holds on exit
by construction rather than by bookkeeping subtleties.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .errors import DegenerateHull

MERGE_EPS_FACTOR = 1e-9


@dataclass(frozen=True)
class ConvexHull3:
    """Hull of the input set: extreme-point indices and oriented triangles."""

    vertex_indices: np.ndarray  # sorted, ascending
    faces: np.ndarray  # F x 3 index triples, outward orientation

    @property
    def num_vertices(self) -> int:
        return len(self.vertex_indices)


def _initial_simplex(pts: np.ndarray, eps: float):
    """Four affinely independent seed indices, or DegenerateHull(rank)."""
    # v0: lexicographically smallest point (deterministic tie-breaking)
    order = np.lexsort((pts[:, 2], pts[:, 1], pts[:, 0]))
    i0 = int(order[0])
    d = pts - pts[i0]
    dist2 = (d * d).sum(axis=1)
    i1 = int(np.argmax(dist2))
    if dist2[i1] <= eps * eps:
        raise DegenerateHull(0)
    axis = pts[i1] - pts[i0]
    axis = axis / np.linalg.norm(axis)
    # farthest from the line through i0, i1
    perp = d - np.outer(d @ axis, axis)
    perp2 = (perp * perp).sum(axis=1)
    i2 = int(np.argmax(perp2))
    if perp2[i2] <= eps * eps:
        raise DegenerateHull(1)
    normal = np.cross(pts[i1] - pts[i0], pts[i2] - pts[i0])
    normal = normal / np.linalg.norm(normal)
    # farthest from the plane through i0, i1, i2
    plane_d = d @ normal
    i3 = int(np.argmax(np.abs(plane_d)))
    if abs(plane_d[i3]) <= eps:
        raise DegenerateHull(2)
    return i0, i1, i2, i3


def affine_rank(points: np.ndarray, eps: float | None = None) -> int:
    """Dimension of the affine hull (0..3) under the merge tolerance."""
    pts = np.asarray(points, dtype=np.float64)
    span = pts.max(axis=0) - pts.min(axis=0)
    diameter = float(np.linalg.norm(span))
    if diameter <= 0.0:
        return 0
    if eps is None:
        eps = MERGE_EPS_FACTOR * diameter
    try:
        _initial_simplex(pts, eps)
    except DegenerateHull as exc:
        return exc.rank
    return 3


@njit(cache=True)
def _quickhull_faces(pts, i0, i1, i2, i3, eps):  # pragma: no cover - jitted
    m = pts.shape[0]
    cap = 8 * m + 64
    fverts = np.empty((cap, 3), np.int64)
    fnorm = np.empty((cap, 3), np.float64)
    foff = np.empty(cap, np.float64)
    alive = np.zeros(cap, np.uint8)
    nfaces = 0

    ix = (pts[i0, 0] + pts[i1, 0] + pts[i2, 0] + pts[i3, 0]) / 4.0
    iy = (pts[i0, 1] + pts[i1, 1] + pts[i2, 1] + pts[i3, 1]) / 4.0
    iz = (pts[i0, 2] + pts[i1, 2] + pts[i2, 2] + pts[i3, 2]) / 4.0

    # assign[p]: face whose outside set holds p, or -1 once settled
    assign = np.full(m, -1, np.int64)
    stack = np.empty(cap, np.int64)
    top = 0

    def _make_face(u, v, w):
        ax, ay, az = pts[u, 0], pts[u, 1], pts[u, 2]
        e1x, e1y, e1z = pts[v, 0] - ax, pts[v, 1] - ay, pts[v, 2] - az
        e2x, e2y, e2z = pts[w, 0] - ax, pts[w, 1] - ay, pts[w, 2] - az
        nx = e1y * e2z - e1z * e2y
        ny = e1z * e2x - e1x * e2z
        nz = e1x * e2y - e1y * e2x
        length = np.sqrt(nx * nx + ny * ny + nz * nz)
        if length <= 0.0:
            return -1, 0.0, 0.0, 0.0, 0.0, u, v, w
        nx /= length
        ny /= length
        nz /= length
        off = nx * ax + ny * ay + nz * az
        if nx * ix + ny * iy + nz * iz - off > 0.0:
            nx, ny, nz, off = -nx, -ny, -nz, -off
            u, v = v, u
        return 0, nx, ny, nz, off, u, v, w

    # --- initial tetrahedron -------------------------------------------------
    tri0 = np.empty((4, 3), np.int64)
    tri0[0, 0], tri0[0, 1], tri0[0, 2] = i0, i1, i2
    tri0[1, 0], tri0[1, 1], tri0[1, 2] = i0, i1, i3
    tri0[2, 0], tri0[2, 1], tri0[2, 2] = i0, i2, i3
    tri0[3, 0], tri0[3, 1], tri0[3, 2] = i1, i2, i3
    for t in range(4):
        ok, nx, ny, nz, off, u, v, w = _make_face(tri0[t, 0], tri0[t, 1], tri0[t, 2])
        if ok < 0:
            continue
        fverts[nfaces, 0], fverts[nfaces, 1], fverts[nfaces, 2] = u, v, w
        fnorm[nfaces, 0], fnorm[nfaces, 1], fnorm[nfaces, 2] = nx, ny, nz
        foff[nfaces] = off
        alive[nfaces] = 1
        stack[top] = nfaces
        top += 1
        nfaces += 1

    # first-face partition of every non-seed point
    for p in range(m):
        if p == i0 or p == i1 or p == i2 or p == i3:
            continue
        px, py, pz = pts[p, 0], pts[p, 1], pts[p, 2]
        for f in range(nfaces):
            if fnorm[f, 0] * px + fnorm[f, 1] * py + fnorm[f, 2] * pz - foff[f] > eps:
                assign[p] = f
                break

    vis = np.empty(cap, np.int64)
    # directed edge scratch: horizon extraction is O(edges^2), edges stay small
    edge_u = np.empty(cap, np.int64)
    edge_v = np.empty(cap, np.int64)

    guard = 40 * m + 200
    iters = 0
    while True:
        iters += 1
        if iters > guard:
            return fverts[:0], alive[:0], -1
        if top == 0:
            # containment sweep: re-queue anything still above a live face
            worst_p = -1
            worst_f = -1
            for p in range(m):
                if assign[p] != -1:
                    # cannot happen: faces with assignments are always queued
                    return fverts[:0], alive[:0], -1
                px, py, pz = pts[p, 0], pts[p, 1], pts[p, 2]
                bestd = eps
                bestf = -1
                for f in range(nfaces):
                    if alive[f] == 0:
                        continue
                    d = fnorm[f, 0] * px + fnorm[f, 1] * py + fnorm[f, 2] * pz - foff[f]
                    if d > bestd:
                        bestd = d
                        bestf = f
                if bestf >= 0:
                    worst_p = p
                    worst_f = bestf
                    break
            if worst_p == -1:
                break
            assign[worst_p] = worst_f
            stack[top] = worst_f
            top += 1
            continue

        top -= 1
        fid = stack[top]
        if alive[fid] == 0:
            continue
        # apex: farthest assigned point of this face
        apex = -1
        bestd = eps
        for p in range(m):
            if assign[p] == fid:
                d = (
                    fnorm[fid, 0] * pts[p, 0]
                    + fnorm[fid, 1] * pts[p, 1]
                    + fnorm[fid, 2] * pts[p, 2]
                    - foff[fid]
                )
                if d > bestd:
                    bestd = d
                    apex = p
        if apex < 0:
            continue
        ax, ay, az = pts[apex, 0], pts[apex, 1], pts[apex, 2]

        # visible faces (global scan, ascending id)
        nvis = 0
        for f in range(nfaces):
            if alive[f] == 1 and fnorm[f, 0] * ax + fnorm[f, 1] * ay + fnorm[f, 2] * az - foff[f] > eps:
                vis[nvis] = f
                nvis += 1

        # horizon: directed edges of visible faces whose reverse is hidden
        ne = 0
        for t in range(nvis):
            f = vis[t]
            a, b, c = fverts[f, 0], fverts[f, 1], fverts[f, 2]
            edge_u[ne], edge_v[ne] = a, b
            edge_u[ne + 1], edge_v[ne + 1] = b, c
            edge_u[ne + 2], edge_v[ne + 2] = c, a
            ne += 3

        for t in range(nvis):
            alive[vis[t]] = 0

        first_new = nfaces
        for e in range(ne):
            u, v = edge_u[e], edge_v[e]
            reversed_present = False
            for e2 in range(ne):
                if edge_u[e2] == v and edge_v[e2] == u:
                    reversed_present = True
                    break
            if reversed_present:
                continue
            ok, nx, ny, nz, off, fu, fv_, fw = _make_face(u, v, apex)
            if ok < 0:
                continue
            fverts[nfaces, 0], fverts[nfaces, 1], fverts[nfaces, 2] = fu, fv_, fw
            fnorm[nfaces, 0], fnorm[nfaces, 1], fnorm[nfaces, 2] = nx, ny, nz
            foff[nfaces] = off
            alive[nfaces] = 1
            stack[top] = nfaces
            top += 1
            nfaces += 1
            if nfaces == cap or top == cap:
                return fverts[:0], alive[:0], -1

        # orphan reassignment: first new face the point is outside of
        for p in range(m):
            fa = assign[p]
            if fa < 0 or alive[fa] == 1:
                continue
            assign[p] = -1
            px, py, pz = pts[p, 0], pts[p, 1], pts[p, 2]
            for f in range(first_new, nfaces):
                if fnorm[f, 0] * px + fnorm[f, 1] * py + fnorm[f, 2] * pz - foff[f] > eps:
                    assign[p] = f
                    break

    return fverts[:nfaces], alive[:nfaces], 0


def convex_hull3(points) -> ConvexHull3:
    """Quickhull over an M x 3 point set.

    Raises DegenerateHull(rank) when the points are affinely dependent.
    """
    pts = np.ascontiguousarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ValueError(f"expected M x 3 points, got shape {pts.shape}")
    if not np.isfinite(pts).all():
        raise ValueError("hull input contains NaN or Inf")
    span = pts.max(axis=0) - pts.min(axis=0)
    diameter = float(np.linalg.norm(span))
    if diameter <= 0.0:
        raise DegenerateHull(0)
    eps = MERGE_EPS_FACTOR * diameter

    i0, i1, i2, i3 = _initial_simplex(pts, eps)
    fverts, alive, status = _quickhull_faces(pts, i0, i1, i2, i3, eps)
    if status != 0:
        raise RuntimeError("quickhull failed to converge")
    tri_arr = fverts[alive.astype(bool)].copy()
    vert_idx = np.unique(tri_arr)
    return ConvexHull3(vertex_indices=vert_idx, faces=tri_arr)
