"""Triangle-ID rasterisation and Normalised Mean Face Coordinate (NMFC) images.

Conventions: images are indexed ``[row, col]`` = ``[y, x]``; pixel (x, y) has
its centre at (x + 0.5, y + 0.5). A triangle is front-facing when its
projected signed area

    (bx - ax) * (cy - ay) - (cx - ax) * (by - ay)

is positive (y grows downwards, so that is clockwise on screen). Smaller
camera-space z (after rotation, before scaling) is nearer. Pixel centres on a
shared edge belong to the triangle for which that edge is a top or left edge.
Equal depths go to the lower triangle index.
"""
from dataclasses import dataclass

import numba
import numpy as np

from .camera import project
from .morphable_model import ModelError, normalized_mean_face, synthesize_shape, ShapeParams

BACKGROUND = -1


@dataclass(frozen=True, eq=False)
class TriangleIdBuffer:
    ids: np.ndarray     # (H, W) int32, BACKGROUND where uncovered
    depth: np.ndarray   # (H, W) float64, +inf where uncovered

    @property
    def foreground(self):
        return self.ids != BACKGROUND


@dataclass(frozen=True, eq=False)
class NmfcImage:
    pixels: np.ndarray  # (H, W, 3) float in [0, 1], background exactly 0


@numba.njit(cache=True, inline="always")
def _is_top_left(dx, dy):
    return (dy == 0.0 and dx > 0.0) or dy < 0.0


@numba.njit(cache=True)
def _raster_kernel(px, py, pz, tris, ids, depth):
    height, width = ids.shape
    for f in range(tris.shape[0]):
        i0 = tris[f, 0]
        i1 = tris[f, 1]
        i2 = tris[f, 2]
        ax, ay, az = px[i0], py[i0], pz[i0]
        bx, by, bz = px[i1], py[i1], pz[i1]
        cx, cy, cz = px[i2], py[i2], pz[i2]
        area = (bx - ax) * (cy - ay) - (cx - ax) * (by - ay)
        if not area > 0.0:
            continue
        xmin = max(min(ax, bx, cx), -2.0)
        xmax = min(max(ax, bx, cx), width + 2.0)
        ymin = max(min(ay, by, cy), -2.0)
        ymax = min(max(ay, by, cy), height + 2.0)
        # one pixel of slack so the loop never clips a pixel the edge tests accept
        x0 = max(int(np.floor(xmin - 0.5)) - 1, 0)
        x1 = min(int(np.ceil(xmax - 0.5)) + 1, width - 1)
        y0 = max(int(np.floor(ymin - 0.5)) - 1, 0)
        y1 = min(int(np.ceil(ymax - 0.5)) + 1, height - 1)
        tl0 = _is_top_left(cx - bx, cy - by)
        tl1 = _is_top_left(ax - cx, ay - cy)
        tl2 = _is_top_left(bx - ax, by - ay)
        for j in range(y0, y1 + 1):
            qy = j + 0.5
            for i in range(x0, x1 + 1):
                qx = i + 0.5
                w0 = (cx - bx) * (qy - by) - (cy - by) * (qx - bx)
                w1 = (ax - cx) * (qy - cy) - (ay - cy) * (qx - cx)
                w2 = (bx - ax) * (qy - ay) - (by - ay) * (qx - ax)
                if w0 < 0.0 or w1 < 0.0 or w2 < 0.0:
                    continue
                if (w0 == 0.0 and not tl0) or (w1 == 0.0 and not tl1) or (w2 == 0.0 and not tl2):
                    continue
                z = (w0 * az + w1 * bz + w2 * cz) / area
                cur = depth[j, i]
                if z < cur or (z == cur and f < ids[j, i]):
                    depth[j, i] = z
                    ids[j, i] = f


def rasterize_points(points2d, depth, triangles, width, height):
    """Rasterise already-projected vertices (N, 2) with per-vertex depth (N,)."""
    if width <= 0 or height <= 0:
        raise ValueError("width and height must be positive")
    ids = np.full((height, width), BACKGROUND, dtype=np.int32)
    zbuf = np.full((height, width), np.inf)
    tris = np.ascontiguousarray(triangles, dtype=np.int64).reshape(-1, 3)
    if len(tris):
        p = np.ascontiguousarray(points2d, dtype=np.float64)
        _raster_kernel(np.ascontiguousarray(p[:, 0]), np.ascontiguousarray(p[:, 1]),
                       np.ascontiguousarray(depth, dtype=np.float64), tris, ids, zbuf)
    return TriangleIdBuffer(ids=ids, depth=zbuf)


def rasterize(mesh, cam, width, height):
    """Visible-triangle ID buffer of ``mesh`` seen through SOP camera ``cam``."""
    v = np.asarray(mesh.vertices, dtype=np.float64)
    if len(v) == 0 or len(mesh.topology) == 0:
        return rasterize_points(np.zeros((0, 2)), np.zeros(0), np.zeros((0, 3), np.int64),
                                width, height)
    pts = project(cam, v)
    z = v @ cam.matrix()[2]
    return rasterize_points(pts, z, mesh.topology, width, height)


def triangle_centroids(nmf, topology):
    c = nmf.coords[np.asarray(topology)]
    return (c[:, 0] + c[:, 1] + c[:, 2]) / 3.0


def encode_nmfc(buf, nmf, topology, centroids=None):
    """Paint each covered pixel with its triangle's centroid in normalised mean-face space."""
    if centroids is None:
        centroids = triangle_centroids(nmf, topology)
    ids = buf.ids
    if ids.size and ids.max() >= len(centroids):
        raise ModelError("triangle id out of range for topology")
    fg = ids != BACKGROUND
    out = np.zeros(ids.shape + (3,))
    out[fg] = centroids[ids[fg]]
    return NmfcImage(pixels=out)


class NmfcRenderer:
    """Renders NMFC frames for one basis, caching the normalised mean face."""

    def __init__(self, basis):
        self.basis = basis
        self.nmf = normalized_mean_face(basis)
        self.centroids = triangle_centroids(self.nmf, basis.topology)

    def render(self, identity, expression, cam, width, height, return_buffer=False):
        mesh = synthesize_shape(self.basis, ShapeParams(identity, expression))
        buf = rasterize(mesh, cam, width, height)
        img = encode_nmfc(buf, self.nmf, self.basis.topology, self.centroids)
        return (img, buf) if return_buffer else img


def render_nmfc_sequence(basis, fit, width, height, renderer=None):
    """One NMFC image per frame of ``fit``."""
    if np.shape(fit.identity) != (basis.n_id,) or np.shape(fit.expressions)[1:] != (basis.n_exp,):
        raise ModelError("dimension mismatch: fit does not match basis")
    r = renderer or NmfcRenderer(basis)
    return [r.render(fit.identity, e, c, width, height)
            for e, c in zip(fit.expressions, fit.cameras)]
