"""Mouth crops from 68-point landmarks."""
import numpy as np

from ..autodiff import ops

MOUTH = slice(48, 68)


def mouth_rect(points, width, height, margin=0.25):
    """Pixel box (top, left, h, w) around landmarks 48-67.

    The landmark bounding box is grown by ``margin`` times its extent on
    every side, snapped outwards to whole pixels and clamped to the image.
    """
    p = np.asarray(points, dtype=np.float64)[MOUTH]
    lo, hi = p.min(axis=0), p.max(axis=0)
    ext = hi - lo
    if not np.all(ext > 0):
        raise ValueError("degenerate mouth box")
    lo = lo - margin * ext
    hi = hi + margin * ext
    x0, y0 = max(int(np.floor(lo[0])), 0), max(int(np.floor(lo[1])), 0)
    x1, y1 = min(int(np.ceil(hi[0])), width), min(int(np.ceil(hi[1])), height)
    if x1 <= x0 or y1 <= y0:
        raise ValueError("degenerate mouth box: outside the image")
    return y0, x0, y1 - y0, x1 - x0


def mouth_crop(frame, points, patch=16, margin=0.25):
    """Differentiable crop of a (N, C, H, W) frame around the mouth, resized to patch x patch."""
    H, W = frame.shape[2:]
    top, left, h, w = mouth_rect(points, W, H, margin)
    return ops.resize(ops.crop(frame, top, left, h, w), patch, patch)
