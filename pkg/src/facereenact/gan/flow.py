"""Exhaustive block-matching optical flow (sum of absolute differences)."""
import numpy as np


def _candidates(radius):
    """All displacements in the search window, in tie-breaking order.

    Smaller magnitude first, then lexicographic in (dx, dy); a stable argmin
    over this order therefore implements the tie rule.
    """
    d = [(dx, dy) for dx in range(-radius, radius + 1) for dy in range(-radius, radius + 1)]
    return sorted(d, key=lambda v: (v[0] ** 2 + v[1] ** 2, v[0], v[1]))


def block_flow(a, b, block=8, radius=4):
    """Per-block integer displacement (dx, dy) with b[y + dy, x + dx] ~ a[y, x].

    ``a`` and ``b`` are (H, W) or (H, W, C) arrays. Returns (H // block,
    W // block, 2). Displacements that leave the image are not considered.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 2:
        a, b = a[..., None], b[..., None]
    H, W = a.shape[:2]
    nby, nbx = H // block, W // block
    flow = np.zeros((nby, nbx, 2), dtype=np.int64)
    cands = _candidates(radius)
    for by in range(nby):
        for bx in range(nbx):
            y0, x0 = by * block, bx * block
            ref = a[y0:y0 + block, x0:x0 + block]
            best, best_d = np.inf, (0, 0)
            for dx, dy in cands:
                ys, xs = y0 + dy, x0 + dx
                if ys < 0 or xs < 0 or ys + block > H or xs + block > W:
                    continue
                sad = np.abs(b[ys:ys + block, xs:xs + block] - ref).sum()
                if sad < best:
                    best, best_d = sad, (dx, dy)
            flow[by, bx] = best_d
    return flow


def dense_flow(flow, height, width, block=8, radius=4):
    """Block flow expanded to a (2, height, width) map scaled by 1 / radius."""
    f = np.repeat(np.repeat(flow, block, axis=0), block, axis=1)
    out = np.zeros((height, width, 2))
    h, w = min(height, f.shape[0]), min(width, f.shape[1])
    out[:h, :w] = f[:h, :w]
    # pixels past the last whole block copy the nearest block
    if h < height:
        out[h:] = out[h - 1:h]
    if w < width:
        out[:, w:] = out[:, w - 1:w]
    return np.transpose(out, (2, 0, 1)) / radius
