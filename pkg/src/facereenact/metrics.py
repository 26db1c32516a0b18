"""Image-space evaluation: pixel distances, mask IoU and background compositing.

Images are compared on the 0-255 scale. Float inputs are assumed to lie in
[0, 1] and are rescaled; integer inputs are taken as is.
"""
from dataclasses import dataclass, asdict

import numpy as np


class MetricError(ValueError):
    pass


@dataclass
class MetricsReport:
    avg_pixel_dist: float
    masked_avg_pixel_dist: float | None
    mask_iou: float | None
    n_frames: int = 1

    def to_dict(self):
        return asdict(self)


def _to_255(img):
    a = np.asarray(img)
    if np.issubdtype(a.dtype, np.integer):
        return a.astype(np.float64)
    return a.astype(np.float64) * 255.0


def pixel_distance(fake, real, mask=None):
    """Mean absolute difference over pixels and channels, 0-255 scale.

    With ``mask`` (H, W) only pixels where mask >= 0.5 count.
    """
    a, b = _to_255(fake), _to_255(real)
    if a.shape != b.shape:
        raise MetricError(f"shape mismatch: {a.shape} vs {b.shape}")
    diff = np.abs(a - b)
    if mask is None:
        return float(diff.mean())
    m = np.asarray(mask, dtype=np.float64) >= 0.5
    if m.shape != a.shape[:2]:
        raise MetricError(f"mask shape {m.shape} does not match image {a.shape[:2]}")
    if not m.any():
        raise MetricError("empty mask")
    return float(diff[m].mean())


def mask_iou(pred, gt, threshold=0.5):
    """|A & B| / |A | B| after thresholding both masks; two empty masks give 1."""
    p = np.asarray(pred, dtype=np.float64)
    g = np.asarray(gt, dtype=np.float64)
    if p.shape != g.shape:
        raise MetricError(f"shape mismatch: {p.shape} vs {g.shape}")
    a, b = p >= threshold, g >= threshold
    union = np.count_nonzero(a | b)
    if union == 0:
        return 1.0
    return np.count_nonzero(a & b) / union


def composite_background(frame, mask, background):
    """Soft composite: mask * frame + (1 - mask) * background."""
    f = np.asarray(frame, dtype=np.float64)
    bg = np.asarray(background, dtype=np.float64)
    m = np.asarray(mask, dtype=np.float64)
    if f.shape != bg.shape:
        raise MetricError(f"shape mismatch: {f.shape} vs {bg.shape}")
    if m.shape == f.shape[:2] and f.ndim == 3:
        m = m[..., None]
    elif m.shape != f.shape:
        raise MetricError(f"mask shape {m.shape} does not match frame {f.shape}")
    return m * f + (1.0 - m) * bg


def evaluate_sequence(fakes, reals, gt_masks=None, pred_masks=None):
    """Averages of the per-frame metrics over a test sequence."""
    if len(fakes) != len(reals) or len(fakes) == 0:
        raise MetricError("need equally long, non-empty sequences")
    avg = float(np.mean([pixel_distance(f, r) for f, r in zip(fakes, reals)]))
    masked = iou = None
    if gt_masks is not None:
        masked = float(np.mean([pixel_distance(f, r, m)
                                for f, r, m in zip(fakes, reals, gt_masks)]))
        if pred_masks is not None:
            iou = float(np.mean([mask_iou(p, m) for p, m in zip(pred_masks, gt_masks)]))
    return MetricsReport(avg, masked, iou, len(fakes))
