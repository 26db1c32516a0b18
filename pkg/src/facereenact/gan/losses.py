"""Adversarial, identity-matching, perceptual, feature-matching and mask losses."""
from dataclasses import dataclass

import numpy as np

from ..autodiff import Tensor, ops


@dataclass(frozen=True)
class LossWeights:
    mch: float = 10.0
    vgg: float = 10.0
    feat: float = 10.0
    mask: float = 10.0

    def __post_init__(self):
        if min(self.mch, self.vgg, self.feat, self.mask) < 0:
            raise ValueError("loss weights must be non-negative")


def hinge_losses(r_real, r_fake):
    """(L_D, L_G_adv): mean(max(0, 1 - r_real)) + mean(max(0, 1 + r_fake)) and -mean(r_fake)."""
    l_real = ops.mean(ops.relu(ops.add_scalar(ops.neg(r_real), 1.0)))
    l_fake = ops.mean(ops.relu(ops.add_scalar(r_fake, 1.0)))
    return ops.add(l_real, l_fake), ops.neg(ops.mean(r_fake))


def matching_loss(h, w):
    """Cosine distance 1 - h.w / (|h| |w|), in [0, 2]."""
    h, w = ops.as_tensor(h), ops.as_tensor(w)
    if not np.any(h.data) or not np.any(w.data):
        raise ValueError("matching loss is undefined for a zero vector")
    cos = ops.div(ops.dot(h, w), ops.mul(ops.sqrt(ops.dot(h, h)), ops.sqrt(ops.dot(w, w))))
    return ops.add_scalar(ops.neg(cos), 1.0)


def perceptual_loss(fake, real, stack):
    """Sum over layers of the l1 distance between frozen features of fake and real."""
    ff = stack(fake)
    fr = stack(real)
    total = None
    for a, b in zip(ff, fr):
        term = ops.l1_loss(a, Tensor(b.data))
        total = term if total is None else ops.add(total, term)
    return total


def feature_matching_loss(feats_fake, feats_real):
    """Mean over layers of the l1 distance; real features are treated as constants."""
    if len(feats_fake) != len(feats_real) or not feats_fake:
        raise ValueError("feature lists must be non-empty and of equal length")
    total = None
    for a, b in zip(feats_fake, feats_real):
        term = ops.l1_loss(a, Tensor(b.data))
        total = term if total is None else ops.add(total, term)
    return ops.scale(total, 1.0 / len(feats_fake))


def mask_loss(pred, target):
    return ops.l1_loss(pred, target)


def generator_total(parts, weights):
    """L_G = L_adv + l_vgg L_vgg + l_feat L_feat + l_mask L_mask."""
    total = parts["adv"]
    for key, lam in (("vgg", weights.vgg), ("feat", weights.feat), ("mask", weights.mask)):
        total = ops.add(total, ops.scale(parts[key], lam))
    return total


def embedder_total(adv, mch, weights):
    """L_E = L_adv + l_mch L_mch."""
    return ops.add(adv, ops.scale(mch, weights.mch))
