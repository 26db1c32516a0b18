"""Sequential generation, the adversarial training loops and few-shot conversion.

One training step draws a K-frame clip of one person, rolls the generator
over it (feeding back its own frames), takes a discriminator step on the
detached fakes, then a generator step. In the multi-person stage the
embedder gets its own objective L_adv + l_mch L_mch, backpropagated
separately from the generator's.
"""
import csv
import logging
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..autodiff import Adam, Tensor, backward, load_checkpoint, ops, save_checkpoint
from .crop import mouth_crop
from .flow import block_flow, dense_flow
from .losses import (LossWeights, embedder_total, feature_matching_loss, generator_total,
                     hinge_losses, mask_loss, matching_loss, perceptual_loss)
from .networks import (ADAIN, INSTANCE, Embedder, FeatureStack, Generator, ImageDiscriminator,
                       MouthDiscriminator, TemporalDiscriminator)

log = logging.getLogger(__name__)

LOG_COLUMNS = ["step", "L_D", "L_G_adv", "L_vgg", "L_feat", "L_mask", "L_mch", "L_G"]


@dataclass
class TrainConfig:
    resolution: int = 32
    ch: int = 8
    n_f: int = 64
    K: int = 8                 # frames per temporal clip
    M: int = 4                 # embedder frames per step
    steps: int = 200
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    seed: int = 0
    mouth_patch: int = 16
    block: int = 8
    radius: int = 4
    feature_seed: int = 1234
    weights: LossWeights = field(default_factory=LossWeights)

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        w = d.pop("weights", None)
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        cfg = cls(**known)
        if w is not None:
            cfg = replace(cfg, weights=LossWeights(**w))
        return cfg


def downsample_factor(size, resolution):
    f = size // resolution
    if f < 1 or size != f * resolution:
        raise ValueError(f"frame size {size} is not a multiple of resolution {resolution}")
    return f


def area_downsample(a, f):
    """Average ``f`` x ``f`` pixel blocks of a (T, H, W, C) array."""
    if f == 1:
        return np.asarray(a, dtype=np.float64)
    T, H, W, C = a.shape
    return np.asarray(a, dtype=np.float64).reshape(T, H // f, f, W // f, f, C).mean(axis=(2, 4))


@dataclass
class PersonClip:
    """Training tensors of one person, all at the training resolution."""
    frames: np.ndarray      # (T, 3, H, W) in [-1, 1]
    nmfc: np.ndarray        # (T, 3, H, W) in [0, 1]
    masks: np.ndarray       # (T, 1, H, W) in [0, 1]
    landmarks: np.ndarray   # (T, 68, 2) pixels
    flows: np.ndarray = None  # (T - 1, 2, H, W) block flow of consecutive real frames

    def __len__(self):
        return len(self.frames)

    def compute_flows(self, block=8, radius=4):
        H, W = self.frames.shape[2:]
        gray = self.frames.mean(axis=1)
        self.flows = np.stack([dense_flow(block_flow(gray[t], gray[t + 1], block, radius),
                                          H, W, block, radius) for t in range(len(self) - 1)]) \
            if len(self) > 1 else np.zeros((0, 2, H, W))
        return self

    def slice(self, a, b):
        return PersonClip(self.frames[a:b], self.nmfc[a:b], self.masks[a:b], self.landmarks[a:b],
                          None if self.flows is None else self.flows[a:max(b - 1, a)])

    @classmethod
    def from_dataset(cls, ds, resolution=None):
        """From a :class:`VideoDataset` with NMFC and masks, area-downsampled if needed."""
        if ds.nmfc is None or ds.masks is None:
            raise ValueError("training needs NMFC images and masks")
        frames = ds.frames.astype(np.float64) / 127.5 - 1.0
        lms = np.stack([lm.points for lm in ds.landmarks])
        f = 1 if resolution is None else downsample_factor(frames.shape[1], resolution)
        frames = area_downsample(frames, f)
        nmfc = area_downsample(ds.nmfc, f)
        masks = area_downsample(ds.masks[..., None], f)
        tr = lambda a: np.ascontiguousarray(np.transpose(a, (0, 3, 1, 2)))
        return cls(tr(frames), tr(nmfc), tr(masks), lms / f)


class Networks:
    """Generator, embedder (multi-person stage only) and the three discriminators."""

    def __init__(self, config, n_ids=None, rng=None, mode=ADAIN):
        rng = rng if rng is not None else np.random.default_rng(config.seed)
        c = config
        self.config = c
        self.mode = mode
        self.G = Generator(rng, c.ch, c.n_f, mode)
        self.E = Embedder(rng, c.ch, c.n_f) if mode == ADAIN else None
        self.DI = ImageDiscriminator(rng, n_ids if mode == ADAIN else None, c.ch, c.n_f)
        self.DM = MouthDiscriminator(rng, c.ch)
        self.DV = TemporalDiscriminator(rng, c.K, c.ch)
        self.vgg = FeatureStack(c.feature_seed)

    def modules(self):
        mods = {"G": self.G, "DI": self.DI, "DM": self.DM, "DV": self.DV}
        if self.E is not None:
            mods["E"] = self.E
        return mods

    def d_params(self):
        out = {}
        for k in ("DI", "DM", "DV"):
            out.update(getattr(self, k).parameters(k + "."))
        return out

    def g_params(self):
        return self.G.parameters("G.")

    def e_params(self):
        return self.E.parameters("E.") if self.E is not None else {}

    def state_dict(self):
        out = {}
        for name, m in self.modules().items():
            out.update({f"{name}.{k}": v for k, v in m.state_dict().items()})
        return out


# -- forward operations ------------------------------------------------------

def embed_average(E, frames):
    """h = mean over the M frames of E_id(frame); frames (M, 3, H, W) in [-1, 1]."""
    frames = np.asarray(frames, dtype=np.float64)
    if frames.ndim != 4 or len(frames) == 0:
        raise ValueError("need at least one frame to embed")
    return ops.mean_rows(E(Tensor(frames)))


def generate_frame(G, nmfc3, prev2, h=None):
    """One step: (frame in [-1, 1], mask in [0, 1]) from NMFC triplet and two previous frames."""
    return G(ops.as_tensor(nmfc3), ops.as_tensor(prev2), h)


def rollout(G, nmfc_seq, h=None):
    """Generate frames one after the other, feeding back the generated frames.

    ``nmfc_seq`` is (T, 3, H, W). NMFC images and previous frames before the
    start of the sequence are zero tensors.
    """
    nmfc_seq = np.asarray(nmfc_seq, dtype=np.float64)
    T = len(nmfc_seq)
    if T < 1:
        raise ValueError("rollout needs at least one frame")
    shape = (1, 3) + nmfc_seq.shape[2:]
    zero = Tensor(np.zeros(shape))
    pad = np.zeros((2,) + nmfc_seq.shape[1:])
    cond = np.concatenate([pad, nmfc_seq])
    frames, masks = [], []
    for t in range(T):
        x = Tensor(cond[t:t + 3].reshape((1, 9) + nmfc_seq.shape[2:]))
        p2 = frames[t - 2] if t >= 2 else zero
        p1 = frames[t - 1] if t >= 1 else zero
        f, m = generate_frame(G, x, ops.concat([p2, p1], axis=1), h)
        frames.append(f)
        masks.append(m)
    return frames, masks


def realism_score(D, frame, nmfc, id_index=0):
    """Projection score r = d . (w_i + w_0) + c for each frame of the batch."""
    return D(ops.as_tensor(frame), ops.as_tensor(nmfc), id_index)["r"]


def temporal_score(DV, frames, flows):
    """Patch scores at the three temporal scales."""
    if len(frames) < 4:
        raise ValueError(f"temporal scoring needs K >= 4 frames, got {len(frames)}")
    return [o["patch"] for o in DV([ops.as_tensor(f) for f in frames], list(flows))]


# -- losses on a clip --------------------------------------------------------

def _mean_of(terms):
    total = terms[0]
    for t in terms[1:]:
        total = ops.add(total, t)
    return ops.scale(total, 1.0 / len(terms))


def _mouths(frames, lms, patch):
    return ops.concat([mouth_crop(f, p, patch) for f, p in zip(frames, lms)], axis=0)


def _disc_outputs(nets, frames, clip, id_index):
    stacked = ops.concat(frames, axis=0)
    nm = Tensor(clip.nmfc)
    di = nets.DI(stacked, nm, id_index)
    dm = nets.DM(_mouths(frames, clip.landmarks, nets.config.mouth_patch))
    dv = nets.DV(frames, [f[None] for f in clip.flows])
    return di, dm, dv


def discriminator_loss(nets, clip, fakes, id_index=0):
    """Sum over D^I, D^M, D^V of hinge losses; heads of one discriminator are averaged."""
    real = [Tensor(clip.frames[t:t + 1]) for t in range(len(clip))]
    fake = [Tensor(f.data) for f in fakes]
    ri, rm, rv = _disc_outputs(nets, real, clip, id_index)
    fi, fm, fv = _disc_outputs(nets, fake, clip, id_index)
    l_i = _mean_of([hinge_losses(ri["r"], fi["r"])[0], hinge_losses(ri["patch"], fi["patch"])[0]])
    l_m = hinge_losses(rm["patch"], fm["patch"])[0]
    l_v = _mean_of([hinge_losses(a["patch"], b["patch"])[0] for a, b in zip(rv, fv)])
    return ops.add(ops.add(l_i, l_m), l_v)


def generator_parts(nets, clip, fakes, fake_masks, id_index=0):
    """Individual generator terms: adversarial, perceptual, feature matching, mask."""
    real = [Tensor(clip.frames[t:t + 1]) for t in range(len(clip))]
    ri, _, rv = _disc_outputs(nets, real, clip, id_index)
    fi, fm, fv = _disc_outputs(nets, fakes, clip, id_index)
    adv_i = _mean_of([hinge_losses(fi["r"], fi["r"])[1], hinge_losses(fi["patch"], fi["patch"])[1]])
    adv_m = hinge_losses(fm["patch"], fm["patch"])[1]
    adv_v = _mean_of([hinge_losses(b["patch"], b["patch"])[1] for b in fv])
    feats_f = fi["features"] + [f for o in fv for f in o["features"]]
    feats_r = ri["features"] + [f for o in rv for f in o["features"]]
    return {
        "adv": ops.add(ops.add(adv_i, adv_m), adv_v),
        "vgg": perceptual_loss(ops.concat(fakes, axis=0), Tensor(clip.frames), nets.vgg),
        "feat": feature_matching_loss(feats_f, feats_r),
        "mask": mask_loss(ops.concat(fake_masks, axis=0), Tensor(clip.masks)),
    }


# -- training ----------------------------------------------------------------

class Trainer:
    """Alternating 1:1 discriminator / generator steps on a list of person clips."""

    def __init__(self, nets, clips, config, log_path=None):
        if not clips:
            raise ValueError("no training clips")
        for c in clips:
            if len(c) < config.K:
                raise ValueError(f"dataset too small: clip of {len(c)} frames, need K = {config.K}")
            if c.flows is None:
                c.compute_flows(config.block, config.radius)
        self.nets, self.clips, self.config = nets, clips, config
        self.rng = np.random.default_rng(config.seed + 1)
        kw = dict(lr=config.lr, beta1=config.beta1, beta2=config.beta2)
        self.opt_d = Adam(nets.d_params(), **kw)
        self.opt_g = Adam(nets.g_params(), **kw)
        self.opt_e = Adam(nets.e_params(), **kw) if nets.E is not None else None
        self.history = []
        self.log_path = log_path
        log.info("perceptual features: frozen random conv stack (substitute for a pretrained VGG); "
                 "temporal flow: block matching (substitute for a learned flow network)")

    def _sample(self):
        i = int(self.rng.integers(len(self.clips)))
        clip = self.clips[i]
        s = int(self.rng.integers(len(clip) - self.config.K + 1))
        emb = self.rng.choice(len(clip), size=min(self.config.M, len(clip)), replace=False)
        return i, clip, clip.slice(s, s + self.config.K), np.sort(emb)

    def step(self):
        nets, w = self.nets, self.config.weights
        i, full, clip, emb = self._sample()
        id_index = i if nets.mode == ADAIN else 0
        h = embed_average(nets.E, full.frames[emb]) if nets.E is not None else None
        fakes, fmasks = rollout(nets.G, clip.nmfc, h)

        self.opt_d.zero_grad()
        l_d = discriminator_loss(nets, clip, fakes, id_index)
        backward(l_d, list(self.opt_d.params.values()))
        self.opt_d.step()

        parts = generator_parts(nets, clip, fakes, fmasks, id_index)
        l_g = generator_total(parts, w)
        self.opt_g.zero_grad()
        backward(l_g, list(self.opt_g.params.values()))
        l_mch = np.nan
        if self.opt_e is not None:
            mch = matching_loss(h, Tensor(nets.DI.identity_vector(id_index).data))
            l_e = embedder_total(parts["adv"], mch, w)
            self.opt_e.zero_grad()
            backward(l_e, list(self.opt_e.params.values()))
            self.opt_e.step()
            l_mch = mch.item()
        self.opt_g.step()

        row = {"step": len(self.history), "L_D": l_d.item(), "L_G_adv": parts["adv"].item(),
               "L_vgg": parts["vgg"].item(), "L_feat": parts["feat"].item(),
               "L_mask": parts["mask"].item(), "L_mch": l_mch, "L_G": l_g.item()}
        self.history.append(row)
        return row

    def run(self, steps):
        for _ in range(steps):
            self.step()
        if self.log_path is not None:
            write_log(self.log_path, self.history)
        return self.history


def write_log(path, history):
    with open(path, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=LOG_COLUMNS)
        wr.writeheader()
        for row in history:
            wr.writerow({k: ("" if isinstance(v, float) and np.isnan(v) else v)
                         for k, v in row.items()})


def read_log_rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def train_init_stage(clips, config=None, log_path=None):
    """Multi-person adversarial training; returns (networks, loss history)."""
    config = config or TrainConfig()
    if len(clips) < 2:
        raise ValueError("dataset too small: the multi-person stage needs at least 2 identities")
    nets = Networks(config, n_ids=len(clips))
    history = Trainer(nets, clips, config, log_path).run(config.steps)
    return nets, history


def finetune_init(nets, frames):
    """Person-specific networks from a multi-person checkpoint and a new person's frames.

    h_new averages the embedder over all given frames; every AdaIN site
    becomes instance norm with gamma = P_gamma h_new, beta = P_beta h_new;
    the identity matrix of D^I becomes the single vector w = h_new. The
    embedder is dropped.
    """
    if nets.mode != ADAIN:
        raise ValueError("finetune_init needs a multi-person checkpoint")
    frames = np.asarray(frames, dtype=np.float64)
    if len(frames) == 0:
        raise ValueError("empty clip")
    h_new = embed_average(nets.E, frames).data
    person = Networks.__new__(Networks)
    person.config = nets.config
    person.mode = INSTANCE
    person.G = nets.G.to_person(h_new)
    person.E = None
    person.DI = nets.DI.to_person(h_new)
    person.DM = _copy_module(nets.DM, MouthDiscriminator(np.random.default_rng(0), nets.config.ch))
    person.DV = _copy_module(nets.DV, TemporalDiscriminator(np.random.default_rng(0), nets.config.K,
                                                            nets.config.ch))
    person.vgg = nets.vgg
    return person, h_new


def _copy_module(src, dst):
    dst.load_state_dict(src.state_dict())
    return dst


def finetune_train(person, clip, steps, config=None, log_path=None):
    """Adversarial fine-tuning of a converted checkpoint on one person's clip."""
    if person.mode != INSTANCE:
        raise ValueError("finetune_train needs a converted (person-specific) checkpoint")
    config = config or person.config
    trainer = Trainer(person, [clip], config, log_path)
    return trainer.run(steps)


# -- persistence and evaluation ----------------------------------------------

def save_networks(path, nets):
    meta = {"mode": nets.mode, "config": nets.config.to_dict(), "n_ids": nets.DI.n_ids}
    save_checkpoint(path, nets.state_dict(), meta)


def load_networks(path):
    arrays, meta = load_checkpoint(path)
    config = TrainConfig.from_dict(meta["config"])
    mode = meta["mode"]
    nets = Networks(config, n_ids=meta["n_ids"] if mode == ADAIN else None, mode=mode)
    for name, m in nets.modules().items():
        prefix = name + "."
        m.load_state_dict({k[len(prefix):]: v for k, v in arrays.items() if k.startswith(prefix)})
    return nets


def synthesize(nets, nmfc_seq, h=None):
    """Numpy rollout: frames (T, H, W, 3) in [0, 1] and masks (T, H, W)."""
    frames, masks = rollout(nets.G, nmfc_seq, h)
    f = np.concatenate([x.data for x in frames])
    m = np.concatenate([x.data for x in masks])
    return np.transpose((f + 1.0) / 2.0, (0, 2, 3, 1)), m[:, 0]
