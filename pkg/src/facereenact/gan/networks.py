"""Toy-scale networks: identity embedder, AdaIN generator, image / mouth / temporal discriminators.

All feature maps are (N, C, H, W). The generator injects the identity
embedding h at every normalisation site through per-site projections
P_gamma, P_beta (AdaIN). After few-shot conversion a site holds plain
instance-norm parameters gamma, beta instead.
"""
import numpy as np

from ..autodiff import Parameter, Tensor, ops

ADAIN = "adain"
INSTANCE = "instance"


class Module:
    """Ordered registry of parameters and child modules."""

    def __init__(self):
        self._params = {}
        self._children = {}

    def add_param(self, name, value):
        p = Parameter(value, name)
        self._params[name] = p
        return p

    def add_child(self, name, module):
        self._children[name] = module
        return module

    def parameters(self, prefix=""):
        """dict of dotted name -> Parameter, children after own parameters."""
        out = {prefix + k: p for k, p in self._params.items()}
        for name, child in self._children.items():
            out.update(child.parameters(f"{prefix}{name}."))
        return out

    def state_dict(self):
        return {k: p.data.copy() for k, p in self.parameters().items()}

    def load_state_dict(self, arrays):
        params = self.parameters()
        missing = set(params) - set(arrays)
        extra = set(arrays) - set(params)
        if missing or extra:
            raise ValueError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for k, p in params.items():
            if arrays[k].shape != p.shape:
                raise ValueError(f"shape mismatch for {k}: {arrays[k].shape} vs {p.shape}")
            p.data[...] = arrays[k]


def he_normal(rng, shape):
    fan_in = int(np.prod(shape[1:]))
    return rng.normal(size=shape) * np.sqrt(2.0 / fan_in)


# Convolutions feeding a normalisation site are scale invariant and their bias
# would be cancelled. They carry no bias, and a small initial scale makes each
# Adam step a larger relative change.
NORMED_GAIN = 0.1


class Conv(Module):
    def __init__(self, rng, c_in, c_out, k=3, stride=1, bias=True, gain=1.0):
        super().__init__()
        self.stride = stride
        self.w = self.add_param("w", gain * he_normal(rng, (c_out, c_in, k, k)))
        self.b = self.add_param("b", np.zeros(c_out)) if bias else None

    def __call__(self, x):
        return ops.conv2d(x, self.w, self.b, self.stride)


class NormSite(Module):
    """Instance standardisation followed by a per-channel affine map.

    AdaIN mode: gamma = P_gamma h, beta = P_beta h. Instance mode: gamma and
    beta are parameters of their own.
    """

    def __init__(self, rng, channels, n_f, mode=ADAIN):
        super().__init__()
        self.mode = mode
        self.channels = channels
        if mode == ADAIN:
            self.P_gamma = self.add_param("P_gamma", rng.normal(size=(channels, n_f)) / np.sqrt(n_f))
            self.P_beta = self.add_param("P_beta", rng.normal(size=(channels, n_f)) / np.sqrt(n_f))
        else:
            self.gamma = self.add_param("gamma", np.ones(channels))
            self.beta = self.add_param("beta", np.zeros(channels))

    def affine(self, h):
        if self.mode == ADAIN:
            if h is None:
                raise ValueError("AdaIN site needs an identity embedding")
            return ops.matmul(self.P_gamma, h), ops.matmul(self.P_beta, h)
        return self.gamma, self.beta

    def __call__(self, x, h=None):
        gamma, beta = self.affine(h)
        return ops.channel_affine(ops.instance_standardize(x), gamma, beta)

    def to_instance_norm(self, h):
        """Instance-norm site whose gamma, beta equal this site's affine terms at ``h``."""
        site = NormSite.__new__(NormSite)
        Module.__init__(site)
        site.mode = INSTANCE
        site.channels = self.channels
        gamma, beta = self.affine(Tensor(h))
        site.gamma = site.add_param("gamma", gamma.data.copy())
        site.beta = site.add_param("beta", beta.data.copy())
        return site


class Encoder(Module):
    def __init__(self, rng, c_in, ch, n_f, mode=ADAIN):
        super().__init__()
        self.c1 = self.add_child("c1", Conv(rng, c_in, ch, bias=False, gain=NORMED_GAIN))
        self.n1 = self.add_child("n1", NormSite(rng, ch, n_f, mode))
        self.c2 = self.add_child("c2", Conv(rng, ch, 2 * ch, stride=2, bias=False, gain=NORMED_GAIN))
        self.n2 = self.add_child("n2", NormSite(rng, 2 * ch, n_f, mode))

    def __call__(self, x, h):
        y = ops.leaky_relu(self.n1(self.c1(x), h))
        return ops.leaky_relu(self.n2(self.c2(y), h))


class Decoder(Module):
    def __init__(self, rng, ch, n_f, mode=ADAIN):
        super().__init__()
        self.c1 = self.add_child("c1", Conv(rng, 2 * ch, 2 * ch, bias=False, gain=NORMED_GAIN))
        self.n1 = self.add_child("n1", NormSite(rng, 2 * ch, n_f, mode))
        self.c2 = self.add_child("c2", Conv(rng, 2 * ch, ch, bias=False, gain=NORMED_GAIN))
        self.n2 = self.add_child("n2", NormSite(rng, ch, n_f, mode))
        self.out = self.add_child("out", Conv(rng, ch, 4))

    def __call__(self, x, h):
        y = ops.leaky_relu(self.n1(self.c1(x), h))
        y = ops.upsample2x(y)
        y = ops.leaky_relu(self.n2(self.c2(y), h))
        return self.out(y)


class Generator(Module):
    """Two encoders (NMFC triplet, previous two frames) summed into one decoder.

    Outputs a frame in [-1, 1] (tanh) and a foreground mask in [0, 1] (sigmoid).
    """

    def __init__(self, rng, ch=8, n_f=64, mode=ADAIN):
        super().__init__()
        self.ch, self.n_f, self.mode = ch, n_f, mode
        self.enc_a = self.add_child("enc_a", Encoder(rng, 9, ch, n_f, mode))
        self.enc_b = self.add_child("enc_b", Encoder(rng, 6, ch, n_f, mode))
        self.dec = self.add_child("dec", Decoder(rng, ch, n_f, mode))

    def norm_sites(self):
        return [m for enc in (self.enc_a, self.enc_b, self.dec) for m in (enc.n1, enc.n2)]

    def __call__(self, nmfc3, prev2, h=None):
        if nmfc3.shape[1] != 9 or prev2.shape[1] != 6 or nmfc3.shape[2:] != prev2.shape[2:]:
            raise ValueError(f"shape mismatch: NMFC stack {nmfc3.shape}, previous frames {prev2.shape}")
        z = ops.add(self.enc_a(nmfc3, h), self.enc_b(prev2, h))
        out = self.dec(z, h)
        return ops.tanh(ops.channel_slice(out, 0, 3)), ops.sigmoid(ops.channel_slice(out, 3, 4))

    def to_person(self, h):
        """Copy with every AdaIN site replaced by instance norm fixed at ``h``."""
        if self.mode != ADAIN:
            raise ValueError("generator is already person-specific")
        g = Generator(np.random.default_rng(0), self.ch, self.n_f, INSTANCE)
        for enc_new, enc_old in ((g.enc_a, self.enc_a), (g.enc_b, self.enc_b), (g.dec, self.dec)):
            for name in ("n1", "n2"):
                site = getattr(enc_old, name).to_instance_norm(h)
                setattr(enc_new, name, site)
                enc_new._children[name] = site
        own = g.parameters()
        for k, p in self.parameters().items():
            if k in own:
                own[k].data[...] = p.data
        return g


class Embedder(Module):
    """Four stride-2 convolutions and a global average: frame -> n_f vector."""

    def __init__(self, rng, ch=8, n_f=64):
        super().__init__()
        widths = [3, ch, 2 * ch, 4 * ch, n_f]
        self.convs = [self.add_child(f"c{i}", Conv(rng, widths[i], widths[i + 1], stride=2))
                      for i in range(4)]

    def __call__(self, frames):
        y = frames
        for conv in self.convs:
            y = ops.leaky_relu(conv(y))
        return ops.spatial_mean(y)          # (M, n_f)


class ImageDiscriminator(Module):
    """Projection discriminator on (frame, NMFC) pairs with a patch head.

    realism r = d . (w_i + w_0) + c, d the averaged trunk features. In
    person mode the identity matrix W is replaced by one vector w.
    """

    def __init__(self, rng, n_ids, ch=8, n_f=64):
        super().__init__()
        self.n_f = n_f
        self.c1 = self.add_child("c1", Conv(rng, 6, ch, stride=2))
        self.c2 = self.add_child("c2", Conv(rng, ch, 2 * ch, stride=2))
        self.c3 = self.add_child("c3", Conv(rng, 2 * ch, n_f))
        self.patch = self.add_child("patch", Conv(rng, n_f, 1))
        self.person = n_ids is None
        if self.person:
            self.w = self.add_param("w", np.zeros(n_f))
        else:
            self.W = self.add_param("W", rng.normal(size=(n_ids, n_f)) * 0.1)
        self.w0 = self.add_param("w0", np.zeros(n_f))
        self.c = self.add_param("c", np.zeros(()))

    @property
    def n_ids(self):
        return 1 if self.person else self.W.shape[0]

    def identity_vector(self, id_index):
        if self.person:
            return self.w
        return ops.index_row(self.W, id_index)

    def trunk(self, frame, nmfc):
        x = ops.concat([frame, nmfc], axis=1)
        f1 = ops.leaky_relu(self.c1(x))
        f2 = ops.leaky_relu(self.c2(f1))
        f3 = ops.leaky_relu(self.c3(f2))
        return [f1, f2, f3]

    def score(self, d, id_index):
        """Projection score for a batch of features d (N, n_f)."""
        return ops.shift(ops.matmul(d, ops.add(self.identity_vector(id_index), self.w0)), self.c)

    def __call__(self, frame, nmfc, id_index=0):
        feats = self.trunk(frame, nmfc)
        d = ops.spatial_mean(feats[-1])
        return {"r": self.score(d, id_index), "patch": self.patch(feats[-1]),
                "features": feats, "d": d}

    def to_person(self, h):
        """Copy with W replaced by the single vector w = h."""
        if self.person:
            raise ValueError("discriminator is already person-specific")
        D = ImageDiscriminator(np.random.default_rng(0), None, self.c1.w.shape[0], self.n_f)
        own = D.parameters()
        for k, p in self.parameters().items():
            if k in own:
                own[k].data[...] = p.data
        D.w.data[...] = h
        return D


class MouthDiscriminator(Module):
    """Patch discriminator on resized mouth crops (RGB only)."""

    def __init__(self, rng, ch=8):
        super().__init__()
        self.c1 = self.add_child("c1", Conv(rng, 3, ch, stride=2))
        self.c2 = self.add_child("c2", Conv(rng, ch, 2 * ch))
        self.out = self.add_child("out", Conv(rng, 2 * ch, 1))

    def __call__(self, crops):
        f1 = ops.leaky_relu(self.c1(crops))
        f2 = ops.leaky_relu(self.c2(f1))
        return {"patch": self.out(f2), "features": [f1, f2]}


def scale_lengths(K, n_scales=3):
    """Frames seen at each temporal scale: every 2**s-th frame of K."""
    return [len(range(0, K, 2 ** s)) for s in range(n_scales)]


class TemporalDiscriminator(Module):
    """Three temporal scales, each a patch trunk over stacked frames and flows."""

    def __init__(self, rng, K=8, ch=8, n_scales=3):
        super().__init__()
        if K < 4:
            raise ValueError(f"temporal clips need K >= 4 frames, got {K}")
        self.K = K
        self.trunks = []
        for s, k in enumerate(scale_lengths(K, n_scales)):
            c_in = 3 * k + 2 * (k - 1)
            t = Module()
            t.c1 = t.add_child("c1", Conv(rng, c_in, ch, stride=2))
            t.c2 = t.add_child("c2", Conv(rng, ch, 2 * ch, stride=2))
            t.out = t.add_child("out", Conv(rng, 2 * ch, 1))
            self.trunks.append(self.add_child(f"s{s}", t))

    def __call__(self, frames, flows):
        """``frames``: K tensors (N, 3, H, W); ``flows``: K-1 arrays (N, 2, H, W)."""
        K = len(frames)
        if K != self.K or len(flows) != K - 1:
            raise ValueError(f"expected {self.K} frames and {self.K - 1} flows, got {K} and {len(flows)}")
        outs = []
        for s, t in enumerate(self.trunks):
            step = 2 ** s
            idx = list(range(0, K, step))
            chans = [frames[i] for i in idx]
            for a, b in zip(idx, idx[1:]):
                chans.append(Tensor(np.sum(flows[a:b], axis=0)))
            x = ops.concat(chans, axis=1)
            f1 = ops.leaky_relu(t.c1(x))
            f2 = ops.leaky_relu(t.c2(f1))
            outs.append({"patch": t.out(f2), "features": [f1, f2]})
        return outs


class FeatureStack:
    """Frozen random convolutional feature extractor standing in for a pretrained VGG.

    Weights come from a fixed seed and are never trained. The raw image is the
    first layer of the stack, followed by three leaky-ReLU convolutions.
    """

    def __init__(self, seed=1234, widths=(3, 8, 16, 16), strides=(1, 2, 2)):
        rng = np.random.default_rng(seed)
        self.weights = [he_normal(rng, (widths[i + 1], widths[i], 3, 3)) for i in range(len(strides))]
        self.strides = strides

    def __call__(self, x):
        feats = [x]
        y = x
        for w, s in zip(self.weights, self.strides):
            y = ops.leaky_relu(ops.conv2d(y, Tensor(w), stride=s))
            feats.append(y)
        return feats
