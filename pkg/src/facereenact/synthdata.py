"""Synthetic talking-head videos with known geometry.

Each person is a random identity of the procedural model with a smooth
expression track and head motion. The face colour is a fixed per-person
function of the NMFC code, so a frame is fully determined by its NMFC image
and the person's static background.
"""
import os
from dataclasses import dataclass

import numpy as np

from .camera import Landmarks2D, project
from .fitting import FitResult, landmark_vertices
from .io import VideoDataset, save_dataset, write_fit
from .morphable_model import save_model
from .raster import NmfcRenderer
from .synthetic import make_synthetic_basis, random_cameras, random_expressions, random_identity


@dataclass
class Appearance:
    """Per-person colouring: face = 0.5 + 0.5 sin(2 pi (A nmfc + phase)), plus a background."""
    A: np.ndarray           # (3, 3)
    phase: np.ndarray       # (3,)
    background: np.ndarray  # (3,) top colour; the bottom colour is its complement blend

    @classmethod
    def random(cls, rng):
        return cls(rng.uniform(-1.2, 1.2, (3, 3)), rng.uniform(0, 1, 3), rng.uniform(0.1, 0.9, 3))

    def colour(self, nmfc):
        return 0.5 + 0.5 * np.sin(2 * np.pi * (nmfc @ self.A.T + self.phase))

    def backdrop(self, height, width):
        y = np.linspace(0.0, 1.0, height)[:, None, None]
        top, bottom = self.background, 0.5 * (self.background + (1.0 - self.background))
        return np.broadcast_to((1 - y) * top + y * bottom, (height, width, 3))


def make_person(basis, T, size, seed, renderer=None):
    """A (dataset, ground-truth fit) pair for one synthetic person."""
    rng = np.random.default_rng(seed)
    identity = random_identity(basis, rng, spread=0.8)
    expressions = random_expressions(basis, T, rng, spread=1.2)
    cams = random_cameras(T, size, rng, max_yaw=0.35, max_pitch=0.2, max_roll=0.1,
                          face_fraction=0.42)
    look = Appearance.random(rng)
    r = renderer or NmfcRenderer(basis)
    back = look.backdrop(size, size)
    frames, masks, nmfc, lms = [], [], [], []
    for e, c in zip(expressions, cams):
        img, buf = r.render(identity, e, c, size, size, return_buffer=True)
        fg = buf.foreground
        frame = np.where(fg[..., None], look.colour(img.pixels), back)
        frames.append(np.round(frame * 255.0).astype(np.uint8))
        masks.append(fg.astype(np.float64))
        nmfc.append(img.pixels)
        lms.append(Landmarks2D(project(c, landmark_vertices(basis, identity, e))))
    ds = VideoDataset(root="", frames=np.stack(frames), landmarks=lms, masks=np.stack(masks),
                      nmfc=np.stack(nmfc))
    fit = FitResult(identity=identity, expressions=expressions, cameras=cams)
    return ds, fit


def write_corpus(out_dir, n_people=2, T=30, size=32, seed=0, basis=None):
    """``model.fmm`` plus one ``person_XXX`` dataset directory (with ``fit.json``) per person."""
    basis = basis if basis is not None else make_synthetic_basis(seed=seed)
    os.makedirs(out_dir, exist_ok=True)
    save_model(basis, os.path.join(out_dir, "model.fmm"))
    renderer = NmfcRenderer(basis)
    dirs = []
    for i in range(n_people):
        ds, fit = make_person(basis, T, size, seed * 1000 + i, renderer)
        root = os.path.join(out_dir, f"person_{i:03d}")
        save_dataset(ds, root)
        write_fit(os.path.join(root, "fit.json"), fit)
        dirs.append(root)
    return dirs
