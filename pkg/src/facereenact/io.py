"""File formats: landmark tracks, fit results, NMFC sidecars, PNG sequences, datasets.

Dataset directory layout::

    root/
      frames/000000.png ...   8-bit RGB
      masks/000000.png ...    optional, 8-bit grayscale, 255 = foreground
      nmfc/000000.nmfc ...    optional conditioning images
      landmarks.json          {"frames": [{"points": [[x, y] x 68], "confidence": [...]}, ...]}
      meta.json               {"fps": 20}
"""
import json
import os
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from PIL import Image

from .camera import Landmarks2D, SopCamera
from .fitting import EnergyWeights, FitResult
from .raster import NmfcImage

NMFC_MAGIC = b"NMFC"
FRAME_PATTERN = "{:06d}"


class DatasetError(ValueError):
    pass


# -- landmarks ---------------------------------------------------------------

def write_landmarks(path, seq):
    frames = []
    for lm in seq:
        entry = {"points": np.asarray(lm.points).tolist()}
        if lm.confidence is not None:
            entry["confidence"] = np.asarray(lm.confidence).tolist()
        frames.append(entry)
    with open(path, "w") as fh:
        json.dump({"frames": frames}, fh)


def read_landmarks(path):
    with open(path) as fh:
        doc = json.load(fh)
    return [Landmarks2D(f["points"], f.get("confidence")) for f in doc["frames"]]


# -- fit results -------------------------------------------------------------

def fit_to_dict(fit):
    doc = {
        "identity": np.asarray(fit.identity).tolist(),
        "frames": [{"expression": np.asarray(e).tolist(), "camera": c.to_dict()}
                   for e, c in zip(fit.expressions, fit.cameras)],
    }
    if fit.final_energy is not None:
        el, epr, esm = fit.per_term_energy
        doc["energy"] = {"total": fit.final_energy, "landmark": el, "prior": epr,
                         "smoothness": esm, "trace": list(fit.energy_trace)}
        if fit.weights is not None:
            w = fit.weights
            doc["energy"]["weights"] = {"w_l": w.w_l, "w_pr": w.w_pr, "w_sm": w.w_sm}
    return doc


def fit_from_dict(doc):
    frames = doc["frames"]
    fit = FitResult(identity=np.asarray(doc["identity"], dtype=np.float64),
                    expressions=np.asarray([f["expression"] for f in frames], dtype=np.float64)
                    .reshape(len(frames), -1),
                    cameras=[SopCamera.from_dict(f["camera"]) for f in frames])
    en = doc.get("energy")
    if en:
        fit.final_energy = en["total"]
        fit.per_term_energy = (en["landmark"], en["prior"], en["smoothness"])
        fit.energy_trace = list(en.get("trace", []))
        if "weights" in en:
            fit.weights = EnergyWeights(**en["weights"])
    return fit


def write_fit(path, fit):
    with open(path, "w") as fh:
        json.dump(fit_to_dict(fit), fh, indent=1)


def read_fit(path):
    with open(path) as fh:
        return fit_from_dict(json.load(fh))


# -- NMFC sidecars -----------------------------------------------------------

def write_nmfc(path, img):
    """Lossless float32 NMFC file: magic, u32 width, u32 height, u32 channels, H x W x 3 data."""
    px = np.asarray(img.pixels if isinstance(img, NmfcImage) else img)
    h, w, c = px.shape
    with open(path, "wb") as fh:
        fh.write(NMFC_MAGIC)
        fh.write(struct.pack("<III", w, h, c))
        fh.write(np.ascontiguousarray(px, dtype="<f4").tobytes())


def read_nmfc(path):
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:4] != NMFC_MAGIC or len(raw) < 16:
        raise DatasetError(f"not an NMFC file: {path}")
    w, h, c = struct.unpack("<III", raw[4:16])
    data = np.frombuffer(raw[16:], dtype="<f4")
    if data.size != w * h * c:
        raise DatasetError(f"NMFC payload size mismatch in {path}")
    return NmfcImage(pixels=data.reshape(h, w, c).astype(np.float64))


def write_nmfc_sequence(directory, images, preview=False):
    os.makedirs(directory, exist_ok=True)
    for t, img in enumerate(images):
        write_nmfc(os.path.join(directory, FRAME_PATTERN.format(t) + ".nmfc"), img)
        if preview:
            write_png(os.path.join(directory, FRAME_PATTERN.format(t) + ".png"),
                      to_uint8(img.pixels))


def read_nmfc_sequence(directory):
    files = sorted(Path(directory).glob("*.nmfc"))
    return np.stack([read_nmfc(f).pixels for f in files]) if files else None


# -- PNG sequences -----------------------------------------------------------

def to_uint8(x):
    """[0, 1] floats to 8-bit with rounding."""
    return np.clip(np.rint(np.asarray(x) * 255.0), 0, 255).astype(np.uint8)


def write_png(path, array):
    Image.fromarray(np.asarray(array, dtype=np.uint8)).save(path)


def read_png(path, mode=None):
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert(mode) if mode else im)
    except OSError as exc:
        raise DatasetError(f"unreadable frame {path}: {exc}") from None


def write_png_sequence(directory, images):
    os.makedirs(directory, exist_ok=True)
    for t, img in enumerate(images):
        write_png(os.path.join(directory, FRAME_PATTERN.format(t) + ".png"), img)


def read_png_sequence(directory, mode="RGB"):
    files = sorted(Path(directory).glob("*.png"))
    if not files:
        raise DatasetError(f"no PNG frames in {directory}")
    return np.stack([read_png(f, mode) for f in files])


# -- datasets ----------------------------------------------------------------

@dataclass(eq=False)
class VideoDataset:
    root: str
    frames: np.ndarray              # (T, H, W, 3) uint8
    landmarks: list                 # T x Landmarks2D
    masks: np.ndarray | None = None  # (T, H, W) float in [0, 1]
    nmfc: np.ndarray | None = None   # (T, H, W, 3) float
    fps: float = 20.0
    start: int = 0                  # index of the first frame within the source video

    @property
    def frames_dir(self):
        return os.path.join(self.root, "frames")

    @property
    def masks_dir(self):
        return os.path.join(self.root, "masks") if self.masks is not None else None

    def __len__(self):
        return len(self.frames)

    def frames_float(self):
        """Frames scaled to [-1, 1], shape (T, 3, H, W)."""
        return np.transpose(self.frames.astype(np.float64) / 127.5 - 1.0, (0, 3, 1, 2))

    def slice(self, a, b):
        return replace(self, frames=self.frames[a:b], landmarks=self.landmarks[a:b],
                       masks=None if self.masks is None else self.masks[a:b],
                       nmfc=None if self.nmfc is None else self.nmfc[a:b],
                       start=self.start + a)


def validate_dataset(ds):
    T = len(ds.frames)
    if ds.frames.ndim != 4 or ds.frames.shape[-1] != 3:
        raise DatasetError("frames must be (T, H, W, 3)")
    if len(ds.landmarks) != T:
        raise DatasetError(f"count mismatch: {T} frames but {len(ds.landmarks)} landmark entries")
    hw = ds.frames.shape[1:3]
    if ds.masks is not None and (len(ds.masks) != T or ds.masks.shape[1:] != hw):
        raise DatasetError("count mismatch: masks do not match frames")
    if ds.nmfc is not None and (len(ds.nmfc) != T or ds.nmfc.shape[1:3] != hw):
        raise DatasetError("count mismatch: NMFC images do not match frames")


def load_dataset(root):
    root = str(root)
    frames = read_png_sequence(os.path.join(root, "frames"), "RGB")
    lm_path = os.path.join(root, "landmarks.json")
    landmarks = read_landmarks(lm_path) if os.path.exists(lm_path) else []
    masks = None
    if os.path.isdir(os.path.join(root, "masks")):
        masks = read_png_sequence(os.path.join(root, "masks"), "L").astype(np.float64) / 255.0
    nmfc = None
    if os.path.isdir(os.path.join(root, "nmfc")):
        nmfc = read_nmfc_sequence(os.path.join(root, "nmfc"))
    fps = 20.0
    meta_path = os.path.join(root, "meta.json")
    if os.path.exists(meta_path):
        with open(meta_path) as fh:
            fps = float(json.load(fh).get("fps", fps))
    ds = VideoDataset(root=root, frames=frames, landmarks=landmarks, masks=masks, nmfc=nmfc,
                      fps=fps)
    validate_dataset(ds)
    return ds


def save_dataset(ds, root):
    validate_dataset(ds)
    os.makedirs(root, exist_ok=True)
    write_png_sequence(os.path.join(root, "frames"), ds.frames)
    write_landmarks(os.path.join(root, "landmarks.json"), ds.landmarks)
    if ds.masks is not None:
        write_png_sequence(os.path.join(root, "masks"), to_uint8(ds.masks))
    if ds.nmfc is not None:
        write_nmfc_sequence(os.path.join(root, "nmfc"), [NmfcImage(x) for x in ds.nmfc])
    with open(os.path.join(root, "meta.json"), "w") as fh:
        json.dump({"fps": ds.fps}, fh)


def split_train_test(ds, test_len=100):
    """Contiguous split keeping the last ``test_len`` frames for testing."""
    T = len(ds)
    if T <= test_len:
        raise DatasetError(f"too short: {T} frames, need more than {test_len}")
    return ds.slice(0, T - test_len), ds.slice(T - test_len, T)
