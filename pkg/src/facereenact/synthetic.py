"""Procedural face-like morphable model and synthetic tracked videos.

The real face bases are not redistributable, so tests and the ``synth-data``
command use a generated model: a height-field face over an elliptic grid,
smooth random deformation fields orthonormalised by QR for the identity and
expression bases, and a 68-point landmark layout in the usual iBUG order.
"""
import numpy as np

from .camera import SopCamera
from .morphable_model import ShapeParams, make_basis

_EXP_FOCI = ((0.0, 0.65, 0.35), (-0.42, -0.3, 0.25), (0.42, -0.3, 0.25), (0.0, -0.55, 0.4))


def landmark_template():
    """68 (x, y) positions in face coordinates (x right, y down)."""
    pts = []
    for k in range(17):                                   # jaw
        phi = np.pi - k * np.pi / 16
        pts.append((0.95 * np.cos(phi), -0.2 + 1.3 * np.sin(phi)))
    for side in (-1, 1):                                  # brows, outer to inner on the left
        xs = np.linspace(-0.78, -0.16, 5)
        if side > 0:
            xs = -xs[::-1]
        for x in xs:
            pts.append((x, -0.52 - 0.1 * np.cos((abs(x) - 0.47) / 0.31 * np.pi / 2)))
    for y in np.linspace(-0.4, 0.15, 4):                  # nose bridge
        pts.append((0.0, y))
    for x in np.linspace(-0.2, 0.2, 5):                   # nostrils
        pts.append((x, 0.3 + 0.05 * (1 - abs(x) / 0.2)))
    for cx in (-0.42, 0.42):                              # eyes
        for a in np.linspace(np.pi, -np.pi, 7)[:-1]:
            pts.append((cx + 0.17 * np.cos(a), -0.3 - 0.07 * np.sin(a)))
    for a in np.linspace(np.pi, -np.pi, 13)[:-1]:         # outer lips
        pts.append((0.4 * np.cos(a), 0.65 - 0.17 * np.sin(a)))
    for a in np.linspace(np.pi, -np.pi, 9)[:-1]:          # inner lips
        pts.append((0.28 * np.cos(a), 0.65 - 0.06 * np.sin(a)))
    return np.array(pts)


def _face_depth(u, v):
    g = lambda cu, cv, su, sv: np.exp(-((u - cu) ** 2 / su + (v - cv) ** 2 / sv))
    dome = 0.55 * np.sqrt(np.maximum(0.0, 1.0 - (u / 1.15) ** 2 - (v / 1.5) ** 2))
    nose = 0.32 * g(0.0, 0.05, 0.015, 0.12)
    sockets = -0.07 * (g(-0.42, -0.3, 0.03, 0.012) + g(0.42, -0.3, 0.03, 0.012))
    lips = 0.05 * g(0.0, 0.65, 0.08, 0.015)
    brow = 0.04 * g(0.0, -0.55, 0.4, 0.01)
    return -(dome + nose + sockets + lips + brow)


def face_mesh(grid=61):
    """Mean face vertices (N, 3), triangles (F, 3) and a per-vertex (u, v) chart."""
    step = 2.0 / (grid - 1)
    us = np.linspace(-1.0, 1.0, grid)
    nv = int(round(2.6 / step)) + 1
    vs = np.linspace(-1.3, 1.3, nv)
    U, V = np.meshgrid(us, vs)                # rows follow v (down), columns follow u
    keep = (U / 1.05) ** 2 + (V / 1.36) ** 2 <= 1.0
    index = -np.ones(U.shape, dtype=np.int64)
    index[keep] = np.arange(keep.sum())
    uv = np.stack([U[keep], V[keep]], axis=1)
    verts = np.stack([uv[:, 0], uv[:, 1], _face_depth(uv[:, 0], uv[:, 1])], axis=1)

    a = index[:-1, :-1]
    b = index[:-1, 1:]
    c = index[1:, :-1]
    d = index[1:, 1:]
    # winding gives positive image-space signed area for the frontal view
    t1 = np.stack([a, b, c], -1).reshape(-1, 3)
    t2 = np.stack([b, d, c], -1).reshape(-1, 3)
    tris = np.concatenate([t1, t2])
    tris = tris[(tris >= 0).all(axis=1)]
    return verts, tris, uv


def _pick_landmarks(uv):
    taken = set()
    out = []
    for p in landmark_template():
        order = np.argsort(np.sum((uv - p) ** 2, axis=1))
        for idx in order:
            if int(idx) not in taken:
                taken.add(int(idx))
                out.append(int(idx))
                break
    return np.array(out)


def _similarity_subspace(verts):
    """Orthonormal basis (3N, 7) of infinitesimal translations, rotations and scaling."""
    c = verts - verts.mean(axis=0)
    cols = []
    for a in range(3):
        t = np.zeros_like(verts)
        t[:, a] = 1.0
        cols.append(t)
        axis = np.zeros(3)
        axis[a] = 1.0
        cols.append(np.cross(axis, c))
    cols.append(c)
    Q, _ = np.linalg.qr(np.stack([x.reshape(-1) for x in cols], axis=1))
    return Q


def _smooth_fields(uv, n, rng, max_freq=5, weight=None, exclude=None):
    """n random smooth displacement fields (3N, n), orthonormalised.

    ``exclude`` holds orthonormal columns projected out first, so pose-like
    deformations stay with the camera instead of the shape coefficients.
    """
    u = (uv[:, 0] + 1.0) / 2.0
    v = (uv[:, 1] + 1.3) / 2.6
    feats, decay = [], []
    for fa in range(max_freq + 1):
        for fb in range(max_freq + 1):
            feats.append(np.cos(fa * np.pi * u) * np.cos(fb * np.pi * v))
            decay.append(1.0 / (1.0 + fa + fb) ** 1.5)
    F = np.stack(feats, axis=1)
    if weight is not None:
        F = F * weight[:, None]
    nb = F.shape[1]
    coef = rng.normal(size=(3, nb, n)) * np.asarray(decay)[None, :, None]
    fields = np.einsum("vk,akn->van", F, coef)          # (N, 3, n)
    raw = fields.reshape(-1, n)
    if exclude is not None:
        raw = raw - exclude @ (exclude.T @ raw)
    Q, R = np.linalg.qr(raw)
    return Q * np.sign(np.diag(R))[None, :]


def make_synthetic_basis(n_id=30, n_exp=20, grid=61, seed=0):
    """A self-consistent face model with ``n_id`` identity and ``n_exp`` expression modes."""
    rng = np.random.default_rng(seed)
    verts, tris, uv = face_mesh(grid)
    n = len(verts)
    rigid = _similarity_subspace(verts)
    U_id = _smooth_fields(uv, n_id, rng, exclude=rigid)
    w = sum(np.exp(-((uv[:, 0] - cu) ** 2 + (uv[:, 1] - cv) ** 2) / s) for cu, cv, s in _EXP_FOCI)
    U_exp = _smooth_fields(uv, n_exp, rng, weight=0.2 + w, exclude=rigid)
    sigma_id = 0.04 * np.sqrt(n) * 0.9 ** np.arange(n_id)
    sigma_exp = 0.035 * np.sqrt(n) * 0.88 ** np.arange(n_exp)
    mean_exp = 0.01 * np.sqrt(n) * (U_exp[:, 0] if n_exp else np.zeros(3 * n))
    mean_id = verts.reshape(-1) - mean_exp
    return make_basis(mean_id, mean_exp, U_id, U_exp, sigma_id, sigma_exp, tris,
                      _pick_landmarks(uv))


def random_identity(basis, rng, spread=1.0, limit=2.5):
    z = np.clip(rng.normal(size=basis.n_id) * spread, -limit, limit)
    return z * basis.sigma_id


def random_expressions(basis, T, rng, spread=1.0, limit=2.5, smoothness=4.0):
    """Temporally smooth expression coefficients, shape (T, n_e)."""
    raw = rng.normal(size=(T + 8, basis.n_exp))
    kernel = np.exp(-0.5 * (np.arange(-8, 9) / smoothness) ** 2)
    kernel /= np.sqrt(np.sum(kernel ** 2))
    sm = np.stack([np.convolve(raw[:, j], kernel, mode="same") for j in range(basis.n_exp)], 1)
    sm = sm[4:4 + T] * spread
    return np.clip(sm, -limit, limit) * basis.sigma_exp


def random_cameras(T, size, rng, max_yaw=0.5, max_pitch=0.3, max_roll=0.15, face_fraction=0.38):
    """Smoothly varying head poses centred in a ``size`` x ``size`` frame."""
    t = np.arange(T)
    ph = rng.uniform(0, 2 * np.pi, 4)
    fr = rng.uniform(0.05, 0.15, 4)
    yaw = max_yaw * np.sin(fr[0] * t + ph[0])
    pitch = max_pitch * np.sin(fr[1] * t + ph[1])
    roll = max_roll * np.sin(fr[2] * t + ph[2])
    scale = face_fraction * size * (1.0 + 0.05 * np.sin(fr[3] * t + ph[3]))
    shift = rng.normal(scale=0.02 * size, size=2)
    cams = []
    for k in range(T):
        rotvec = np.array([pitch[k], yaw[k], roll[k]])
        tx = size / 2 + shift[0] + 0.02 * size * np.sin(0.1 * k)
        ty = size / 2 + shift[1]
        cams.append(SopCamera(rotvec, [tx, ty, 0.0], scale[k]))
    return cams


def ground_truth_params(basis, identity, expressions):
    return [ShapeParams(identity, e) for e in expressions]
