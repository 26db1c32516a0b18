"""Scaled orthographic (weak-perspective) camera and pose estimation from 68 landmarks."""
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

NUM_LANDMARKS = 68


class DegenerateLandmarksError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class SopCamera:
    rotation: np.ndarray      # axis-angle, radians
    translation: np.ndarray   # (tx, ty, tz); tz is carried but unused
    scale: float

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=np.float64).reshape(3))
        object.__setattr__(self, "translation",
                           np.asarray(self.translation, dtype=np.float64).reshape(3))
        object.__setattr__(self, "scale", float(self.scale))
        if not self.scale > 0:
            raise ValueError(f"camera scale must be positive, got {self.scale}")

    def matrix(self):
        return rotation_matrix(self.rotation)

    def as_vector(self):
        """The 7 pose parameters: axis-angle (3), translation (3), scale (1)."""
        return np.concatenate([self.rotation, self.translation, [self.scale]])

    @classmethod
    def from_vector(cls, p):
        p = np.asarray(p, dtype=np.float64)
        return cls(p[:3], p[3:6], p[6])

    def to_dict(self):
        return {"rotation": self.rotation.tolist(), "translation": self.translation.tolist(),
                "scale": self.scale}

    @classmethod
    def from_dict(cls, d):
        return cls(d["rotation"], d["translation"], d["scale"])


@dataclass(frozen=True, eq=False)
class Landmarks2D:
    points: np.ndarray              # (68, 2) pixels
    confidence: np.ndarray | None = None

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        if pts.shape != (NUM_LANDMARKS, 2):
            raise ValueError(f"expected {NUM_LANDMARKS}x2 landmarks, got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise ValueError("landmarks contain non-finite values")
        object.__setattr__(self, "points", pts)
        if self.confidence is not None:
            conf = np.asarray(self.confidence, dtype=np.float64).reshape(-1)
            if conf.shape != (NUM_LANDMARKS,) or np.any((conf < 0) | (conf > 1)):
                raise ValueError("confidence must be 68 values in [0, 1]")
            object.__setattr__(self, "confidence", conf)


def rotation_matrix(rotvec):
    return Rotation.from_rotvec(np.asarray(rotvec, dtype=np.float64)).as_matrix()


def project(cam, vertices):
    """Scale * (R v)_xy + t_xy for every row of ``vertices`` (N, 3)."""
    R = cam.matrix()
    v = np.asarray(vertices, dtype=np.float64)
    return cam.scale * (v @ R[:2].T) + cam.translation[:2]


def estimate_pose(landmarks, model_landmarks, return_residual=False):
    """Closed-form weak-perspective Procrustes pose from 2D-3D correspondences.

    Centres both point sets, solves the 2x3 affine factor sR[:2] by least
    squares, snaps it to the nearest scaled pair of orthonormal rows via SVD
    and completes the rotation with a cross product (det +1).
    """
    pts = landmarks.points if isinstance(landmarks, Landmarks2D) else np.asarray(landmarks, float)
    X = np.asarray(model_landmarks, dtype=np.float64)
    if pts.shape[0] != X.shape[0]:
        raise ValueError("landmark count mismatch between image and model")
    pc = pts.mean(axis=0)
    Xc_mean = X.mean(axis=0)
    x = pts - pc
    Xc = X - Xc_mean

    sv = np.linalg.svd(x, compute_uv=False)
    if sv[0] == 0 or sv[1] <= 1e-9 * sv[0]:
        raise DegenerateLandmarksError("degenerate configuration: landmarks are collinear")

    M, *_ = np.linalg.lstsq(Xc, x, rcond=None)   # (3, 2), x ~ Xc @ M
    A = M.T                                      # (2, 3) ~ s R[:2]
    U, S, Vt = np.linalg.svd(A, full_matrices=False)
    R2 = U @ Vt
    r3 = np.cross(R2[0], R2[1])
    R = np.vstack([R2, r3])
    scale = float(S.mean())
    t2 = pc - scale * (R[:2] @ Xc_mean)
    cam = SopCamera(Rotation.from_matrix(R).as_rotvec(), [t2[0], t2[1], 0.0], scale)
    if return_residual:
        res = project(cam, X) - pts
        return cam, float(np.sqrt(np.mean(np.sum(res ** 2, axis=1))))
    return cam


def _skew(v):
    """Batched cross-product matrices, v (..., 3) -> (..., 3, 3)."""
    z = np.zeros(v.shape[:-1])
    return np.stack([
        np.stack([z, -v[..., 2], v[..., 1]], -1),
        np.stack([v[..., 2], z, -v[..., 0]], -1),
        np.stack([-v[..., 1], v[..., 0], z], -1),
    ], -2)


def pose_jacobian(cam, X):
    """Derivative of the projected points (K, 2) w.r.t. the 6 active pose parameters.

    Parameters are a left rotation increment d (R <- exp([d]x) R), tx, ty and
    the scale; the result has shape (K, 2, 6).
    """
    RX = np.asarray(X, dtype=np.float64) @ cam.matrix().T
    J = np.zeros((len(RX), 2, 6))
    J[:, :, :3] = -cam.scale * _skew(RX)[:, :2, :]
    J[:, 0, 3] = 1.0
    J[:, 1, 4] = 1.0
    J[:, :, 5] = RX[:, :2]
    return J


def apply_pose_delta(cam, delta):
    """Camera after a 6-vector increment; None if the scale would become non-positive."""
    scale = cam.scale + delta[5]
    if not scale > 0:
        return None
    R = rotation_matrix(delta[:3]) @ cam.matrix()
    t = cam.translation.copy()
    t[:2] += delta[3:5]
    return SopCamera(Rotation.from_matrix(R).as_rotvec(), t, scale)


def reprojection_sse(cam, X, pts, weights=None):
    r = project(cam, X) - pts
    sq = np.sum(r * r, axis=1)
    return float(np.sum(sq if weights is None else weights * sq))


def refine_pose(cam, model_landmarks, points, weights=None, iters=30, tol=1e-14):
    """Levenberg-Marquardt on the 6 active pose parameters (rotation, tx, ty, scale).

    Steps are only accepted when they lower the (optionally weighted) squared
    reprojection error, so the returned camera is never worse than ``cam``.
    """
    X = np.asarray(model_landmarks, dtype=np.float64)
    pts = np.asarray(points, dtype=np.float64)
    sw = np.ones(len(X)) if weights is None else np.sqrt(np.asarray(weights, float))
    best = reprojection_sse(cam, X, pts, weights)
    lam = 1e-3
    for _ in range(iters):
        r = ((project(cam, X) - pts) * sw[:, None]).reshape(-1)
        J = (pose_jacobian(cam, X) * sw[:, None, None]).reshape(-1, 6)
        g = J.T @ r
        H = J.T @ J
        if best == 0.0 or np.linalg.norm(g) <= 1e-13 * np.linalg.norm(J) * np.sqrt(best):
            break
        improved = False
        for _ in range(6):
            step = -np.linalg.solve(H + lam * np.diag(np.diag(H) + 1e-12), g)
            cand = apply_pose_delta(cam, step)
            if cand is None:
                lam *= 10
                continue
            err = reprojection_sse(cand, X, pts, weights)
            if err < best:
                rel = (best - err) / max(best, 1e-300)
                cam, best = cand, err
                lam = max(lam / 10, 1e-12)
                improved = True
                break
            lam *= 10
        if not improved or rel < tol:
            break
    return cam
