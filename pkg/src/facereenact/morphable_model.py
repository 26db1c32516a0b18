"""Linear 3D morphable face model: container I/O, shape synthesis, normalised mean face."""
from dataclasses import dataclass, field

import numpy as np

from .container import BlobReader, ContainerError, read_container, write_container

MAGIC = b"FMM1"
NUM_LANDMARKS = 68
ORTHO_TOL = 1e-6


class ModelError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class ShapeBasis:
    mean_id: np.ndarray      # (3N,)
    mean_exp: np.ndarray     # (3N,)
    U_id: np.ndarray         # (3N, n_i)
    U_exp: np.ndarray        # (3N, n_e)
    sigma_id: np.ndarray     # (n_i,)
    sigma_exp: np.ndarray    # (n_e,)
    topology: np.ndarray     # (F, 3) int
    landmark_indices: np.ndarray  # (68,) int
    mean_shape: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "mean_shape", self.mean_id + self.mean_exp)
        for name in ("mean_id", "mean_exp", "U_id", "U_exp", "sigma_id", "sigma_exp",
                     "topology", "landmark_indices", "mean_shape"):
            getattr(self, name).setflags(write=False)

    @property
    def n_vertices(self):
        return self.mean_id.size // 3

    @property
    def n_id(self):
        return self.U_id.shape[1]

    @property
    def n_exp(self):
        return self.U_exp.shape[1]

    def landmark_rows(self):
        """Row indices into the 3N vectors for the landmark vertices, shape (68, 3)."""
        return 3 * self.landmark_indices[:, None] + np.arange(3)[None, :]

    def mean_landmarks(self):
        return self.mean_shape[self.landmark_rows()]


@dataclass(frozen=True)
class ShapeParams:
    identity: np.ndarray
    expression: np.ndarray


@dataclass(frozen=True, eq=False)
class Mesh:
    vertices: np.ndarray   # (N, 3)
    topology: np.ndarray   # (F, 3)


@dataclass(frozen=True, eq=False)
class NormalizedMeanFace:
    coords: np.ndarray     # (N, 3), each axis min-max scaled to [0, 1]


def make_basis(mean_id, mean_exp, U_id, U_exp, sigma_id, sigma_exp, topology,
               landmark_indices):
    """Build a validated :class:`ShapeBasis` from array-likes."""
    basis = ShapeBasis(
        mean_id=np.array(mean_id, dtype=np.float64).reshape(-1),
        mean_exp=np.array(mean_exp, dtype=np.float64).reshape(-1),
        U_id=np.array(U_id, dtype=np.float64),
        U_exp=np.array(U_exp, dtype=np.float64),
        sigma_id=np.array(sigma_id, dtype=np.float64).reshape(-1),
        sigma_exp=np.array(sigma_exp, dtype=np.float64).reshape(-1),
        topology=np.array(topology, dtype=np.int64).reshape(-1, 3),
        landmark_indices=np.array(landmark_indices, dtype=np.int64).reshape(-1),
    )
    validate_basis(basis)
    return basis


def _check_orthonormal(U, name):
    gram = U.T @ U
    err = np.abs(gram - np.eye(U.shape[1])).max() if U.shape[1] else 0.0
    if err > ORTHO_TOL:
        raise ModelError(f"non-orthonormal {name}: max |U^T U - I| = {err:.3g}")


def validate_basis(basis):
    n3 = basis.mean_id.size
    if n3 == 0 or n3 % 3:
        raise ModelError("dimension mismatch: mean length must be a positive multiple of 3")
    if basis.mean_exp.size != n3:
        raise ModelError("dimension mismatch: mean_id and mean_exp differ in length")
    for name in ("U_id", "U_exp"):
        U = getattr(basis, name)
        if U.ndim != 2 or U.shape[0] != n3:
            raise ModelError(f"dimension mismatch: {name} must have {n3} rows")
        if U.shape[1] > n3:
            raise ModelError(f"dimension mismatch: {name} has more columns than rows")
    if basis.sigma_id.size != basis.n_id or basis.sigma_exp.size != basis.n_exp:
        raise ModelError("dimension mismatch: sigma length differs from basis width")
    if np.any(basis.sigma_id <= 0) or np.any(basis.sigma_exp <= 0):
        raise ModelError("sigma entries must be positive")
    arrays = (basis.mean_id, basis.mean_exp, basis.U_id, basis.U_exp)
    if not all(np.all(np.isfinite(a)) for a in arrays):
        raise ModelError("non-finite values in model")
    _check_orthonormal(basis.U_id, "U_id")
    _check_orthonormal(basis.U_exp, "U_exp")
    n = basis.n_vertices
    if basis.topology.size and (basis.topology.min() < 0 or basis.topology.max() >= n):
        raise ModelError("topology index out of range")
    if basis.landmark_indices.size != NUM_LANDMARKS:
        raise ModelError(f"expected {NUM_LANDMARKS} landmark indices, "
                         f"got {basis.landmark_indices.size}")
    if basis.landmark_indices.min() < 0 or basis.landmark_indices.max() >= n:
        raise ModelError("landmark index out of range")


def save_model(basis, path):
    header = {
        "format": "fmm",
        "version": 1,
        "n_vertices": int(basis.n_vertices),
        "n_id": int(basis.n_id),
        "n_exp": int(basis.n_exp),
        "topology": basis.topology.tolist(),
        "landmark_indices": basis.landmark_indices.tolist(),
        "blobs": ["mean_id", "mean_exp", "U_id", "U_exp", "sigma_id", "sigma_exp"],
    }
    # bases go column-major, i.e. one principal component after another
    write_container(path, MAGIC, header, [
        basis.mean_id, basis.mean_exp,
        basis.U_id.T, basis.U_exp.T,
        basis.sigma_id, basis.sigma_exp,
    ])


def load_model(path):
    """Read and validate a ``.fmm`` model file."""
    try:
        header, payload = read_container(path, MAGIC)
    except ContainerError as exc:
        raise ModelError(str(exc)) from None
    try:
        n = int(header["n_vertices"])
        n_i = int(header["n_id"])
        n_e = int(header["n_exp"])
        topology = header["topology"]
        landmarks = header["landmark_indices"]
    except (KeyError, TypeError, ValueError) as exc:
        raise ModelError(f"corrupt header: missing field {exc}") from None
    if n <= 0 or n_i < 0 or n_e < 0:
        raise ModelError("dimension mismatch: non-positive declared dimensions")
    reader = BlobReader(payload)
    try:
        mean_id = reader.take(3 * n)
        mean_exp = reader.take(3 * n)
        U_id = reader.take(3 * n * n_i).reshape(n_i, 3 * n).T
        U_exp = reader.take(3 * n * n_e).reshape(n_e, 3 * n).T
        sigma_id = reader.take(n_i)
        sigma_exp = reader.take(n_e)
        reader.finish()
    except ContainerError as exc:
        raise ModelError(str(exc)) from None
    return make_basis(mean_id, mean_exp, U_id, U_exp, sigma_id, sigma_exp,
                      np.array(topology, dtype=np.int64).reshape(-1, 3), landmarks)


def _check_params(basis, params):
    if np.shape(params.identity) != (basis.n_id,) or np.shape(params.expression) != (basis.n_exp,):
        raise ModelError(
            f"dimension mismatch: expected identity ({basis.n_id},) and expression "
            f"({basis.n_exp},), got {np.shape(params.identity)} and {np.shape(params.expression)}")


def synthesize_shape(basis, params):
    """Evaluate the linear model: mean + U_id s_id + U_exp s_exp, reshaped to (N, 3)."""
    _check_params(basis, params)
    x = basis.mean_shape + basis.U_id @ params.identity + basis.U_exp @ params.expression
    return Mesh(vertices=x.reshape(-1, 3), topology=basis.topology)


def normalized_mean_face(basis):
    mean = basis.mean_shape.reshape(-1, 3)
    lo = mean.min(axis=0)
    hi = mean.max(axis=0)
    span = hi - lo
    if np.any(span <= 0):
        raise ModelError("degenerate axis: mean shape has zero range along an axis")
    return NormalizedMeanFace(coords=(mean - lo) / span)
