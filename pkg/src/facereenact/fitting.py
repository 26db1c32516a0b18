"""Video-level 3DMM fitting to 68-landmark tracks.

Energy over one shared identity vector, per-frame expressions and per-frame
SOP cameras::

    E = w_l * E_l + w_pr * E_pr + w_sm * E_sm

    E_l  = 1/(68 T) sum_t sum_k || project(cam_t, vertex_k) - l_tk ||^2
    E_pr = sum_j (id_j / sigma_id_j)^2 + 1/T sum_t sum_j (exp_tj / sigma_exp_j)^2
    E_sm = sum_t || exp_{t+1} - 2 exp_t + exp_{t-1} ||^2

With cameras fixed, E is a linear least-squares problem in the shape
coefficients; it is solved under the box |coef_j| <= k * sigma_j. Cameras are
then refit frame by frame. No step that raises E is ever accepted.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .boxlls import solve_box_lls
from .camera import (Landmarks2D, apply_pose_delta, estimate_pose, pose_jacobian, project,
                     refine_pose, reprojection_sse)
from .morphable_model import ModelError

log = logging.getLogger(__name__)

NUM_LANDMARKS = 68
# energies below this fraction of the starting energy are round-off
FLOOR = 1e-20


@dataclass(frozen=True)
class EnergyWeights:
    w_l: float = 1.0
    w_pr: float = 0.05
    w_sm: float = 0.5

    def __post_init__(self):
        ws = (self.w_l, self.w_pr, self.w_sm)
        if any(w < 0 for w in ws):
            raise ValueError("energy weights must be non-negative")
        if not any(w > 0 for w in ws):
            raise ValueError("energy weights must not all be zero")


@dataclass(frozen=True)
class BoxConstraints:
    k_id: float = 3.0
    k_exp: float = 3.0

    def __post_init__(self):
        if not (self.k_id > 0 and self.k_exp > 0):
            raise ValueError("box half-widths must be positive")

    def bounds(self, basis, T):
        lo_id = -self.k_id * basis.sigma_id
        lo_exp = np.tile(-self.k_exp * basis.sigma_exp, T)
        lower = np.concatenate([lo_id, lo_exp])
        return lower, -lower


@dataclass(eq=False)
class FitResult:
    identity: np.ndarray
    expressions: np.ndarray          # (T, n_e)
    cameras: list
    final_energy: float | None = None
    per_term_energy: tuple | None = None   # (E_l, E_pr, E_sm)
    energy_trace: list = field(default_factory=list)
    weights: EnergyWeights | None = None

    @property
    def n_frames(self):
        return len(self.cameras)


def _landmark_blocks(basis):
    rows = basis.landmark_rows()
    mean = basis.mean_shape[rows]                          # (68, 3)
    L_id = basis.U_id[rows.reshape(-1)].reshape(NUM_LANDMARKS, 3, basis.n_id)
    L_exp = basis.U_exp[rows.reshape(-1)].reshape(NUM_LANDMARKS, 3, basis.n_exp)
    return mean, L_id, L_exp


def landmark_vertices(basis, identity, expression):
    """The 68 landmark vertices (68, 3) of the shape with the given coefficients."""
    rows = basis.landmark_rows().reshape(-1)
    x = basis.mean_shape[rows] + basis.U_id[rows] @ identity + basis.U_exp[rows] @ expression
    return x.reshape(NUM_LANDMARKS, 3)


def _points(lm):
    return lm.points if isinstance(lm, Landmarks2D) else np.asarray(lm, dtype=np.float64)


def _frame_sse(basis, cam, identity, expression, lm, weights=None):
    r = project(cam, landmark_vertices(basis, identity, expression)) - _points(lm)
    sq = np.sum(r * r, axis=1)
    return float(np.sum(sq if weights is None else weights * sq))


def landmark_term(basis, cameras, identity, expressions, landmark_seq):
    T = len(cameras)
    if len(landmark_seq) != T or np.shape(expressions)[0] != T:
        raise ModelError("dimension mismatch: cameras, expressions and landmarks differ in length")
    total = sum(_frame_sse(basis, cameras[t], identity, expressions[t], landmark_seq[t])
                for t in range(T))
    return total / (NUM_LANDMARKS * T)


def prior_term(identity, expressions, sigma_id, sigma_exp):
    expressions = np.atleast_2d(expressions)
    T = expressions.shape[0]
    e_id = float(np.sum((np.asarray(identity) / sigma_id) ** 2))
    e_exp = float(np.sum((expressions / sigma_exp) ** 2)) / T if T else 0.0
    return e_id + e_exp


def smoothness_term(expressions):
    e = np.atleast_2d(np.asarray(expressions, dtype=np.float64))
    if e.shape[0] < 3:
        return 0.0
    d2 = e[2:] - 2.0 * e[1:-1] + e[:-2]
    return float(np.sum(d2 * d2))


def energy_terms(basis, cameras, identity, expressions, landmark_seq):
    return (landmark_term(basis, cameras, identity, expressions, landmark_seq),
            prior_term(identity, expressions, basis.sigma_id, basis.sigma_exp),
            smoothness_term(expressions))


def total_energy(weights, terms):
    return weights.w_l * terms[0] + weights.w_pr * terms[1] + weights.w_sm * terms[2]


def build_shape_system(basis, cameras, landmark_seq, weights, confidence=None):
    """Sparse (A, b) with ||A x - b||^2 equal to the energy at fixed cameras.

    Unknowns are ordered [identity (n_i), expression frame 0 (n_e), ..., frame T-1].
    """
    T = len(cameras)
    n_i, n_e = basis.n_id, basis.n_exp
    mean, L_id, L_exp = _landmark_blocks(basis)
    row_w = np.sqrt(weights.w_l / (NUM_LANDMARKS * T))
    id_blocks, exp_blocks, rhs = [], [], []
    for t, cam in enumerate(cameras):
        P = cam.scale * cam.matrix()[:2]                  # (2, 3)
        w = np.full(NUM_LANDMARKS, row_w)
        if confidence is not None:
            w = w * np.sqrt(confidence[t])
        a_id = np.einsum("ij,kjn->kin", P, L_id) * w[:, None, None]
        a_exp = np.einsum("ij,kjn->kin", P, L_exp) * w[:, None, None]
        target = (_points(landmark_seq[t]) - cam.translation[:2] - mean @ P.T) * w[:, None]
        id_blocks.append(a_id.reshape(-1, n_i))
        exp_blocks.append(sp.csr_matrix(a_exp.reshape(-1, n_e)))
        rhs.append(target.reshape(-1))
    blocks = [[sp.csr_matrix(np.vstack(id_blocks)), sp.block_diag(exp_blocks, format="csr")]]
    rhs_all = [np.concatenate(rhs)]
    if weights.w_pr > 0:
        blocks.append([sp.diags(np.sqrt(weights.w_pr) / basis.sigma_id), None])
        blocks.append([None, sp.diags(np.tile(np.sqrt(weights.w_pr / T) / basis.sigma_exp, T))])
        rhs_all.append(np.zeros(n_i + T * n_e))
    if weights.w_sm > 0 and T >= 3:
        D2 = sp.diags([1.0, -2.0, 1.0], [0, 1, 2], shape=(T - 2, T))
        blocks.append([None, np.sqrt(weights.w_sm) * sp.kron(D2, sp.identity(n_e))])
        rhs_all.append(np.zeros((T - 2) * n_e))
    # bmat needs the column widths of every block row
    for row in blocks:
        if row[0] is None:
            row[0] = sp.csr_matrix((row[1].shape[0], n_i))
        if row[1] is None:
            row[1] = sp.csr_matrix((row[0].shape[0], T * n_e))
    A = sp.bmat(blocks, format="csr")
    return A, np.concatenate(rhs_all)


def _split(x, basis, T):
    return x[:basis.n_id].copy(), x[basis.n_id:].reshape(T, basis.n_exp).copy()


def _joint_system(basis, cameras, identity, expressions, landmark_seq, weights, conf, damping):
    """Shape system augmented with linearised camera increments (6 per frame).

    Camera columns carry Levenberg-Marquardt rows sqrt(damping) * diag(|J_j|).
    """
    T = len(cameras)
    A_s, b = build_shape_system(basis, cameras, landmark_seq, weights, conf)
    n_data = NUM_LANDMARKS * 2 * T
    row_w = np.sqrt(weights.w_l / (NUM_LANDMARKS * T))
    jac = []
    for t, cam in enumerate(cameras):
        w = np.full(NUM_LANDMARKS, row_w)
        if conf is not None:
            w = w * np.sqrt(conf[t])
        X = landmark_vertices(basis, identity, expressions[t])
        jac.append((pose_jacobian(cam, X) * w[:, None, None]).reshape(-1, 6))
    J = sp.block_diag(jac, format="csr")
    colnorm = np.sqrt(np.asarray(J.multiply(J).sum(axis=0)).reshape(-1)) + 1e-12
    zeros_rest = sp.csr_matrix((A_s.shape[0] - n_data, 6 * T))
    A = sp.bmat([
        [A_s[:n_data], J],
        [A_s[n_data:], zeros_rest],
        [sp.csr_matrix((6 * T, A_s.shape[1])), sp.diags(np.sqrt(damping) * colnorm)],
    ], format="csr")
    return A, np.concatenate([b, np.zeros(6 * T)])


def fit_video(basis, landmark_seq, weights=None, box=None, max_outer=20, rel_tol=1e-6,
              use_confidence=False):
    """Fit identity, per-frame expressions and cameras to a landmark track.

    Cameras start from a closed-form pose on the mean shape. The first round
    solves the box-constrained shape problem at fixed cameras and refits each
    camera. Later rounds take a damped joint step (shape plus linearised
    camera increments, again a box-constrained linear least-squares problem)
    followed by the per-frame camera refit. Rounds stop when the relative
    energy decrease drops below ``rel_tol`` or after ``max_outer`` rounds; a
    step that would raise the energy is never accepted.
    """
    weights = weights or EnergyWeights()
    box = box or BoxConstraints()
    landmark_seq = [lm if isinstance(lm, Landmarks2D) else Landmarks2D(lm) for lm in landmark_seq]
    T = len(landmark_seq)
    if T < 1:
        raise ValueError("need at least one frame")
    conf = None
    if use_confidence:
        conf = np.stack([lm.confidence if lm.confidence is not None else np.ones(NUM_LANDMARKS)
                         for lm in landmark_seq])

    mean_lm = basis.mean_landmarks()
    cameras = [estimate_pose(lm, mean_lm) for lm in landmark_seq]
    identity = np.zeros(basis.n_id)
    expressions = np.zeros((T, basis.n_exp))
    lower, upper = box.bounds(basis, T)

    def energy(cams, ident, exps):
        if conf is None:
            terms = energy_terms(basis, cams, ident, exps, landmark_seq)
        else:
            el = sum(_frame_sse(basis, cams[t], ident, exps[t], landmark_seq[t], conf[t])
                     for t in range(T)) / (NUM_LANDMARKS * T)
            terms = (el, prior_term(ident, exps, basis.sigma_id, basis.sigma_exp),
                     smoothness_term(exps))
        return total_energy(weights, terms), terms

    def refit_cameras(cams, ident, exps):
        out = list(cams)
        for t in range(T):
            X = landmark_vertices(basis, ident, exps[t])
            pts = landmark_seq[t].points
            w = None if conf is None else conf[t]
            old = reprojection_sse(cams[t], X, pts, w)
            cand = estimate_pose(pts, X)
            if reprojection_sse(cand, X, pts, w) > old:
                cand = cams[t]
            cand = refine_pose(cand, X, pts, weights=w)
            if reprojection_sse(cand, X, pts, w) < old:
                out[t] = cand
        return out

    current, terms = energy(cameras, identity, expressions)
    trace = [current]
    damping = 1e-3
    n_shape = basis.n_id + T * basis.n_exp
    for it in range(max_outer):
        start = current
        if it == 0:
            A, b = build_shape_system(basis, cameras, landmark_seq, weights, conf)
            x = solve_box_lls(A, b, lower, upper)
            new_id, new_exp = _split(x, basis, T)
            e_new, t_new = energy(cameras, new_id, new_exp)
            if e_new <= current:
                identity, expressions, current, terms = new_id, new_exp, e_new, t_new
        else:
            lo = np.concatenate([lower, np.full(6 * T, -np.inf)])
            up = np.concatenate([upper, np.full(6 * T, np.inf)])
            for _ in range(8):
                A, b = _joint_system(basis, cameras, identity, expressions, landmark_seq,
                                     weights, conf, damping)
                x = solve_box_lls(A, b, lo, up)
                new_id, new_exp = _split(x[:n_shape], basis, T)
                deltas = x[n_shape:].reshape(T, 6)
                new_cams = [apply_pose_delta(c, d) for c, d in zip(cameras, deltas)]
                if all(c is not None for c in new_cams):
                    e_new, t_new = energy(new_cams, new_id, new_exp)
                    if e_new < current:
                        identity, expressions, cameras = new_id, new_exp, new_cams
                        current, terms = e_new, t_new
                        damping = max(damping / 10, 1e-9)
                        break
                damping *= 10

        new_cams = refit_cameras(cameras, identity, expressions)
        e_new, t_new = energy(new_cams, identity, expressions)
        if e_new <= current:
            cameras, current, terms = new_cams, e_new, t_new
        trace.append(current)
        log.debug("round %d: energy %.6e", it, current)
        if start - current <= rel_tol * start or current <= FLOOR * trace[0]:
            break

    return FitResult(identity=identity, expressions=expressions, cameras=cameras,
                     final_energy=current, per_term_energy=tuple(terms),
                     energy_trace=trace, weights=weights)


def reprojection_rmse(basis, fit, landmark_seq):
    """Root-mean-square landmark residual in pixels, over all x and y coordinates.

    Per coordinate, so a perfect fit to landmarks with isotropic noise of
    standard deviation s gives a value just below s.
    """
    e_l = landmark_term(basis, fit.cameras, fit.identity, fit.expressions, landmark_seq)
    return float(np.sqrt(e_l / 2.0))
