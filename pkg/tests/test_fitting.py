import numpy as np
import pytest

from facereenact.camera import DegenerateLandmarksError, Landmarks2D, SopCamera, project
from facereenact.fitting import (BoxConstraints, EnergyWeights, energy_terms, fit_video,
                                 landmark_term, landmark_vertices, prior_term,
                                 reprojection_rmse, smoothness_term, total_energy)
from facereenact.morphable_model import ShapeParams, synthesize_shape
from facereenact.synthetic import random_cameras, random_expressions, random_identity


def synth_track(basis, T, seed, noise=0.0):
    rng = np.random.default_rng(seed)
    sid = random_identity(basis, rng)
    sexp = random_expressions(basis, T, rng)
    cams = random_cameras(T, 256, rng)
    lms = [project(c, landmark_vertices(basis, sid, e)) for c, e in zip(cams, sexp)]
    if noise:
        lms = [p + rng.normal(scale=noise, size=p.shape) for p in lms]
    return sid, sexp, cams, [Landmarks2D(p) for p in lms]


def test_landmark_term_exact_and_offset(basis):
    cam = SopCamera([0.1, 0.2, 0.0], [128, 128, 0], 90.0)
    sid, sexp = np.zeros(30), np.zeros((1, 20))
    pts = project(cam, landmark_vertices(basis, sid, sexp[0]))
    assert landmark_term(basis, [cam], sid, sexp, [pts]) == 0.0
    pts[17] += [3.0, 4.0]
    assert landmark_term(basis, [cam], sid, sexp, [pts]) == pytest.approx(25 / 68, rel=1e-12)


def test_landmark_term_double_loop_oracle(basis):
    sid, sexp, cams, lms = synth_track(basis, 4, 1, noise=2.0)
    total = 0.0
    for t in range(4):
        verts = synthesize_shape(basis, ShapeParams(sid, sexp[t])).vertices
        R = cams[t].matrix()
        for k, vi in enumerate(basis.landmark_indices):
            v = verts[vi]
            px = cams[t].scale * (R[0, 0] * v[0] + R[0, 1] * v[1] + R[0, 2] * v[2]) + cams[t].translation[0]
            py = cams[t].scale * (R[1, 0] * v[0] + R[1, 1] * v[1] + R[1, 2] * v[2]) + cams[t].translation[1]
            total += (px - lms[t].points[k, 0]) ** 2 + (py - lms[t].points[k, 1]) ** 2
    oracle = total / (68 * 4)
    assert landmark_term(basis, cams, sid, sexp, lms) == pytest.approx(oracle, rel=1e-10)


def test_prior_term(basis):
    assert prior_term(np.zeros(30), np.zeros((3, 20)), basis.sigma_id, basis.sigma_exp) == 0
    assert prior_term(basis.sigma_id, np.zeros((3, 20)), basis.sigma_id,
                      basis.sigma_exp) == pytest.approx(30, rel=1e-14)
    rng = np.random.default_rng(2)
    sid, sexp = rng.normal(size=30), rng.normal(size=(5, 20))
    oracle = sum((sid[j] / basis.sigma_id[j]) ** 2 for j in range(30))
    oracle += sum((sexp[t, j] / basis.sigma_exp[j]) ** 2 for t in range(5) for j in range(20)) / 5
    assert prior_term(sid, sexp, basis.sigma_id, basis.sigma_exp) == pytest.approx(oracle, rel=1e-12)


def test_smoothness_term():
    assert smoothness_term(np.ones((6, 4))) == 0
    assert smoothness_term(np.arange(8)[:, None] * np.array([[0.3, -1.0]])) == pytest.approx(0, abs=1e-24)
    assert smoothness_term(np.array([[0.0], [0.0], [1.0]])) == 1.0
    assert smoothness_term(np.array([[5.0], [1.0]])) == 0.0


def test_weights_validation():
    with pytest.raises(ValueError):
        EnergyWeights(0, 0, 0)
    with pytest.raises(ValueError):
        EnergyWeights(-1, 1, 1)
    with pytest.raises(ValueError):
        BoxConstraints(0, 1)


def test_fit_invariants(small_basis):
    b = small_basis
    _, _, _, lms = synth_track(b, 12, 4, noise=1.0)
    w = EnergyWeights(1.0, 0.05, 0.5)
    box = BoxConstraints(1.0, 1.0)
    fit = fit_video(b, lms, w, box)
    assert fit.identity.shape == (b.n_id,)
    assert fit.expressions.shape == (12, b.n_exp)
    assert np.all(np.abs(fit.identity) <= box.k_id * b.sigma_id)
    assert np.all(np.abs(fit.expressions) <= box.k_exp * b.sigma_exp)
    terms = energy_terms(b, fit.cameras, fit.identity, fit.expressions, lms)
    assert fit.final_energy == pytest.approx(total_energy(w, terms), abs=1e-8)
    np.testing.assert_allclose(fit.per_term_energy, terms, rtol=1e-12)
    assert all(b2 <= a for a, b2 in zip(fit.energy_trace, fit.energy_trace[1:]))


def test_single_frame_has_no_smoothness(small_basis):
    b = small_basis
    rng = np.random.default_rng(9)
    sid = random_identity(b, rng)
    cam = random_cameras(1, 256, rng)[0]
    lm = Landmarks2D(project(cam, landmark_vertices(b, sid, np.zeros(b.n_exp))))
    fit = fit_video(b, [lm], EnergyWeights(1, 0.01, 1.0))
    assert fit.per_term_energy[2] == 0.0
    assert fit.n_frames == 1


def test_more_smoothing_never_raises_smoothness(small_basis):
    _, _, _, lms = synth_track(small_basis, 15, 11, noise=1.5)
    lo = fit_video(small_basis, lms, EnergyWeights(1, 0.05, 0.5))
    hi = fit_video(small_basis, lms, EnergyWeights(1, 0.05, 5.0))
    assert hi.per_term_energy[2] <= lo.per_term_energy[2] * (1 + 1e-9)


def test_degenerate_frame_rejected(small_basis):
    _, _, _, lms = synth_track(small_basis, 3, 2)
    t = np.linspace(0, 10, 68)
    lms[1] = Landmarks2D(np.stack([t, t], 1))
    with pytest.raises(DegenerateLandmarksError):
        fit_video(small_basis, lms)


@pytest.mark.slow
def test_noisy_fit_rmse_over_seeds(basis):
    """sigma = 0.5 px landmark noise: per-coordinate RMSE stays below 0.6 px."""
    w = EnergyWeights(1.0, 1e-3, 1e-3)
    for seed in range(10):
        _, _, _, lms = synth_track(basis, 30, 100 + seed, noise=0.5)
        fit = fit_video(basis, lms, w)
        assert reprojection_rmse(basis, fit, lms) <= 0.6
        tr = fit.energy_trace
        assert all(b2 <= a for a, b2 in zip(tr, tr[1:]))
