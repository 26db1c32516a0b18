"""Acceptance criteria 1-9, each at its stated tolerance.

Every test prints one ``criterion N: PASS/FAIL`` line; the lines are repeated
in the terminal summary.
"""
import time

import numpy as np
import pytest

from facereenact.autodiff import Tensor
from facereenact.autodiff.gradcheck import check_op, overall_error, sampled_grads
from facereenact.camera import Landmarks2D, project
from facereenact.fitting import EnergyWeights, fit_video, landmark_vertices
from facereenact.gan import (LossWeights, Networks, PersonClip, TrainConfig, embed_average,
                             finetune_init, finetune_train, generate_frame, hinge_losses,
                             matching_loss, realism_score, train_init_stage)
from facereenact.gan.losses import generator_total
from facereenact.gan.networks import ImageDiscriminator
from facereenact.gan.training import discriminator_loss, generator_parts, rollout, synthesize
from facereenact.metrics import evaluate_sequence, mask_iou, pixel_distance
from facereenact.raster import NmfcRenderer, rasterize_points, render_nmfc_sequence
from facereenact.reenactment import TransferSpec, transfer_params
from facereenact.synthdata import make_person
from facereenact.synthetic import random_cameras, random_expressions, random_identity

from raster_oracle import brute_force
from test_autodiff import OP_CASES
from test_metrics import loop_distance, loop_iou
from test_raster import random_scene


def test_criterion_1_fitting_inverse_crime(basis, acceptance):
    rng = np.random.default_rng(2024)
    T = 30
    identity = random_identity(basis, rng)
    expressions = random_expressions(basis, T, rng)
    cams = random_cameras(T, 256, rng)
    lms = [Landmarks2D(project(c, landmark_vertices(basis, identity, e)))
           for e, c in zip(expressions, cams)]
    start = time.perf_counter()
    # zero noise: the prior and smoothness terms would only bias the optimum
    fit = fit_video(basis, lms, EnergyWeights(1.0, 0.0, 0.0))
    elapsed = time.perf_counter() - start
    err = max(np.max(np.abs(fit.identity - identity) / basis.sigma_id),
              np.max(np.abs(fit.expressions - expressions) / basis.sigma_exp))
    e_l = fit.per_term_energy[0]
    monotone = bool(np.all(np.diff(fit.energy_trace) <= 0))
    ok = err < 1e-3 and e_l < 1e-6 and monotone and elapsed < 10
    acceptance(1, ok, f"max coefficient error {err:.2e} sigma, landmark term {e_l:.2e}, "
                      f"trace non-increasing {monotone}, {elapsed:.1f} s")
    assert ok


def test_criterion_2_rasterizer_oracle(acceptance):
    rng = np.random.default_rng(7)
    mismatches = 0
    for _ in range(500):
        pts, z, tris = random_scene(rng, int(rng.integers(1, 201)))
        buf = rasterize_points(pts, z, tris, 64, 64)
        ids, depth = brute_force(pts, z, tris, 64, 64)
        mismatches += not (np.array_equal(buf.ids, ids) and np.array_equal(buf.depth, depth))
    ok = mismatches == 0
    acceptance(2, ok, f"{500 - mismatches}/500 random scenes bit-exact")
    assert ok


def test_criterion_3_realtime_geometry(basis, acceptance):
    rng = np.random.default_rng(3)
    identity = random_identity(basis, rng)
    expressions = random_expressions(basis, 200, rng)
    cams = random_cameras(200, 256, rng)
    renderer = NmfcRenderer(basis)
    renderer.render(identity, expressions[0], cams[0], 256, 256)   # compile outside the clock
    start = time.perf_counter()
    for e, c in zip(expressions, cams):
        renderer.render(identity, e, c, 256, 256)
    fps = 200 / (time.perf_counter() - start)
    ok = fps >= 20
    acceptance(3, ok, f"{fps:.0f} fps at 256x256 over 200 frames ({basis.n_vertices} vertices)")
    assert ok


def test_criterion_4_conversion_identity(acceptance):
    cfg = TrainConfig()
    nets = Networks(cfg, n_ids=3)
    rng = np.random.default_rng(4)
    person, h_new = finetune_init(nets, rng.uniform(-1, 1, (5, 3, 32, 32)))
    ref = ImageDiscriminator(np.random.default_rng(0), 3, cfg.ch, cfg.n_f)
    ref.load_state_dict(nets.DI.state_dict())
    ref.W.data[2] = h_new
    h = Tensor(h_new)
    exact = 0
    for _ in range(100):
        x, p = rng.normal(size=(1, 9, 32, 32)), rng.uniform(-1, 1, (1, 6, 32, 32))
        a, b = generate_frame(nets.G, x, p, h), generate_frame(person.G, x, p)
        f, n = rng.uniform(-1, 1, (1, 3, 32, 32)), rng.uniform(0, 1, (1, 3, 32, 32))
        exact += (np.array_equal(a[0].data, b[0].data) and np.array_equal(a[1].data, b[1].data)
                  and np.array_equal(realism_score(person.DI, f, n).data,
                                     realism_score(ref, f, n, 2).data))
    ok = exact == 100
    acceptance(4, ok, f"{exact}/100 random inputs bit-exact for generator and discriminator")
    assert ok


def test_criterion_5_gradient_integrity(acceptance):
    op_err = {name: check_op(fn, inputs, h=1e-5) for name, (fn, inputs) in OP_CASES.items()}
    # 8x8 toy shapes keep the count of relu-type inputs small, so most stencils avoid kinks
    cfg = TrainConfig(resolution=8, ch=2, n_f=4, K=4, M=2, mouth_patch=4, block=4, radius=1)
    nets = Networks(cfg, n_ids=2)
    r = np.random.default_rng(5)
    clip = PersonClip(np.tanh(r.normal(size=(4, 3, 8, 8))), r.uniform(size=(4, 3, 8, 8)),
                      (r.uniform(size=(4, 1, 8, 8)) > 0.5) * 1.0,
                      np.tile(r.uniform(2, 6, (1, 68, 2)), (4, 1, 1)))
    clip.compute_flows(cfg.block, cfg.radius)
    emb = clip.frames[:2]

    def l_g():
        fakes, masks = rollout(nets.G, clip.nmfc, embed_average(nets.E, emb))
        return generator_total(generator_parts(nets, clip, fakes, masks, 1), cfg.weights)
    g_samples, g_skip = sampled_grads(l_g, {**nets.g_params(), **nets.e_params()}, h=1e-5,
                                      per_param=4)
    fakes = [Tensor(f.data) for f in rollout(nets.G, clip.nmfc, embed_average(nets.E, emb))[0]]
    d_samples, d_skip = sampled_grads(lambda: discriminator_loss(nets, clip, fakes, 1),
                                      nets.d_params(), h=1e-5, per_param=4)
    g_err, d_err = overall_error(g_samples), overall_error(d_samples)
    worst_op = max(op_err.values())
    covered = all(len(a) > 0 for a, _ in [*g_samples.values(), *d_samples.values()])
    ok = worst_op < 1e-4 and g_err < 1e-4 and d_err < 1e-4 and covered
    acceptance(5, ok, f"worst op error {worst_op:.1e} over {len(op_err)} ops; L_G {g_err:.1e} "
                      f"over {len(g_samples)} tensors, L_D {d_err:.1e} over {len(d_samples)} "
                      f"tensors, every tensor checked {covered} "
                      f"({g_skip + d_skip} stencils crossing a kink redrawn)")
    assert ok


def test_criterion_6_loss_identities(acceptance):
    h = np.array([0.3, -1.2, 2.0, 0.7])
    orth = np.array([1.2, 0.3, 0.0, 0.0])
    extremes = [matching_loss(h, 2.5 * h).item(), matching_loss(h, orth).item(),
                matching_loss(h, -0.4 * h).item()]
    ext_ok = np.allclose(extremes, [0, 1, 2], atol=1e-15, rtol=0)
    hinge = hinge_losses(Tensor(np.ones(5)), Tensor(-np.ones(5)))[0].item()
    cfg = TrainConfig(resolution=16, ch=2, n_f=4, K=4, M=2, mouth_patch=8, radius=2)
    nets = Networks(cfg, n_ids=2)
    r = np.random.default_rng(6)
    clip = PersonClip(np.tanh(r.normal(size=(4, 3, 16, 16))), r.uniform(size=(4, 3, 16, 16)),
                      (r.uniform(size=(4, 1, 16, 16)) > 0.5) * 1.0,
                      np.tile(r.uniform(5, 11, (1, 68, 2)), (4, 1, 1))).compute_flows(8, 2)
    fakes, masks = rollout(nets.G, clip.nmfc, embed_average(nets.E, clip.frames[:2]))
    parts = generator_parts(nets, clip, fakes, masks, 0)
    total = generator_total(parts, LossWeights()).item()
    manual = parts["adv"].item() + 10 * (parts["vgg"].item() + parts["feat"].item()
                                         + parts["mask"].item())
    ok = ext_ok and hinge == 0 and abs(total - manual) < 1e-10
    acceptance(6, ok, f"matching extremes {np.round(extremes, 15).tolist()}, hinge {hinge}, "
                      f"L_G decomposition gap {abs(total - manual):.1e}")
    assert ok


@pytest.mark.slow
def test_criterion_7_few_shot_finetuning(basis, acceptance):
    init_clips = [PersonClip.from_dataset(make_person(basis, 20, 32, s)[0]) for s in (1, 2)]
    nets, _ = train_init_stage(init_clips, TrainConfig(steps=200, seed=0))
    ds, _ = make_person(basis, 60, 32, 7)
    clip = PersonClip.from_dataset(ds)
    train, test = clip.slice(0, 50), clip.slice(50, 60)

    def held_out(person):
        frames, _ = synthesize(person, test.nmfc)
        return evaluate_sequence(frames, ds.frames[50:], ds.masks[50:]).masked_avg_pixel_dist

    start = time.perf_counter()
    person, _ = finetune_init(nets, train.frames)
    before = held_out(person)
    history = finetune_train(person, train, 300)
    after = held_out(person)
    elapsed = time.perf_counter() - start
    replay, _ = finetune_init(nets, train.frames)
    prefix = finetune_train(replay, clip.slice(0, 50), 20)
    deterministic = prefix == history[:20]
    ok = after < 0.8 * before and deterministic and elapsed < 300
    acceptance(7, ok, f"held-out masked distance {before:.2f} -> {after:.2f} "
                      f"(ratio {after / before:.2f}), deterministic {deterministic}, "
                      f"{elapsed:.0f} s")
    assert ok


def test_criterion_8_reenactment_invariants(small_basis, acceptance):
    from facereenact.fitting import FitResult
    rng = np.random.default_rng(8)
    src = FitResult(random_identity(small_basis, rng), random_expressions(small_basis, 12, rng),
                    random_cameras(12, 64, rng))
    self_out = transfer_params(TransferSpec(src, src.identity))
    a = render_nmfc_sequence(small_basis, src, 64, 64)
    b = render_nmfc_sequence(small_basis, self_out, 64, 64)
    self_ok = all(np.array_equal(x.pixels, y.pixels) for x, y in zip(a, b))
    target = random_identity(small_basis, rng)
    cross = transfer_params(TransferSpec(src, target))
    cross_ok = (np.array_equal(cross.identity, target)
                and np.array_equal(cross.expressions, src.expressions)
                and all(np.array_equal(c.as_vector(), d.as_vector())
                        for c, d in zip(cross.cameras, src.cameras)))
    ok = self_ok and cross_ok
    acceptance(8, ok, f"self-transfer NMFC bit-exact {self_ok}, cross-transfer keeps motion "
                      f"and replaces identity {cross_ok}")
    assert ok


def test_criterion_9_metrics_oracles(acceptance):
    rng = np.random.default_rng(9)
    worst = 0.0
    for _ in range(100):
        h, w = rng.integers(4, 12, 2)
        fake, real = rng.uniform(size=(h, w, 3)), rng.uniform(size=(h, w, 3))
        mask, pred = rng.uniform(size=(h, w)), rng.uniform(size=(h, w))
        mask[0, 0] = 1.0
        worst = max(worst, abs(pixel_distance(fake, real) - loop_distance(fake, real)),
                    abs(pixel_distance(fake, real, mask) - loop_distance(fake, real, mask)),
                    abs(mask_iou(pred, mask) - loop_iou(pred, mask)))
    a = np.zeros((8, 8))
    b = np.zeros((8, 8))
    a[0:4, 0:4] = 1
    b[0:4, 2:6] = 1
    half = mask_iou(a, b)
    ok = worst < 1e-10 and half == 1 / 3
    acceptance(9, ok, f"worst oracle gap {worst:.1e} over 100 pairs, half-overlap IoU {half!r}")
    assert ok
