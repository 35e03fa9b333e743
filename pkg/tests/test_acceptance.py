"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line."""
import hashlib
import math
import time

import numpy as np
import pytest
import torch

from gradcheck import check_gradients
from test_postprocess import dense_poisson_oracle
from outpainting.cli import PROFILES, bundled_city_image, main
from outpainting.dataset import DatasetManifest
from outpainting.network import (Discriminator, discriminator_specs, generator_spec, make_generator,
                                 receptive_field, spatial_trace)
from outpainting.objectives import rmse
from outpainting.outpaint import outpaint_recursive, read_png
from outpainting.postprocess import BlendRequest, blend_region, seamless_blend
from outpainting.preprocess import DEFAULT_GEOMETRY, OutpaintGeometry, build_mask
from outpainting.trainer import (Phase, TrainingSchedule, TrainingState, find_latest_checkpoint, overfit_single_image,
                                 phase_of, train_step)

OVERFIT_ITERATIONS = 400


def state_hash(module):
    h = hashlib.sha256()
    for name, t in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(t.detach().numpy().tobytes())
    return h.hexdigest()


@pytest.mark.slow
def test_criterion_01_single_image_overfit(criterion):
    pixels = read_png(bundled_city_image())
    start = time.perf_counter()
    report = overfit_single_image(pixels, OVERFIT_ITERATIONS, seed=0)
    minutes = (time.perf_counter() - start) / 60
    at10 = report.rmse_at_fraction(0.1)
    ok = report.final_rmse < 25 and report.final_rmse < at10 and minutes <= 45
    criterion(1, ok, f"{OVERFIT_ITERATIONS} iters: rmse {report.baseline_rmse:.2f} (mean fill) -> "
                     f"{at10:.2f} at 10% -> {report.final_rmse:.2f} at 100% (< 25), {minutes:.1f} min")


def test_criterion_02_mask_support(criterion):
    support = int(build_mask(DEFAULT_GEOMETRY).sum())
    expected = DEFAULT_GEOMETRY.m * (DEFAULT_GEOMETRY.m - DEFAULT_GEOMETRY.n)
    criterion(2, support == expected == 8192, f"|supp(M)| = {support}")


def naive_rmse(truth, output, mask):
    total, count = 0.0, 0
    h, w, c = truth.shape
    for i in range(h):
        for j in range(w):
            if mask[i, j]:
                count += 1
                for ch in range(c):
                    total += (float(truth[i, j, ch]) - float(output[i, j, ch])) ** 2
    return math.sqrt(total / count)


def test_criterion_03_rmse_oracle(criterion):
    rng = np.random.default_rng(0)
    mask = build_mask(DEFAULT_GEOMETRY)
    worst = 0.0
    for _ in range(20):
        a = rng.integers(0, 256, (128, 128, 3), dtype=np.uint8)
        b = rng.integers(0, 256, (128, 128, 3), dtype=np.uint8)
        worst = max(worst, abs(rmse(a, b, mask) - naive_rmse(a, b, mask)))
    extreme = rmse(np.zeros((128, 128, 3), np.uint8), np.full((128, 128, 3), 255, np.uint8), mask)
    ok = worst < 1e-9 and abs(extreme - 255 * math.sqrt(3)) < 1e-9 and round(extreme, 2) == 441.67
    criterion(3, ok, f"max |vectorized - naive| = {worst:.2e} over 20 pairs, extreme case {extreme:.2f}")


def test_criterion_04_gradient_check(criterion):
    results = check_gradients(per_loss=34, seed=0)
    worst = max(r[-1] for r in results)
    ok = len(results) >= 100 and worst < 1e-4
    criterion(4, ok, f"{len(results)} sampled parameters, max relative error {worst:.2e}")


def test_criterion_05_architecture_shapes(criterion):
    gen = make_generator(seed=0)
    disc = Discriminator(128, 128, use_local=True)
    with torch.no_grad():
        out = gen(torch.rand(1, 4, 128, 128))
        feats = disc.features(torch.rand(1, 3, 128, 128))
    g, l, _ = discriminator_specs()
    global_trace = [h for h, _ in spatial_trace(g, 128, 128)]
    local_trace = spatial_trace(l, 128, 64)
    ok = (tuple(out.shape) == (1, 3, 128, 128) and global_trace == [64, 32, 16, 8, 4]
          and local_trace == [(64, 32), (32, 16), (16, 8), (8, 4)] and feats.shape[1] == 1536)
    criterion(5, ok, f"generator {tuple(out.shape[1:])}, global 128->{'->'.join(map(str, global_trace))}, "
                     f"local 128x64->{local_trace[-1]}, concat width {feats.shape[1]}")


def rf_oracle(dilations, depth=6):
    # classic recurrence: r_l = r_{l-1} + (effective kernel - 1) * cumulative stride
    layers = [(5, 1, 1), (3, 1, 2), (3, 1, 1)] + [(3, d, 1) for d in dilations]
    r, jump = 1, 1
    for f, eta, s in layers[:depth]:
        r += (eta * (f - 1) + 1 - 1) * jump
        jump *= s
    return r


def test_criterion_06_receptive_field(criterion):
    fields = {d: receptive_field(generator_spec(list(d)))[5] for d in [(1, 1, 1), (1, 2, 4), (2, 4, 8)]}
    oracle = {d: rf_oracle(d) for d in fields}
    ok = (fields == oracle and fields[(2, 4, 8)] == 67 and fields[(1, 1, 1)] == 23
          and fields[(1, 1, 1)] < fields[(1, 2, 4)] < fields[(2, 4, 8)])
    criterion(6, ok, f"layer-6 RF {fields[(1, 1, 1)]} < {fields[(1, 2, 4)]} < {fields[(2, 4, 8)]} px "
                     f"(oracle {list(oracle.values())})")


def test_criterion_07_phase_schedule(criterion):
    p = PROFILES["paper-global"]
    s = TrainingSchedule(p["t1"], p["t2"], p["t3"])
    total = s.total
    boundaries_ok = (phase_of(40949, s) is Phase.P1 and phase_of(40950, s) is Phase.P2
                     and phase_of(45499, s) is Phase.P2 and phase_of(45500, s) is Phase.P3
                     and phase_of(total - 1, s) is Phase.P3)
    split = [round(f * total) for f in (0.18, 0.02, 0.80)]
    ok = boundaries_ok and total == 227500 and split == [s.t1, s.t2, s.t3]
    criterion(7, ok, f"boundaries at {s.t1}/{s.t1 + s.t2}/{total}, 18/2/80 split of {total} = {split}")


def test_criterion_08_recursive_outpainting(criterion):
    gen = make_generator(seed=0)
    img = read_png(bundled_city_image())
    outputs = [outpaint_recursive(gen, img, n, k=32).output for n in range(1, 6)]
    final = outputs[-1]
    preserved = (final[:, 160:288] == img).all() and all(
        (cur[:, 32:-32] == prev).all() for prev, cur in zip(outputs, outputs[1:]))
    ok = final.shape[1] == 448 == 3.5 * 128 and preserved
    criterion(8, ok, f"5 iterations -> width {final.shape[1]} ({final.shape[1] / 128}x), "
                     f"known pixels unchanged: {preserved}")


def test_criterion_09_blend(criterion):
    img = np.random.default_rng(0).integers(0, 256, (128, 128, 3), dtype=np.uint8)
    identity = np.abs(seamless_blend(BlendRequest(img, img, build_mask(DEFAULT_GEOMETRY))).astype(int) - img).max()
    x = np.arange(8, dtype=float)
    src = np.stack([np.tile(20 + 10 * x, (8, 1)), np.tile(200 - 15 * x, (8, 1)).T,
                    np.full((8, 8), 77.0)], axis=-1).astype(np.uint8)
    dst = np.random.default_rng(1).integers(0, 256, (8, 8, 3), dtype=np.uint8)
    mask = build_mask(OutpaintGeometry(8, 4, 2))
    expected = dense_poisson_oracle(src, dst, blend_region(mask))
    oracle_err = np.abs(seamless_blend(BlendRequest(src, dst, mask)) - expected).max()
    ok = identity <= 1 and oracle_err < 0.5
    criterion(9, ok, f"self-blend max deviation {identity} level(s), 8x8 oracle max error {oracle_err:.3f}")


@pytest.mark.slow
def test_criterion_10_determinism(criterion, image_dir, tmp_path):
    root = image_dir(12, (32, 32), seed=5)
    manifest = tmp_path / "manifest.txt"
    assert main(["prepare-data", str(root), "--val-count", "4", "--size", "32", "--out", str(manifest)]) == 0
    assert DatasetManifest.load(manifest).target_size == (32, 32)

    def train(name, *extra):
        assert main(["train", "--profile", "desk", "--manifest", str(manifest),
                     "--out", str(tmp_path / name), *extra]) == 0
        return tmp_path / name

    a, b = train("a"), train("b")
    stop = 237
    train("resumed", "--stop-at", str(stop))
    interrupted_at = find_latest_checkpoint(tmp_path / "resumed").name
    train("resumed")
    log = lambda run: (run / "loss_log.csv").read_bytes()
    ckpt = lambda run: (run / "checkpoint_0000500.pt").read_bytes()
    same_runs = log(a) == log(b) and ckpt(a) == ckpt(b)
    same_resume = log(a) == log(tmp_path / "resumed") and ckpt(a) == ckpt(tmp_path / "resumed")
    rows = log(a).decode().count("\n") - 1
    criterion(10, same_runs and same_resume and rows == 500,
              f"two desk runs identical: {same_runs} ({rows} rows); resume from {interrupted_at} "
              f"identical: {same_resume}")


def test_criterion_11_phase_isolation(criterion):
    batch = list(np.random.default_rng(0).random((2, 128, 128, 3), dtype=np.float32))
    results = {}
    for phase, (t1, t2, t3) in {"P1": (1, 0, 0), "P2": (0, 1, 0), "P3": (0, 0, 1)}.items():
        state = TrainingState.create(TrainingSchedule(t1, t2, t3, batch_size=2), DEFAULT_GEOMETRY, use_local=True)
        before = state_hash(state.generator), state_hash(state.discriminator)
        train_step(state, batch)
        after = state_hash(state.generator), state_hash(state.discriminator)
        results[phase] = (before[0] != after[0], before[1] != after[1])
    ok = results == {"P1": (True, False), "P2": (False, True), "P3": (True, True)}
    criterion(11, ok, "changed (generator, discriminator): " +
              ", ".join(f"{k} {v}" for k, v in results.items()))
