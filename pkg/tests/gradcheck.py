"""Finite-difference check of the three training losses on miniature networks."""
import numpy as np
import torch

from outpainting.network import (CONV, DECONV, FC, HALF, Discriminator, Generator, LayerSpec, NetworkSpec,
                                 init_params)
from outpainting.objectives import disc_loss, gen_loss, mse_loss
from outpainting.preprocess import OutpaintGeometry, assemble_input, build_mask

MINI_GEOMETRY = OutpaintGeometry(8, 4, 2)


def mini_networks(seed=0):
    gen_spec = NetworkSpec("generator", (
        LayerSpec(CONV, 3, 2, 2, 4),
        LayerSpec(DECONV, 4, 1, HALF, 3, "sigmoid"),
    ), in_channels=4)
    g_spec = NetworkSpec("global_disc", (LayerSpec(CONV, 5, 1, 2, 4), LayerSpec(FC, n=6)))
    l_spec = NetworkSpec("local_disc", (LayerSpec(CONV, 5, 1, 2, 4), LayerSpec(FC, n=6)))
    c_spec = NetworkSpec("concatenator", (LayerSpec("CONCAT", activation="none"),
                                          LayerSpec(FC, n=1, activation="sigmoid")), in_channels=18)
    gen = init_params(Generator(gen_spec), seed).double()
    disc = init_params(Discriminator(8, 8, True, specs=(g_spec, l_spec, c_spec)), seed + 1).double()
    return gen, disc


def mini_batch(seed=0, batch=2):
    rng = np.random.default_rng(seed)
    images = rng.random((batch, 8, 8, 3))
    mask = build_mask(MINI_GEOMETRY)
    truth, gen_input = assemble_input(images, mask)
    to_t = lambda a: torch.from_numpy(a.transpose(0, 3, 1, 2).copy())
    return to_t(truth), to_t(gen_input), mask


def loss_functions(gen, disc, truth, gen_input, mask, alpha=0.5):
    def l_mse():
        return mse_loss(gen(gen_input), truth, mask)

    def l_d():
        return disc_loss(disc(truth), disc(gen(gen_input)))

    def l_g():
        fake = gen(gen_input)
        return gen_loss(mse_loss(fake, truth, mask), disc(fake), alpha)

    return {"mse": l_mse, "disc": l_d, "gen": l_g}


def check_gradients(per_loss=50, seed=0, h=1e-6, floor=1e-6):
    """Return a list of (loss, param, index, analytic, numeric, rel_err) tuples.

    Relative error is |a - n| / max(|a|, |n|, floor).
    """
    gen, disc = mini_networks(seed)
    truth, gen_input, mask = mini_batch(seed)
    params = [(f"G.{n}", p) for n, p in gen.named_parameters()] + \
             [(f"D.{n}", p) for n, p in disc.named_parameters()]
    rng = np.random.default_rng(seed + 7)
    results = []
    for name, fn in loss_functions(gen, disc, truth, gen_input, mask).items():
        for p in (p for _, p in params):
            p.grad = None
        fn().backward()
        for _ in range(per_loss):
            pname, p = params[rng.integers(len(params))]
            idx = tuple(int(rng.integers(s)) for s in p.shape)
            analytic = p.grad[idx].item() if p.grad is not None else 0.0
            with torch.no_grad():
                orig = p[idx].item()
                p[idx] = orig + h
                up = fn().item()
                p[idx] = orig - h
                down = fn().item()
                p[idx] = orig
            numeric = (up - down) / (2 * h)
            rel = abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)
            results.append((name, pname, idx, analytic, numeric, rel))
    return results
