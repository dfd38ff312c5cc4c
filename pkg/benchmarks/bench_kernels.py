"""Compare the numba @njit kernel path against the pure-numpy fallback.

Run:
    python benchmarks/bench_kernels.py [--repeats N]

Covers the three hot kernels (conv forward, conv backward, segment
rasterization) at the shapes the training loop actually uses, plus one
end-to-end training-step timing per backend. The active default backend
follows SKETCHRET_NUMBA; this script switches explicitly.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from sketchret import kernels
from sketchret import sketch_data as sd
from sketchret import trainer as tr
from sketchret.sketch_data import PEN_DOWN, PEN_END, StrokeSequence, make_points


def timeit(fn, repeats):
    fn()  # warm up (and trigger njit compilation)
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def bench_conv(rng, repeats):
    cases = [
        ("conv 16x3x64x64 -> 32 s2", (16, 3, 64, 64), 32),
        ("conv 16x32x32x32 -> 64 s2", (16, 32, 32, 32), 64),
        ("conv 64x48x8x8 -> 64 s2", (64, 48, 8, 8), 64),
    ]
    rows = []
    for name, xshape, out_ch in cases:
        x = rng.normal(size=xshape)
        w = rng.normal(size=(out_ch, xshape[1], 3, 3))
        b = rng.normal(size=out_ch)
        out, cols = kernels.conv2d_forward(x, w, b, 2, 1)
        g = rng.normal(size=out.shape)
        fwd = timeit(lambda: kernels.conv2d_forward(x, w, b, 2, 1), repeats)
        bwd = timeit(lambda: kernels.conv2d_backward(g, cols, x.shape, w, 2, 1), repeats)
        rows.append((name + " fwd", fwd))
        rows.append((name + " bwd", bwd))
    return rows


def bench_raster(rng, repeats):
    sketches = []
    for _ in range(64):
        n = int(rng.integers(6, 24))
        pens = np.full(n, PEN_DOWN)
        pens[-1] = PEN_END
        sketches.append(StrokeSequence(make_points(rng.normal(size=(n, 2)), pens)))

    def run():
        for s in sketches:
            sd.rasterize(s, 64, 64, 2)

    return [("rasterize 64 sketches @64x64", timeit(run, repeats))]


def bench_train_step(repeats):
    from sketchret import synthetic as syn

    spec = syn.ShapeSpec()
    corpus = syn.build_corpus(spec, n_labeled=16, n_unlabeled=16, n_test=0, seed=0)
    cfg = tr.TrainConfig(
        image_size=64,
        enc_channels=(16, 32, 48, 64),
        n_z=64,
        hidden=128,
        mixtures=20,
        attn_dim=32,
        ret_channels=(16, 32, 48, 64),
        embed_dim=64,
        disc_channels=(16, 32, 48),
        batch_gen=16,
        batch_ret=8,
        batch_rl=8,
        t_max=32,
        sample_max_len=20,
        pretrain_gen_epochs=0,
        pretrain_ret_epochs=1,
        cycles=0,
        eval_every=0,
        save_every=0,
    )
    cache = tr.DataCache(corpus, cfg)
    models = tr.build_models(cfg)
    tr.pretrain_retrieval(cache, models, cfg, tr.TrainLogger())

    def step(state={"i": 0}):
        i = state["i"] = state["i"] + 1
        rng_l = tr.rng_for(cfg.seed, tr.P_RET, i)
        rng_u = tr.rng_for(cfg.seed, tr.P_RET_U, i)
        batch = tr.draw_batch(rng_l, len(cache.labeled_ids), cfg.batch_ret)
        ids, photos = cache.unlabeled_batch(tr.draw_batch(rng_u, len(cache.unlabeled_ids), cfg.batch_ret))
        pseudo = tr.make_pseudo_pairs(models, ids, photos, cfg, rng=rng_u)
        tr.retrieval_step(models, cache, batch, pseudo, cfg, rng_l, rng_u)

    return [("semi-supervised retrieval step", timeit(step, max(3, repeats // 3)))]


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=10)
    args = parser.parse_args()
    rng = np.random.default_rng(0)

    results = {}
    backends = [("numpy", False)] + ([("numba", True)] if kernels.HAS_NUMBA else [])
    for name, flag in backends:
        kernels.set_numba(flag)
        rows = bench_conv(rng, args.repeats) + bench_raster(rng, args.repeats) + bench_train_step(args.repeats)
        for case, secs in rows:
            results.setdefault(case, {})[name] = secs

    width = max(len(c) for c in results)
    header = f"{'case':<{width}}  {'numpy':>10}  {'numba':>10}  {'speedup':>8}"
    print(header)
    print("-" * len(header))
    for case, row in results.items():
        np_t = row.get("numpy", float("nan"))
        nb_t = row.get("numba", float("nan"))
        speedup = np_t / nb_t if nb_t and nb_t == nb_t else float("nan")
        print(f"{case:<{width}}  {np_t * 1e3:>9.2f}ms  {nb_t * 1e3:>9.2f}ms  {speedup:>7.2f}x")
    if not kernels.HAS_NUMBA:
        print("(numba not installed: only the numpy fallback was measured)")


if __name__ == "__main__":
    main()
