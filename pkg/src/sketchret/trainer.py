"""Pre-training and the joint semi-supervised loop.

The joint loop alternates k_r retrieval/discriminator updates with k_g
generator updates. Retrieval updates combine the labeled triplet loss, a
certainty-weighted triplet loss on generated pseudo pairs, and a
relative-teacher distillation term. Generator updates combine the
supervised VAE gradient (labeled data) with a REINFORCE gradient through
the non-differentiable rasterizer, rewarded by the frozen retrieval model
and pair critic; the policy gradient only reaches the decoder's final
linear layer.

All randomness is drawn from per-(phase, step) seeded streams, which makes
runs bit-reproducible and resumable from any cycle boundary.
"""

from __future__ import annotations

import json
import math
import os
import time
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autograd as ag
from . import discriminator as dsc
from . import evaluation as ev
from . import generator as gn
from . import retrieval as rt
from .autograd import Tensor
from .nn import Adam, load_checkpoint, save_checkpoint
from .sketch_data import normalize_offsets, rasterize

# rng stream codes
P_INIT_GEN, P_INIT_RET, P_INIT_DISC = 1, 2, 3
P_GEN_PRE, P_GEN_PRE_ORDER = 4, 5
P_RET_PRE, P_RET_PRE_ORDER = 6, 7
P_RET, P_RET_U = 8, 9
P_GEN, P_GEN_RL = 10, 11


def rng_for(seed: int, phase: int, step: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(phase, step)))


@dataclass
class TrainConfig:
    # loop structure
    k_r: int = 5
    k_g: int = 5
    cycles: int = 20
    # objective weights
    margin: float = 0.3
    omega_kl: float = 1.0
    lambda_kd: float = 0.1
    lambda_r1: float = 1.0
    lambda_r2: float = 1.0
    lambda_g: float = 10.0
    # optimization
    lr: float = 1e-4
    lr_disc: float | None = None  # pair-critic lr; defaults to lr
    grad_clip: float = 1.0
    batch_gen: int = 64
    batch_ret: int = 16
    batch_rl: int = 16
    pretrain_gen_epochs: int = 60
    pretrain_ret_epochs: int = 30
    # sequence model
    t_max: int = 100
    sample_max_len: int | None = None
    # ablation flags and modes
    iw: bool = True
    tr: bool = True
    at: bool = True
    jt: bool = True
    use_unlabeled: bool = True
    baseline_enabled: bool = True
    pseudo_mode: str = "sample"  # or "greedy"
    rl_mode: str = "combined"  # or "alternate"
    rl_temperature: float = 1.0
    kd_mode: str = "relative"  # or "absolute"
    # sizes
    seed: int = 0
    image_size: int = 64
    raster_pad: int = 2
    enc_channels: tuple = (32, 64, 96, 128)
    n_z: int = 128
    hidden: int = 512
    mixtures: int = 20
    attn_dim: int = 128
    ret_channels: tuple = (32, 64, 96, 128)
    embed_dim: int = 64
    disc_channels: tuple = (32, 64, 96)
    # bookkeeping
    eval_every: int = 5  # cycles
    save_every: int = 5  # cycles
    eval_fid: bool = False

    def __post_init__(self):
        if self.k_r < 1 or self.k_g < 1:
            raise ValueError("k_r and k_g must be >= 1")
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        for name in ("lambda_kd", "lambda_r1", "lambda_r2", "lambda_g", "omega_kl"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if self.pseudo_mode not in ("sample", "greedy"):
            raise ValueError(f"unknown pseudo_mode {self.pseudo_mode!r}")
        if self.rl_mode not in ("combined", "alternate"):
            raise ValueError(f"unknown rl_mode {self.rl_mode!r}")
        if self.kd_mode not in ("relative", "absolute"):
            raise ValueError(f"unknown kd_mode {self.kd_mode!r}")

    def generator_config(self) -> gn.GeneratorConfig:
        return gn.GeneratorConfig(
            image_size=self.image_size,
            enc_channels=tuple(self.enc_channels),
            n_z=self.n_z,
            hidden=self.hidden,
            mixtures=self.mixtures,
            attn_dim=self.attn_dim,
            attn_mode="2d" if self.at else "1d",
            t_max=self.t_max,
        )

    def retrieval_config(self) -> rt.RetrievalConfig:
        return rt.RetrievalConfig(
            image_size=self.image_size, channels=tuple(self.ret_channels), embed_dim=self.embed_dim
        )

    def discriminator_config(self) -> dsc.DiscriminatorConfig:
        return dsc.DiscriminatorConfig(image_size=self.image_size, channels=tuple(self.disc_channels))

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("enc_channels", "ret_channels", "disc_channels"):
            d[key] = list(d[key])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        for key in ("enc_channels", "ret_channels", "disc_channels"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class RewardRecord:
    reward: float
    triplet_term: float
    disc_term: float
    baseline: float


@dataclass
class Models:
    generator: gn.Generator
    retrieval: rt.EmbeddingNet
    teacher: rt.TeacherSnapshot | None
    discriminator: dsc.PairCritic
    opt_gen: Adam
    opt_ret: Adam
    opt_disc: Adam
    teacher_cache: dict = field(default_factory=dict)


def build_models(cfg: TrainConfig) -> Models:
    generator = gn.Generator(cfg.generator_config(), rng_for(cfg.seed, P_INIT_GEN, 0))
    retrieval = rt.EmbeddingNet(cfg.retrieval_config(), rng_for(cfg.seed, P_INIT_RET, 0))
    critic = dsc.PairCritic(cfg.discriminator_config(), rng_for(cfg.seed, P_INIT_DISC, 0))
    return Models(
        generator=generator,
        retrieval=retrieval,
        teacher=None,
        discriminator=critic,
        opt_gen=Adam(generator.parameters(), lr=cfg.lr, grad_clip=cfg.grad_clip),
        opt_ret=Adam(retrieval.parameters(), lr=cfg.lr, grad_clip=cfg.grad_clip),
        opt_disc=Adam(critic.parameters(), lr=cfg.lr_disc or cfg.lr, grad_clip=cfg.grad_clip),
    )


def clone_models(models: Models, cfg: TrainConfig) -> Models:
    """Independent copy (fresh optimizers resume from the source's state)."""
    fresh = build_models(cfg)
    fresh.generator.load_state_dict(models.generator.state_dict())
    fresh.retrieval.load_state_dict(models.retrieval.state_dict())
    fresh.discriminator.load_state_dict(models.discriminator.state_dict())
    if models.teacher is not None:
        fresh.teacher = rt.TeacherSnapshot(models.teacher.model)
    fresh.opt_gen.load_state_dict(models.opt_gen.state_dict())
    fresh.opt_ret.load_state_dict(models.opt_ret.state_dict())
    fresh.opt_disc.load_state_dict(models.opt_disc.state_dict())
    return fresh


# ---------------------------------------------------------------------------
# data plumbing
# ---------------------------------------------------------------------------


class DataCache:
    """Precomputed NCHW batches and normalized sketches for a corpus."""

    def __init__(self, corpus, cfg: TrainConfig):
        if len(corpus.labeled) == 0:
            raise ValueError("empty labeled set")
        self.cfg = cfg
        normalized, self.offset_scale = normalize_offsets(corpus.labeled)
        self.labeled_ids = normalized.ids
        self.labeled_sketches = normalized.sketches
        self.labeled_photos = gn.photos_to_nchw(normalized.photos)
        self.labeled_rasters = self._raster_stack(normalized.sketches)
        self.unlabeled_ids = list(corpus.unlabeled.ids)
        self.unlabeled_photos = list(corpus.unlabeled.photos)
        if len(corpus.test):
            test_norm = [s.scaled(1.0 / self.offset_scale) for s in corpus.test.sketches]
            self.test_ids = corpus.test.ids
            self.test_sketches = test_norm
            self.test_photos = gn.photos_to_nchw(corpus.test.photos)
            self.test_rasters = self._raster_stack(corpus.test.sketches)
        else:
            self.test_ids, self.test_sketches = [], []
            self.test_photos = np.zeros((0, 3, cfg.image_size, cfg.image_size))
            self.test_rasters = np.zeros((0, 3, cfg.image_size, cfg.image_size))

    def _raster_stack(self, sketches):
        cfg = self.cfg
        rasters = [rasterize(s, cfg.image_size, cfg.image_size, cfg.raster_pad) for s in sketches]
        return gn.photos_to_nchw(rasters)

    def raster(self, sketch) -> np.ndarray:
        cfg = self.cfg
        return rasterize(sketch, cfg.image_size, cfg.image_size, cfg.raster_pad)

    def unlabeled_batch(self, indices):
        ids = [self.unlabeled_ids[i] for i in indices]
        photos = gn.photos_to_nchw([self.unlabeled_photos[i] for i in indices])
        return ids, photos


def draw_batch(rng: np.random.Generator, n: int, batch: int) -> np.ndarray:
    return rng.choice(n, size=min(batch, n), replace=n < batch)


def draw_negatives(rng: np.random.Generator, n: int) -> np.ndarray:
    """Uniform random distinct index within the batch, per row."""
    j = rng.integers(0, n - 1, size=n)
    j += j >= np.arange(n)
    return j


class TrainLogger:
    """Deterministic NDJSON metric log plus a wall-time sidecar.

    The metric log carries only seed-reproducible values so fixed-seed
    reruns are bit-identical; timings go to a separate file.
    """

    def __init__(self, out_dir: str | None = None):
        self.records = []
        self._fh = None
        self._timing_fh = None
        if out_dir is not None:
            os.makedirs(out_dir, exist_ok=True)
            self._fh = open(os.path.join(out_dir, "train.ndjson"), "a", encoding="utf-8")
            self._timing_fh = open(os.path.join(out_dir, "timings.ndjson"), "a", encoding="utf-8")

    def log(self, record: dict, wall: float | None = None):
        self.records.append(record)
        if self._fh is not None:
            self._fh.write(json.dumps(record, sort_keys=True) + "\n")
            self._fh.flush()
        if wall is not None and self._timing_fh is not None:
            stamp = {"phase": record.get("phase"), "step": record.get("step"), "wall": wall}
            self._timing_fh.write(json.dumps(stamp, sort_keys=True) + "\n")
            self._timing_fh.flush()

    def count(self, phase: str) -> int:
        return sum(1 for r in self.records if r.get("phase") == phase)

    def close(self):
        if self._fh is not None:
            self._fh.close()
        if self._timing_fh is not None:
            self._timing_fh.close()


# ---------------------------------------------------------------------------
# pre-training
# ---------------------------------------------------------------------------


def pretrain_generator(cache: DataCache, models: Models, cfg: TrainConfig, logger: TrainLogger):
    gen = models.generator
    n = len(cache.labeled_ids)
    step = 0
    for epoch in range(cfg.pretrain_gen_epochs):
        order = rng_for(cfg.seed, P_GEN_PRE_ORDER, epoch).permutation(n)
        for lo in range(0, n, cfg.batch_gen):
            idx = order[lo : lo + cfg.batch_gen]
            rng = rng_for(cfg.seed, P_GEN_PRE, step)
            targets, mask = gn.pad_batch([cache.labeled_sketches[i] for i in idx])
            eps = rng.standard_normal((len(idx), cfg.n_z))
            t0 = time.perf_counter()
            losses = gen.loss(cache.labeled_photos[idx], targets, mask, cfg.omega_kl, eps)
            models.opt_gen.zero_grad()
            losses["total"].backward()
            models.opt_gen.step()
            logger.log(
                {
                    "phase": "pretrain_gen",
                    "step": step,
                    "epoch": epoch,
                    "total": losses["total"].item(),
                    "recon": losses["recon"].item(),
                    "kl": losses["kl"].item(),
                },
                wall=time.perf_counter() - t0,
            )
            step += 1
    return step


def pretrain_retrieval(cache: DataCache, models: Models, cfg: TrainConfig, logger: TrainLogger):
    """Triplet pre-training on labeled pairs; snapshots the frozen teacher."""
    n = len(cache.labeled_ids)
    if n < 2:
        raise ValueError("retrieval pre-training needs at least 2 photos for negatives")
    model = models.retrieval
    step = 0
    for epoch in range(cfg.pretrain_ret_epochs):
        order = rng_for(cfg.seed, P_RET_PRE_ORDER, epoch).permutation(n)
        for lo in range(0, n, cfg.batch_ret):
            idx = order[lo : lo + cfg.batch_ret]
            if len(idx) < 2:
                continue
            rng = rng_for(cfg.seed, P_RET_PRE, step)
            t0 = time.perf_counter()
            emb = model.embed(np.concatenate([cache.labeled_photos[idx], cache.labeled_rasters[idx]]))
            b = len(idx)
            photos_e, sketch_e = emb[:b], emb[b:]
            neg = draw_negatives(rng, b)
            loss = rt.triplet_loss(sketch_e, photos_e, photos_e[neg], cfg.margin)
            models.opt_ret.zero_grad()
            loss.backward()
            models.opt_ret.step()
            logger.log(
                {"phase": "pretrain_ret", "step": step, "epoch": epoch, "triplet": loss.item()},
                wall=time.perf_counter() - t0,
            )
            step += 1
    models.teacher = rt.TeacherSnapshot(model)
    models.teacher_cache = {}
    return step


# ---------------------------------------------------------------------------
# pseudo pairs
# ---------------------------------------------------------------------------


@dataclass
class PseudoBatch:
    """Generated photo-sketch pairs, flagged unlabeled."""

    ids: list
    photos: np.ndarray  # (B, 3, S, S)
    sequences: list
    rasters: np.ndarray  # (B, 3, S, S)
    labeled: bool = False


def make_pseudo_pairs(models: Models, ids, photos_nchw: np.ndarray, cfg: TrainConfig, rng=None, mode=None) -> PseudoBatch:
    mode = mode or cfg.pseudo_mode
    max_len = cfg.sample_max_len or cfg.t_max
    if mode == "greedy":
        result = models.generator.sample(photos_nchw, greedy=True, max_len=max_len)
    else:
        result = models.generator.sample(photos_nchw, rng=rng, temperature=cfg.rl_temperature, max_len=max_len)
    rasters = gn.photos_to_nchw(
        [rasterize(s, cfg.image_size, cfg.image_size, cfg.raster_pad) for s in result.sequences]
    )
    return PseudoBatch(list(ids), photos_nchw, result.sequences, rasters)


def _teacher_embed_cached(models: Models, keys, images_nchw: np.ndarray) -> np.ndarray:
    """Teacher embeddings with an id-keyed cache (static images only)."""
    missing = [i for i, k in enumerate(keys) if k not in models.teacher_cache]
    if missing:
        fresh = models.teacher.embed(images_nchw[missing])
        for row, i in enumerate(missing):
            models.teacher_cache[keys[i]] = fresh[row]
    return np.stack([models.teacher_cache[k] for k in keys])


# ---------------------------------------------------------------------------
# joint-loop steps
# ---------------------------------------------------------------------------


def retrieval_step(
    models: Models,
    cache: DataCache,
    batch_idx: np.ndarray,
    pseudo: PseudoBatch | None,
    cfg: TrainConfig,
    rng_l: np.random.Generator,
    rng_u: np.random.Generator | None,
) -> dict:
    """One semi-supervised update of the retrieval model (Adam step on F only)."""
    n_l = len(batch_idx)
    if n_l < 2:
        raise ValueError("retrieval step needs a labeled batch of at least 2")
    ph_l = cache.labeled_photos[batch_idx]
    sk_l = cache.labeled_rasters[batch_idx]
    stacks = [ph_l, sk_l]
    n_u = 0
    if pseudo is not None:
        n_u = len(pseudo.ids)
        stacks += [pseudo.photos, pseudo.rasters]
    emb = models.retrieval.embed(np.concatenate(stacks))
    e_ph_l = emb[:n_l]
    e_sk_l = emb[n_l : 2 * n_l]

    neg_l = draw_negatives(rng_l, n_l)
    trip_l = rt.triplet_loss(e_sk_l, e_ph_l, e_ph_l[neg_l], cfg.margin)
    total = trip_l

    trip_u_val = 0.0
    weights = np.ones(0)
    if pseudo is not None:
        e_ph_u = emb[2 * n_l : 2 * n_l + n_u]
        e_sk_u = emb[2 * n_l + n_u :]
        neg_u = draw_negatives(rng_u, n_u)
        per = rt.triplet_loss(e_sk_u, e_ph_u, e_ph_u[neg_u], cfg.margin, per_sample=True)
        if cfg.iw:
            weights = dsc.certainty_weights(models.discriminator, pseudo.photos, pseudo.rasters)
        else:
            weights = np.ones(n_u)
        trip_u = (per * Tensor(weights)).mean()
        total = total + trip_u
        trip_u_val = trip_u.item()

    kd_val = 0.0
    if cfg.tr:
        t_ph = _teacher_embed_cached(models, [f"p:{cache.labeled_ids[i]}" for i in batch_idx], ph_l)
        t_sk = _teacher_embed_cached(models, [f"s:{cache.labeled_ids[i]}" for i in batch_idx], sk_l)
        if pseudo is not None:
            tp_u = _teacher_embed_cached(models, [f"p:{k}" for k in pseudo.ids], pseudo.photos)
            ts_u = models.teacher.embed(pseudo.rasters)
        if cfg.kd_mode == "relative":
            t_dist = np.sqrt(((t_ph - t_sk) ** 2).sum(axis=1))
            s_dist = rt.l2_distance(e_ph_l, e_sk_l)
            if pseudo is not None:
                t_dist = np.concatenate([t_dist, np.sqrt(((tp_u - ts_u) ** 2).sum(axis=1))])
                s_dist = ag.concat([s_dist, rt.l2_distance(e_ph_u, e_sk_u)])
            kd = (s_dist - Tensor(t_dist)).abs().mean()
        else:  # absolute teacher: match embeddings directly, per image
            teacher_rows = [t_ph, t_sk] + ([tp_u, ts_u] if pseudo is not None else [])
            diff = emb - Tensor(np.concatenate(teacher_rows))
            kd = (diff * diff).sum(axis=1).sqrt().mean()
        total = total + cfg.lambda_kd * kd
        kd_val = kd.item()

    models.opt_ret.zero_grad()
    total.backward()
    models.opt_ret.step()
    return {
        "trip_l": trip_l.item(),
        "trip_u_weighted": trip_u_val,
        "kd": kd_val,
        "total": total.item(),
        "mean_weight": float(weights.mean()) if weights.size else 1.0,
        "std_weight": float(weights.std()) if weights.size else 0.0,
    }


def discriminator_step(models: Models, cache: DataCache, batch_idx: np.ndarray, pseudo: PseudoBatch, cfg: TrainConfig) -> dict:
    """One pair-critic update: real = labeled pairs, fake = pseudo pairs."""
    if len(batch_idx) == 0 or pseudo is None or len(pseudo.ids) == 0:
        raise ValueError("discriminator step needs non-empty real and fake batches")
    real = models.discriminator.scores(cache.labeled_photos[batch_idx], cache.labeled_rasters[batch_idx])
    fake = models.discriminator.scores(pseudo.photos, pseudo.rasters)
    loss = dsc.d_loss(real, fake)
    models.opt_disc.zero_grad()
    loss.backward()
    models.opt_disc.step()
    return {
        "d_loss": loss.item(),
        "real_mean": float(real.data.mean()),
        "fake_mean": float(fake.data.mean()),
    }


def compute_reward(models: Models, photo_nchw, sketch_raster_nchw, neg_photo_nchw, cfg: TrainConfig, baseline: float = 0.0) -> RewardRecord:
    """Joint reward for one generated pair under frozen F and the critic."""
    with ag.no_grad():
        emb = models.retrieval.embed(np.concatenate([sketch_raster_nchw, photo_nchw, neg_photo_nchw]))
        anchor, pos, neg = emb[0:1], emb[1:2], emb[2:3]
        trip = rt.triplet_loss(anchor, pos, neg, cfg.margin, per_sample=True).data[0]
    score = dsc.score_pair(models.discriminator, photo_nchw, sketch_raster_nchw)[0]
    reward = -cfg.lambda_r1 * float(trip) + cfg.lambda_r2 * float(score)
    return RewardRecord(reward, float(trip), float(score), baseline)


def _batch_rewards(models: Models, photos: np.ndarray, rasters: np.ndarray, neg_idx: np.ndarray, cfg: TrainConfig):
    with ag.no_grad():
        n = photos.shape[0]
        emb = models.retrieval.embed(np.concatenate([rasters, photos]))
        anchor, pos = emb.data[:n], emb.data[n:]
        d_pos = np.sqrt(((anchor - pos) ** 2).sum(axis=1))
        d_neg = np.sqrt(((anchor - pos[neg_idx]) ** 2).sum(axis=1))
        trip = np.maximum(0.0, cfg.margin + d_pos - d_neg)
    score = dsc.score_pair(models.discriminator, photos, rasters)
    reward = -cfg.lambda_r1 * trip + cfg.lambda_r2 * score
    return reward, trip, score


def generator_rl_step(
    models: Models,
    cache: DataCache,
    vae_idx: np.ndarray,
    rl_photos: np.ndarray,
    cfg: TrainConfig,
    rng: np.random.Generator,
    include_supervised: bool = True,
    include_rl: bool = True,
) -> dict:
    """One generator update: supervised VAE path plus the REINFORCE path.

    The RL gradient uses a single global reward per sequence, a batch-mean
    baseline, and flows only into the decoder's output layer (the hidden
    trace is detached).
    """
    gen = models.generator
    out = {"vae": 0.0, "recon": 0.0, "kl": 0.0, "rl": 0.0, "reward_mean": 0.0, "reward_std": 0.0}
    models.opt_gen.zero_grad()

    if include_supervised:
        targets, mask = gn.pad_batch([cache.labeled_sketches[i] for i in vae_idx])
        eps = rng.standard_normal((len(vae_idx), cfg.n_z))
        losses = gen.loss(cache.labeled_photos[vae_idx], targets, mask, cfg.omega_kl, eps)
        losses["total"].backward()
        out.update(vae=losses["total"].item(), recon=losses["recon"].item(), kl=losses["kl"].item())

    if include_rl and cfg.lambda_g > 0:
        max_len = cfg.sample_max_len or cfg.t_max
        result = gen.sample(rl_photos, rng=rng, temperature=cfg.rl_temperature, max_len=max_len)
        rasters = gn.photos_to_nchw(
            [rasterize(s, cfg.image_size, cfg.image_size, cfg.raster_pad) for s in result.sequences]
        )
        n = rl_photos.shape[0]
        neg_idx = draw_negatives(rng, n)
        reward, trip, score = _batch_rewards(models, rl_photos, rasters, neg_idx, cfg)
        baseline = float(reward.mean()) if cfg.baseline_enabled else 0.0
        advantage = reward - baseline

        b, t, _ = result.points.shape
        hidden = Tensor(result.h_trace.reshape(b * t, cfg.hidden))  # detached by construction
        raw = gen.out_head(hidden)
        nll = gn.gmm_nll_t(
            raw,
            result.points[:, :, 0].reshape(-1),
            result.points[:, :, 1].reshape(-1),
            cfg.mixtures,
            temperature=cfg.rl_temperature,
        )
        pen_lp = -gn.pen_ce_t(raw, result.points[:, :, 2:].reshape(b * t, 3), cfg.mixtures, temperature=cfg.rl_temperature)
        seq_logp = ((-nll + pen_lp).reshape(b, t) * Tensor(result.mask)).sum(axis=1)
        rl_loss = (seq_logp * Tensor(advantage)).mean() * (-cfg.lambda_g)
        rl_loss.backward()
        out.update(rl=rl_loss.item(), reward_mean=float(reward.mean()), reward_std=float(reward.std()),
                   trip_mean=float(trip.mean()), disc_mean=float(score.mean()), baseline=baseline)

    models.opt_gen.step()
    return out


# ---------------------------------------------------------------------------
# evaluation helpers
# ---------------------------------------------------------------------------


def evaluate(models: Models, cache: DataCache, cfg: TrainConfig, with_fid: bool | None = None) -> dict:
    """Retrieval and generation metrics on the held-out test split."""
    if len(cache.test_ids) < 2:
        return {}
    with_fid = cfg.eval_fid if with_fid is None else with_fid
    gallery = rt.embed_images(models.retrieval, cache.test_photos)
    queries = rt.embed_images(models.retrieval, cache.test_rasters)
    table = ev.compute_ranks(queries, cache.test_ids, gallery, cache.test_ids)
    n = len(cache.test_ids)
    metrics = {
        "acc1": ev.acc_at_q(table, 1),
        "acc5": ev.acc_at_q(table, min(5, n)),
        "acc10": ev.acc_at_q(table, min(10, n)),
        "arp": ev.arp(table),
    }

    pseudo = make_pseudo_pairs(models, cache.test_ids, cache.test_photos, cfg, mode="greedy")
    gen_queries = rt.embed_images(models.retrieval, pseudo.rasters)
    gen_table = ev.compute_ranks(gen_queries, cache.test_ids, gallery, cache.test_ids)
    metrics["gen_acc1"] = ev.acc_at_q(gen_table, 1)
    metrics["gen_acc10"] = ev.acc_at_q(gen_table, min(10, n))
    metrics["gen_arp"] = ev.arp(gen_table)
    if with_fid and n > cfg.ret_channels[-1]:
        real_f = ev.penultimate_features(models.retrieval, cache.test_rasters)
        fake_f = ev.penultimate_features(models.retrieval, pseudo.rasters)
        metrics["fid"] = ev.fid(real_f, fake_f)
    return metrics


# ---------------------------------------------------------------------------
# the joint loop (Algorithm-1 alternation)
# ---------------------------------------------------------------------------


def joint_train(cache: DataCache, models: Models, cfg: TrainConfig, logger: TrainLogger, start_cycle: int = 0, out_dir: str | None = None) -> dict:
    """Alternate k_r retrieval+critic updates with k_g generator updates."""
    if models.teacher is None:
        raise ValueError("joint training requires pre-trained checkpoints (no teacher snapshot)")
    n_l = len(cache.labeled_ids)
    n_u = len(cache.unlabeled_ids)
    use_u = cfg.use_unlabeled and n_u > 0

    for cycle in range(start_cycle, start_cycle + cfg.cycles):
        for i in range(cfg.k_r):
            step = cycle * cfg.k_r + i
            rng_l = rng_for(cfg.seed, P_RET, step)
            batch_idx = draw_batch(rng_l, n_l, cfg.batch_ret)
            pseudo = None
            rng_u = None
            if use_u:
                rng_u = rng_for(cfg.seed, P_RET_U, step)
                u_idx = draw_batch(rng_u, n_u, cfg.batch_ret)
                u_ids, u_photos = cache.unlabeled_batch(u_idx)
                pseudo = make_pseudo_pairs(models, u_ids, u_photos, cfg, rng=rng_u)
            t0 = time.perf_counter()
            stats = retrieval_step(models, cache, batch_idx, pseudo, cfg, rng_l, rng_u)
            logger.log({"phase": "retrieval", "step": step, "cycle": cycle, **stats}, wall=time.perf_counter() - t0)
            if use_u:
                t0 = time.perf_counter()
                d_stats = discriminator_step(models, cache, batch_idx, pseudo, cfg)
                logger.log({"phase": "discriminator", "step": step, "cycle": cycle, **d_stats}, wall=time.perf_counter() - t0)

        for j in range(cfg.k_g):
            if not cfg.jt:
                break
            step = cycle * cfg.k_g + j
            rng = rng_for(cfg.seed, P_GEN, step)
            vae_idx = draw_batch(rng, n_l, cfg.batch_gen)
            rl_parts = [cache.labeled_photos[draw_batch(rng, n_l, cfg.batch_rl)]]
            if use_u:
                _, u_photos = cache.unlabeled_batch(draw_batch(rng, n_u, cfg.batch_rl))
                rl_parts.append(u_photos)
            rl_photos = np.concatenate(rl_parts)
            parity_supervised = cfg.rl_mode == "combined" or step % 2 == 0
            parity_rl = cfg.rl_mode == "combined" or step % 2 == 1
            t0 = time.perf_counter()
            stats = generator_rl_step(
                models, cache, vae_idx, rl_photos, cfg, rng,
                include_supervised=parity_supervised, include_rl=parity_rl,
            )
            logger.log({"phase": "generator", "step": step, "cycle": cycle, **stats}, wall=time.perf_counter() - t0)

        done = cycle + 1
        if cfg.eval_every and done % cfg.eval_every == 0:
            metrics = evaluate(models, cache, cfg)
            if metrics:
                logger.log({"phase": "eval", "cycle": cycle, **metrics})
        if out_dir and cfg.save_every and done % cfg.save_every == 0:
            save_models(out_dir, models, cfg, done)

    if out_dir:
        save_models(out_dir, models, cfg, start_cycle + cfg.cycles)
        _write_state(out_dir, {"cycles_done": start_cycle + cfg.cycles, "seed": cfg.seed})
    return {"cycles_done": start_cycle + cfg.cycles}


def train_supervised(cache: DataCache, models: Models, cfg: TrainConfig, logger: TrainLogger) -> dict:
    """Labeled-only continuation with the joint loop's structure and rng
    streams; the reference trajectory for the flags-off equivalence audit."""
    n_l = len(cache.labeled_ids)
    for cycle in range(cfg.cycles):
        for i in range(cfg.k_r):
            step = cycle * cfg.k_r + i
            rng_l = rng_for(cfg.seed, P_RET, step)
            batch_idx = draw_batch(rng_l, n_l, cfg.batch_ret)
            t0 = time.perf_counter()
            stats = retrieval_step(models, cache, batch_idx, None, cfg, rng_l, None)
            logger.log({"phase": "retrieval", "step": step, "cycle": cycle, **stats}, wall=time.perf_counter() - t0)
    return {"cycles_done": cfg.cycles}


# ---------------------------------------------------------------------------
# checkpoints and the pipeline entry point
# ---------------------------------------------------------------------------

_MODEL_DIRS = ("gen", "ret", "teacher", "disc")


def save_models(out_dir: str, models: Models, cfg: TrainConfig, step: int):
    ckpt = os.path.join(out_dir, "checkpoints")
    entries = {
        "gen": (models.generator, models.opt_gen, models.generator.config.to_dict()),
        "ret": (models.retrieval, models.opt_ret, models.retrieval.config.to_dict()),
        "disc": (models.discriminator, models.opt_disc, models.discriminator.config.to_dict()),
    }
    for name, (model, opt, config) in entries.items():
        os.makedirs(os.path.join(ckpt, name), exist_ok=True)
        arrays = dict(model.state_dict())
        for key, value in opt.state_dict().items():
            arrays[f"opt.{key}"] = value
        save_checkpoint(os.path.join(ckpt, name, f"step-{step}.npz"), {"model": config, "step": step}, arrays)
    if models.teacher is not None:
        os.makedirs(os.path.join(ckpt, "teacher"), exist_ok=True)
        save_checkpoint(
            os.path.join(ckpt, "teacher", f"step-{step}.npz"),
            {"model": models.teacher.model.config.to_dict(), "step": step, "read_only": True},
            models.teacher.state_dict(),
        )


def latest_step(out_dir: str) -> int | None:
    ret_dir = os.path.join(out_dir, "checkpoints", "ret")
    if not os.path.isdir(ret_dir):
        return None
    steps = [int(f[len("step-") : -len(".npz")]) for f in os.listdir(ret_dir) if f.startswith("step-")]
    return max(steps) if steps else None


def load_models(out_dir: str, cfg: TrainConfig, step: int | None = None) -> Models:
    step = latest_step(out_dir) if step is None else step
    if step is None:
        raise FileNotFoundError(f"no checkpoints under {out_dir}")
    models = build_models(cfg)
    ckpt = os.path.join(out_dir, "checkpoints")
    for name, model, opt in (
        ("gen", models.generator, models.opt_gen),
        ("ret", models.retrieval, models.opt_ret),
        ("disc", models.discriminator, models.opt_disc),
    ):
        path = os.path.join(ckpt, name, f"step-{step}.npz")
        if not os.path.exists(path):
            raise FileNotFoundError(f"missing checkpoint {path}")
        _, arrays = load_checkpoint(path)
        opt.load_state_dict({k[len("opt.") :]: v for k, v in arrays.items() if k.startswith("opt.")})
        model.load_state_dict({k: v for k, v in arrays.items() if not k.startswith("opt.")})
    teacher_path = os.path.join(ckpt, "teacher", f"step-{step}.npz")
    if os.path.exists(teacher_path):
        _, arrays = load_checkpoint(teacher_path)
        models.teacher = rt.TeacherSnapshot(models.retrieval)
        models.teacher.model.load_state_dict(arrays)
    return models


def _write_state(out_dir: str, state: dict):
    with open(os.path.join(out_dir, "state.json"), "w", encoding="utf-8") as fh:
        json.dump(state, fh, sort_keys=True)


def read_state(out_dir: str) -> dict | None:
    path = os.path.join(out_dir, "state.json")
    if not os.path.exists(path):
        return None
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)


def pretrain(corpus, cfg: TrainConfig, logger: TrainLogger | None = None, out_dir: str | None = None) -> Models:
    """Pre-train generator and retrieval from labeled data; snapshot teacher."""
    logger = logger or TrainLogger()
    cache = DataCache(corpus, cfg)
    models = build_models(cfg)
    pretrain_generator(cache, models, cfg, logger)
    pretrain_retrieval(cache, models, cfg, logger)
    metrics = evaluate(models, cache, cfg)
    if metrics:
        logger.log({"phase": "eval", "cycle": -1, **metrics})
    if out_dir:
        save_models(out_dir, models, cfg, 0)
        _write_state(out_dir, {"cycles_done": 0, "seed": cfg.seed})
    return models


def run_pipeline(corpus, cfg: TrainConfig, out_dir: str | None = None, models: Models | None = None, resume: bool = False) -> dict:
    """Pretrain (or reuse), run the joint loop, and report final metrics."""
    logger = TrainLogger(out_dir)
    cache = DataCache(corpus, cfg)
    start_cycle = 0
    try:
        if models is None:
            if resume and out_dir and latest_step(out_dir) is not None:
                models = load_models(out_dir, cfg)
                state = read_state(out_dir) or {}
                start_cycle = int(state.get("cycles_done", 0))
            else:
                models = pretrain(corpus, cfg, logger, out_dir=out_dir)
        if cfg.cycles > 0:
            joint_train(cache, models, cfg, logger, start_cycle=start_cycle, out_dir=out_dir)
        metrics = evaluate(models, cache, cfg, with_fid=cfg.eval_fid)
        if out_dir:
            with open(os.path.join(out_dir, "metrics.json"), "w", encoding="utf-8") as fh:
                json.dump(metrics, fh, sort_keys=True, indent=2)
    finally:
        logger.close()
    return {"models": models, "metrics": metrics, "records": logger.records}


# ---------------------------------------------------------------------------
# analysis harnesses
# ---------------------------------------------------------------------------


def certainty_consistency_eval(models: Models, photos_nchw: np.ndarray, ids, cfg: TrainConfig, seed: int = 0):
    """Score pseudo pairs with the critic and bin their retrieval quality.

    Generates one stochastic pseudo sketch per photo, ranks it against the
    photo gallery, and returns the 10-level certainty/ARP table.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(97, 0)))
    pseudo = make_pseudo_pairs(models, ids, photos_nchw, cfg, rng=rng, mode="sample")
    scores = dsc.certainty_weights(models.discriminator, pseudo.photos, pseudo.rasters)
    gallery = rt.embed_images(models.retrieval, photos_nchw)
    queries = rt.embed_images(models.retrieval, pseudo.rasters)
    n = len(ids)
    dists = np.sqrt(((queries[:, None, :] - gallery[None, :, :]) ** 2).sum(axis=2))
    order = np.argsort(dists, axis=1, kind="stable")
    ranks = np.empty(n, dtype=np.int64)
    for i in range(n):
        ranks[i] = int(np.where(order[i] == i)[0][0]) + 1
    per_pair_arp = (n - ranks) / (n - 1)
    return ev.certainty_consistency(scores, per_pair_arp)


def data_size_sweep(corpus, cfg: TrainConfig, fractions=(0.3, 0.6, 1.0), seeds=(0, 1, 2), out_dir: str | None = None):
    """Criterion-style comparison of semi-supervised vs supervised training
    at several labeled-set sizes. Returns one row per (fraction, seed, mode).
    """
    from .sketch_data import Corpus, LabeledPairSet

    rows = []
    n_l = len(corpus.labeled)
    for fraction in fractions:
        keep = max(2, int(round(n_l * fraction)))
        sub = Corpus(LabeledPairSet(corpus.labeled.pairs[:keep]), corpus.unlabeled, corpus.test)
        for seed in seeds:
            shared = None
            for mode in ("semi", "supervised"):
                cfg_run = replace(
                    cfg,
                    seed=seed,
                    use_unlabeled=(mode == "semi"),
                    iw=(mode == "semi"),
                    tr=(mode == "semi"),
                    jt=(mode == "semi"),
                )
                if shared is None:
                    shared = pretrain(sub, cfg_run)
                out = run_pipeline(sub, cfg_run, models=clone_models(shared, cfg_run))
                rows.append(
                    {
                        "fraction": fraction,
                        "n_labeled": keep,
                        "seed": seed,
                        "mode": mode,
                        **{k: v for k, v in out["metrics"].items()},
                    }
                )
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "sweep.csv"), "w", encoding="utf-8") as fh:
            keys = sorted({k for r in rows for k in r})
            fh.write(",".join(keys) + "\n")
            for r in rows:
                fh.write(",".join(str(r.get(k, "")) for k in keys) + "\n")
    return rows


# ---------------------------------------------------------------------------
# REINFORCE estimator self-check (categorical bandit)
# ---------------------------------------------------------------------------


def reinforce_selfcheck(
    rewards,
    steps: int = 2000,
    lr: float = 0.1,
    batch: int = 16,
    mc_sizes=(100, 10000),
    seed: int = 0,
) -> dict:
    """Verify the score-function gradient estimator on a K-armed bandit.

    Reports (i) the max abs difference between the analytic gradient of the
    expected reward and the probability-weighted score-function sum, with
    and without a constant (mean-reward) baseline; (ii) Monte-Carlo
    estimator error and standard error at the requested sample sizes; and
    (iii) the expected reward reached by running the estimator as a
    training loop.
    """
    rewards = np.asarray(rewards, dtype=np.float64)
    k = rewards.size
    if k < 2:
        raise ValueError("bandit needs K >= 2")
    rng = np.random.default_rng(seed)

    def softmax(theta):
        e = np.exp(theta - theta.max())
        return e / e.sum()

    theta = np.zeros(k)
    p = softmax(theta)
    expected = float(p @ rewards)
    exact = p * (rewards - expected)

    # probability-weighted score-function sum, computed term by term
    estimator = np.zeros(k)
    eye = np.eye(k)
    for j in range(k):
        estimator += p[j] * (eye[j] - p) * rewards[j]
    baseline = expected
    estimator_baselined = np.zeros(k)
    for j in range(k):
        estimator_baselined += p[j] * (eye[j] - p) * (rewards[j] - baseline)

    report = {
        "exact_vs_estimator": float(np.max(np.abs(exact - estimator))),
        "exact_vs_baselined": float(np.max(np.abs(exact - estimator_baselined))),
        "mc": {},
    }

    for n in mc_sizes:
        draws = rng.choice(k, size=n, p=p)
        per_sample = (eye[draws] - p) * rewards[draws, None]
        estimate = per_sample.mean(axis=0)
        se = float(np.linalg.norm(per_sample.std(axis=0, ddof=1) / math.sqrt(n)))
        report["mc"][int(n)] = {"error": float(np.linalg.norm(estimate - exact)), "se": se}

    # train the bandit with the estimator itself
    theta = np.zeros(k)
    for _ in range(steps):
        p = softmax(theta)
        draws = rng.choice(k, size=batch, p=p)
        grads = (eye[draws] - p) * (rewards[draws, None] - rewards[draws].mean())
        theta += lr * grads.mean(axis=0)
    p = softmax(theta)
    report["final_expected_reward"] = float(p @ rewards)
    report["max_reward"] = float(rewards.max())
    return report
