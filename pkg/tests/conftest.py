import numpy as np
import pytest

from sketchret import synthetic as syn
from sketchret import trainer as tr


def tiny_train_config(**overrides) -> tr.TrainConfig:
    """A fast desk-scale config for unit tests (32x32, small nets)."""
    base = dict(
        image_size=32,
        enc_channels=(8, 12, 16),
        n_z=12,
        hidden=24,
        mixtures=4,
        attn_dim=12,
        ret_channels=(8, 12, 16),
        embed_dim=12,
        disc_channels=(8, 12),
        batch_gen=8,
        batch_ret=6,
        batch_rl=6,
        pretrain_gen_epochs=2,
        pretrain_ret_epochs=2,
        cycles=2,
        k_r=2,
        k_g=2,
        t_max=40,
        sample_max_len=20,
        eval_every=0,
        save_every=0,
        seed=0,
    )
    base.update(overrides)
    return tr.TrainConfig(**base)


@pytest.fixture(scope="session")
def tiny_corpus():
    spec = syn.ShapeSpec(image_size=32)
    return syn.build_corpus(spec, n_labeled=12, n_unlabeled=10, n_test=8, seed=3)


@pytest.fixture(scope="session")
def pretrained_tiny(tiny_corpus):
    cfg = tiny_train_config()
    models = tr.pretrain(tiny_corpus, cfg)
    return cfg, models


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
