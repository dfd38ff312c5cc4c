import numpy as np
import pytest

from sketchret import discriminator as dsc
from sketchret import gradcheck
from sketchret.autograd import Tensor


@pytest.fixture(scope="module")
def critic():
    cfg = dsc.DiscriminatorConfig(image_size=16, channels=(4, 6))
    return dsc.PairCritic(cfg, np.random.default_rng(0))


def test_zero_final_layer_gives_sigmoid_bias(critic, rng):
    saved_w = critic.head.weight.data.copy()
    saved_b = critic.head.bias.data.copy()
    critic.head.weight.data = np.zeros_like(saved_w)
    critic.head.bias.data = np.array([0.7])
    s = dsc.score_pair(critic, rng.random((2, 3, 16, 16)), rng.random((2, 3, 16, 16)))
    assert np.allclose(s, 1.0 / (1.0 + np.exp(-0.7)), atol=1e-12)
    critic.head.weight.data = saved_w
    critic.head.bias.data = saved_b


def test_scores_strictly_interior(critic, rng):
    for scale in (0.0, 1.0, 100.0):
        s = dsc.score_pair(critic, rng.random((3, 3, 16, 16)) * scale, rng.random((3, 3, 16, 16)))
        assert ((s > 0.0) & (s < 1.0)).all()


def test_score_deterministic(critic, rng):
    a, b = rng.random((2, 3, 16, 16)), rng.random((2, 3, 16, 16))
    assert np.array_equal(dsc.score_pair(critic, a, b), dsc.score_pair(critic, a, b))


def test_size_mismatch(critic, rng):
    with pytest.raises(ValueError):
        critic.scores(rng.random((1, 3, 16, 16)), rng.random((1, 3, 8, 8)))


def test_d_loss_examples():
    half = Tensor(np.array([0.5]))
    assert dsc.d_loss(half, half).item() == pytest.approx(2 * np.log(2.0), abs=1e-12)
    near = dsc.d_loss(Tensor(np.array([1.0 - 1e-9])), Tensor(np.array([1e-9]))).item()
    assert near < 1e-5  # perfect discrimination limit
    hand = dsc.d_loss(Tensor(np.array([0.9, 0.8])), Tensor(np.array([0.1]))).item()
    expected = -(np.log(0.9) + np.log(0.8)) / 2 - np.log(0.9)
    assert hand == pytest.approx(expected, abs=1e-12)
    assert hand == pytest.approx(0.2696, abs=5e-5)


def test_d_loss_nonnegative(rng):
    for _ in range(50):
        real = Tensor(rng.uniform(0.01, 0.99, size=4))
        fake = Tensor(rng.uniform(0.01, 0.99, size=4))
        assert dsc.d_loss(real, fake).item() >= 0.0


def test_d_loss_gradcheck_through_network(critic, rng):
    ph = rng.random((2, 3, 16, 16))
    sk = rng.random((2, 3, 16, 16))
    ph2 = rng.random((2, 3, 16, 16))

    def loss_fn():
        return dsc.d_loss(critic.scores(ph, sk), critic.scores(ph2, sk))

    err = gradcheck.check_module_loss(loss_fn, critic, max_entries=6, rng=rng)
    assert err < 1e-4


def test_certainty_weights_equal_score_pair(critic, rng):
    ph = rng.random((4, 3, 16, 16))
    sk = rng.random((4, 3, 16, 16))
    w = dsc.certainty_weights(critic, ph, sk)
    assert np.array_equal(w, dsc.score_pair(critic, ph, sk))
    assert ((w > 0) & (w < 1)).all()


def test_identical_pairs_identical_weights(critic, rng):
    ph = np.repeat(rng.random((1, 3, 16, 16)), 3, axis=0)
    sk = np.repeat(rng.random((1, 3, 16, 16)), 3, axis=0)
    w = dsc.certainty_weights(critic, ph, sk)
    assert np.allclose(w, w[0], atol=1e-12)


def test_no_gradient_path_from_scores_into_inputs(critic, rng):
    """Certainty weights are detached: using them in a loss cannot reach the
    critic (adversarial pressure to the generator travels only via rewards)."""
    critic.zero_grad()
    ph = rng.random((2, 3, 16, 16))
    sk = rng.random((2, 3, 16, 16))
    w = dsc.certainty_weights(critic, ph, sk)
    loss = (Tensor(w) * Tensor(np.ones(2))).sum()
    loss.backward()
    assert all(p.grad is None for p in critic.parameters())
