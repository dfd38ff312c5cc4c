import numpy as np
import pytest

from sketchret import kernels


@pytest.fixture(autouse=True)
def restore_backend():
    before = kernels.numba_active()
    yield
    kernels.set_numba(before)


def conv_reference(x, w, b, stride, pad):
    """Direct quadruple-loop convolution, the independent oracle."""
    bn, cn, h, wd = x.shape
    on, _, kh, kw = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (wd + 2 * pad - kw) // stride + 1
    out = np.zeros((bn, on, oh, ow))
    for bb in range(bn):
        for o in range(on):
            for i in range(oh):
                for j in range(ow):
                    patch = xp[bb, :, i * stride : i * stride + kh, j * stride : j * stride + kw]
                    out[bb, o, i, j] = (patch * w[o]).sum() + b[o]
    return out


@pytest.mark.parametrize("use_numba", [False, True])
def test_conv_forward_matches_bruteforce(use_numba, rng):
    if use_numba and not kernels.HAS_NUMBA:
        pytest.skip("numba unavailable")
    kernels.set_numba(use_numba)
    x = rng.normal(size=(2, 3, 9, 7))
    w = rng.normal(size=(4, 3, 3, 3))
    b = rng.normal(size=4)
    for stride, pad in [(1, 0), (1, 1), (2, 1)]:
        out, _ = kernels.conv2d_forward(x, w, b, stride, pad)
        ref = conv_reference(x, w, b, stride, pad)
        assert np.allclose(out, ref, atol=1e-12)


def test_backends_agree(rng):
    if not kernels.HAS_NUMBA:
        pytest.skip("numba unavailable")
    x = rng.normal(size=(3, 4, 16, 16))
    w = rng.normal(size=(6, 4, 3, 3))
    b = rng.normal(size=6)
    kernels.set_numba(False)
    out_np, cols_np = kernels.conv2d_forward(x, w, b, 2, 1)
    g = rng.normal(size=out_np.shape)
    grads_np = kernels.conv2d_backward(g, cols_np, x.shape, w, 2, 1)
    kernels.set_numba(True)
    out_nb, cols_nb = kernels.conv2d_forward(x, w, b, 2, 1)
    grads_nb = kernels.conv2d_backward(g, cols_nb, x.shape, w, 2, 1)
    assert np.allclose(out_np, out_nb, rtol=1e-12, atol=1e-12)
    for a, c in zip(grads_np, grads_nb):
        assert np.allclose(a, c, rtol=1e-12, atol=1e-12)


def test_conv_backward_matches_finite_difference(rng):
    x = rng.normal(size=(2, 2, 6, 6))
    w = rng.normal(size=(3, 2, 3, 3))
    b = rng.normal(size=3)
    out, cols = kernels.conv2d_forward(x, w, b, 2, 1)
    g = rng.normal(size=out.shape)
    gx, gw, gb = kernels.conv2d_backward(g, cols, x.shape, w, 2, 1)

    def loss(xx, ww, bb):
        o, _ = kernels.conv2d_forward(xx, ww, bb, 2, 1)
        return float((o * g).sum())

    h = 1e-6
    for arr, grad in ((x, gx), (w, gw), (b, gb)):
        flat = arr.reshape(-1)
        idx = rng.choice(flat.size, size=min(20, flat.size), replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            hi = loss(x, w, b)
            flat[i] = orig - h
            lo = loss(x, w, b)
            flat[i] = orig
            assert abs((hi - lo) / (2 * h) - grad.reshape(-1)[i]) < 1e-5


@pytest.mark.parametrize("use_numba", [False, True])
def test_draw_segments_basic(use_numba):
    if use_numba and not kernels.HAS_NUMBA:
        pytest.skip("numba unavailable")
    kernels.set_numba(use_numba)
    img = np.zeros((5, 7))
    kernels.draw_segments(img, np.array([0]), np.array([0]), np.array([6]), np.array([0]))
    assert img[0].sum() == 7  # horizontal line hits every column
    img2 = np.zeros((5, 5))
    kernels.draw_segments(img2, np.array([0]), np.array([0]), np.array([4]), np.array([4]))
    assert np.array_equal(np.diag(img2), np.ones(5))


def test_draw_segments_backends_identical(rng):
    if not kernels.HAS_NUMBA:
        pytest.skip("numba unavailable")
    for _ in range(50):
        pts = rng.integers(-5, 40, size=(4, 8))
        a = np.zeros((32, 32))
        b = np.zeros((32, 32))
        kernels.set_numba(False)
        kernels.draw_segments(a, pts[0], pts[1], pts[2], pts[3])
        kernels.set_numba(True)
        kernels.draw_segments(b, pts[0], pts[1], pts[2], pts[3])
        assert np.array_equal(a, b)
