"""Finite-difference gradient verification helpers.

Used throughout the test suite to check every analytic gradient in the
package against central differences in float64.
"""

from __future__ import annotations

import numpy as np

from .autograd import Tensor


def finite_difference(fn, arrays, step: float = 1e-5):
    """Central-difference gradients of ``fn`` w.r.t. each array in ``arrays``.

    ``fn`` maps the list of numpy arrays to a scalar float. Returns a list
    of gradient arrays matching the inputs.
    """
    grads = []
    for k, base in enumerate(arrays):
        base = np.asarray(base, dtype=np.float64)
        grad = np.zeros_like(base)
        flat = base.reshape(-1)
        gflat = grad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            hi = fn(arrays)
            flat[i] = orig - step
            lo = fn(arrays)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * step)
        grads.append(grad)
    return grads


def max_relative_error(analytic, numeric, floor: float = 1e-3) -> float:
    """Elementwise relative error with a magnitude floor on the denominator.

    The floor keeps components whose true gradient is numerically zero
    (e.g. dead ReLU units) from dominating via finite-difference noise.
    """
    worst = 0.0
    for a, n in zip(analytic, numeric):
        a = np.asarray(a, dtype=np.float64)
        n = np.asarray(n, dtype=np.float64)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(np.max(np.abs(a - n) / denom)))
    return worst


def check_tensor_fn(fn, arrays, step: float = 1e-5, floor: float = 1e-3) -> float:
    """Compare autograd gradients of ``fn`` against central differences.

    ``fn`` takes a list of Tensors and returns a scalar Tensor. Returns the
    max relative error over all inputs.
    """
    tensors = [Tensor(np.array(a, dtype=np.float64), requires_grad=True) for a in arrays]
    out = fn(tensors)
    out.backward()
    analytic = [t.grad if t.grad is not None else np.zeros_like(t.data) for t in tensors]

    def scalar_fn(npargs):
        ts = [Tensor(np.array(a, dtype=np.float64)) for a in npargs]
        return float(fn(ts).data)

    numeric = finite_difference(scalar_fn, [np.array(a, dtype=np.float64) for a in arrays], step=step)
    return max_relative_error(analytic, numeric, floor=floor)


def check_module_loss(
    loss_fn,
    module,
    step: float = 1e-5,
    floor: float = 1e-3,
    max_entries=None,
    rng=None,
    kink_filter: bool = False,
) -> float:
    """Verify a loss's gradient w.r.t. a module's parameters.

    ``loss_fn()`` evaluates the loss as a scalar Tensor using the module's
    current parameters. When ``max_entries`` is set, only a random subset of
    each parameter's entries is probed (keeps big checks inside time budgets).

    With ``kink_filter`` enabled, entries where the loss is not locally
    smooth are skipped: when the forward and backward one-sided differences
    disagree, a ReLU/hinge/abs kink sits inside the probe window (possibly
    exactly at the point - zero-initialized biases make exact-zero
    pre-activations structurally common), and finite differences say
    nothing about the analytic subgradient there. For smooth points the
    one-sided estimates agree to O(step * f''), far below the 0.1 gate.
    """

    module.zero_grad()
    loss = loss_fn()
    loss.backward()
    params = [p for _, p in module.named_parameters()]
    analytic = [p.grad if p.grad is not None else np.zeros_like(p.data) for p in params]

    mid = float(loss.data)
    worst = 0.0
    for p, a in zip(params, analytic):
        flat = p.data.reshape(-1)
        aflat = a.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = (rng or np.random.default_rng(0)).choice(flat.size, size=max_entries, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            hi = float(loss_fn().data)
            flat[i] = orig - step
            lo = float(loss_fn().data)
            flat[i] = orig
            numeric = (hi - lo) / (2.0 * step)
            denom = max(abs(aflat[i]), abs(numeric), floor)
            err = abs(aflat[i] - numeric) / denom
            if err > 1e-5 and kink_filter:
                fwd = (hi - mid) / step
                bwd = (mid - lo) / step
                if abs(fwd - bwd) / max(abs(fwd), abs(bwd), floor) > 0.1:
                    continue  # non-smooth inside the probe window
            worst = max(worst, err)
    return worst
