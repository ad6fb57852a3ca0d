"""Finite-difference check of the hand-written backward pass."""

import numpy as np

from lcchange.nn.model import ConvNetSpec, init_net, loss_and_grad_nhwc

# floor on the relative-error denominator; gradients below it are compared absolutely
REL_FLOOR = 1e-3


def relative_error(analytic, numeric, floor=REL_FLOOR):
    return np.abs(analytic - numeric) / np.maximum(np.abs(analytic) + np.abs(numeric), floor)


def grad_check(spec: ConvNetSpec, trials: int = 1, seed: int = 0, size: int | None = None,
               step: float = 1e-5) -> float:
    """Worst relative error between analytic and central-difference gradients.

    Runs in float64.  Each trial draws a fresh net, input, labels and a mask
    with roughly a quarter of the pixels switched off, then perturbs every
    parameter in turn.
    """
    rng = np.random.default_rng(seed)
    if size is None:
        size = 5 if spec.arch == "fcn" else 3 * spec.downsample
    worst = 0.0
    for t in range(trials):
        net = init_net(spec, seed=int(rng.integers(2**31)), dtype=np.float64)
        # random biases so no unit sits exactly at a ReLU kink
        for k in net.params:
            if k.endswith(".b"):
                net.params[k] = rng.normal(0, 0.1, net.params[k].shape)
        x = rng.uniform(0, 1, (2, size, size, spec.in_channels))
        y = rng.integers(0, spec.classes, (2, size, size))
        mask = rng.uniform(size=(2, size, size)) > 0.25
        mask[0, 0, 0] = True
        _, grads = loss_and_grad_nhwc(net, x, y, mask)
        for name, w in net.params.items():
            num = np.empty_like(w)
            flat = w.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + step
                lp, _ = loss_and_grad_nhwc(net, x, y, mask)
                flat[i] = orig - step
                lm, _ = loss_and_grad_nhwc(net, x, y, mask)
                flat[i] = orig
                num.reshape(-1)[i] = (lp - lm) / (2 * step)
            worst = max(worst, float(relative_error(grads[name], num).max()))
    return worst
