"""Central finite-difference verification of recorded gradients."""
import numpy as np


def finite_difference_check(loss_fn, params, analytic, epsilon=3e-5, floor=1e-6):
    """Worst relative error between ``analytic`` gradients and central differences.

    ``loss_fn(params) -> float`` must be deterministic.  ``params`` is a dict of
    arrays perturbed in place (and restored).  Relative error per scalar is
    ``|a - n| / max(|a|, |n|, floor)``; the floor keeps entries whose true
    gradient is ~0 from being judged on pure rounding noise.  The default step
    balances rounding error in the loss difference (which grows as the step
    shrinks) against the cubic truncation term.
    """
    worst = 0.0
    for name, p in params.items():
        flat = p.reshape(-1)
        ga = np.asarray(analytic[name]).reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + epsilon
            up = loss_fn(params)
            flat[i] = orig - epsilon
            down = loss_fn(params)
            flat[i] = orig
            num = (up - down) / (2.0 * epsilon)
            err = abs(ga[i] - num) / max(abs(ga[i]), abs(num), floor)
            worst = max(worst, err)
    return worst
