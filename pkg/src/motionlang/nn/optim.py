"""Nadam and global-norm gradient clipping."""
import math

import numpy as np

from .. import kernels


def global_norm(grads):
    return math.sqrt(sum(float(np.sum(g * g)) for g in grads.values()))


def clip_gradients(grads, max_norm):
    """Scale every gradient by ``max_norm / g`` when the global L2 norm ``g`` exceeds it."""
    if not max_norm > 0:
        raise ValueError("max_norm must be positive")
    if math.isinf(max_norm):
        return grads
    norm = global_norm(grads)
    if norm <= max_norm:
        return grads
    scale = max_norm / norm
    return {k: g * scale for k, g in grads.items()}


class Nadam:
    """Adam whose first moment gets a Nesterov look-ahead (Dozat, 2016).

    m_t = b1 m + (1-b1) g;  v_t = b2 v + (1-b2) g^2
    m_hat = b1 m_t / (1 - b1^(t+1)) + (1-b1) g / (1 - b1^t)
    v_hat = v_t / (1 - b2^t)
    theta -= lr m_hat / (sqrt(v_hat) + eps)
    """

    def __init__(self, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads):
        """Update ``params`` in place."""
        self.step_count += 1
        t = self.step_count
        b1, b2 = self.beta1, self.beta2
        for name, g in grads.items():
            if g.shape != params[name].shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {params[name].shape} for {name}")
            kernels.nadam_update(params[name], self.m[name], self.v[name], g, self.lr, b1, b2, self.eps, t)

    def state_arrays(self):
        out = {}
        for k in self.m:
            out[f"opt.m.{k}"] = self.m[k]
            out[f"opt.v.{k}"] = self.v[k]
        return out

    def load_state(self, arrays, step_count):
        for k in self.m:
            self.m[k] = np.array(arrays[f"opt.m.{k}"], dtype=np.float64)
            self.v[k] = np.array(arrays[f"opt.v.{k}"], dtype=np.float64)
        self.step_count = int(step_count)
