"""Recurrent and dense building blocks shared by both models.

The ``*_cell``/``dense`` functions are plain numpy single-step versions used
at inference time (beam search).  :func:`bigru_stack` is the recorded
whole-sequence version used for training and batch encoding.
"""
import numpy as np

from ..kernels import LN_EPS, sigmoid, softplus
from .autodiff import Tensor

ACTIVATIONS = ("linear", "softmax", "softplus", "sigmoid")


class ParameterSet(dict):
    """Name -> float64 array, iterated in insertion order."""

    def total(self):
        return int(sum(v.size for v in self.values()))

    def copy(self):
        return ParameterSet((k, v.copy()) for k, v in self.items())

    def as_tensors(self):
        return {k: Tensor(v, name=k, requires_grad=True) for k, v in self.items()}


# ----------------------------------------------------------------- init

def glorot_uniform(rng, fan_in, fan_out, shape=None):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape or (fan_in, fan_out))


def orthogonal(rng, n):
    q, r = np.linalg.qr(rng.standard_normal((n, n)))
    return q * np.sign(np.diag(r))


def init_gru(params, rng, prefix, n_in, n_hidden, layer_norm):
    H = n_hidden
    params[f"{prefix}.W"] = np.concatenate([glorot_uniform(rng, n_in, H) for _ in range(3)], axis=1)
    params[f"{prefix}.U"] = np.concatenate([orthogonal(rng, H) for _ in range(3)], axis=1)
    if layer_norm:
        params[f"{prefix}.gain"] = np.ones(3 * H)
        params[f"{prefix}.beta"] = np.zeros(3 * H)
    else:
        params[f"{prefix}.b"] = np.zeros(3 * H)


def gru_param_count(n_in, n_hidden, layer_norm):
    H = n_hidden
    return 3 * (n_in * H + H * H) + (6 * H if layer_norm else 3 * H)


# --------------------------------------------------------- single step

def layer_norm(x, gain, bias, eps=LN_EPS):
    """Normalize over the last axis, then scale by ``gain`` and shift by ``bias``."""
    x = np.asarray(x, dtype=np.float64)
    if np.shape(gain) != x.shape[-1:] or np.shape(bias) != x.shape[-1:]:
        raise ValueError("gain/bias length must match the normalized axis")
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * gain + bias


def gru_cell(x, h, W, U, b=None, gain=None, beta=None):
    """One GRU step; ``x`` is ``[..., D]`` and ``h`` is ``[..., H]``.

    z = sig(.), r = sig(.), c = tanh(W_c x + U_c (r*h)), h' = z*h + (1-z)*c.
    With ``gain``/``beta`` each gate's summed pre-activation is layer-normalized.
    """
    x = np.asarray(x, dtype=np.float64)
    h = np.asarray(h, dtype=np.float64)
    H = U.shape[0]
    if W.shape != (x.shape[-1], 3 * H) or U.shape != (H, 3 * H) or h.shape[-1] != H:
        raise ValueError(f"dimension mismatch: x{x.shape} h{h.shape} W{W.shape} U{U.shape}")
    xw = x @ W
    if b is not None:
        xw = xw + b
    a = xw[..., : 2 * H] + h @ U[:, : 2 * H]
    if gain is not None:
        a = np.concatenate([
            layer_norm(a[..., :H], gain[:H], beta[:H]),
            layer_norm(a[..., H:], gain[H:2 * H], beta[H:2 * H]),
        ], axis=-1)
    zr = sigmoid(a)
    z, r = zr[..., :H], zr[..., H:]
    ac = xw[..., 2 * H:] + (r * h) @ U[:, 2 * H:]
    if gain is not None:
        ac = layer_norm(ac, gain[2 * H:], beta[2 * H:])
    c = np.tanh(ac)
    return z * h + (1.0 - z) * c


def gru_cell_params(params, prefix):
    return dict(
        W=params[f"{prefix}.W"], U=params[f"{prefix}.U"], b=params.get(f"{prefix}.b"),
        gain=params.get(f"{prefix}.gain"), beta=params.get(f"{prefix}.beta"),
    )


def dense(x, weights, bias, activation="linear"):
    z = np.asarray(x, dtype=np.float64) @ weights + bias
    if activation == "linear":
        return z
    if activation == "softmax":
        e = np.exp(z - z.max(axis=-1, keepdims=True))
        return e / e.sum(axis=-1, keepdims=True)
    if activation == "softplus":
        return softplus(z)
    if activation == "sigmoid":
        return sigmoid(z)
    raise ValueError(f"unknown activation {activation!r}; expected one of {ACTIVATIONS}")


def dropout(x, rate, training, rng):
    """Inverted dropout; identity outside training or at rate 0."""
    if not 0.0 <= rate < 1.0:
        raise ValueError("dropout rate must be in [0, 1)")
    x = np.asarray(x, dtype=np.float64)
    if not training or rate == 0.0:
        return x
    return x * dropout_mask(rng, x.shape, rate)


def dropout_mask(rng, shape, rate):
    keep = rng.random(shape) >= rate
    return keep / (1.0 - rate)


# ----------------------------------------------------- recorded stacks

def bigru_stack(ctx, x, mask, params, prefix, layers, dropout_rate=0.0, training=False, rng=None):
    """Stacked bidirectional GRU over ``x[B, T, D]`` with an active-prefix mask.

    Each layer's input gets one dropout mask per sequence (reused over time).
    Returns ``(outputs, context)``: the top layer's concatenated per-step
    outputs and the context vector made of the forward direction's output
    at the last active step and the backward direction's output at step 0.
    """
    mask = np.asarray(mask, dtype=np.float64)
    lengths = check_prefix_mask(mask)
    h = x
    for layer in range(layers):
        if training and dropout_rate > 0.0:
            B, _, D = h.shape
            h = ctx.scale(h, dropout_mask(rng, (B, 1, D), dropout_rate), name=f"{prefix}.l{layer}.dropout")
        outs = []
        for direction in ("fwd", "bwd"):
            p = f"{prefix}.l{layer}.{direction}"
            outs.append(ctx.gru(
                h, params[f"{p}.W"], params[f"{p}.U"], mask,
                b=params.get(f"{p}.b"), gain=params.get(f"{p}.gain"), beta=params.get(f"{p}.beta"),
                reverse=direction == "bwd", name=p,
            ))
        fwd, bwd = outs
        h = ctx.concat([fwd, bwd], name=f"{prefix}.l{layer}.out")
    B = x.shape[0]
    context = ctx.concat([
        ctx.take_steps(fwd, lengths - 1, name=f"{prefix}.last_fwd"),
        ctx.take_steps(bwd, np.zeros(B, dtype=np.intp), name=f"{prefix}.first_bwd"),
    ], name=f"{prefix}.context")
    return h, context


def check_prefix_mask(mask):
    """Validate a ``[B, T]`` 0/1 mask with contiguous active prefixes; return lengths."""
    mask = np.asarray(mask)
    lengths = (mask > 0).sum(axis=1).astype(np.intp)
    if np.any(lengths == 0):
        raise ValueError("sequence with no active steps")
    steps = np.arange(mask.shape[1])
    if np.any((mask > 0) != (steps[None, :] < lengths[:, None])):
        raise ValueError("mask must mark a contiguous active prefix")
    return lengths
