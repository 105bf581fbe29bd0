"""Tape-based reverse-mode differentiation over numpy arrays.

Operations are coarse (whole-sequence GRU, fused losses), so a training
forward pass records a few dozen nodes.  A :class:`GradientContext` belongs
to one thread and one forward/backward pass.
"""
import itertools

import numpy as np

from .. import kernels


class NonFiniteError(FloatingPointError):
    """Raised when a recorded tensor contains NaN or Inf."""

    def __init__(self, name):
        super().__init__(f"non-finite values in tensor {name!r}")
        self.tensor_name = name


class Tensor:
    __slots__ = ("data", "grad", "name", "requires_grad")

    def __init__(self, data, name="", requires_grad=False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.name = name
        self.requires_grad = requires_grad

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor({self.name!r}, shape={self.data.shape})"


def _unbroadcast(g, shape):
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


class GradientContext:
    """Records operations so that :meth:`backward` can replay them in reverse.

    With ``record=False`` the same op methods just compute values, which lets
    inference share the training forward code.
    """

    def __init__(self, record=True, check_finite=True):
        self.record = record
        self.check_finite = check_finite
        self._nodes = []

    # -- bookkeeping
    def _out(self, data, name, parents, backward):
        out = Tensor(data, name=name)
        if self.check_finite and not np.isfinite(out.data).all():
            raise NonFiniteError(name)
        if self.record and any(p.requires_grad for p in parents):
            out.requires_grad = True
            self._nodes.append((out, parents, backward))
        return out

    @staticmethod
    def _acc(t, g):
        if not t.requires_grad:
            return
        t.grad = g if t.grad is None else t.grad + g

    def backward(self, loss):
        """Accumulate ``d loss / d t`` into ``t.grad`` for every recorded tensor."""
        if loss.data.size != 1:
            raise ValueError("backward needs a scalar loss")
        loss.grad = np.ones_like(loss.data)
        for out, parents, fn in reversed(self._nodes):
            if out.grad is None:
                continue
            grads = fn(out.grad)
            for p, g in zip(parents, grads):
                if g is not None:
                    self._acc(p, g)

    # -- elementwise / shape ops
    def add(self, a, b, name="add"):
        def back(g):
            return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)
        return self._out(a.data + b.data, name, (a, b), back)

    def mul(self, a, b, name="mul"):
        def back(g):
            return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)
        return self._out(a.data * b.data, name, (a, b), back)

    def scale(self, a, const, name="scale"):
        """Multiply by a constant array (dropout masks, loss weights)."""
        const = np.asarray(const, dtype=np.float64)
        return self._out(a.data * const, name, (a,), lambda g: (_unbroadcast(g * const, a.shape),))

    def sum(self, a, name="sum"):
        return self._out(np.sum(a.data), name, (a,), lambda g: (np.broadcast_to(g, a.shape).copy(),))

    def matmul(self, x, w, name="matmul"):
        """``x[..., D] @ w[D, O]``."""
        def back(g):
            x2 = x.data.reshape(-1, x.shape[-1])
            g2 = g.reshape(-1, g.shape[-1])
            return g @ w.data.T, x2.T @ g2
        return self._out(x.data @ w.data, name, (x, w), back)

    def concat(self, parts, name="concat"):
        cuts = list(itertools.accumulate(p.shape[-1] for p in parts))[:-1]

        def back(g):
            return tuple(np.split(g, cuts, axis=-1))
        return self._out(np.concatenate([p.data for p in parts], axis=-1), name, tuple(parts), back)

    def repeat_time(self, x, T, name="repeat_time"):
        """``[B, D] -> [B, T, D]`` by repetition along a new time axis."""
        data = np.repeat(x.data[:, None, :], T, axis=1)
        return self._out(data, name, (x,), lambda g: (g.sum(axis=1),))

    def take_steps(self, x, steps, name="take_steps"):
        """Pick ``x[b, steps[b]]`` for every batch row of a ``[B, T, D]`` tensor."""
        steps = np.asarray(steps, dtype=np.intp)
        rows = np.arange(x.shape[0])

        def back(g):
            full = np.zeros(x.shape)
            full[rows, steps] = g
            return (full,)
        return self._out(x.data[rows, steps], name, (x,), back)

    def embedding(self, table, indices, name="embedding"):
        idx = np.asarray(indices, dtype=np.intp)

        def back(g):
            full = np.zeros(table.shape)
            np.add.at(full, idx.reshape(-1), g.reshape(-1, table.shape[1]))
            return (full,)
        return self._out(table.data[idx], name, (table,), back)

    # -- fused recurrent layer
    def gru(self, x, W, U, mask, b=None, gain=None, beta=None, reverse=False, name="gru"):
        """Masked GRU over ``x[B, T, D]`` returning per-step outputs ``[B, T, H]``.

        Either a plain bias ``b`` or layer-norm ``gain``/``beta`` is used.
        """
        xw = x.data @ W.data
        if b is not None:
            xw = xw + b.data
        mask_t = np.ascontiguousarray(np.asarray(mask, dtype=np.float64).T)
        out_t, cache = kernels.gru_forward(
            xw.transpose(1, 0, 2), U.data, mask_t,
            None if gain is None else gain.data, None if beta is None else beta.data,
            reverse=reverse,
        )
        parents = [x, W, U] + [p for p in (b, gain, beta) if p is not None]

        def back(g):
            dxw_t, dU, dgain, dbeta = kernels.gru_backward(g.transpose(1, 0, 2), U.data, mask_t, cache)
            dxw = dxw_t.transpose(1, 0, 2)
            x2 = x.data.reshape(-1, x.shape[-1])
            d2 = dxw.reshape(-1, dxw.shape[-1])
            grads = [dxw @ W.data.T, x2.T @ d2, dU]
            if b is not None:
                grads.append(d2.sum(axis=0))
            if gain is not None:
                grads += [dgain, dbeta]
            return tuple(grads)
        return self._out(out_t.transpose(1, 0, 2), name, tuple(parents), back)

    # -- fused losses
    def softmax_cross_entropy(self, logits, targets, mask, name="cross_entropy"):
        """Mean over active steps of ``-log softmax(logits)[target]``.

        Probabilities are clamped at 1e-12 before the log; clamped entries
        pass no gradient.
        """
        mask = np.asarray(mask, dtype=bool)
        n_active = int(mask.sum())
        if n_active == 0:
            raise ValueError("no active target steps")
        z = logits.data - logits.data.max(axis=-1, keepdims=True)
        e = np.exp(z)
        probs = e / e.sum(axis=-1, keepdims=True)
        tgt = np.asarray(targets, dtype=np.intp)
        p_t = np.take_along_axis(probs, tgt[..., None], axis=-1)[..., 0]
        nll = -np.log(np.maximum(p_t, kernels.LOG_CLAMP))
        loss = np.sum(np.where(mask, nll, 0.0)) / n_active

        def back(g):
            d = probs.copy()
            np.put_along_axis(d, tgt[..., None], np.take_along_axis(d, tgt[..., None], axis=-1) - 1.0, axis=-1)
            live = mask & (p_t >= kernels.LOG_CLAMP)
            return (d * (live[..., None] * (g / n_active)),)
        return self._out(loss, name, (logits,), back)

    def mdn_surrogate_loss(self, raw, targets, mask, K, J, name="mdn_surrogate"):
        """Mean over active steps of the weighted-log-density surrogate loss."""
        mask = np.asarray(mask, dtype=bool)
        n_active = int(mask.sum())
        if n_active == 0:
            raise ValueError("no active target steps")
        sel = np.nonzero(mask)
        per_row, grad_rows = kernels.mdn_surrogate(raw.data[sel], np.asarray(targets)[sel], K, J)
        loss = per_row.sum() / n_active

        def back(g):
            full = np.zeros(raw.shape)
            full[sel] = grad_rows * (g / n_active)
            return (full,)
        return self._out(loss, name, (raw,), back)


def no_grad(check_finite=True):
    return GradientContext(record=False, check_finite=check_finite)


def first_non_finite(tensors):
    """Name of the first tensor (in order) holding NaN/Inf, else ``None``."""
    for t in tensors:
        data = t.data if isinstance(t, Tensor) else np.asarray(t)
        if not np.all(np.isfinite(data)):
            return getattr(t, "name", "?")
    return None
