"""Hot loops: GRU recurrence over time (forward + BPTT) and the MDN loss.

Every kernel exists twice: an explicit-loop version compiled with numba and a
vectorized numpy version.  Both take and return the same arrays; the public
wrappers dispatch on :func:`motionlang._accel.use_numba`.

GRU arrays are time-major inside the kernels (``[T, B, ...]``) so each step
reads a contiguous slab.  Gate order along the ``3H`` axis is update (z),
reset (r), candidate (c).
"""
import math

import numpy as np

from . import _accel
from ._accel import njit

LN_EPS = 1e-5
SIGMA_FLOOR = 1e-6
LOG_CLAMP = 1e-12
HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


# ---------------------------------------------------------------- scalars

@njit(cache=True)
def _sigmoid_s(x):
    if x >= 0.0:
        return 1.0 / (1.0 + math.exp(-x))
    e = math.exp(x)
    return e / (1.0 + e)


@njit(cache=True)
def _softplus_s(x):
    return math.log1p(math.exp(-abs(x))) + max(x, 0.0)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def softplus(x):
    x = np.asarray(x, dtype=np.float64)
    return np.log1p(np.exp(-np.abs(x))) + np.maximum(x, 0.0)


# ---------------------------------------------------------- GRU: numba

@njit(cache=True)
def _ln_rows_nb(a, col0, H, gain, beta, norm_t, inv_t, gate, eps):
    # normalizes a[:, col0:col0+H] in place into gain/beta space
    B = a.shape[0]
    for b in range(B):
        mu = 0.0
        for k in range(H):
            mu += a[b, col0 + k]
        mu /= H
        var = 0.0
        for k in range(H):
            d = a[b, col0 + k] - mu
            var += d * d
        var /= H
        iv = 1.0 / math.sqrt(var + eps)
        inv_t[b, gate] = iv
        for k in range(H):
            n = (a[b, col0 + k] - mu) * iv
            norm_t[b, col0 + k] = n
            a[b, col0 + k] = n * gain[col0 + k] + beta[col0 + k]


@njit(cache=True)
def _gru_forward_nb(xw, U, mask, gain, beta, use_ln, reverse, eps):
    T, B, H3 = xw.shape
    H = H3 // 3
    out = np.zeros((T, B, H))
    hprev = np.zeros((T, B, H))
    act = np.zeros((T, B, H3))
    norm = np.zeros((T, B, H3))
    inv = np.zeros((T, B, 3))
    Uzr = np.ascontiguousarray(U[:, : 2 * H])
    Uc = np.ascontiguousarray(U[:, 2 * H:])
    h = np.zeros((B, H))
    rh = np.zeros((B, H))
    for step in range(T):
        t = T - 1 - step if reverse else step
        hprev[t] = h
        a = np.dot(h, Uzr)
        for b in range(B):
            for k in range(2 * H):
                a[b, k] += xw[t, b, k]
        if use_ln:
            _ln_rows_nb(a, 0, H, gain, beta, norm[t], inv[t], 0, eps)
            _ln_rows_nb(a, H, H, gain, beta, norm[t], inv[t], 1, eps)
        for b in range(B):
            for k in range(2 * H):
                act[t, b, k] = _sigmoid_s(a[b, k])
            for k in range(H):
                rh[b, k] = act[t, b, H + k] * h[b, k]
        ac = np.dot(rh, Uc)
        for b in range(B):
            for k in range(H):
                ac[b, k] += xw[t, b, 2 * H + k]
        if use_ln:
            # column offset 0 of ac corresponds to gate 2
            for b in range(B):
                mu = 0.0
                for k in range(H):
                    mu += ac[b, k]
                mu /= H
                var = 0.0
                for k in range(H):
                    d = ac[b, k] - mu
                    var += d * d
                var /= H
                iv = 1.0 / math.sqrt(var + eps)
                inv[t, b, 2] = iv
                for k in range(H):
                    n = (ac[b, k] - mu) * iv
                    norm[t, b, 2 * H + k] = n
                    ac[b, k] = n * gain[2 * H + k] + beta[2 * H + k]
        for b in range(B):
            active = mask[t, b] > 0.0
            for k in range(H):
                c = math.tanh(ac[b, k])
                act[t, b, 2 * H + k] = c
                z = act[t, b, k]
                hn = z * h[b, k] + (1.0 - z) * c
                if active:
                    h[b, k] = hn
                    out[t, b, k] = hn
    return out, hprev, act, norm, inv


@njit(cache=True)
def _ln_back_rows_nb(dpre, col0, H, gain, norm_t, inv_t, gate, dgain, dbeta, da):
    B = dpre.shape[0]
    for b in range(B):
        s1 = 0.0
        s2 = 0.0
        for k in range(H):
            g = dpre[b, col0 + k]
            n = norm_t[b, col0 + k]
            dgain[col0 + k] += g * n
            dbeta[col0 + k] += g
            dn = g * gain[col0 + k]
            s1 += dn
            s2 += dn * n
        s1 /= H
        s2 /= H
        iv = inv_t[b, gate]
        for k in range(H):
            dn = dpre[b, col0 + k] * gain[col0 + k]
            da[b, col0 + k] = iv * (dn - s1 - norm_t[b, col0 + k] * s2)


@njit(cache=True)
def _gru_backward_nb(dout, U, mask, gain, hprev, act, norm, inv, use_ln, reverse):
    T, B, H = dout.shape
    H3 = 3 * H
    dxw = np.zeros((T, B, H3))
    dU = np.zeros((H, H3))
    dgain = np.zeros(H3)
    dbeta = np.zeros(H3)
    UzrT = np.ascontiguousarray(U[:, : 2 * H].T)
    UcT = np.ascontiguousarray(U[:, 2 * H:].T)
    dh = np.zeros((B, H))
    dpre = np.zeros((B, H3))
    da = np.zeros((B, H3))
    rh_all = np.zeros((T, B, H))
    for step in range(T):
        t = step if reverse else T - 1 - step
        dh_prev = np.zeros((B, H))
        for b in range(B):
            active = mask[t, b] > 0.0
            for k in range(H):
                if active:
                    g = dh[b, k] + dout[t, b, k]
                    z = act[t, b, k]
                    c = act[t, b, 2 * H + k]
                    hp = hprev[t, b, k]
                    dpre[b, k] = g * (hp - c) * z * (1.0 - z)
                    dpre[b, 2 * H + k] = g * (1.0 - z) * (1.0 - c * c)
                    dh_prev[b, k] = g * z
                else:
                    dpre[b, k] = 0.0
                    dpre[b, 2 * H + k] = 0.0
                    dh_prev[b, k] = dh[b, k]
        if use_ln:
            _ln_back_rows_nb(dpre, 2 * H, H, gain, norm[t], inv[t], 2, dgain, dbeta, da)
        else:
            for b in range(B):
                for k in range(H):
                    da[b, 2 * H + k] = dpre[b, 2 * H + k]
        dac = np.ascontiguousarray(da[:, 2 * H:])
        drh = np.dot(dac, UcT)
        for b in range(B):
            for k in range(H):
                r = act[t, b, H + k]
                dpre[b, H + k] = drh[b, k] * hprev[t, b, k] * r * (1.0 - r)
                dh_prev[b, k] += drh[b, k] * r
        if use_ln:
            _ln_back_rows_nb(dpre, 0, H, gain, norm[t], inv[t], 0, dgain, dbeta, da)
            _ln_back_rows_nb(dpre, H, H, gain, norm[t], inv[t], 1, dgain, dbeta, da)
        else:
            for b in range(B):
                for k in range(2 * H):
                    da[b, k] = dpre[b, k]
        dazr = np.ascontiguousarray(da[:, : 2 * H])
        dh_prev += np.dot(dazr, UzrT)
        for b in range(B):
            for k in range(H3):
                dxw[t, b, k] = da[b, k]
        dh = dh_prev
    # weight gradients as two large products instead of T small ones
    for t in range(T):
        for b in range(B):
            for k in range(H):
                rh_all[t, b, k] = act[t, b, H + k] * hprev[t, b, k]
    flat = dxw.reshape(T * B, H3)
    dU[:, : 2 * H] = np.dot(hprev.reshape(T * B, H).T.copy(), np.ascontiguousarray(flat[:, : 2 * H]))
    dU[:, 2 * H:] = np.dot(rh_all.reshape(T * B, H).T.copy(), np.ascontiguousarray(flat[:, 2 * H:]))
    return dxw, dU, dgain, dbeta


# ---------------------------------------------------------- GRU: numpy

def _ln_np(a, eps):
    mu = a.mean(axis=-1, keepdims=True)
    var = ((a - mu) ** 2).mean(axis=-1, keepdims=True)
    iv = 1.0 / np.sqrt(var + eps)
    return (a - mu) * iv, iv[..., 0]


def _ln_back_np(dn, n, iv):
    return iv[..., None] * (dn - dn.mean(axis=-1, keepdims=True) - n * (dn * n).mean(axis=-1, keepdims=True))


def _gru_forward_np(xw, U, mask, gain, beta, use_ln, reverse, eps):
    T, B, H3 = xw.shape
    H = H3 // 3
    out = np.zeros((T, B, H))
    hprev = np.zeros((T, B, H))
    act = np.zeros((T, B, H3))
    norm = np.zeros((T, B, H3))
    inv = np.zeros((T, B, 3))
    h = np.zeros((B, H))
    for step in range(T):
        t = T - 1 - step if reverse else step
        hprev[t] = h
        a = xw[t, :, : 2 * H] + h @ U[:, : 2 * H]
        if use_ln:
            n, iv = _ln_np(a.reshape(B, 2, H), eps)
            norm[t, :, : 2 * H] = n.reshape(B, 2 * H)
            inv[t, :, :2] = iv
            a = norm[t, :, : 2 * H] * gain[: 2 * H] + beta[: 2 * H]
        zr = sigmoid(a)
        z, r = zr[:, :H], zr[:, H:]
        ac = xw[t, :, 2 * H:] + (r * h) @ U[:, 2 * H:]
        if use_ln:
            n, iv = _ln_np(ac, eps)
            norm[t, :, 2 * H:] = n
            inv[t, :, 2] = iv
            ac = n * gain[2 * H:] + beta[2 * H:]
        c = np.tanh(ac)
        act[t, :, : 2 * H] = zr
        act[t, :, 2 * H:] = c
        hn = z * h + (1.0 - z) * c
        m = (mask[t] > 0)[:, None]
        h = np.where(m, hn, h)
        out[t] = np.where(m, hn, 0.0)
    return out, hprev, act, norm, inv


def _gru_backward_np(dout, U, mask, gain, hprev, act, norm, inv, use_ln, reverse):
    T, B, H = dout.shape
    H3 = 3 * H
    dxw = np.zeros((T, B, H3))
    dU = np.zeros((H, H3))
    dgain = np.zeros(H3)
    dbeta = np.zeros(H3)
    dh = np.zeros((B, H))
    UzrT = np.ascontiguousarray(U[:, : 2 * H].T)
    UcT = np.ascontiguousarray(U[:, 2 * H:].T)
    order = range(T) if reverse else range(T - 1, -1, -1)
    for t in order:
        m = (mask[t] > 0)[:, None]
        g = np.where(m, dh + dout[t], 0.0)
        hp = hprev[t]
        z, r, c = act[t, :, :H], act[t, :, H:2 * H], act[t, :, 2 * H:]
        dh_prev = np.where(m, g * z, dh)
        dpre_z = g * (hp - c) * z * (1.0 - z)
        dpre_c = g * (1.0 - z) * (1.0 - c * c)
        if use_ln:
            nc = norm[t, :, 2 * H:]
            dgain[2 * H:] += (dpre_c * nc).sum(axis=0)
            dbeta[2 * H:] += dpre_c.sum(axis=0)
            dac = _ln_back_np(dpre_c * gain[2 * H:], nc, inv[t, :, 2])
        else:
            dac = dpre_c
        drh = dac @ UcT
        dpre_r = drh * hp * r * (1.0 - r)
        dh_prev = dh_prev + drh * r
        dpre_zr = np.concatenate([dpre_z, dpre_r], axis=1)
        if use_ln:
            nzr = norm[t, :, : 2 * H]
            dgain[: 2 * H] += (dpre_zr * nzr).sum(axis=0)
            dbeta[: 2 * H] += dpre_zr.sum(axis=0)
            dn = (dpre_zr * gain[: 2 * H]).reshape(B, 2, H)
            dazr = _ln_back_np(dn, nzr.reshape(B, 2, H), inv[t, :, :2]).reshape(B, 2 * H)
        else:
            dazr = dpre_zr
        dh_prev = dh_prev + dazr @ UzrT
        dxw[t, :, : 2 * H] = dazr
        dxw[t, :, 2 * H:] = dac
        dh = dh_prev
    rh = act[:, :, H:2 * H] * hprev
    dU[:, : 2 * H] = hprev.reshape(T * B, H).T @ dxw[:, :, : 2 * H].reshape(T * B, 2 * H)
    dU[:, 2 * H:] = rh.reshape(T * B, H).T @ dxw[:, :, 2 * H:].reshape(T * B, H)
    return dxw, dU, dgain, dbeta


# ------------------------------------------------------------ dispatch

def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def gru_forward(xw, U, mask, gain=None, beta=None, reverse=False, eps=LN_EPS):
    """Run a masked GRU over a time-major projected input.

    ``xw`` is ``x @ W (+ b)`` with shape ``[T, B, 3H]``; ``mask`` is ``[T, B]``.
    Masked steps leave the hidden state unchanged and emit zeros.  Passing
    ``gain``/``beta`` switches on per-gate layer normalization of the summed
    pre-activations.

    Returns ``(out, cache)`` where ``out`` is ``[T, B, H]``.
    """
    H3 = xw.shape[2]
    use_ln = gain is not None
    g = _f64(gain) if use_ln else np.ones(H3)
    bt = _f64(beta) if use_ln else np.zeros(H3)
    fn = _gru_forward_nb if _accel.use_numba() else _gru_forward_np
    out, hprev, act, norm, inv = fn(_f64(xw), _f64(U), _f64(mask), g, bt, use_ln, bool(reverse), eps)
    cache = (hprev, act, norm, inv, g, use_ln, bool(reverse))
    return out, cache


def gru_backward(dout, U, mask, cache):
    """Gradients of :func:`gru_forward` given ``dL/dout``.

    Returns ``(dxw, dU, dgain, dbeta)``; the last two are ``None`` without
    layer normalization.
    """
    hprev, act, norm, inv, g, use_ln, reverse = cache
    fn = _gru_backward_nb if _accel.use_numba() else _gru_backward_np
    dxw, dU, dgain, dbeta = fn(_f64(dout), _f64(U), _f64(mask), g, hprev, act, norm, inv, use_ln, reverse)
    if not use_ln:
        return dxw, dU, None, None
    return dxw, dU, dgain, dbeta


# ------------------------------------------------------------------ MDN

@njit(cache=True)
def _mdn_surrogate_nb(raw, target, K, J):
    N = raw.shape[0]
    loss = np.zeros(N)
    grad = np.zeros(raw.shape)
    ell = np.zeros(K)
    alpha = np.zeros(K)
    for n in range(N):
        m = -1e300
        for k in range(K):
            if raw[n, k] > m:
                m = raw[n, k]
        s = 0.0
        for k in range(K):
            alpha[k] = math.exp(raw[n, k] - m)
            s += alpha[k]
        for k in range(K):
            alpha[k] /= s
        cont = 0.0
        for k in range(K):
            acc = 0.0
            for j in range(J):
                mu = raw[n, K + k * J + j]
                sp = raw[n, K + K * J + k * J + j]
                sig = _softplus_s(sp)
                floored = sig < SIGMA_FLOOR
                if floored:
                    sig = SIGMA_FLOOR
                d = target[n, j] - mu
                acc += -HALF_LOG_2PI - math.log(sig) - d * d / (2.0 * sig * sig)
                grad[n, K + k * J + j] = -alpha[k] * d / (sig * sig)
                if not floored:
                    dsig = -alpha[k] * (-1.0 / sig + d * d / (sig * sig * sig))
                    grad[n, K + K * J + k * J + j] = dsig * _sigmoid_s(sp)
            ell[k] = acc
            cont -= alpha[k] * acc
        for k in range(K):
            grad[n, k] = alpha[k] * (-ell[k] - cont)
        q = raw[n, K + 2 * K * J]
        p = _sigmoid_s(q)
        omp = _sigmoid_s(-q)
        f = target[n, J]
        bern = 0.0
        dq = 0.0
        if p >= LOG_CLAMP:
            bern -= f * math.log(p)
            dq -= f * omp
        else:
            bern -= f * math.log(LOG_CLAMP)
        if omp >= LOG_CLAMP:
            bern -= (1.0 - f) * math.log(omp)
            dq += (1.0 - f) * p
        else:
            bern -= (1.0 - f) * math.log(LOG_CLAMP)
        grad[n, K + 2 * K * J] = dq
        loss[n] = cont + bern
    return loss, grad


def _mdn_surrogate_np(raw, target, K, J):
    N = raw.shape[0]
    logits = raw[:, :K]
    mu = raw[:, K:K + K * J].reshape(N, K, J)
    sp = raw[:, K + K * J:K + 2 * K * J].reshape(N, K, J)
    q = raw[:, K + 2 * K * J]
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    alpha = e / e.sum(axis=1, keepdims=True)
    sig_raw = softplus(sp)
    floored = sig_raw < SIGMA_FLOOR
    sig = np.where(floored, SIGMA_FLOOR, sig_raw)
    d = target[:, None, :J] - mu
    ell = (-HALF_LOG_2PI - np.log(sig) - d * d / (2.0 * sig * sig)).sum(axis=2)
    cont = -(alpha * ell).sum(axis=1)
    grad = np.zeros_like(raw)
    grad[:, :K] = alpha * (-ell - cont[:, None])
    a3 = alpha[:, :, None]
    grad[:, K:K + K * J] = (-a3 * d / (sig * sig)).reshape(N, K * J)
    dsig = -a3 * (-1.0 / sig + d * d / sig ** 3)
    grad[:, K + K * J:K + 2 * K * J] = np.where(floored, 0.0, dsig * sigmoid(sp)).reshape(N, K * J)
    p = sigmoid(q)
    omp = sigmoid(-q)
    f = target[:, J]
    bern = -f * np.log(np.maximum(p, LOG_CLAMP)) - (1.0 - f) * np.log(np.maximum(omp, LOG_CLAMP))
    grad[:, K + 2 * K * J] = np.where(p >= LOG_CLAMP, -f * omp, 0.0) + np.where(omp >= LOG_CLAMP, (1.0 - f) * p, 0.0)
    return cont + bern, grad


def mdn_surrogate(raw, target, K, J):
    """Per-row surrogate loss and its gradient w.r.t. the raw head outputs.

    ``raw`` is ``[N, K + 2KJ + 1]`` laid out as (mixture logits, means,
    pre-softplus spreads, pre-sigmoid activity); ``target`` is ``[N, J+1]``.
    """
    fn = _mdn_surrogate_nb if _accel.use_numba() else _mdn_surrogate_np
    return fn(_f64(raw), _f64(target), int(K), int(J))


# ---------------------------------------------------------------- Nadam

@njit(cache=True)
def _nadam_nb(p, m, v, g, lr, b1, b2, eps, c_m, c_g, c_v):
    for i in range(p.size):
        gi = g[i]
        mi = b1 * m[i] + (1.0 - b1) * gi
        vi = b2 * v[i] + (1.0 - b2) * gi * gi
        m[i] = mi
        v[i] = vi
        p[i] -= lr * (c_m * mi + c_g * gi) / (math.sqrt(c_v * vi) + eps)


def _nadam_np(p, m, v, g, lr, b1, b2, eps, c_m, c_g, c_v):
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * (g * g)
    step = m * c_m
    step += g * c_g
    denom = np.sqrt(v * c_v)
    denom += eps
    step /= denom
    step *= lr
    p -= step


def nadam_update(p, m, v, g, lr, b1, b2, eps, t):
    """One in-place Nadam update of flat-viewable arrays ``p``, ``m``, ``v`` at step ``t``."""
    c_m = b1 / (1.0 - b1 ** (t + 1))
    c_g = (1.0 - b1) / (1.0 - b1 ** t)
    c_v = 1.0 / (1.0 - b2 ** t)
    if _accel.use_numba() and all(a.flags.c_contiguous for a in (p, m, v)):
        _nadam_nb(p.reshape(-1), m.reshape(-1), v.reshape(-1), _f64(g).reshape(-1), lr, b1, b2, eps, c_m, c_g, c_v)
    else:
        _nadam_np(p, m, v, g, lr, b1, b2, eps, c_m, c_g, c_v)
