import math

import numpy as np
import pytest

from motionlang import _accel, kernels
from motionlang.nn.autodiff import GradientContext, NonFiniteError, Tensor, no_grad
from motionlang.nn.checkpoint import CheckpointError, read_archive, validate_parameters, write_archive
from motionlang.nn.gradcheck import finite_difference_check
from motionlang.nn.layers import (ParameterSet, bigru_stack, dense, dropout, gru_cell, init_gru, layer_norm)
from motionlang.nn.optim import Nadam, clip_gradients, global_norm


# ------------------------------------------------------------ oracles

def _sig(v):
    return 1.0 / (1.0 + math.exp(-v))


def _ln_list(v, g, b, eps=1e-5):
    mu = sum(v) / len(v)
    var = sum((x - mu) ** 2 for x in v) / len(v)
    return [(x - mu) / math.sqrt(var + eps) * gi + bi for x, gi, bi in zip(v, g, b)]


def scalar_gru(x, h, W, U, b=None, gain=None, beta=None):
    """Unit-by-unit GRU step in plain Python floats."""
    D, H = len(x), len(h)
    pre = [[sum(x[d] * W[d][g * H + i] for d in range(D)) + (b[g * H + i] if b is not None else 0.0)
            for i in range(H)] for g in range(3)]
    a = [[pre[g][i] + sum(h[k] * U[k][g * H + i] for k in range(H)) for i in range(H)] for g in range(2)]
    if gain is not None:
        a = [_ln_list(a[g], gain[g * H:(g + 1) * H], beta[g * H:(g + 1) * H]) for g in range(2)]
    z = [_sig(v) for v in a[0]]
    r = [_sig(v) for v in a[1]]
    rh = [r[k] * h[k] for k in range(H)]
    c = [pre[2][i] + sum(rh[k] * U[k][2 * H + i] for k in range(H)) for i in range(H)]
    if gain is not None:
        c = _ln_list(c, gain[2 * H:], beta[2 * H:])
    return [z[i] * h[i] + (1 - z[i]) * math.tanh(c[i]) for i in range(H)]


def _rand_gru(rng, D, H, ln):
    p = ParameterSet()
    init_gru(p, rng, "g", D, H, ln)
    if ln:
        p["g.gain"] = rng.uniform(0.5, 1.5, 3 * H)
        p["g.beta"] = rng.normal(0, 0.3, 3 * H)
    else:
        p["g.b"] = rng.normal(0, 0.3, 3 * H)
    return p


def _cell_kwargs(p):
    return dict(W=p["g.W"], U=p["g.U"], b=p.get("g.b"), gain=p.get("g.gain"), beta=p.get("g.beta"))


def _lists(kw):
    return {k: (v.tolist() if v is not None else None) for k, v in kw.items()}


# --------------------------------------------------------------- GRU

def test_zero_parameters_halve_the_state():
    out = gru_cell(np.zeros(3), np.array([1.0, -2.0]), np.zeros((3, 6)), np.zeros((2, 6)), np.zeros(6))
    np.testing.assert_array_equal(out, [0.5, -1.0])
    assert np.all(gru_cell(np.zeros(3), np.zeros(2), np.zeros((3, 6)), np.zeros((2, 6))) == 0)


@pytest.mark.parametrize("ln", [False, True])
def test_cell_matches_scalar_oracle(ln):
    rng = np.random.default_rng(11)
    p = _rand_gru(rng, 3, 4, ln)
    x, h = rng.normal(size=3), rng.normal(size=4)
    kw = _cell_kwargs(p)
    np.testing.assert_allclose(gru_cell(x, h, **kw), scalar_gru(x.tolist(), h.tolist(), **_lists(kw)),
                               rtol=0, atol=1e-12)


def test_cell_dimension_mismatch():
    with pytest.raises(ValueError):
        gru_cell(np.zeros(2), np.zeros(2), np.zeros((3, 6)), np.zeros((2, 6)))


@pytest.mark.parametrize("backend", ["numba", "numpy"])
@pytest.mark.parametrize("ln", [False, True])
def test_sequence_kernel_matches_unrolled_cells(backend, ln):
    prev = _accel.set_backend(backend)
    try:
        rng = np.random.default_rng(4)
        p = _rand_gru(rng, 3, 4, ln)
        x = rng.normal(size=(2, 5, 3))
        mask = np.array([[1, 1, 1, 0, 0], [1, 1, 1, 1, 1.0]])
        ctx = no_grad()
        out = ctx.gru(Tensor(x), Tensor(p["g.W"]), Tensor(p["g.U"]), mask,
                      b=Tensor(p["g.b"]) if "g.b" in p else None,
                      gain=Tensor(p["g.gain"]) if ln else None, beta=Tensor(p["g.beta"]) if ln else None).data
        kw = _cell_kwargs(p)
        for bi in range(2):
            h = np.zeros(4)
            for t in range(5):
                if mask[bi, t]:
                    h = np.array(scalar_gru(x[bi, t].tolist(), h.tolist(), **_lists(kw)))
                    np.testing.assert_allclose(out[bi, t], h, rtol=0, atol=1e-12)
                else:
                    assert np.all(out[bi, t] == 0.0)
    finally:
        _accel.set_backend(prev)


@pytest.mark.parametrize("ln", [False, True])
def test_numba_and_numpy_paths_agree(ln):
    rng = np.random.default_rng(8)
    T, B, H = 6, 3, 5
    xw = rng.normal(size=(T, B, 3 * H))
    U = rng.normal(size=(H, 3 * H)) * 0.5
    mask = (np.arange(T)[:, None] < np.array([6, 2, 4])[None]).astype(float)
    gain, beta = (rng.uniform(0.5, 1.5, 3 * H), rng.normal(size=3 * H)) if ln else (None, None)
    dout = rng.normal(size=(T, B, H))
    res = {}
    for name in ("numba", "numpy"):
        prev = _accel.set_backend(name)
        try:
            out, cache = kernels.gru_forward(xw, U, mask, gain, beta, reverse=True)
            res[name] = (out,) + tuple(g for g in kernels.gru_backward(dout, U, mask, cache) if g is not None)
        finally:
            _accel.set_backend(prev)
    for a, b in zip(res["numba"], res["numpy"]):
        np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-12)


# ---------------------------------------------------------- bigru stack

def _stack_params(rng, D, H, layers, ln=False, zero=False):
    p = ParameterSet()
    for layer in range(layers):
        for d in ("fwd", "bwd"):
            init_gru(p, rng, f"e.l{layer}.{d}", D if layer == 0 else 2 * H, H, ln)
    if zero:
        for k in p:
            p[k] = np.zeros_like(p[k])
    return p


def _tensors(p):
    return {k: Tensor(v, name=k) for k, v in p.items()}


def test_zero_parameter_stack_has_zero_context():
    p = _stack_params(np.random.default_rng(0), 2, 1, 1, zero=True)
    _, ctx = bigru_stack(no_grad(), Tensor(np.ones((1, 3, 2))), np.ones((1, 3)), _tensors(p), "e", 1)
    np.testing.assert_array_equal(ctx.data, [[0.0, 0.0]])


def test_stack_matches_unrolled_cells():
    rng = np.random.default_rng(5)
    p = _stack_params(rng, 2, 3, 1)
    for k in list(p):
        if k.endswith(".b"):
            p[k] = rng.normal(size=p[k].shape)
    x = rng.normal(size=(1, 3, 2))
    _, ctx = bigru_stack(no_grad(), Tensor(x), np.ones((1, 3)), _tensors(p), "e", 1)

    def run(order, d):
        kw = {"W": p[f"e.l0.{d}.W"].tolist(), "U": p[f"e.l0.{d}.U"].tolist(), "b": p[f"e.l0.{d}.b"].tolist()}
        h, outs = [0.0] * 3, {}
        for t in order:
            h = scalar_gru(x[0, t].tolist(), h, **kw)
            outs[t] = h
        return outs
    fwd, bwd = run([0, 1, 2], "fwd"), run([2, 1, 0], "bwd")
    np.testing.assert_allclose(ctx.data[0], fwd[2] + bwd[0], rtol=0, atol=1e-12)


def test_padding_does_not_change_context_bit_exact():
    rng = np.random.default_rng(6)
    p = _tensors(_stack_params(rng, 3, 4, 2, ln=True))
    x = rng.normal(size=(2, 6, 3))
    mask = np.array([[1, 1, 1, 0, 0, 0], [1, 1, 1, 1, 1, 1.0]])
    _, c1 = bigru_stack(no_grad(), Tensor(x), mask, p, "e", 2)
    x2 = x.copy()
    x2[0, 3:] = rng.normal(size=(3, 3)) * 100
    _, c2 = bigru_stack(no_grad(), Tensor(x2), mask, p, "e", 2)
    assert np.array_equal(c1.data, c2.data)
    # dropping the padding changes array shapes, hence BLAS blocking, so only near-equality holds
    _, c3 = bigru_stack(no_grad(), Tensor(x[:1, :3]), mask[:1, :3], p, "e", 2)
    np.testing.assert_allclose(c1.data[0], c3.data[0], rtol=0, atol=1e-12)


def test_all_masked_sequence_is_an_error():
    p = _tensors(_stack_params(np.random.default_rng(0), 2, 2, 1))
    with pytest.raises(ValueError):
        bigru_stack(no_grad(), Tensor(np.ones((1, 3, 2))), np.zeros((1, 3)), p, "e", 1)
    with pytest.raises(ValueError):
        bigru_stack(no_grad(), Tensor(np.ones((1, 3, 2))), np.array([[1, 0, 1.0]]), p, "e", 1)


# ------------------------------------------------- layer norm / dense

def test_layer_norm_examples():
    np.testing.assert_array_equal(layer_norm(np.full(4, 3.0), np.ones(4), np.zeros(4)), 0.0)
    np.testing.assert_allclose(layer_norm(np.array([1.0, -1.0]), np.ones(2), np.zeros(2)),
                               [1 / math.sqrt(1 + 1e-5), -1 / math.sqrt(1 + 1e-5)], rtol=1e-15)
    rng = np.random.default_rng(0)
    x = rng.normal(3, 7, size=(50, 9))
    y = layer_norm(x, np.ones(9), np.zeros(9))
    assert np.all(np.abs(y.mean(axis=1)) < 1e-12)
    np.testing.assert_allclose(y.var(axis=1), 49 / (49 + 1e-5), rtol=0.05)


def test_dense_activations():
    np.testing.assert_allclose(dense(np.zeros(2), np.zeros((2, 3)), np.zeros(3), "softmax"), [1 / 3] * 3)
    assert dense(np.zeros(1), np.zeros((1, 1)), np.zeros(1), "softplus")[0] == pytest.approx(0.693147, abs=1e-6)
    big = dense(np.ones(1), np.array([[1000.0, 0.0]]), np.zeros(2), "softmax")
    assert np.all(np.isfinite(big)) and big[0] == pytest.approx(1.0)
    rng = np.random.default_rng(1)
    x = rng.normal(size=(20, 4)) * 30
    w, b = rng.normal(size=(4, 6)), rng.normal(size=6)
    assert np.all(np.abs(dense(x, w, b, "softmax").sum(axis=1) - 1) < 1e-12)
    assert np.all(dense(x, w, b, "softplus") > 0)
    s = dense(x * 0.01, w, b, "sigmoid")
    assert np.all((s > 0) & (s < 1))
    with pytest.raises(ValueError):
        dense(x, w, b, "relu")


def test_dropout():
    rng = np.random.default_rng(0)
    x = np.ones(10_000)
    assert dropout(x, 0.0, True, rng) is not None and np.all(dropout(x, 0.0, True, rng) == x)
    assert np.all(dropout(x, 0.7, False, rng) == x)
    y = dropout(x, 0.5, True, rng)
    assert abs((y > 0).mean() - 0.5) < 0.02
    assert set(np.unique(y)) <= {0.0, 2.0}
    with pytest.raises(ValueError):
        dropout(x, 1.0, True, rng)


# ------------------------------------------------------ optimization

def test_clip():
    g = {"a": np.array([30.0, 40.0])}
    np.testing.assert_allclose(clip_gradients(g, 25.0)["a"], [15.0, 20.0])
    g = {"a": np.array([6.0, 8.0])}
    assert clip_gradients(g, 25.0) is g
    assert clip_gradients(g, math.inf) is g
    with pytest.raises(ValueError):
        clip_gradients(g, 0.0)


def test_clip_preserves_direction():
    rng = np.random.default_rng(2)
    g = {k: rng.normal(size=s) * 50 for k, s in [("a", (3, 4)), ("b", (7,))]}
    c = clip_gradients(g, 1.5)
    assert global_norm(c) <= 1.5 + 1e-9
    u = np.concatenate([v.ravel() for v in g.values()])
    v = np.concatenate([v.ravel() for v in c.values()])
    assert abs(u @ v / np.linalg.norm(u) / np.linalg.norm(v) - 1) < 1e-12


def test_nadam_zero_gradient_is_a_no_op():
    p = {"w": np.array([1.0, -2.0])}
    opt = Nadam(p)
    for _ in range(5):
        opt.step(p, {"w": np.zeros(2)})
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])


def test_nadam_first_step_opposes_gradient():
    rng = np.random.default_rng(3)
    p = {"w": rng.normal(size=20)}
    g = rng.normal(size=20)
    before = p["w"].copy()
    Nadam(p).step(p, {"w": g})
    assert np.all(np.sign(p["w"] - before) == -np.sign(g))


def test_nadam_minimizes_quadratic():
    # at the default rate of 1e-3 the iterate is still near 0.02 after 2000 steps
    p = {"x": np.array([1.0])}
    opt = Nadam(p, lr=1e-2)
    for _ in range(2000):
        opt.step(p, {"x": 2 * p["x"]})
    assert abs(p["x"][0]) < 1e-6


def test_nadam_state_round_trip():
    p = {"w": np.ones(3)}
    opt = Nadam(p)
    opt.step(p, {"w": np.array([1.0, 2.0, 3.0])})
    other = Nadam(p)
    other.load_state(opt.state_arrays(), opt.step_count)
    a, b = {"w": p["w"].copy()}, {"w": p["w"].copy()}
    opt.step(a, {"w": np.ones(3)})
    other.step(b, {"w": np.ones(3)})
    np.testing.assert_array_equal(a["w"], b["w"])


# -------------------------------------------------------- autodiff

def test_finite_difference_on_linear_loss():
    rng = np.random.default_rng(0)
    x = rng.normal(size=5)
    params = {"w": rng.normal(size=5)}
    assert finite_difference_check(lambda p: float(p["w"] @ x), params, {"w": x}) < 1e-8


def _check_op(build, shapes, seed=0, tol=1e-6):
    rng = np.random.default_rng(seed)
    params = {k: rng.normal(size=s) for k, s in shapes.items()}

    def value(ps):
        ctx = no_grad()
        return float(build(ctx, {k: Tensor(v, name=k) for k, v in ps.items()}).data)
    ctx = GradientContext()
    P = {k: Tensor(v, name=k, requires_grad=True) for k, v in params.items()}
    ctx.backward(build(ctx, P))
    grads = {k: P[k].grad for k in P}
    assert finite_difference_check(value, params, grads) < tol


def test_gradients_of_elementwise_and_shape_ops():
    def build(ctx, P):
        a = ctx.add(ctx.matmul(P["x"], P["w"]), P["b"])
        a = ctx.mul(a, ctx.concat([P["u"], P["u"]]))
        r = ctx.repeat_time(P["c"], 3)
        s = ctx.take_steps(ctx.concat([r, r]), np.array([2, 0]))
        return ctx.sum(ctx.add(ctx.sum(ctx.scale(a, 0.5)), ctx.sum(ctx.mul(s, s))))
    _check_op(build, {"x": (2, 3), "w": (3, 4), "b": (4,), "u": (1, 2), "c": (2, 2)})


def test_gradient_of_embedding():
    idx = np.array([[0, 2, 2], [1, 0, 3]])

    def build(ctx, P):
        e = ctx.embedding(P["E"], idx)
        return ctx.sum(ctx.mul(e, e))
    _check_op(build, {"E": (4, 3)})


@pytest.mark.parametrize("ln", [False, True])
@pytest.mark.parametrize("reverse", [False, True])
def test_gradient_of_masked_gru(ln, reverse):
    mask = np.array([[1, 1, 1], [1, 1, 0.0]])

    def build(ctx, P):
        kw = dict(gain=P["g"], beta=P["be"]) if ln else dict(b=P["b"])
        out = ctx.gru(P["x"], P["W"], P["U"], mask, reverse=reverse, **kw)
        return ctx.sum(ctx.mul(out, P["proj"]))
    shapes = {"x": (2, 3, 3), "W": (3, 12), "U": (4, 12), "proj": (2, 3, 4)}
    shapes.update({"g": (12,), "be": (12,)} if ln else {"b": (12,)})
    _check_op(build, shapes, seed=7, tol=1e-5)


def test_gradient_of_softmax_cross_entropy():
    targets = np.array([[1, 3, 0], [2, 2, 4]])
    mask = np.array([[1, 1, 0], [1, 1, 1.0]])
    _check_op(lambda ctx, P: ctx.softmax_cross_entropy(P["z"], targets, mask), {"z": (2, 3, 5)})


def test_gradient_of_mdn_surrogate():
    rng = np.random.default_rng(9)
    K, J = 2, 3
    targets = np.concatenate([rng.normal(size=(2, 3, J)), np.array([[[1], [1], [0]], [[1], [0], [0]]])], axis=2)
    mask = np.array([[1, 1, 1], [1, 1, 0.0]])
    _check_op(lambda ctx, P: ctx.mdn_surrogate_loss(P["raw"], targets, mask, K, J),
              {"raw": (2, 3, K + 2 * K * J + 1)}, tol=1e-5)


def test_non_finite_values_are_reported_by_name():
    ctx = GradientContext()
    a = Tensor(np.array([1.0, np.inf]), name="a", requires_grad=True)
    with pytest.raises(NonFiniteError, match="boom"):
        ctx.add(a, a, name="boom")


# ------------------------------------------------------- checkpoints

def test_archive_round_trip_and_bytes_are_stable(tmp_path):
    arrays = {"w": np.arange(6.0).reshape(2, 3), "i": np.arange(3)}
    write_archive(tmp_path / "a.ckpt", {"kind": "x"}, arrays)
    write_archive(tmp_path / "b.ckpt", {"kind": "x"}, arrays)
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()
    manifest, back = read_archive(tmp_path / "a.ckpt")
    assert manifest["kind"] == "x"
    np.testing.assert_array_equal(back["w"], arrays["w"])
    assert back["w"].dtype.str == "<f8"


def test_validate_parameters():
    validate_parameters({"a": np.zeros((2, 3))}, {"a": (2, 3)})
    with pytest.raises(CheckpointError, match="a"):
        validate_parameters({"a": np.zeros((3, 2))}, {"a": (2, 3)})
    with pytest.raises(CheckpointError):
        validate_parameters({}, {"a": (2, 3)})


def test_unreadable_archive(tmp_path):
    (tmp_path / "x.ckpt").write_text("nope")
    with pytest.raises(CheckpointError):
        read_archive(tmp_path / "x.ckpt")
