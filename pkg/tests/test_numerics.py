import math
import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.lib.stride_tricks import sliding_window_view

from distillkit.errors import ContractError, NumericDomainError, OracleInvalidError, ShapeError
from distillkit.numerics import Tensor, backward, fd_check, ops, rng
from distillkit.numerics import kernels


def param(rng, *shape, scale=1.0, name=None):
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True, name=name)


# -- tensor / graph -----------------------------------------------------------

def test_non_finite_rejected():
    with pytest.raises(NumericDomainError):
        Tensor(np.array([1.0, np.nan]))
    with pytest.raises(NumericDomainError):
        Tensor(np.array([np.inf]))


def test_backward_needs_scalar(rng):
    x = param(rng, 3)
    with pytest.raises(ContractError):
        backward(ops.scale(x, 2.0))


def test_graph_is_acyclic_and_ordered(rng):
    x, w = param(rng, 4, 3, name="x"), param(rng, 3, 2, name="w")
    y = ops.sum(ops.gelu(ops.matmul(x, w)))
    graph = backward(y)
    order = graph.backward_order
    assert order[0] is y
    seen = set()
    for node in order:
        for parent in node._parents:
            assert id(parent) not in seen
        seen.add(id(node))
    assert {t.name for t in graph.leaves()} >= {"x", "w"}


def test_grad_accumulates_over_shared_use(rng):
    x = param(rng, 5)
    backward(ops.sum(ops.add(x, x)))
    assert np.allclose(x.grad, 2.0)


def test_repeated_backward_is_bit_identical(rng):
    x, w = param(rng, 6, 4), param(rng, 4, 4)

    def run():
        x.grad = w.grad = None
        backward(ops.mean(ops.gelu(ops.linear(x, w))))
        return x.grad.tobytes(), w.grad.tobytes()

    assert run() == run()


# -- primitive values -------------------------------------------------------

def test_gelu_reference_values():
    x = np.array([-3.0, -1.0, 0.0, 0.5, 2.0])
    ref = [v * 0.5 * (1 + math.erf(v / math.sqrt(2))) for v in x]
    assert np.allclose(ops.gelu(Tensor(x)).data, ref, atol=1e-15)


def test_log_sigmoid_stable():
    out = ops.log_sigmoid(Tensor(np.array([-800.0, 0.0, 800.0]))).data
    assert out[0] == pytest.approx(-800.0)
    assert out[1] == pytest.approx(-math.log(2.0), abs=1e-15)
    assert out[2] == 0.0


def test_softmax_rows_and_mask(rng):
    x = Tensor(rng.standard_normal((3, 5)))
    y = ops.softmax(x).data
    assert np.allclose(y.sum(axis=-1), 1.0)
    mask = np.array([True, True, False, True, False])
    ym = ops.softmax(x, mask=mask).data
    assert np.all(ym[:, ~mask] == 0.0)
    assert np.allclose(ym.sum(axis=-1), 1.0)
    with pytest.raises(ContractError):
        ops.softmax(x, mask=np.zeros(5, dtype=bool))


def test_softmax_shift_invariant(rng):
    x = rng.standard_normal((2, 7))
    assert np.allclose(ops.softmax(Tensor(x)).data, ops.softmax(Tensor(x + 1000.0)).data, atol=1e-15)


def test_layer_norm_statistics(rng):
    x = Tensor(rng.standard_normal((4, 10)) * 3 + 2)
    y = ops.layer_norm(x, Tensor(np.ones(10)), Tensor(np.zeros(10))).data
    assert np.allclose(y.mean(axis=-1), 0.0, atol=1e-12)
    assert np.allclose(y.var(axis=-1), 1.0, atol=1e-4)


def test_group_norm_mask_ignores_padding(rng):
    x = rng.standard_normal((1, 4, 9))
    mask = np.array([[True] * 6 + [False] * 3])
    padded = x.copy()
    padded[..., 6:] = 123.0
    g, b = Tensor(np.ones(4)), Tensor(np.zeros(4))
    a = ops.group_norm(Tensor(x[..., :6]), g, b, 4).data
    m = ops.group_norm(Tensor(padded), g, b, 4, mask=mask).data
    assert np.allclose(m[..., :6], a, atol=1e-12)
    assert np.all(m[..., 6:] == 0.0)


def test_l1_distance_value():
    a = Tensor(np.array([[1.0, -2.0, 3.0, 0.0]]))
    b = Tensor(np.array([[0.0, 0.0, 3.0, 4.0]]))
    assert ops.l1_distance(a, b).data[0] == pytest.approx(7.0 / 4.0)


def test_cosine_known_values():
    a = Tensor(np.array([[1.0, 0.0], [1.0, 1.0], [0.0, 0.0]]))
    b = Tensor(np.array([[0.0, 3.0], [-2.0, -2.0], [1.0, 1.0]]))
    c = ops.cosine_similarity(a, b).data
    assert c[0] == pytest.approx(0.0)
    assert c[1] == pytest.approx(-1.0)
    assert c[2] == 0.0  # zero vector


@settings(max_examples=40, deadline=None)
@given(st.floats(1e-3, 1e3), st.floats(1e-3, 1e3), st.integers(0, 2**31 - 1))
def test_cosine_scale_invariant(sa, sb, seed):
    g = np.random.default_rng(seed)
    a, b = g.standard_normal((3, 8)), g.standard_normal((3, 8))
    base = ops.cosine_similarity(Tensor(a), Tensor(b)).data
    scaled = ops.cosine_similarity(Tensor(a * sa), Tensor(b * sb)).data
    assert np.allclose(base, scaled, atol=1e-10, rtol=0)
    assert np.all(np.abs(base) <= 1.0)


def test_shape_mismatch_raises(rng):
    with pytest.raises(ShapeError):
        ops.l1_distance(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4))))
    with pytest.raises(ShapeError):
        ops.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))))


def test_dropout_rate_zero_is_identity_and_scaling(rng):
    x = Tensor(np.ones((200, 50)))
    assert ops.dropout(x, 0.0, rng) is x or np.array_equal(ops.dropout(x, 0.0, rng).data, x.data)
    y = ops.dropout(x, 0.25, np.random.default_rng(0)).data
    kept = y != 0
    assert np.allclose(y[kept], 1 / 0.75)
    assert abs(kept.mean() - 0.75) < 0.02


# -- convolution --------------------------------------------------------------

def conv_loop(x, w, b, stride, groups, padding):
    n, c, _ = x.shape
    o, cg, k = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding)))
    lo = (xp.shape[-1] - k) // stride + 1
    out = np.zeros((n, o, lo))
    og = o // groups
    for oc in range(o):
        gi = oc // og
        for t in range(lo):
            seg = xp[:, gi * cg:(gi + 1) * cg, t * stride:t * stride + k]
            out[:, oc, t] = (seg * w[oc]).sum(axis=(1, 2))
    return out + (0 if b is None else b[None, :, None])


@pytest.mark.parametrize("stride,groups,padding,k", [(1, 1, 0, 3), (5, 1, 0, 10), (2, 2, 1, 3), (1, 4, 4, 8)])
def test_conv1d_matches_direct_loop(rng, stride, groups, padding, k):
    x = rng.standard_normal((2, 4, 37))
    w = rng.standard_normal((8, 4 // groups, k))
    b = rng.standard_normal(8)
    got = ops.conv1d(Tensor(x), Tensor(w), Tensor(b), stride=stride, groups=groups, padding=padding).data
    assert np.allclose(got, conv_loop(x, w, b, stride, groups, padding), atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 400), st.integers(1, 12), st.integers(1, 6), st.integers(0, 6))
def test_conv_length_law_matches_sliding_window(length, kernel, stride, padding):
    lp = length + 2 * padding
    if lp < kernel:
        return
    direct = sliding_window_view(np.zeros(lp), kernel)[::stride].shape[0]
    assert ops.conv1d_output_length(length, kernel, stride, padding) == direct


# -- gradients ----------------------------------------------------------------

def check(f, params, tol=1e-4):
    report = fd_check(f, params, eps=1e-5, tol=tol)
    assert report.passed, str(report)
    return report


def test_fd_elementwise(rng):
    x = param(rng, 3, 4, name="x")
    y = param(rng, 3, 4, name="y")
    check(lambda: ops.sum(ops.gelu(ops.mul(ops.add(x, y), ops.sub(x, ops.scale(y, 0.5))))), [x, y])
    check(lambda: ops.mean(ops.log_sigmoid(ops.scale(x, 3.0))), [x])


def test_fd_matmul_broadcast(rng):
    a, b = param(rng, 2, 3, 4, name="a"), param(rng, 4, 5, name="b")
    check(lambda: ops.sum(ops.gelu(ops.matmul(a, b))), [a, b])


def test_fd_linear_reshape_transpose_crop(rng):
    x, w, b = param(rng, 2, 6, 4, name="x"), param(rng, 4, 3, name="w"), param(rng, 3, name="b")
    f = lambda: ops.sum(ops.gelu(ops.crop(ops.transpose(ops.reshape(ops.linear(x, w, b), (2, 3, 6)), (0, 2, 1)), 1, 1, 5)))  # noqa: E731
    check(f, [x, w, b])


def test_fd_conv1d(rng):
    x = param(rng, 2, 4, 23, name="x")
    w = param(rng, 6, 2, 5, scale=0.5, name="w")
    b = param(rng, 6, name="b")
    check(lambda: ops.sum(ops.gelu(ops.conv1d(x, w, b, stride=2, groups=2, padding=2))), [x, w, b])


def test_fd_norms(rng):
    x = param(rng, 2, 3, 6, name="x")
    g, b = param(rng, 6, name="g"), param(rng, 6, name="b")
    check(lambda: ops.sum(ops.gelu(ops.layer_norm(x, g, b))), [x, g, b])
    gg, gb = param(rng, 3, name="gg"), param(rng, 3, name="gb")
    mask = np.array([[True] * 6, [True] * 4 + [False] * 2])
    check(lambda: ops.sum(ops.gelu(ops.group_norm(x, gg, gb, 3, mask=mask))), [x, gg, gb])


def test_fd_softmax(rng):
    x = param(rng, 3, 5, name="x")
    w = Tensor(rng.standard_normal((3, 5)))
    check(lambda: ops.sum(ops.mul(ops.softmax(x, mask=np.array([1, 1, 0, 1, 1], bool)), w)), [x])


def test_fd_distances(rng):
    a, b = param(rng, 4, 7, name="a"), param(rng, 4, 7, name="b")
    check(lambda: ops.sum(ops.cosine_similarity(a, b)), [a, b])
    check(lambda: ops.sum(ops.l1_distance(a, b)), [a, b])


def test_fd_check_contract(rng):
    x = param(rng, 3)
    with pytest.raises(ContractError):
        fd_check(lambda: ops.sum(x), [x], eps=1e-2)
    calls = iter(range(100))
    with pytest.raises(OracleInvalidError):
        fd_check(lambda: ops.scale(ops.sum(x), float(next(calls) + 1)), [x])


# -- rng ------------------------------------------------------------------------

def test_named_streams_independent_and_reproducible():
    a1 = rng.stream(0, "init", "w").standard_normal(5)
    a2 = rng.stream(0, "init", "w").standard_normal(5)
    b = rng.stream(0, "init", "v").standard_normal(5)
    c = rng.stream(1, "init", "w").standard_normal(5)
    assert np.array_equal(a1, a2)
    assert not np.array_equal(a1, b)
    assert not np.array_equal(a1, c)


def test_stream_state_round_trip():
    g = rng.stream(3, "dropout")
    g.random(17)
    saved = rng.get_state(g)
    expect = g.random(5)
    h = rng.stream(99, "other")
    rng.set_state(h, saved)
    assert np.array_equal(h.random(5), expect)


# -- backends -------------------------------------------------------------------

needs_numba = pytest.mark.skipif(kernels.NUMBA_KERNELS is None, reason="numba unavailable")


@needs_numba
def test_backend_parity(rng):
    npk, nbk = kernels.NUMPY_KERNELS, kernels.NUMBA_KERNELS
    x = rng.standard_normal((64, 48)) * 3
    gy = rng.standard_normal(x.shape)
    assert np.allclose(npk["gelu_forward"](x), nbk["gelu_forward"](x), atol=1e-14)
    assert np.allclose(npk["gelu_backward"](x, gy), nbk["gelu_backward"](x, gy), atol=1e-14)
    xh1, r1 = npk["layer_norm_forward"](x, 1e-5)
    xh2, r2 = nbk["layer_norm_forward"](x, 1e-5)
    assert np.allclose(xh1, xh2, atol=1e-13) and np.allclose(r1, r2, atol=1e-13)
    assert np.allclose(npk["layer_norm_backward"](gy, xh1, r1), nbk["layer_norm_backward"](gy, xh1, r1), atol=1e-12)
    cols = rng.standard_normal((2, 11, 3, 4))
    assert np.allclose(npk["col2im"](cols, 2, 24), nbk["col2im"](cols, 2, 24), atol=1e-13)


def test_backend_flag_selects_numpy(monkeypatch):
    monkeypatch.setenv("DISTILLKIT_BACKEND", "numpy")
    assert kernels._select_backend() == "numpy"
    monkeypatch.setenv("DISTILLKIT_BACKEND", "fortran")
    with pytest.raises(ValueError):
        kernels._select_backend()


FORWARD = """
import sys
import numpy as np
from distillkit.model import ModelConfig, build_model
from distillkit.numerics import BACKEND
m = build_model(ModelConfig("toy", 2, 16, 32, 2), 0)
wave = np.sin(np.arange(2400) * 0.05)[None, :] * 0.5
np.save(sys.argv[1], m(wave)[-1].data)
print(BACKEND)
"""


@needs_numba
def test_backends_agree_end_to_end(tmp_path):
    out = {}
    for backend in ("numpy", "numba"):
        path = tmp_path / f"{backend}.npy"
        env = dict(os.environ, DISTILLKIT_BACKEND=backend)
        res = subprocess.run([sys.executable, "-c", FORWARD, str(path)], env=env, capture_output=True, text=True,
                             check=True)
        assert res.stdout.strip() == backend
        out[backend] = np.load(path)
    assert np.allclose(out["numpy"], out["numba"], atol=1e-12, rtol=0)
