import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gaitref import numerics as nx
from gaitref.numerics import ContractError, DimensionError, NumericError, Parameter, Tape, Tensor

from gradcheck import away_from_zero, distinct_values, max_relative_error, op_gradient_cases


def loop_matmul(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            for t in range(k):
                out[i, j] += a[i, t] * b[t, j]
    return out


def loop_conv2d(x, w, stride, pad):
    """Direct nested-loop cross-correlation of one (C, H, W) input."""
    sh, sw = stride
    ph, pw = pad
    C, H, W = x.shape
    O, _, kh, kw = w.shape
    xp = np.zeros((C, H + 2 * ph, W + 2 * pw))
    xp[:, ph:ph + H, pw:pw + W] = x
    Ho = (H + 2 * ph - kh) // sh + 1
    Wo = (W + 2 * pw - kw) // sw + 1
    out = np.zeros((O, Ho, Wo))
    for o in range(O):
        for i in range(Ho):
            for j in range(Wo):
                acc = 0.0
                for c in range(C):
                    for u in range(kh):
                        for v in range(kw):
                            acc += w[o, c, u, v] * xp[c, i * sh + u, j * sw + v]
                out[o, i, j] = acc
    return out


# --- matmul ---------------------------------------------------------------

def test_matmul_identity_and_hand_example():
    m = np.array([[1.0, 2.0], [3.0, 4.0]])
    assert np.array_equal(nx.matmul(Tensor(np.eye(2)), Tensor(m)).data, m)
    assert np.array_equal(nx.matmul(Tensor(m), Tensor([[0.0], [1.0]])).data, [[2.0], [4.0]])


def test_matmul_matches_triple_loop():
    rng = np.random.default_rng(1)
    a, b = rng.normal(size=(3, 4)), rng.normal(size=(4, 5))
    assert np.allclose(nx.matmul(Tensor(a), Tensor(b)).data, loop_matmul(a, b), rtol=0, atol=1e-12)


def test_matmul_shape_mismatch():
    with pytest.raises(DimensionError):
        nx.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


# --- conv2d ---------------------------------------------------------------

def test_conv2d_identity_kernel_and_zero_input():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(1, 5, 6))
    assert np.array_equal(nx.conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1)))).data, x)
    out = nx.conv2d(Tensor(np.zeros((2, 4, 4))), Tensor(rng.normal(size=(3, 2, 3, 3))), 1, 1)
    assert out.shape == (3, 4, 4) and not out.data.any()


def test_conv2d_matches_nested_loops_on_5x5():
    rng = np.random.default_rng(3)
    x, w = rng.normal(size=(1, 5, 5)), rng.normal(size=(1, 1, 3, 3))
    assert np.allclose(nx.conv2d(Tensor(x), Tensor(w)).data, loop_conv2d(x, w, (1, 1), (0, 0)), atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(
    c=st.integers(1, 3), o=st.integers(1, 3), h=st.integers(3, 8), w=st.integers(3, 8),
    kh=st.integers(1, 3), kw=st.integers(1, 3), sh=st.integers(1, 2), sw=st.integers(1, 2),
    ph=st.integers(0, 2), pw=st.integers(0, 2), seed=st.integers(0, 2 ** 16),
)
def test_conv2d_matches_nested_loops(c, o, h, w, kh, kw, sh, sw, ph, pw, seed):
    rng = np.random.default_rng(seed)
    x, k = rng.normal(size=(c, h, w)), rng.normal(size=(o, c, kh, kw))
    Hp, Wp = h + 2 * ph, w + 2 * pw
    if kh > Hp or kw > Wp or (Hp - kh) % sh or (Wp - kw) % sw:
        with pytest.raises(DimensionError):
            nx.conv2d(Tensor(x), Tensor(k), (sh, sw), (ph, pw))
        return
    got = nx.conv2d(Tensor(x), Tensor(k), (sh, sw), (ph, pw)).data
    assert got.shape == (o, (Hp - kh) // sh + 1, (Wp - kw) // sw + 1)
    assert np.allclose(got, loop_conv2d(x, k, (sh, sw), (ph, pw)), atol=1e-12)


def test_conv2d_batched_equals_per_sample():
    rng = np.random.default_rng(4)
    x, k = rng.normal(size=(3, 2, 6, 5)), rng.normal(size=(4, 2, 3, 1))
    batched = nx.conv2d(Tensor(x), Tensor(k), 1, (1, 0)).data
    for b in range(3):
        assert np.allclose(batched[b], loop_conv2d(x[b], k, (1, 1), (1, 0)), atol=1e-12)


def test_conv2d_errors():
    with pytest.raises(DimensionError):
        nx.conv2d(Tensor(np.ones((1, 4, 4))), Tensor(np.ones((1, 1, 3, 3))), 2, 0)  # (4-3)/2 not integral
    with pytest.raises(DimensionError):
        nx.conv2d(Tensor(np.ones((1, 2, 2))), Tensor(np.ones((1, 1, 3, 3))))
    with pytest.raises(DimensionError):
        nx.conv2d(Tensor(np.ones((2, 4, 4))), Tensor(np.ones((1, 1, 3, 3))), 1, 1)


def test_channel_mix_matches_einsum():
    rng = np.random.default_rng(5)
    x, w = rng.normal(size=(2, 3, 4, 5)), rng.normal(size=(6, 3))
    assert np.allclose(nx.channel_mix(Tensor(x), Tensor(w)).data, np.einsum("oc,bcnk->bonk", w, x), atol=1e-12)


# --- pooling and reductions -------------------------------------------------

def test_max_pool_examples():
    assert nx.max_pool_over_axis(Tensor([[1.0, 5.0, 3.0]]), 1).data.tolist() == [5.0]
    x = np.random.default_rng(0).normal(size=(1, 4, 3))
    assert np.array_equal(nx.max_pool_over_axis(Tensor(x), 0).data, x[0])
    with pytest.raises(DimensionError):
        nx.max_pool_over_axis(Tensor(np.ones((2, 0, 3))), 1)


def test_max_pool_gradient_goes_to_first_of_tied_maxima():
    x = Parameter([[2.0, 7.0, 7.0, 1.0], [3.0, 3.0, 3.0, 3.0]])
    with Tape() as tape:
        loss = nx.sum_over_axes(nx.max_pool_over_axis(x, 1))
    g = tape.backward(loss)[x]
    assert g.tolist() == [[0.0, 1.0, 0.0, 0.0], [1.0, 0.0, 0.0, 0.0]]


def test_max_pool2d_matches_loops_and_tie_rule():
    rng = np.random.default_rng(6)
    x = rng.normal(size=(2, 3, 4, 6))
    ref = np.zeros((2, 3, 2, 3))
    for idx in np.ndindex(ref.shape):
        a, b, i, j = idx
        ref[idx] = x[a, b, 2 * i:2 * i + 2, 2 * j:2 * j + 2].max()
    assert np.array_equal(nx.max_pool2d(Tensor(x), 2).data, ref)
    assert np.array_equal(nx.max_pool2d(Parameter(x), 2).data, ref)
    p = Parameter(np.ones((1, 2, 2)))
    with Tape() as tape:
        loss = nx.sum_over_axes(nx.max_pool2d(p, 2))
    assert tape.backward(loss)[p].tolist() == [[[1.0, 0.0], [0.0, 0.0]]]
    with pytest.raises(DimensionError):
        nx.max_pool2d(Tensor(np.ones((3, 5))), 2)


def test_mean_pool_examples():
    assert np.array_equal(nx.mean_pool_over_axes(Tensor(np.full((3, 4), 2.5)), (0, 1)).data, 2.5)
    assert nx.mean_pool_over_axes(Tensor([2.0, 4.0]), 0).item() == 3.0


# --- backward ---------------------------------------------------------------

def test_backward_trivial_cases():
    x = Parameter(np.arange(6.0).reshape(2, 3))
    with Tape() as tape:
        loss = nx.sum_over_axes(x)
    assert np.array_equal(tape.backward(loss)[x], np.ones((2, 3)))
    s = Parameter(3.0)
    with Tape() as tape:
        loss = nx.mul(s, s)
    assert tape.backward(loss)[s] == 6.0


def test_backward_rejects_non_scalar_loss():
    x = Parameter(np.ones(3))
    with Tape() as tape:
        y = nx.scale(x, 2.0)
    with pytest.raises(ContractError):
        tape.backward(y)


def test_shared_input_accumulates_gradient():
    x = Parameter([1.0, 2.0])
    with Tape() as tape:
        loss = nx.sum_over_axes(nx.add(nx.mul(x, x), x))
    assert np.allclose(tape.backward(loss)[x], 2 * x.data + 1)


def test_nothing_recorded_outside_tape_or_without_grad():
    with Tape() as tape:
        nx.add(Tensor([1.0]), Tensor([2.0]))
    assert tape.nodes == []
    y = nx.mul(Parameter([1.0]), Parameter([2.0]))
    assert isinstance(y, Tensor)


def test_tape_nodes_are_topologically_ordered():
    x = Parameter(np.ones((2, 2)))
    with Tape() as tape:
        h = nx.leaky_relu(nx.matmul(x, x))
        nx.sum_over_axes(nx.mul(h, h))
    seen = {x.id}
    for node in tape.nodes:
        assert all(i.id in seen or not i.requires_grad for i in node.inputs)
        seen.add(node.output.id)


def test_non_finite_values_raise():
    with pytest.raises(NumericError):
        Tensor([1.0, np.inf])
    with pytest.raises(NumericError):
        nx.sqrt(Tensor([-1.0]))
    with pytest.raises(NumericError):
        with np.errstate(over="ignore"):
            nx.scale(Tensor([1e308]), 1e10)


def test_tensors_are_read_only_and_parameters_assignable():
    t = Tensor(np.zeros(3))
    with pytest.raises(ValueError):
        t.data[0] = 1.0
    p = Parameter(np.zeros(3), "p")
    p.assign(np.ones(3))
    assert np.array_equal(p.data, np.ones(3))
    with pytest.raises(DimensionError):
        p.assign(np.ones(4))


def test_softmax_matches_log_sum_exp_oracle():
    rng = np.random.default_rng(7)
    x = rng.normal(scale=30.0, size=(4, 9))
    m = x.max(axis=1, keepdims=True)
    lse = m + np.log(np.exp(x - m).sum(axis=1, keepdims=True))
    assert np.allclose(nx.log_softmax(Tensor(x), 1).data, x - lse, atol=1e-12)
    assert np.allclose(nx.softmax(Tensor(x), 1).data, np.exp(x - lse), atol=1e-12)
    assert np.allclose(nx.softmax(Tensor(x), 1).data.sum(axis=1), 1.0)


def test_broadcast_repeat_and_concat_contracts():
    x = Tensor(np.arange(3.0).reshape(1, 3))
    assert np.array_equal(nx.broadcast_repeat(x, (4, 3)).data, np.tile(x.data, (4, 1)))
    with pytest.raises(DimensionError):
        nx.broadcast_repeat(x, (4, 2))
    with pytest.raises(DimensionError):
        nx.broadcast_repeat(x, (3,))
    with pytest.raises(DimensionError):
        nx.concat([Tensor(np.ones((2, 3))), Tensor(np.ones((3, 2)))], axis=0)
    assert nx.concat([Tensor(np.ones((2, 3))), Tensor(np.ones((2, 1)))], axis=1).shape == (2, 4)


def test_ops_are_deterministic():
    rng = np.random.default_rng(8)
    x, k = rng.normal(size=(2, 3, 8, 6)), rng.normal(size=(4, 3, 3, 3))
    a = nx.conv2d(Tensor(x), Tensor(k), 1, 1).data
    b = nx.conv2d(Tensor(x), Tensor(k), 1, 1).data
    assert a.tobytes() == b.tobytes()


# --- gradient checks ----------------------------------------------------------

@pytest.mark.parametrize("case", range(len(op_gradient_cases(np.random.default_rng(0)))))
def test_every_op_passes_finite_differences(case):
    rng = np.random.default_rng(100 + case)
    name, f, params = op_gradient_cases(rng)[case]
    assert max_relative_error(f, params) < 1e-6, name
