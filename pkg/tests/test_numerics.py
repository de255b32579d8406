import numpy as np
import pytest

from unitspeech.exceptions import ContractError, NonFiniteError, ShapeError
from unitspeech.numerics import (AdamState, Tape, Tensor, adam_step, analytic_grads, bmm,
                                 grad_check, load_checkpoint, matmul, save_checkpoint, softmax,
                                 softmax_cross_entropy, stream, truncated_normal)
from unitspeech.numerics import autodiff as ad


def triple_loop(a, b):
    m, k = a.shape
    n = b.shape[1]
    out = [[0.0] * n for _ in range(m)]
    for i in range(m):
        for j in range(n):
            s = 0.0
            for p in range(k):
                s += float(a[i, p]) * float(b[p, j])
            out[i][j] = s
    return np.array(out)


def test_matmul_identity():
    m = np.random.default_rng(0).standard_normal((2, 3))
    assert np.array_equal(matmul(np.eye(2), m), m)


def test_matmul_hand_example():
    assert matmul([[1, 2], [3, 4]], [[5], [6]]).tolist() == [[17.0], [39.0]]


@pytest.mark.parametrize("shape", [(5, 7, 3), (1, 1, 1), (8, 33, 17), (3, 64, 5)])
def test_matmul_bitwise_matches_triple_loop(shape):
    m, k, n = shape
    rng = np.random.default_rng(sum(shape))
    a, b = rng.standard_normal((m, k)), rng.standard_normal((k, n))
    assert np.array_equal(matmul(a, b), triple_loop(a, b))


def test_bmm_matches_per_batch_matmul():
    rng = np.random.default_rng(1)
    a, b = rng.standard_normal((4, 6, 5)), rng.standard_normal((4, 5, 3))
    out = bmm(a, b)
    for t in range(4):
        assert np.array_equal(out[t], triple_loop(a[t], b[t]))


def test_matmul_shape_error_names_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_cross_entropy_uniform_is_log_v():
    loss, _ = softmax_cross_entropy(np.zeros((3, 10)), [0, 4, 9])
    assert loss == pytest.approx(np.log(10), abs=1e-14)


def test_cross_entropy_large_margin_goes_to_zero():
    logits = np.zeros((2, 5))
    logits[0, 1] = logits[1, 3] = 80.0
    loss, grad = softmax_cross_entropy(logits, [1, 3])
    assert 0.0 <= loss < 1e-30
    assert np.abs(grad).max() < 1e-30


def test_cross_entropy_gradient_vs_central_differences():
    rng = np.random.default_rng(2)
    logits = rng.standard_normal((4, 10))
    targets = np.array([3, 0, 9, 5])
    _, grad = softmax_cross_entropy(logits, targets)
    h = 1e-5
    num = np.zeros_like(logits)
    for idx in np.ndindex(*logits.shape):
        up, dn = logits.copy(), logits.copy()
        up[idx] += h
        dn[idx] -= h
        num[idx] = (softmax_cross_entropy(up, targets)[0] - softmax_cross_entropy(dn, targets)[0]) / (2 * h)
    rel = np.abs(grad - num) / np.maximum(np.maximum(np.abs(grad), np.abs(num)), 1e-12)
    assert rel.max() < 1e-5


def test_cross_entropy_out_of_range_target_names_position():
    with pytest.raises(ContractError, match="position 2"):
        softmax_cross_entropy(np.zeros((3, 4)), [0, 1, 4])


def test_cross_entropy_masked_rows_get_zero_gradient():
    rng = np.random.default_rng(3)
    _, grad = softmax_cross_entropy(rng.standard_normal((5, 6)), [0, 1, 2, 3, 4],
                                    weights=[0, 0, 1, 1, 0])
    assert np.all(grad[[0, 1, 4]] == 0.0)


def test_softmax_rows_sum_to_one():
    x = np.random.default_rng(4).standard_normal((50, 31)) * 20
    assert np.abs(softmax(x).sum(axis=1) - 1.0).max() < 1e-12


def test_grad_check_quadratic():
    x = np.random.default_rng(5).standard_normal((3, 4))
    grads = analytic_grads(lambda t: ad.total(ad.mul(t, t)), x)
    assert np.allclose(grads["x"], 2 * x, rtol=0, atol=1e-15)
    assert grad_check(lambda t: ad.total(ad.mul(t, t)), x) < 1e-8


def test_grad_check_constant_function():
    x = np.ones((2, 2))
    grads = analytic_grads(lambda t: ad.total(ad.scale(t, 0.0)), x)
    assert np.all(grads["x"] == 0)
    assert grad_check(lambda t: ad.total(ad.scale(t, 0.0)), x) == 0.0


def test_grad_check_rejects_non_finite():
    with pytest.raises(NonFiniteError):
        grad_check(lambda t: ad.scale(ad.total(t), np.inf), np.ones((1, 1)))


def _primitive_losses():
    rng = np.random.default_rng(6)
    w = rng.standard_normal((5, 3))
    targets = np.array([0, 2, 1, 1, 0, 2])
    ids = np.array([[0, 2, 2], [1, 0, 3]])

    def lin(p):
        h = ad.linear(p["x"], p["w"], p["b"])
        return ad.cross_entropy(ad.gelu(h), targets)

    def norm(p):
        return ad.total(ad.mul(ad.layer_norm(p["x"], p["g"], p["b"]), w[:4, :1].T))

    def attn(p):
        q = ad.reshape(p["q"], (1, 2, 3, 2))
        k = ad.reshape(p["k"], (1, 2, 3, 2))
        v = ad.reshape(p["v"], (1, 2, 3, 2))
        o = ad.attention(q, k, v, causal=True)
        return ad.total(ad.mul(o, o))

    def emb(p):
        e = ad.embedding(p["t"], ids)
        r = ad.take_rows(ad.concat([e, ad.scale(e, 2.0)], axis=1), [0, 3, 4])
        r = ad.transpose(r, (1, 0, 2))
        return ad.total(ad.mul(r, np.arange(18.0).reshape(3, 2, 3)))

    return [
        (lin, {"x": rng.standard_normal((6, 5)), "w": w, "b": rng.standard_normal(3)}),
        (norm, {"x": rng.standard_normal((2, 4)), "g": rng.standard_normal(4), "b": rng.standard_normal(4)}),
        (attn, {"q": rng.standard_normal(12), "k": rng.standard_normal(12), "v": rng.standard_normal(12)}),
        (emb, {"t": rng.standard_normal((4, 3))}),
    ]


@pytest.mark.parametrize("case", range(4))
def test_every_primitive_passes_grad_check(case):
    fn, params = _primitive_losses()[case]
    assert grad_check(fn, params) < 1e-4


def test_tape_replays_in_reverse_order():
    order = []
    x = Tensor(np.ones(2), requires_grad=True)
    with Tape() as tape:
        y = ad._emit(x.data * 2, (x,), lambda g: (order.append("first") or g * 2,))
        z = ad._emit(y.data.sum(), (y,), lambda g: (order.append("second") or np.full(2, float(g)),))
    tape.backward(z)
    assert order == ["second", "first"]
    assert np.array_equal(x.grad, [2.0, 2.0])


def test_no_recording_outside_tape():
    x = Tensor(np.ones(3), requires_grad=True)
    y = ad.mul(x, x)
    assert not y.requires_grad


def test_adam_zero_gradient_leaves_params():
    p = {"w": np.array([1.0, -2.0])}
    st = AdamState.zeros_like(p)
    adam_step(p, {"w": np.zeros(2)}, st, lr=0.1)
    assert np.array_equal(p["w"], [1.0, -2.0])
    assert st.step == 1


def test_adam_first_step_moves_by_lr():
    # m_hat = 1, v_hat = 1 after bias correction, so the step is lr / (1 + eps)
    p = {"w": np.array([0.5])}
    adam_step(p, {"w": np.array([1.0])}, AdamState.zeros_like(p), lr=0.1)
    assert p["w"][0] == pytest.approx(0.5 - 0.1 / (1 + 1e-8), abs=1e-15)


def test_adam_deterministic_from_reset_state():
    g = {"w": np.array([0.3, -0.7])}
    deltas = []
    for _ in range(2):
        p = {"w": np.array([1.0, 1.0])}
        adam_step(p, g, AdamState.zeros_like(p), lr=0.01)
        deltas.append(p["w"] - 1.0)
    assert np.array_equal(deltas[0], deltas[1])


def test_adam_shape_mismatch():
    p = {"w": np.zeros(2)}
    with pytest.raises(ShapeError):
        adam_step(p, {"w": np.zeros(3)}, AdamState(), lr=0.1)


def test_checkpoint_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(7)
    tensors = {"a": rng.standard_normal((3, 4)), "b.c": np.array([np.pi, -0.0, 1e-308]),
               "ids": np.arange(5, dtype=np.int64), "scalar": np.array(2.5)}
    path = tmp_path / "x.ckpt"
    save_checkpoint(path, tensors, {"kind": "test"})
    back, meta = load_checkpoint(path)
    assert meta == {"kind": "test"}
    assert list(back) == list(tensors)
    for k in tensors:
        assert back[k].dtype == tensors[k].dtype
        assert back[k].tobytes() == tensors[k].tobytes()
    assert path.read_bytes()[:8] == b"USPCKPT\0"


def test_rng_streams_are_reproducible_and_named():
    a = stream(7, "init").standard_normal(4)
    b = stream(7, "init").standard_normal(4)
    c = stream(7, "data").standard_normal(4)
    assert np.array_equal(a, b) and not np.array_equal(a, c)
    t = truncated_normal(stream(1, "t"), (1000,), std=0.02)
    assert np.abs(t).max() <= 0.04
