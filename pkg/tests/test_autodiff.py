"""Tape mechanics and finite-difference checks for the reverse-mode core."""

import numpy as np
import pytest
import scipy.sparse

from sparseobb import autodiff as ad


def test_tensor_wraps_and_defaults():
    t = ad.Tensor(np.arange(6.0).reshape(2, 3))
    assert t.data.shape == (2, 3)
    assert t.grad is None
    assert not t.requires_grad


def test_backward_requires_scalar_root():
    t = ad.Tensor(np.ones(3), requires_grad=True)
    out = ad.mul(t, 2.0)
    with pytest.raises(ValueError):
        out.backward()


def test_simple_chain_gradient():
    x = ad.Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    y = ad.tsum(ad.mul(x, x))          # sum x^2 -> grad 2x
    y.backward()
    assert np.allclose(x.grad, [2.0, -4.0, 6.0])


def test_grad_accumulates_across_shared_subexpression():
    x = ad.Tensor(np.array([3.0]), requires_grad=True)
    y = ad.add(ad.mul(x, 2.0), ad.mul(x, 5.0))   # 7x
    ad.tsum(y).backward()
    assert np.allclose(x.grad, [7.0])


def test_interior_grads_freed_leaves_kept():
    x = ad.Tensor(np.ones((2, 2)), requires_grad=True)
    h = ad.relu(x)
    out = ad.tsum(h)
    out.backward()
    assert x.grad is not None
    assert h.grad is None          # interior buffers released during backward
    assert h._backward is None
    assert h._parents == ()


def test_no_tape_when_nothing_requires_grad():
    a = ad.Tensor(np.ones(4))
    out = ad.mul(a, 3.0)
    assert out._backward is None
    assert not out.requires_grad


def test_broadcast_gradients_fold_back():
    a = ad.Tensor(np.ones((3, 4)), requires_grad=True)
    b = ad.Tensor(np.ones((1, 4)), requires_grad=True)
    c = ad.Tensor(np.array(2.0), requires_grad=True)
    out = ad.tsum(ad.mul(ad.add(a, b), c))
    out.backward()
    assert a.grad.shape == (3, 4)
    assert np.allclose(b.grad, np.full((1, 4), 3.0 * 2.0))
    assert np.allclose(c.grad, 24.0)


def test_aliased_push_does_not_cross_contaminate():
    """add() pushes the same upstream array to both parents; the copy in
    the accumulator must keep their grads independent."""
    x = ad.Tensor(np.ones(3), requires_grad=True)
    y = ad.Tensor(np.ones(3), requires_grad=True)
    s = ad.add(x, y)
    out = ad.add(ad.tsum(s), ad.tsum(ad.mul(x, 10.0)))
    out.backward()
    assert np.allclose(y.grad, [1.0, 1.0, 1.0])
    assert np.allclose(x.grad, [11.0, 11.0, 11.0])


def test_getitem_fancy_duplicate_indices():
    x = ad.Tensor(np.arange(5.0), requires_grad=True)
    idx = np.array([1, 1, 3])
    out = ad.tsum(ad.getitem(x, idx))
    out.backward()
    assert np.allclose(x.grad, [0, 2, 0, 1, 0])


def test_take_rows_duplicates():
    x = ad.Tensor(np.arange(8.0).reshape(4, 2), requires_grad=True)
    out = ad.tsum(ad.take_rows(x, np.array([0, 0, 2])))
    out.backward()
    assert np.allclose(x.grad, [[2, 2], [0, 0], [1, 1], [0, 0]])


def test_dropout_eval_mode_is_identity():
    x = ad.Tensor(np.ones(5), requires_grad=True)
    assert ad.dropout(x, 0.5, None) is x


def test_dropout_train_mode_scales():
    x = ad.Tensor(np.ones(4), requires_grad=True)
    mask = np.array([1.0, 0.0, 1.0, 0.0])
    out = ad.dropout(x, 0.5, mask)
    assert np.allclose(out.data, [2.0, 0.0, 2.0, 0.0])
    ad.tsum(out).backward()
    assert np.allclose(x.grad, [2.0, 0.0, 2.0, 0.0])


# ---------------------------------------------------------------------------
# finite differences over each primitive


RNG = np.random.default_rng(42)


def _fd(name, f, inputs, tol=1e-4, eps=1e-5):
    rep = ad.grad_check(f, inputs, eps=eps, tol=tol)
    assert rep.passed, f"{name}: max rel err {rep.max_rel_err:.3e} (per input {rep.per_input})"


def test_fd_binary_ops():
    x = RNG.standard_normal((3, 4))
    y = RNG.standard_normal((3, 4)) + 3.0   # keep division well away from 0
    _fd("add", lambda t: ad.tsum(ad.add(t["x"], t["y"])), {"x": x, "y": y})
    _fd("mul", lambda t: ad.tsum(ad.mul(t["x"], t["y"])), {"x": x, "y": y})
    _fd("div", lambda t: ad.tsum(ad.div(t["x"], t["y"])), {"x": x, "y": y})


def test_fd_matmul_broadcast_batched():
    a = RNG.standard_normal((2, 3, 4))
    b = RNG.standard_normal((4, 5))
    w = RNG.standard_normal((2, 3, 5))

    def f(t):
        return ad.tsum(ad.mul(ad.matmul(t["a"], t["b"]), w))

    _fd("matmul", f, {"a": a, "b": b})


def test_fd_softmax_and_layer_norm():
    x = RNG.standard_normal((4, 7))
    g = RNG.standard_normal(7)
    b = RNG.standard_normal(7)
    w = RNG.standard_normal((4, 7))
    _fd("softmax", lambda t: ad.tsum(ad.mul(ad.softmax(t["x"], axis=-1), w)),
        {"x": x})
    _fd("layer_norm",
        lambda t: ad.tsum(ad.mul(ad.layer_norm(t["x"], t["g"], t["b"]), w)),
        {"x": x, "g": g, "b": b})


def test_fd_sparse_gather():
    mat = scipy.sparse.random(6, 10, density=0.5, random_state=0, format="csr")
    x = RNG.standard_normal((10, 3))
    w = RNG.standard_normal((6, 3))
    _fd("sparse_gather",
        lambda t: ad.tsum(ad.mul(ad.sparse_gather(mat, t["x"]), w)), {"x": x})


def test_fd_reductions_and_shapes():
    x = RNG.standard_normal((3, 4, 5))
    w = RNG.standard_normal((5, 12))
    _fd("mean", lambda t: ad.tsum(ad.mul(ad.tmean(t["x"], axis=1), 3.7)), {"x": x})
    _fd("reshape+matmul",
        lambda t: ad.tsum(ad.matmul(ad.reshape(t["x"], (3, 20)),
                                    ad.reshape(ad.Tensor(w.reshape(5, 12)), (20, 3)))),
        {"x": x})
    wt = RNG.standard_normal((5, 3, 4))
    _fd("transpose", lambda t: ad.tsum(ad.mul(ad.transpose(t["x"], (2, 0, 1)),
                                              wt)),
        {"x": x})


def test_grad_check_rejects_non_float64():
    with pytest.raises(ValueError):
        ad.grad_check(lambda t: ad.tsum(t["x"]),
                      {"x": np.ones(3, dtype=np.float32)})


def test_grad_check_floor_masks_fd_noise_on_zero_grads():
    """A coordinate with true gradient exactly 0 reads only rounding noise in
    the finite difference; the floor turns that into an absolute comparison."""
    x = np.array([-1.0, 2.0])   # relu kills index 0

    def f(t):
        return ad.tsum(ad.mul(ad.relu(t["x"]), 1e6))

    rep = ad.grad_check(f, {"x": x}, floor=1.0)
    assert rep.passed
