"""Autodiff engine: finite-difference oracles for every op."""

import numpy as np
import pytest
import scipy.signal

from blocklayout.neural import (
    Adam, Conv2d, ConvTranspose2d, Dense, GraphAttention, MLPHead, Module,
    TapeError, Tensor, concat, conv2d, conv2d_transpose, cross_entropy,
    kl_standard_normal, l2_loss, log_softmax, softmax,
)

EPS = 1e-5
TOL = 1e-4


def fd_assert(fn, arrays):
    """Analytic grads must match central differences on every input."""
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    fn(*tensors).backward()
    for k, (t, a) in enumerate(zip(tensors, arrays)):
        flat = a.ravel()
        num = np.zeros_like(flat)
        for i in range(flat.size):
            vals = []
            for sgn in (1, -1):
                pert = flat.copy()
                pert[i] += sgn * EPS
                args = [Tensor(x.copy()) for x in arrays]
                args[k] = Tensor(pert.reshape(a.shape))
                vals.append(fn(*args).data.item())
            num[i] = (vals[0] - vals[1]) / (2 * EPS)
        ana = t.grad.ravel()
        denom = max(np.abs(num).max(), np.abs(ana).max(), 1e-8)
        assert np.abs(num - ana).max() / denom <= TOL


RNG = np.random.default_rng(0)


def test_arithmetic_with_broadcasting():
    x = RNG.normal(size=(3, 4))
    y = RNG.normal(size=(4,))
    fd_assert(lambda a, b: ((a * b + a / (b + 5.0) - b) ** 2).sum(),
              [x, y])


def test_pointwise_nonlinearities():
    x = RNG.normal(size=(3, 4))
    fd_assert(lambda a: (a.exp() + a.tanh() + a.sigmoid()).sum(), [x])
    fd_assert(lambda a: (a.relu() + a.leaky_relu(0.2)).sum(), [x + 0.3])
    fd_assert(lambda a: (a.clamp_min(-0.5) + a.clamp_max(0.4)).sum(), [x])
    fd_assert(lambda a: (a + 3.0).log().sum(), [x])


def test_matmul_batched():
    a = RNG.normal(size=(2, 3, 4))
    b = RNG.normal(size=(4, 5))
    fd_assert(lambda x, y: ((x @ y) ** 2).sum(), [a, b])
    c = RNG.normal(size=(2, 5, 3))
    fd_assert(lambda x, y: ((x @ y) ** 2).sum(), [c, a])


def test_reductions_and_views():
    x = RNG.normal(size=(3, 4))
    fd_assert(lambda a: a.sum(axis=0, keepdims=True).mean(), [x])
    fd_assert(lambda a: a.reshape(2, 6).transpose(1, 0).sum(axis=0)
              .mean(), [x])
    fd_assert(lambda a: a[1:, ::2].sum(), [x])
    fd_assert(lambda a: a.broadcast_to((5, 3, 4)).mean(), [x])
    fd_assert(lambda a: a.swap_last_axes().sum(axis=-1).mean(), [x])


def test_softmax_family():
    x = RNG.normal(size=(3, 4))
    fd_assert(lambda a: softmax(a, axis=-1).log().sum(), [x])
    fd_assert(lambda a: log_softmax(a, axis=-1).sum(), [x])
    probs = softmax(Tensor(x), axis=-1).data
    assert np.allclose(probs.sum(axis=-1), 1.0)
    # Stability: huge logits stay finite for value and gradient.
    big = Tensor(np.array([[1e4, 0.0, -1e4]]), requires_grad=True)
    out = log_softmax(big, axis=-1).sum()
    out.backward()
    assert np.all(np.isfinite(out.data))
    assert np.all(np.isfinite(big.grad))


def test_concat_gradient_splits():
    x = RNG.normal(size=(3, 4))
    fd_assert(lambda a, b: concat([a, b], axis=-1).tanh().sum(),
              [x, x * 2])
    fd_assert(lambda a, b: concat([a, b], axis=0).sigmoid().mean(),
              [x, x + 1])


def test_conv2d_gradients():
    x = RNG.normal(size=(2, 3, 8, 8))
    w = RNG.normal(size=(4, 3, 4, 4)) * 0.3
    fd_assert(lambda a, b: (conv2d(a, b, stride=2, padding=1) ** 2).sum(),
              [x, w])
    fd_assert(lambda a, b: (conv2d(a, b, stride=1, padding=0) ** 2).sum(),
              [x[:1, :2, :5, :5], w[:2, :2, :3, :3]])


def test_conv2d_transpose_gradients():
    x = RNG.normal(size=(2, 4, 4, 4))
    w = RNG.normal(size=(4, 3, 4, 4)) * 0.3
    fd_assert(lambda a, b: (conv2d_transpose(a, b, stride=2,
                                             padding=1) ** 2).sum(),
              [x, w])


def test_conv_matches_scipy_correlate():
    x = RNG.normal(size=(1, 2, 9, 9))
    w = RNG.normal(size=(3, 2, 3, 3))
    out = conv2d(Tensor(x), Tensor(w), stride=1, padding=0).data
    for f in range(3):
        want = sum(
            scipy.signal.correlate2d(x[0, c], w[f, c], mode="valid")
            for c in range(2))
        assert np.allclose(out[0, f], want, atol=1e-12)


def test_conv_transpose_is_exact_adjoint():
    x = RNG.normal(size=(2, 3, 8, 8))
    w = RNG.normal(size=(4, 3, 4, 4))
    y = conv2d(Tensor(x), Tensor(w), stride=2, padding=1).data
    u = RNG.normal(size=y.shape)
    lhs = float((y * u).sum())
    back = conv2d_transpose(Tensor(u), Tensor(w), stride=2,
                            padding=1).data
    rhs = float((x * back).sum())
    assert lhs == pytest.approx(rhs, abs=1e-9 * max(1.0, abs(lhs)))


def test_graph_attention_end_to_end_gradient():
    adj = (RNG.random((5, 5)) < 0.5).astype(float)
    np.fill_diagonal(adj, 1.0)
    gx = RNG.normal(size=(2, 5, 6))
    gat = GraphAttention(6, 7, RNG)

    def gat_fn(w, asrc, adst, xin):
        h = xin @ w
        s = (h @ asrc) + (h @ adst).swap_last_axes()
        s = s.leaky_relu(0.2)
        s = s * adj + (1.0 - adj) * -1e9
        return ((softmax(s, axis=-1) @ h) ** 2).sum()

    fd_assert(gat_fn, [gat.weight.data.copy(), gat.att_src.data.copy(),
                       gat.att_dst.data.copy(), gx])


def test_graph_attention_respects_mask():
    # Fully isolated node: attention puts all weight on its self loop.
    adj = np.eye(4)
    gat = GraphAttention(3, 3, np.random.default_rng(1))
    x = Tensor(RNG.normal(size=(1, 4, 3)))
    mask = Tensor(adj[None])
    out = gat(x, mask).data
    h = x.data @ gat.weight.data
    assert np.allclose(out[0], h[0], atol=1e-9)


def test_masked_losses_match_closed_forms():
    logits = RNG.normal(size=(4, 3))
    labels = np.array([0, 2, 1, 1])
    mask = np.array([1.0, 0.0, 1.0, 1.0])
    fd_assert(lambda a: cross_entropy(a, labels, mask), [logits])
    # Hand computation of the masked mean of -log p[label].
    z = logits - logits.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    want = -(logp[np.arange(4), labels] * mask).sum() / mask.sum()
    got = cross_entropy(Tensor(logits), labels, mask).data.item()
    assert got == pytest.approx(want, abs=1e-12)

    pred = RNG.normal(size=(4, 5, 2))
    tgt = RNG.normal(size=(4, 5, 2))
    nmask = (RNG.random((4, 5)) < 0.6).astype(float)
    fd_assert(lambda a: l2_loss(a, tgt, nmask), [pred])
    want = ((pred - tgt) ** 2 * nmask[..., None]).sum() \
        / (nmask.sum() * 2)
    assert l2_loss(Tensor(pred), tgt, nmask).data.item() == \
        pytest.approx(want, abs=1e-12)
    assert l2_loss(Tensor(pred), tgt,
                   np.zeros((4, 5))).data.item() == 0.0


def test_uniform_logits_cross_entropy_is_log_c():
    logits = np.zeros((6, 5))
    labels = np.arange(6) % 5
    got = cross_entropy(Tensor(logits), labels).data.item()
    assert got == pytest.approx(np.log(5.0), abs=1e-12)


def test_kl_closed_form():
    mu = RNG.normal(size=(4, 6))
    lv = RNG.normal(size=(4, 6))
    fd_assert(lambda a, b: kl_standard_normal(a, b), [mu, lv])
    assert kl_standard_normal(Tensor(np.zeros((3, 2))),
                              Tensor(np.zeros((3, 2)))).data.item() == 0.0
    want = -0.5 * (1 + lv - mu ** 2 - np.exp(lv)).sum(axis=1).mean()
    got = kl_standard_normal(Tensor(mu), Tensor(lv)).data.item()
    assert got == pytest.approx(want, abs=1e-12)


def test_adam_two_steps_match_hand_calculation():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    opt = Adam([p], lr=0.1)
    grads = [np.array([0.5, -1.0]), np.array([-0.25, 2.0])]
    m = np.zeros(2)
    v = np.zeros(2)
    x = np.array([1.0, -2.0])
    for step, g in enumerate(grads, start=1):
        p.grad = g.copy()
        opt.step()
        m = 0.9 * m + 0.1 * g
        v = 0.999 * v + 0.001 * g * g
        mhat = m / (1 - 0.9 ** step)
        vhat = v / (1 - 0.999 ** step)
        x = x - 0.1 * mhat / (np.sqrt(vhat) + 1e-8)
        assert np.allclose(p.data, x, atol=1e-14)


def test_adam_skips_params_without_grads():
    p = Tensor(np.ones(3), requires_grad=True)
    q = Tensor(np.ones(3), requires_grad=True)
    opt = Adam([p, q], lr=0.1)
    p.grad = np.ones(3)
    opt.step()
    assert not np.allclose(p.data, 1.0)
    assert np.allclose(q.data, 1.0)


def test_backward_requires_scalar():
    t = Tensor(np.ones((2, 2)), requires_grad=True)
    with pytest.raises(TapeError):
        (t * 2).backward()


def test_cycle_detection():
    a = Tensor(np.ones(2), requires_grad=True)
    b = a * 2
    c = b.sum()
    b._parents = (c,)  # forge a loop in the tape
    with pytest.raises(TapeError):
        c.backward()


def test_detached_tensors_block_gradient():
    a = Tensor(np.ones(3), requires_grad=True)
    out = (a.detach() * a).sum()
    out.backward()
    assert np.allclose(a.grad, 1.0)  # only the live branch contributes


def test_module_registration_and_param_count():
    rng = np.random.default_rng(2)

    class Net(Module):
        def __init__(self):
            super().__init__()
            self.fc1 = Dense(4, 8, rng)
            self.fc2 = Dense(8, 2, rng, bias=False)

    net = Net()
    params = net.parameters()
    assert len(params) == 3  # w1, b1, w2
    assert net.n_parameters() == 4 * 8 + 8 + 8 * 2
    for p in params:
        p.grad = np.ones_like(p.data)
    net.zero_grad()
    assert all(p.grad is None for p in params)


def test_layer_shapes():
    rng = np.random.default_rng(3)
    x = Tensor(RNG.normal(size=(2, 3, 10, 10)))
    conv = Conv2d(3, 6, 4, 2, 1, rng)
    assert conv(x).shape == (2, 6, 5, 5)
    tconv = ConvTranspose2d(6, 3, 4, 2, 1, rng)
    assert tconv(conv(x)).shape == (2, 3, 10, 10)
    head = MLPHead(5, 8, 2, rng)
    assert head(Tensor(RNG.normal(size=(7, 5)))).shape == (7, 2)
