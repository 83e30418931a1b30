import numpy as np
from blocklayout.neural import (Tensor, concat, conv2d, conv2d_transpose,
                                softmax, GraphAttention, Dense,
                                cross_entropy, kl_standard_normal, l2_loss)

rng = np.random.default_rng(0)
EPS = 1e-5


def fd_check(fn, arrays, name, tol=1e-4):
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = fn(*tensors)
    out.backward()
    worst = 0.0
    for k, (t, a) in enumerate(zip(tensors, arrays)):
        flat = a.ravel()
        num = np.zeros_like(flat)
        for i in range(flat.size):
            for sgn, store in ((1, 0), (-1, 1)):
                pert = flat.copy()
                pert[i] += sgn * EPS
                args = [Tensor(x.copy()) for x in arrays]
                args[k] = Tensor(pert.reshape(a.shape))
                val = fn(*args).data.item()
                if sgn == 1:
                    plus = val
                else:
                    minus = val
            num[i] = (plus - minus) / (2 * EPS)
        ana = t.grad.ravel()
        denom = max(np.abs(num).max(), np.abs(ana).max(), 1e-8)
        rel = np.abs(num - ana).max() / denom
        worst = max(worst, rel)
    status = "ok" if worst <= tol else "FAIL"
    print(f"{name:32s} rel={worst:.3e} {status}")
    return worst <= tol


all_ok = True
x = rng.normal(size=(3, 4))
y = rng.normal(size=(4,))
all_ok &= fd_check(lambda a, b: ((a * b + a / (b + 5.0) - b) ** 2).sum(), [x, y], "arith+broadcast")
all_ok &= fd_check(lambda a: (a.exp() + a.tanh() + a.sigmoid()).sum(), [x], "exp/tanh/sigmoid")
all_ok &= fd_check(lambda a: (a.relu() + a.leaky_relu(0.2)).sum(), [x + 0.3], "relu/leaky")
all_ok &= fd_check(lambda a: a.clamp_min(-0.5).sum(), [x], "clamp_min")
m1 = rng.normal(size=(2, 3, 4))
m2 = rng.normal(size=(4, 5))
all_ok &= fd_check(lambda a, b: ((a @ b) ** 2).sum(), [m1, m2], "batched matmul")
all_ok &= fd_check(lambda a: softmax(a, axis=-1).log().sum(), [x], "softmax")
all_ok &= fd_check(lambda a, b: concat([a, b], axis=-1).tanh().sum(), [x, x * 2], "concat")
all_ok &= fd_check(lambda a: a.reshape(2, 6).transpose(1, 0).sum(axis=0).mean(), [x.reshape(3, 4)], "reshape/transpose")
all_ok &= fd_check(lambda a: a[1:, ::2].sum(), [x], "getitem")
all_ok &= fd_check(lambda a: a.broadcast_to((5, 3, 4)).mean(), [x], "broadcast_to")

xc = rng.normal(size=(2, 3, 8, 8))
wc = rng.normal(size=(4, 3, 4, 4)) * 0.3
all_ok &= fd_check(lambda a, b: (conv2d(a, b, stride=2, padding=1) ** 2).sum(), [xc, wc], "conv2d s2 p1")
xt = rng.normal(size=(2, 4, 4, 4))
wt = rng.normal(size=(4, 3, 4, 4)) * 0.3
all_ok &= fd_check(lambda a, b: (conv2d_transpose(a, b, stride=2, padding=1) ** 2).sum(),
                   [xt, wt], "conv2d_transpose s2 p1")

# adjointness: <conv(x), u> == <x, convT(u)>
u = rng.normal(size=conv2d(Tensor(xc), Tensor(wc), stride=2, padding=1).shape)
lhs = (conv2d(Tensor(xc), Tensor(wc), stride=2, padding=1).data * u).sum()
rhs = (xc * conv2d_transpose(Tensor(u), Tensor(wc), stride=2, padding=1).data).sum()
print(f"adjointness |lhs-rhs| = {abs(lhs-rhs):.3e}")
all_ok &= abs(lhs - rhs) < 1e-9

# GAT layer end to end
adj = (rng.random((5, 5)) < 0.5).astype(float)
np.fill_diagonal(adj, 1.0)
gx = rng.normal(size=(2, 5, 6))
gat = GraphAttention(6, 7, rng)
params = [gat.weight, gat.att_src, gat.att_dst]
arrays = [p.data.copy() for p in params] + [gx]


def gat_fn(w, asrc, adst, xin):
    h = xin @ w
    s = (h @ asrc) + (h @ adst).swap_last_axes()
    s = s.leaky_relu(0.2)
    s = s * adj + (1.0 - adj) * -1e9
    a = softmax(s, axis=-1)
    return ((a @ h) ** 2).sum()


all_ok &= fd_check(gat_fn, arrays, "graph attention")

# losses
logits = rng.normal(size=(4, 3))
labels = np.array([0, 2, 1, 1])
mask = np.array([1.0, 0.0, 1.0, 1.0])
all_ok &= fd_check(lambda a: cross_entropy(a, labels, mask), [logits], "masked cross entropy")
mu = rng.normal(size=(4, 6))
lv = rng.normal(size=(4, 6))
all_ok &= fd_check(lambda a, b: kl_standard_normal(a, b), [mu, lv], "kl")
pred = rng.normal(size=(4, 5, 2))
tgt = rng.normal(size=(4, 5, 2))
nmask = (rng.random((4, 5)) < 0.6).astype(float)
all_ok &= fd_check(lambda a: l2_loss(a, tgt, nmask), [pred], "masked l2")

print("ALL OK" if all_ok else "FAILURES PRESENT")
