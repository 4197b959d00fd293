"""Central finite-difference oracle shared by the gradient tests."""
import numpy as np

from symfore import autodiff as ad

H = 1e-5


def numeric_grad(f, x: np.ndarray, h: float = H) -> np.ndarray:
    """d f / d x for scalar ``f(x)`` by central differences, entry by entry."""
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        up = f(x)
        x[i] = old - h
        down = f(x)
        x[i] = old
        g[i] = (up - down) / (2 * h)
    return g


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def analytic_grads(build, arrays: list[np.ndarray]) -> list[np.ndarray]:
    """Gradients of scalar ``build(*tensors)`` recorded on a fresh tape."""
    ts = [ad.Tensor(a.copy(), requires_grad=True) for a in arrays]
    with ad.Tape():
        loss = build(*ts)
        ad.backward(loss)
    return [t.grad if t.grad is not None else np.zeros_like(t.data) for t in ts]


def check(build, arrays: list[np.ndarray], h: float = H) -> float:
    """Worst relative error over all inputs of ``build``."""
    grads = analytic_grads(build, arrays)
    worst = 0.0
    for k, a in enumerate(arrays):
        def f(x, k=k):
            args = [ad.Tensor(v) for v in arrays]
            args[k] = ad.Tensor(x)
            return build(*args).item()
        num = numeric_grad(f, a.copy(), h)
        worst = max(worst, rel_error(grads[k], num))
    return worst


def per_op_cases(rng):
    """Scalar builders and inputs for every differentiable op, drawn from ``rng``."""
    a33, b33 = rng.normal(size=(3, 3)), rng.normal(size=(3, 3))
    pos = rng.uniform(0.5, 2.0, size=(3, 4))
    x = rng.normal(size=64)
    # keep relu inputs away from the kink
    x_relu = x + np.sign(x) * 0.05
    conv_x, conv_w = rng.normal(size=(2, 8)), rng.normal(size=(3, 2, 3))
    logits, target = rng.normal(size=(5, 3)), rng.integers(0, 3, size=5)
    pose_a, pose_b = rng.normal(size=(4, 6)), rng.normal(size=(4, 6))
    wsum = rng.normal(size=(3, 4))
    return {
        "add": (lambda a, b: ((a + b) * wsum).sum(), [pos, rng.normal(size=(4,))]),
        "sub": (lambda a, b: ((a - b) * wsum).sum(), [pos, rng.normal(size=(3, 1))]),
        "mul": (lambda a, b: (a * b * wsum).sum(), [pos, rng.normal(size=(3, 4))]),
        "div": (lambda a, b: (a / b * wsum).sum(), [rng.normal(size=(3, 4)), pos]),
        "sqrt": (lambda a: (ad.sqrt(a) * wsum).sum(), [pos]),
        "matmul": (lambda a, b: (a @ b).sum(), [a33, b33]),
        "relu": (lambda a: (ad.relu(a) * x).sum(), [x_relu]),
        "sigmoid": (lambda a: (ad.sigmoid(a) * x).sum(), [x * 3]),
        "tanh": (lambda a: (ad.tanh(a) * x).sum(), [x * 2]),
        "softmax_ce": (lambda a: ad.cross_entropy(ad.softmax(a), target), [logits]),
        "sum_axis": (lambda a: (a.sum(axis=0) * wsum[0]).sum(), [pos]),
        "mean": (lambda a: (a.mean(axis=1, keepdims=True) * wsum).sum(), [pos]),
        "reshape_transpose": (lambda a: (a.reshape(4, 3).transpose() * rng_w(3, 4)).sum(),
                              [pos]),
        "getitem": (lambda a: (a[1:, ::2] * wsum[1:, ::2]).sum() + (a[[0, 0, 2]] * 3.0).sum(), [pos]),
        "concat": (lambda a, b: (ad.concat([a, b], axis=0) * rng_w(6, 3)).sum(), [a33, b33]),
        "stack": (lambda a, b: (ad.stack([a, b], axis=1) * rng_w(3, 2, 3)).sum(), [a33, b33]),
        "conv_x": (lambda a: (ad.dilated_causal_conv1d(a, ad.Tensor(conv_w), 2) * rng_w(3, 8)).sum(),
                   [conv_x]),
        "conv_w": (lambda w: (ad.dilated_causal_conv1d(ad.Tensor(conv_x), w, 2) * rng_w(3, 8)).sum(),
                   [conv_w]),
        "l2_pose": (lambda a, b: ad.l2_pose_loss(a, b), [pose_a, pose_b]),
    }


def rng_w(*shape):
    """Fixed weights keyed by shape, so every test sees the same reduction."""
    return np.random.default_rng(list(shape)).normal(size=shape)


def composite_loss_error(seed: int) -> float:
    """Relative error of the full training loss gradient on a 4-frame, 2-joint toy."""
    from symfore import models as M
    from symfore import training as T
    cfg = M.ModelConfig(n_labels=2, pose_dim=6, observed=2, total=4, warmup=1, tcn_channels=3,
                        tcn_blocks=2, hidden_forecast=3, hidden_label_enc=2, hidden_pose_enc=3)
    tc = T.TrainConfig()
    rng = np.random.default_rng(seed)
    x, labels = rng.normal(size=(2, 4, 6)), rng.integers(0, 2, size=(2, 4))
    params = M.init_params(cfg, seed=seed)
    for p in params.values():
        p.data += rng.normal(scale=0.1, size=p.shape)

    def loss():
        out = M.full_forward(params, cfg, x[:, :2], labels)
        return T.total_loss(out, x, labels, cfg, tc)[0]

    with ad.Tape():
        ad.backward(loss())
    flat_a, flat_n = [], []
    for name, p in params.items():
        def f(v, name=name):
            saved = params[name].data
            params[name].data = v
            val = loss().item()
            params[name].data = saved
            return val
        flat_n.append(numeric_grad(f, p.data.copy()).ravel())
        flat_a.append((p.grad if p.grad is not None else np.zeros(p.shape)).ravel())
    return rel_error(np.concatenate(flat_a), np.concatenate(flat_n))
