import json

import numpy as np
import pytest

from symfore import autodiff as ad
from symfore import checkpoint as ckpt
from symfore import models as M
from symfore import training as T
from symfore.dataset import sliding_windows, stack_windows
from symfore.synth import synth_corpus
from fdcheck import composite_loss_error


def toy_cfg(**kw):
    base = dict(n_labels=2, pose_dim=6, observed=2, total=4, warmup=1, tcn_channels=3,
                tcn_blocks=2, hidden_forecast=3, hidden_label_enc=2, hidden_pose_enc=3)
    base.update(kw)
    return M.ModelConfig(**base)


def toy_batch(seed=0, B=2):
    rng = np.random.default_rng(seed)
    return rng.normal(size=(B, 4, 6)), rng.integers(0, 2, size=(B, 4))


def small_data(n=4, frames=60, stride=6, seed=0):
    seqs = synth_corpus("switch", n, frames, 5, seed=seed, noise=1.0)
    X, Y = stack_windows(sliding_windows(seqs, 10, 6, stride))
    return X, Y


def small_model(**kw):
    base = dict(n_labels=2, pose_dim=15, observed=10, total=16, warmup=3, tcn_channels=6,
                tcn_blocks=2, hidden_forecast=8, hidden_label_enc=4, hidden_pose_enc=8)
    base.update(kw)
    return M.ModelConfig(**base)


# -- optimisers -------------------------------------------------------------------------

def _reference_adam(x, grads, lr, b1=0.9, b2=0.999, eps=1e-8):
    m = v = 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        x -= lr * (m / (1 - b1 ** t)) / (np.sqrt(v / (1 - b2 ** t)) + eps)
    return x


def test_adam_matches_scalar_reference():
    grads = np.random.default_rng(0).normal(size=20)
    p = {"x": ad.Tensor([0.3], requires_grad=True)}
    st, cfg = T.OptimizerState(), T.TrainConfig(adam_lr=0.01)
    for g in grads:
        p["x"].grad = np.array([g])
        T.adam_step(p, st, cfg)
    assert p["x"].data[0] == pytest.approx(_reference_adam(0.3, grads, 0.01), abs=1e-15)


def test_adam_minimises_quadratic():
    p = {"x": ad.Tensor([1.0], requires_grad=True)}
    st, cfg = T.OptimizerState(), T.TrainConfig(adam_lr=0.01)
    for _ in range(500):
        p["x"].grad = 2 * p["x"].data
        T.adam_step(p, st, cfg)
    assert abs(p["x"].data[0]) < 1e-3


def test_zero_gradient_leaves_parameters():
    data = np.random.default_rng(1).normal(size=(3, 2))
    p = {"w": ad.Tensor(data.copy(), requires_grad=True)}
    st, cfg = T.OptimizerState(), T.TrainConfig()
    for step in (T.adam_step, T.sgd_step):
        p["w"].grad = np.zeros_like(data)
        step(p, st, cfg)
        assert np.array_equal(p["w"].data, data)


def test_sgd_step_is_exact():
    x, g = np.array([0.7, -1.3]), np.array([0.25, 2.0])
    p = {"x": ad.Tensor(x.copy(), requires_grad=True)}
    p["x"].grad = g
    T.sgd_step(p, T.OptimizerState(), T.TrainConfig(sgd_lr=1e-4))
    assert np.array_equal(p["x"].data, x - 1e-4 * g)


def test_train_config_validation():
    with pytest.raises(ValueError):
        T.TrainConfig(adam_lr=0)
    with pytest.raises(ValueError):
        T.TrainConfig(batch_size=0)


# -- loss ---------------------------------------------------------------------------------

def test_perfect_prediction_gives_zero_loss():
    cfg = toy_cfg()
    x, labels = toy_batch()
    out = M.ForwardOutput(ad.Tensor(np.eye(2)[labels[:, :2]]), ad.Tensor(np.eye(2)[labels[:, 2:]]),
                          ad.Tensor(x[:, 1:]), np.eye(2)[labels])
    loss, terms = T.total_loss(out, x, labels, cfg, T.TrainConfig())
    assert loss.item() == 0.0 and all(v == 0.0 for v in terms.values())


def test_weight_degeneration_and_linearity():
    cfg = toy_cfg()
    params = M.init_params(cfg, seed=2)
    x, labels = toy_batch(3)
    out = M.full_forward(params, cfg, x[:, :2], labels)
    only_l = T.TrainConfig(weight_forecast=0.0, weight_pose=0.0)
    loss, terms = T.total_loss(out, x, labels, cfg, only_l)
    assert loss.item() == ad.cross_entropy(out.observed_probs, labels[:, :2]).item()

    def grads(tc):
        ps = M.init_params(cfg, seed=2)
        with ad.Tape():
            o = M.full_forward(ps, cfg, x[:, :2], labels)
            ad.backward(T.total_loss(o, x, labels, cfg, tc)[0])
        return {k: (p.grad if p.grad is not None else np.zeros_like(p.data)) for k, p in ps.items()}

    full = grads(T.TrainConfig())
    parts = [grads(T.TrainConfig(weight_label=a, weight_forecast=b, weight_pose=c))
             for a, b, c in ((1, 0, 0), (0, 1, 0), (0, 0, 1))]
    for k in full:
        np.testing.assert_allclose(full[k], sum(p[k] for p in parts), rtol=1e-10, atol=1e-14)


def test_warmup_term_switch():
    cfg = toy_cfg()
    x, labels = toy_batch()
    poses = x[:, 1:].copy()
    poses[:, 0] += 1.0  # error only on the warm-up frame
    out = M.ForwardOutput(ad.Tensor(np.eye(2)[labels[:, :2]]), ad.Tensor(np.eye(2)[labels[:, 2:]]),
                          ad.Tensor(poses), np.eye(2)[labels])
    with_w = T.total_loss(out, x, labels, cfg, T.TrainConfig())[1]["loss_pose"]
    without = T.total_loss(out, x, labels, cfg, T.TrainConfig(loss_includes_warmup=False))[1]["loss_pose"]
    assert with_w > 0 and without == 0.0


def test_composite_gradient_matches_finite_differences():
    """4 frames, 2 joints, 2 labels: every parameter against central differences."""
    assert composite_loss_error(7) <= 1e-4


def test_loss_invariant_to_batch_order():
    cfg = toy_cfg()
    params = M.init_params(cfg, seed=1)
    x, labels = toy_batch(4, B=6)
    perm = np.random.default_rng(0).permutation(6)
    tr = T.Trainer(cfg, T.TrainConfig(batch_size=6), M.Normalizer(np.zeros(6), 1.0), params)
    a, _ = tr.evaluate(x, labels)
    b, _ = tr.evaluate(x[perm], labels[perm])
    assert abs(a - b) <= 1e-12


# -- training loop --------------------------------------------------------------------

def make_trainer(X, **tkw):
    tc = T.TrainConfig(**{"adam_lr": 3e-3, "batch_size": 8, **tkw})
    norm = M.Normalizer.fit(X)
    return T.Trainer(small_model(), tc, norm)


def test_training_loss_decreases_over_20_epochs():
    X, Y = small_data(n=10, stride=10)
    tr = make_trainer(X, batch_size=len(X), adam_lr=1e-3)
    Xn = tr.normalizer.encode(X)
    losses = [tr.train_epoch(Xn, Y)["train_loss"] for _ in range(20)]
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_phase_switches_exactly_once():
    X, Y = small_data()
    tr = make_trainer(X, plateau_patience=2, plateau_min_delta=1e9)
    Xn = tr.normalizer.encode(X)
    for _ in range(6):
        tr.train_epoch(Xn, Y, Xn, Y)
    phases = [(r["phase"], r["phase_after"]) for r in tr.history]
    switches = [r["epoch"] for r in tr.history if r["phase"] != r["phase_after"]]
    # the first epoch always improves on +inf, then two stale epochs
    assert switches == [3]
    assert tr.state.switch_epoch == 3
    assert [p for p, _ in phases] == ["adam"] * 3 + ["sgd"] * 3


def test_non_finite_gradient_aborts_and_keeps_checkpoint(tmp_path):
    X, Y = small_data()
    tr = make_trainer(X)
    Xn = tr.normalizer.encode(X)
    tr.fit(Xn, Y, epochs=1, checkpoint_dir=tmp_path)
    good = (tmp_path / "last.ckpt").read_bytes()
    tr.params["f_G.out.weight"].data[0, 0] = np.nan
    with pytest.raises(T.NumericAbort):
        tr.fit(Xn, Y, epochs=1, checkpoint_dir=tmp_path)
    assert (tmp_path / "last.ckpt").read_bytes() == good


def test_checkpoint_round_trip_bit_exact(tmp_path):
    X, Y = small_data()
    tr = make_trainer(X)
    Xn = tr.normalizer.encode(X)
    tr.train_epoch(Xn, Y, Xn, Y)
    tr.save(tmp_path / "a.ckpt")
    back = T.Trainer.load(tmp_path / "a.ckpt")
    for k, p in tr.params.items():
        assert p.data.tobytes() == back.params[k].data.tobytes()
    for k in tr.state.m:
        assert tr.state.m[k].tobytes() == back.state.m[k].tobytes()
        assert tr.state.v[k].tobytes() == back.state.v[k].tobytes()
    assert back.mcfg == tr.mcfg and back.tcfg == tr.tcfg
    assert back.history == tr.history
    back.save(tmp_path / "b.ckpt")
    assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()


def test_resume_reproduces_next_epoch(tmp_path):
    X, Y = small_data()
    tr = make_trainer(X)
    Xn = tr.normalizer.encode(X)
    tr.fit(Xn, Y, Xn, Y, epochs=2, checkpoint_dir=tmp_path)
    tr.fit(Xn, Y, Xn, Y, epochs=1)
    resumed = T.Trainer.load(tmp_path / "epoch_0002.ckpt")
    resumed.fit(Xn, Y, Xn, Y, epochs=1)
    for k, p in tr.params.items():
        assert p.data.tobytes() == resumed.params[k].data.tobytes()
    assert tr.history == resumed.history


def test_checkpoint_container_errors(tmp_path):
    path = tmp_path / "x.ckpt"
    ckpt.save_checkpoint(path, {"a": np.arange(3.0)}, {"k": 1})
    raw = bytearray(path.read_bytes())
    raw[8] = 99  # version field
    (tmp_path / "v.ckpt").write_bytes(bytes(raw))
    with pytest.raises(ckpt.CheckpointError, match="version"):
        ckpt.load_checkpoint(tmp_path / "v.ckpt")
    (tmp_path / "m.ckpt").write_bytes(b"NOTACKPT" + bytes(raw[8:]))
    with pytest.raises(ckpt.CheckpointError, match="magic"):
        ckpt.load_checkpoint(tmp_path / "m.ckpt")


def test_checkpoint_layout():
    import struct
    import tempfile
    from pathlib import Path

    with tempfile.TemporaryDirectory() as d:
        path = Path(d) / "x.ckpt"
        arrays = {"w": np.array([[1.5, -2.0]]), "b": np.array([3.25])}
        ckpt.save_checkpoint(path, arrays, {"note": "hi"})
        raw = path.read_bytes()
    assert raw[:8] == ckpt.MAGIC
    version, hlen = struct.unpack("<IQ", raw[8:20])
    assert version == 1
    header = json.loads(raw[20:20 + hlen])
    assert header["meta"] == {"note": "hi"}
    payload = raw[20 + hlen:]
    assert np.frombuffer(payload, "<f8").tolist() == [1.5, -2.0, 3.25]


def test_forecast_shapes_and_determinism():
    X, Y = small_data()
    tr = make_trainer(X)
    poses, fut, obs = tr.forecast(X[:3, :10], horizon=9)
    assert poses.shape == (3, 9, 15) and fut.shape == (3, 9) and obs.shape == (3, 10)
    again = tr.forecast(X[:3, :10], horizon=9)[0]
    assert poses.tobytes() == again.tobytes()
