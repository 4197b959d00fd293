"""Joint training of the three networks: Adam until the validation loss
plateaus, then plain SGD."""
from __future__ import annotations

import json
import logging
import os
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import checkpoint as ckpt
from .autodiff import Tensor
from .labeling import ClusterModel, PcaModel
from .models import ForwardOutput, ModelConfig, Normalizer, full_forward, init_params

log = logging.getLogger(__name__)


class NumericAbort(RuntimeError):
    """Training produced a non-finite loss or gradient."""


@dataclass
class TrainConfig:
    batch_size: int = 16
    adam_lr: float = 5e-4
    sgd_lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    plateau_patience: int = 5
    plateau_min_delta: float = 1e-4
    weight_label: float = 1.0
    weight_forecast: float = 1.0
    weight_pose: float = 1.0
    max_epochs: int = 100
    seed: int = 0
    loss_includes_warmup: bool = True
    grad_clip: float = 0.0  # 0 disables clipping

    def __post_init__(self):
        if self.adam_lr <= 0 or self.sgd_lr <= 0:
            raise ValueError("learning rates must be positive")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class OptimizerState:
    phase: str = "adam"
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    best_val: float = float("inf")
    epochs_since_improvement: int = 0
    switch_epoch: int | None = None


def adam_step(params: dict[str, Tensor], state: OptimizerState, cfg: TrainConfig) -> None:
    """Bias-corrected Adam update in place; parameters without a grad are skipped."""
    state.step += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        if p.grad is None:
            continue
        g = p.grad
        m = state.m.get(name)
        v = state.v.get(name)
        m = (1 - b1) * g if m is None else b1 * m + (1 - b1) * g
        v = (1 - b2) * g * g if v is None else b2 * v + (1 - b2) * g * g
        state.m[name], state.v[name] = m, v
        p.data -= cfg.adam_lr * (m / c1) / (np.sqrt(v / c2) + cfg.eps)


def sgd_step(params: dict[str, Tensor], state: OptimizerState, cfg: TrainConfig) -> None:
    state.step += 1
    for p in params.values():
        if p.grad is not None:
            p.data -= cfg.sgd_lr * p.grad


def total_loss(out: ForwardOutput, poses, labels, mcfg: ModelConfig,
               tcfg: TrainConfig) -> tuple[Tensor, dict[str, float]]:
    """Weighted sum of label, forecast and pose losses.

    ``poses`` is the normalised ``(B, T, d)`` ground truth and ``labels``
    the ``(B, T)`` class ids of the same window.
    """
    t, w = mcfg.observed, mcfg.warmup
    h = out.future_probs.shape[1]
    labels = np.asarray(labels)
    loss_l = ad.cross_entropy(out.observed_probs, labels[:, :t])
    loss_f = ad.cross_entropy(out.future_probs, labels[:, t:t + h])
    if tcfg.loss_includes_warmup:
        loss_g = ad.l2_pose_loss(out.poses, poses[:, t - w:t + h])
    else:
        loss_g = ad.l2_pose_loss(out.poses[:, w:], poses[:, t:t + h])
    total = (loss_l * tcfg.weight_label + loss_f * tcfg.weight_forecast
             + loss_g * tcfg.weight_pose)
    terms = {"loss_label": loss_l.item(), "loss_forecast": loss_f.item(), "loss_pose": loss_g.item()}
    return total, terms


def _check_grads(params: dict[str, Tensor]) -> None:
    bad = [n for n, p in params.items() if p.grad is not None and not np.all(np.isfinite(p.grad))]
    if bad:
        raise NumericAbort(f"non-finite gradient in {', '.join(bad[:5])}"
                           + (f" and {len(bad) - 5} more" if len(bad) > 5 else ""))


def _clip(params: dict[str, Tensor], max_norm: float) -> None:
    norm = np.sqrt(sum(float((p.grad ** 2).sum()) for p in params.values() if p.grad is not None))
    if norm > max_norm:
        for p in params.values():
            if p.grad is not None:
                p.grad *= max_norm / norm


class Trainer:
    """Owns parameters, optimiser state, RNG and history so that a run can be
    checkpointed after any epoch and resumed bit-identically."""

    def __init__(self, mcfg: ModelConfig, tcfg: TrainConfig, normalizer: Normalizer,
                 params: dict[str, Tensor] | None = None, class_names=()):
        self.mcfg = mcfg
        self.tcfg = tcfg
        self.normalizer = normalizer
        self.params = params if params is not None else init_params(mcfg)
        self.state = OptimizerState()
        self.rng = np.random.default_rng(tcfg.seed)
        self.history: list[dict] = []
        self.epoch = 0
        self.class_names = tuple(class_names)
        self.pca: PcaModel | None = None
        self.clusters: ClusterModel | None = None
        self.info: dict = {}  # data provenance (frame rate, joints) kept with the weights

    # -- one epoch ----------------------------------------------------------

    def batch_loss(self, poses, labels):
        t = self.mcfg.observed
        out = full_forward(self.params, self.mcfg, poses[:, :t], labels, mode="train",
                           horizon=poses.shape[1] - t)
        return total_loss(out, poses, labels, self.mcfg, self.tcfg)

    def evaluate(self, poses, labels) -> tuple[float, dict[str, float]]:
        """Teacher-forced loss without recording gradients, averaged per window."""
        totals, terms_sum, n = 0.0, {}, 0
        bs = self.tcfg.batch_size
        for i in range(0, len(poses), bs):
            loss, terms = self.batch_loss(poses[i:i + bs], labels[i:i + bs])
            k = len(poses[i:i + bs])
            totals += loss.item() * k
            for key, val in terms.items():
                terms_sum[key] = terms_sum.get(key, 0.0) + val * k
            n += k
        return totals / n, {k: v / n for k, v in terms_sum.items()}

    def train_epoch(self, poses, labels, val_poses=None, val_labels=None) -> dict:
        order = self.rng.permutation(len(poses))
        bs = self.tcfg.batch_size
        step = adam_step if self.state.phase == "adam" else sgd_step
        phase = self.state.phase
        total, n = 0.0, 0
        terms_sum: dict[str, float] = {}
        for i in range(0, len(order), bs):
            idx = order[i:i + bs]
            for p in self.params.values():
                p.grad = None
            with ad.Tape() as tape:
                loss, terms = self.batch_loss(poses[idx], labels[idx])
                if not np.isfinite(loss.item()):
                    raise NumericAbort(f"non-finite loss at epoch {self.epoch + 1}")
                ad.backward(loss)
            tape.clear()
            _check_grads(self.params)
            if self.tcfg.grad_clip > 0:
                _clip(self.params, self.tcfg.grad_clip)
            step(self.params, self.state, self.tcfg)
            total += loss.item() * len(idx)
            n += len(idx)
            for key, val in terms.items():
                terms_sum[key] = terms_sum.get(key, 0.0) + val * len(idx)
        self.epoch += 1
        record = {"epoch": self.epoch, "phase": phase, "train_loss": total / n,
                  **{f"train_{k}": v / n for k, v in terms_sum.items()}}
        if val_poses is not None and len(val_poses):
            val, vterms = self.evaluate(val_poses, val_labels)
            record["val_loss"] = val
            record.update({f"val_{k}": v for k, v in vterms.items()})
            self._update_plateau(val)
        record["phase_after"] = self.state.phase
        self.history.append(record)
        return record

    def _update_plateau(self, val: float) -> None:
        st = self.state
        if val < st.best_val - self.tcfg.plateau_min_delta:
            st.best_val = val
            st.epochs_since_improvement = 0
        else:
            st.epochs_since_improvement += 1
        if st.phase == "adam" and st.epochs_since_improvement >= self.tcfg.plateau_patience:
            st.phase = "sgd"
            st.switch_epoch = self.epoch
            st.epochs_since_improvement = 0
            log.info("validation loss plateaued; switching to SGD after epoch %d", self.epoch)

    def fit(self, poses, labels, val_poses=None, val_labels=None, epochs: int | None = None,
            checkpoint_dir: str | os.PathLike | None = None, log_path=None) -> list[dict]:
        """Train up to ``epochs`` more epochs (default: until ``max_epochs``).

        With ``checkpoint_dir`` the trainer is saved after every epoch as
        ``epoch_XXXX.ckpt`` and ``last.ckpt``; ``log_path`` receives one JSON
        record per epoch.
        """
        target = self.tcfg.max_epochs if epochs is None else self.epoch + epochs
        while self.epoch < target:
            record = self.train_epoch(poses, labels, val_poses, val_labels)
            if log_path is not None:
                with open(log_path, "a") as fh:
                    fh.write(json.dumps(record) + "\n")
            if checkpoint_dir is not None:
                d = Path(checkpoint_dir)
                d.mkdir(parents=True, exist_ok=True)
                self.save(d / f"epoch_{self.epoch:04d}.ckpt")
                self.save(d / "last.ckpt")
        return self.history

    # -- persistence --------------------------------------------------------

    def save(self, path) -> None:
        arrays = {f"param/{k}": p.data for k, p in self.params.items()}
        arrays.update({f"opt_m/{k}": v for k, v in self.state.m.items()})
        arrays.update({f"opt_v/{k}": v for k, v in self.state.v.items()})
        arrays["norm/mean"] = self.normalizer.mean
        if self.pca is not None:
            arrays["pca/mean"] = self.pca.mean
            arrays["pca/components"] = self.pca.components
            arrays["pca/explained_variance"] = self.pca.explained_variance
        if self.clusters is not None:
            arrays["kmeans/centers"] = self.clusters.centers
        st = self.state
        meta = {
            "model_config": self.mcfg.to_dict(),
            "train_config": asdict(self.tcfg),
            "optimizer": {"phase": st.phase, "step": st.step, "best_val": st.best_val,
                          "epochs_since_improvement": st.epochs_since_improvement,
                          "switch_epoch": st.switch_epoch},
            "normalizer_scale": self.normalizer.scale,
            "rng_state": self.rng.bit_generator.state,
            "history": self.history,
            "epoch": self.epoch,
            "class_names": list(self.class_names),
            "kmeans_seed": None if self.clusters is None else self.clusters.seed,
            "info": self.info,
        }
        ckpt.save_checkpoint(path, arrays, meta)

    @classmethod
    def load(cls, path) -> "Trainer":
        arrays, meta = ckpt.load_checkpoint(path)
        mcfg = ModelConfig.from_dict(meta["model_config"])
        tcfg = TrainConfig.from_dict(meta["train_config"])
        norm = Normalizer(arrays["norm/mean"], meta["normalizer_scale"])
        params = {k[len("param/"):]: Tensor(v, requires_grad=True, name=k[len("param/"):])
                  for k, v in arrays.items() if k.startswith("param/")}
        tr = cls(mcfg, tcfg, norm, params, meta.get("class_names", ()))
        opt = meta["optimizer"]
        tr.state = OptimizerState(
            phase=opt["phase"], step=opt["step"],
            m={k[6:]: v for k, v in arrays.items() if k.startswith("opt_m/")},
            v={k[6:]: v for k, v in arrays.items() if k.startswith("opt_v/")},
            best_val=opt["best_val"], epochs_since_improvement=opt["epochs_since_improvement"],
            switch_epoch=opt["switch_epoch"])
        tr.rng.bit_generator.state = meta["rng_state"]
        tr.history = meta["history"]
        tr.epoch = meta["epoch"]
        tr.info = meta.get("info", {})
        if "pca/mean" in arrays:
            tr.pca = PcaModel(arrays["pca/mean"], arrays["pca/components"],
                              arrays["pca/explained_variance"])
        if "kmeans/centers" in arrays:
            tr.clusters = ClusterModel(arrays["kmeans/centers"], meta.get("kmeans_seed") or 0)
        return tr

    # -- inference ----------------------------------------------------------

    def forecast(self, observed_mm: np.ndarray, horizon: int | None = None):
        """Eval-mode forecast from ``(B, t, d)`` mm poses.

        Returns ``(future poses (B, h, d) mm, future label ids (B, h),
        observed label ids (B, t))``.
        """
        t = self.mcfg.observed
        x = self.normalizer.encode(np.asarray(observed_mm)[:, -t:])
        out = full_forward(self.params, self.mcfg, x, mode="eval", horizon=horizon)
        poses = self.normalizer.decode(out.poses.data[:, self.mcfg.warmup:])
        return poses, ad.argmax(out.future_probs), ad.argmax(out.observed_probs)
