"""Label predictor (TCN), label forecaster (GRU seq2seq) and pose generator.

Parameters live in one flat ``dict[str, Tensor]`` with dotted names such as
``f_L.block0.conv1.weight``. Forward functions are pure given that dict.
Pose inputs are ``(B, frames, d)`` arrays already normalised by
:class:`Normalizer`; label inputs are integer arrays ``(B, frames)``.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

import numpy as np

from . import autodiff as ad
from .autodiff import DimensionError, ParameterError, Tensor


class ConfigError(ValueError):
    """Inconsistent model or training configuration."""


@dataclass
class ModelConfig:
    n_labels: int
    pose_dim: int
    observed: int = 50  # t
    total: int = 75  # T
    warmup: int = 24  # w
    tcn_channels: int = 256
    tcn_kernel: int = 3
    tcn_blocks: int = 5
    hidden_forecast: int = 512  # e_F and d_F
    hidden_label_enc: int = 256  # e_L
    hidden_pose_enc: int = 512  # e_P
    use_label_concat: bool = True
    use_e_L: bool = True
    use_e_P: bool = True
    decoder_feedback: bool = False
    weight_norm: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.n_labels < 2:
            raise ConfigError("n_labels must be >= 2")
        if self.pose_dim < 1:
            raise ConfigError("pose_dim must be positive")
        if self.total <= self.observed:
            raise ConfigError("total frames T must exceed observed frames t")
        if not 0 <= self.warmup < self.observed:
            raise ConfigError(f"warm-up w={self.warmup} must satisfy 0 <= w < t={self.observed}")
        if self.tcn_kernel < 1 or self.tcn_blocks < 1:
            raise ConfigError("TCN kernel size and block count must be positive")

    @property
    def horizon(self) -> int:
        return self.total - self.observed

    @property
    def hidden_generator(self) -> int:
        """f_G state size: the concatenated e_L and e_P states."""
        return self.hidden_label_enc + self.hidden_pose_enc

    @property
    def dilations(self) -> list[int]:
        return [2 ** i for i in range(self.tcn_blocks)]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


@dataclass
class Normalizer:
    """Per-dimension mean and a single scale, so joint distances scale uniformly."""

    mean: np.ndarray
    scale: float

    @classmethod
    def fit(cls, frames: np.ndarray) -> "Normalizer":
        flat = frames.reshape(-1, frames.shape[-1])
        mean = flat.mean(axis=0)
        scale = float(np.sqrt(((flat - mean) ** 2).mean()))
        return cls(mean, scale if scale > 0 else 1.0)

    def encode(self, x: np.ndarray) -> np.ndarray:
        return (x - self.mean) / self.scale

    def decode(self, z: np.ndarray) -> np.ndarray:
        return z * self.scale + self.mean


# --- parameters -------------------------------------------------------------

def _gru_shapes(prefix: str, n_in: int, H: int) -> dict[str, tuple]:
    return {
        f"{prefix}.w_input": (n_in, 3 * H),
        f"{prefix}.w_hidden_gates": (H, 2 * H),
        f"{prefix}.w_hidden_candidate": (H, H),
        f"{prefix}.bias": (3 * H,),
    }


def param_shapes(cfg: ModelConfig) -> dict[str, tuple]:
    """Name -> shape manifest for every trainable tensor."""
    d, n, C, K = cfg.pose_dim, cfg.n_labels, cfg.tcn_channels, cfg.tcn_kernel
    shapes: dict[str, tuple] = {"f_L.in.weight": (C, d, 1), "f_L.in.bias": (C,)}
    for b in range(cfg.tcn_blocks):
        for c in (1, 2):
            key = f"f_L.block{b}.conv{c}"
            if cfg.weight_norm:
                shapes[f"{key}.weight_v"] = (C, C, K)
                shapes[f"{key}.weight_g"] = (C,)
            else:
                shapes[f"{key}.weight"] = (C, C, K)
            shapes[f"{key}.bias"] = (C,)
    shapes["f_L.out.weight"] = (C, n)
    shapes["f_L.out.bias"] = (n,)
    shapes.update(_gru_shapes("e_F", d + n, cfg.hidden_forecast))
    shapes.update(_gru_shapes("d_F", n, cfg.hidden_forecast))
    shapes["d_F.out.weight"] = (cfg.hidden_forecast, n)
    shapes["d_F.out.bias"] = (n,)
    shapes.update(_gru_shapes("e_L", n, cfg.hidden_label_enc))
    shapes.update(_gru_shapes("e_P", d, cfg.hidden_pose_enc))
    shapes.update(_gru_shapes("f_G", d + n, cfg.hidden_generator))
    shapes["f_G.out.weight"] = (cfg.hidden_generator, d)
    shapes["f_G.out.bias"] = (d,)
    return shapes


def _init_bound(name: str, shape: tuple) -> float:
    if name.endswith("bias"):
        return 0.0
    # GRU matrices use 1/sqrt(hidden size)
    if name.endswith("w_input"):
        return 1.0 / np.sqrt(shape[1] // 3)
    if ".w_hidden" in name:
        return 1.0 / np.sqrt(shape[0])
    if name.endswith("weight_g"):
        return -1.0  # filled with ones below
    fan_in = int(np.prod(shape[1:])) if len(shape) == 3 else shape[0]
    return 1.0 / np.sqrt(fan_in)


def init_params(cfg: ModelConfig, seed: int | None = None) -> dict[str, Tensor]:
    """Uniform(-1/sqrt(fan), 1/sqrt(fan)) weights, zero biases."""
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        bound = _init_bound(name, shape)
        if bound < 0:
            data = np.ones(shape)
        elif bound == 0:
            data = np.zeros(shape)
        else:
            data = rng.uniform(-bound, bound, size=shape)
        params[name] = Tensor(data, requires_grad=True, name=name)
    if cfg.weight_norm:
        for name in list(params):
            if name.endswith("weight_g"):
                v = params[name[:-1] + "v"].data
                params[name].data[:] = np.sqrt((v * v).sum(axis=(1, 2)))
    return params


def check_params(params: dict[str, Tensor], cfg: ModelConfig) -> None:
    for name, shape in param_shapes(cfg).items():
        if name not in params:
            raise DimensionError(f"missing parameter {name}")
        if params[name].shape != shape:
            raise DimensionError(f"{name}: shape {params[name].shape}, expected {shape}")


# --- building blocks --------------------------------------------------------

def _const(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def linear(params, prefix: str, x: Tensor) -> Tensor:
    """Affine map on the last axis of a 2-D or 3-D input."""
    w, b = params[f"{prefix}.weight"], params[f"{prefix}.bias"]
    if x.ndim == 3:
        B, T, _ = x.shape
        return (x.reshape(B * T, -1) @ w + b).reshape(B, T, -1)
    return x @ w + b


def gru_step(params, prefix: str, x_proj: Tensor, h: Tensor) -> Tensor:
    """One GRU update; ``x_proj`` is the input already multiplied by ``w_input`` plus bias.

    z = sig(W_z x + U_z h), r = sig(W_r x + U_r h),
    n = tanh(W_n x + U_n (r * h)), h' = n + z * (h - n)
    """
    H = h.shape[-1]
    gh = h @ params[f"{prefix}.w_hidden_gates"]
    z = ad.sigmoid(x_proj[:, :H] + gh[:, :H])
    r = ad.sigmoid(x_proj[:, H:2 * H] + gh[:, H:])
    n = ad.tanh(x_proj[:, 2 * H:] + (r * h) @ params[f"{prefix}.w_hidden_candidate"])
    return n + z * (h - n)


def _project_inputs(params, prefix: str, seq: Tensor) -> Tensor:
    B, T, _ = seq.shape
    proj = seq.reshape(B * T, -1) @ params[f"{prefix}.w_input"] + params[f"{prefix}.bias"]
    return proj.reshape(B, T, -1)


def gru_encode(params, prefix: str, seq: Tensor, hidden: int) -> Tensor:
    """Run a GRU over ``(B, T, I)`` from a zero state; return the final state."""
    proj = _project_inputs(params, prefix, seq)
    h = Tensor(np.zeros((seq.shape[0], hidden)))
    for tau in range(seq.shape[1]):
        h = gru_step(params, prefix, proj[:, tau, :], h)
    return h


def _conv_weight(params, key: str, weight_norm: bool) -> Tensor:
    if not weight_norm:
        return params[f"{key}.weight"]
    v, g = params[f"{key}.weight_v"], params[f"{key}.weight_g"]
    norm = ad.sqrt((v * v).sum(axis=(1, 2), keepdims=True))
    return v * (g.reshape(-1, 1, 1) / norm)


def _conv(params, key: str, x: Tensor, dilation: int, weight_norm: bool = False) -> Tensor:
    w = _conv_weight(params, key, weight_norm)
    return ad.dilated_causal_conv1d(x, w, dilation) + params[f"{key}.bias"].reshape(-1, 1)


# --- f_L --------------------------------------------------------------------

def tcn_forward(params, cfg: ModelConfig, x) -> Tensor:
    """Frame-wise label probabilities ``(B, t, n)`` from poses ``(B, t, d)``.

    Residual blocks ``relu(x + relu(conv(relu(conv(x)))))`` with dilation
    ``2**block``; a 1x1 convolution lifts ``d`` input channels to the block width.
    """
    x = _const(x)
    if x.shape[-1] != cfg.pose_dim:
        raise DimensionError(f"pose dim {x.shape[-1]} != configured {cfg.pose_dim}")
    h = ad.dilated_causal_conv1d(x.transpose(0, 2, 1), params["f_L.in.weight"], 1)
    h = h + params["f_L.in.bias"].reshape(-1, 1)
    for b, dil in enumerate(cfg.dilations):
        key = f"f_L.block{b}"
        y = ad.relu(_conv(params, f"{key}.conv1", h, dil, cfg.weight_norm))
        y = ad.relu(_conv(params, f"{key}.conv2", y, dil, cfg.weight_norm))
        h = ad.relu(h + y)
    logits = linear(params, "f_L.out", h.transpose(0, 2, 1))
    return ad.softmax(logits)


def theoretical_receptive_field(cfg: ModelConfig) -> int:
    """Frames visible to one output: two convolutions per block."""
    return 1 + 2 * (cfg.tcn_kernel - 1) * sum(cfg.dilations)


def measure_receptive_field(params, cfg: ModelConfig, length: int | None = None,
                            seed: int = 0) -> int:
    """Largest lag whose perturbation changes the last output, plus one."""
    L = length or theoretical_receptive_field(cfg) + 40
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(1, L, cfg.pose_dim))
    base = tcn_forward(params, cfg, x).data[0, -1]
    rf = 0
    for lag in range(L):
        xp = x.copy()
        xp[0, L - 1 - lag] += 1.0
        if not np.array_equal(tcn_forward(params, cfg, xp).data[0, -1], base):
            rf = lag + 1
    return rf


# --- f_F = d_F . e_F -------------------------------------------------------

def encode_sequence(params, cfg: ModelConfig, x, c) -> Tensor:
    """e_F: final hidden state over per-frame ``pose ⊕ label-probabilities``."""
    x, c = _const(x), _const(c)
    if x.shape[:2] != c.shape[:2]:
        raise DimensionError(f"pose frames {x.shape[:2]} vs label frames {c.shape[:2]}")
    return gru_encode(params, "e_F", ad.concat([x, c], axis=-1), cfg.hidden_forecast)


def decode_labels(params, cfg: ModelConfig, v: Tensor, steps: int,
                  last_label: Tensor | None = None) -> Tensor:
    """d_F: roll the hidden state forward ``steps`` times, softmax head per step.

    The step input is zero unless ``cfg.decoder_feedback``, in which case it
    is the previous step's distribution (``last_label`` for the first step).
    """
    if steps < 1:
        raise ParameterError("decode_labels needs steps >= 1")
    B, n = v.shape[0], cfg.n_labels
    zeros = Tensor(np.zeros((B, n)))
    prev = last_label if (cfg.decoder_feedback and last_label is not None) else zeros
    w_in, bias = params["d_F.w_input"], params["d_F.bias"]
    h, outs = v, []
    for _ in range(steps):
        inp = prev if cfg.decoder_feedback else zeros
        h = gru_step(params, "d_F", inp @ w_in + bias, h)
        probs = ad.softmax(linear(params, "d_F.out", h))
        outs.append(probs)
        prev = probs
    return ad.stack(outs, axis=1)


def forecast_labels(params, cfg: ModelConfig, x, c_hat, steps: int | None = None) -> Tensor:
    c_hat = _const(c_hat)
    v = encode_sequence(params, cfg, x, c_hat)
    return decode_labels(params, cfg, v, steps or cfg.horizon, c_hat[:, -1, :])


# --- pose generator ---------------------------------------------------------

def init_generator_state(params, cfg: ModelConfig, c_full, x) -> Tensor:
    """``p = e_L(labels 1..T) ⊕ e_P(poses 1..t)``; disabled encoders give zeros."""
    c_full, x = _const(c_full), _const(x)
    B = x.shape[0]
    if c_full.shape[0] != B or c_full.shape[-1] != cfg.n_labels:
        raise DimensionError(f"labels {c_full.shape} do not match batch {B} / n={cfg.n_labels}")
    if cfg.use_e_L:
        v_l = gru_encode(params, "e_L", c_full, cfg.hidden_label_enc)
    else:
        v_l = Tensor(np.zeros((B, cfg.hidden_label_enc)))
    if cfg.use_e_P:
        v_p = gru_encode(params, "e_P", x, cfg.hidden_pose_enc)
    else:
        v_p = Tensor(np.zeros((B, cfg.hidden_pose_enc)))
    return ad.concat([v_l, v_p], axis=-1)


def generate_poses(params, cfg: ModelConfig, p: Tensor, x_seed, step_labels) -> Tensor:
    """Autoregressive pose rollout ``(B, S, d)``.

    ``x_seed`` is the ground-truth pose preceding the first estimate and
    ``step_labels`` ``(B, S, n)`` the label of each frame being estimated.
    Every later step consumes the previous estimate.
    """
    step_labels = _const(step_labels)
    prev = _const(x_seed)
    w_in, bias = params["f_G.w_input"], params["f_G.bias"]
    h, outs = p, []
    zeros = Tensor(np.zeros((p.shape[0], cfg.n_labels)))
    for s in range(step_labels.shape[1]):
        lab = step_labels[:, s, :] if cfg.use_label_concat else zeros
        h = gru_step(params, "f_G", ad.concat([prev, lab], axis=-1) @ w_in + bias, h)
        prev = linear(params, "f_G.out", h)
        outs.append(prev)
    return ad.stack(outs, axis=1)


@dataclass
class ForwardOutput:
    observed_probs: Tensor  # (B, t, n) from f_L
    future_probs: Tensor  # (B, h, n) from f_F
    poses: Tensor  # (B, h + w, d), frames t-w .. t+h-1
    label_inputs: np.ndarray  # (B, t + h, n) one-hot labels fed to f_F / f_G


def full_forward(params, cfg: ModelConfig, x_obs, labels=None, mode: str = "train",
                 horizon: int | None = None) -> ForwardOutput:
    """Run f_L, f_F and the generator end to end.

    ``mode="train"`` feeds ground-truth one-hot ``labels`` (``(B, t + h)``)
    to f_F and the generator; ``mode="eval"`` feeds one-hot argmax of the
    model's own predictions.
    """
    x_obs = _const(x_obs)
    t, h, w, n = x_obs.shape[1], horizon or cfg.horizon, cfg.warmup, cfg.n_labels
    if t < w + 1:
        raise ConfigError(f"need more than w={w} observed frames, got {t}")
    obs_probs = tcn_forward(params, cfg, x_obs)
    if mode == "train":
        if labels is None:
            raise ParameterError("train mode needs ground-truth labels")
        labels = np.asarray(labels)
        if labels.shape[1] < t + h:
            raise DimensionError(f"labels cover {labels.shape[1]} frames, need {t + h}")
        c_obs = ad.one_hot(labels[:, :t], n)
    elif mode == "eval":
        c_obs = ad.one_hot(ad.argmax(obs_probs), n)
    else:
        raise ParameterError(f"unknown mode {mode!r}")
    v = encode_sequence(params, cfg, x_obs, c_obs)
    fut_probs = decode_labels(params, cfg, v, h, c_obs[:, -1, :])
    if mode == "train":
        c_fut = ad.one_hot(labels[:, t:t + h], n)
    else:
        c_fut = ad.one_hot(ad.argmax(fut_probs), n)
    c_full = Tensor(np.concatenate([c_obs.data, c_fut.data], axis=1))
    p = init_generator_state(params, cfg, c_full, x_obs)
    poses = generate_poses(params, cfg, p, x_obs[:, t - 1 - w, :], c_full[:, t - w:, :])
    return ForwardOutput(obs_probs, fut_probs, poses, c_full.data)
