"""Forecast evaluation: MPJPE horizon tables, zero-velocity baseline, NPSS."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import ContractError, DimensionError
from .kinematics import ms_to_frames

HORIZONS_MS = (80, 160, 320, 400, 560, 1000)
NPSS_BUCKETS = {"0-1s": (0.0, 1.0), "1-2s": (1.0, 2.0), "2-4s": (2.0, 4.0)}


class HorizonRangeError(IndexError):
    """Requested horizon lies beyond the available prediction."""


def _joints(x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != 3:
        x = x.reshape(x.shape[:-1] + (-1, 3))
    return x


def mpjpe(pred, truth, horizon_frames: int) -> float:
    """Mean per-joint distance at future frame ``horizon_frames`` (1-based).

    Inputs are ``(h, J, 3)`` / ``(h, 3J)`` or batched ``(B, h, ...)``;
    batched inputs average over the batch.
    """
    p, q = _joints(pred), _joints(truth)
    if p.shape != q.shape:
        raise DimensionError(f"prediction {p.shape} vs truth {q.shape}")
    h = p.shape[-3]
    if not 1 <= horizon_frames <= h:
        raise HorizonRangeError(f"horizon {horizon_frames} outside prediction of {h} frames")
    diff = p[..., horizon_frames - 1, :, :] - q[..., horizon_frames - 1, :, :]
    return float(np.linalg.norm(diff, axis=-1).mean())


def zero_velocity(observed, horizon: int) -> np.ndarray:
    """Repeat the last observed frame; frames run along axis -2 of ``(..., t, d)``."""
    obs = np.asarray(observed, dtype=np.float64)
    if obs.shape[-2] < 1:
        raise DimensionError("zero-velocity needs at least one observed frame")
    return np.repeat(obs[..., -1:, :], horizon, axis=-2)


@dataclass
class SpectrumDistribution:
    probs: np.ndarray  # (F, N) normalised power per feature
    power: np.ndarray  # (F,) total power per feature


def _dft_power(x: np.ndarray) -> np.ndarray:
    """|X_k|^2 / N from a direct O(N^2) transform of each row of ``x``."""
    N = x.shape[-1]
    k = np.arange(N)
    basis = np.exp(-2j * np.pi * np.outer(k, k) / N)
    X = x @ basis.T
    return (X.real ** 2 + X.imag ** 2) / N


def power_spectrum(seq) -> SpectrumDistribution:
    """Per-feature normalised power over all ``N`` DFT bins (DC included).

    ``seq`` is ``(N, F)``: ``N`` frames of ``F`` scalar channels. Power is
    scaled by ``1/N`` so the total equals the time-domain energy. A channel
    with no power maps to a uniform distribution with zero weight.
    """
    x = np.asarray(seq, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise DimensionError(f"expected (frames >= 2, features), got {x.shape}")
    power = _dft_power(x.T)
    total = power.sum(axis=1)
    probs = np.full_like(power, 1.0 / power.shape[1])
    live = total > 0
    probs[live] = power[live] / total[live, None]
    return SpectrumDistribution(probs, np.where(live, total, 0.0))


def emd_1d(p, q, tol: float = 1e-9) -> float:
    """Earth mover's distance between histograms on unit-spaced bins."""
    p, q = np.asarray(p, dtype=np.float64), np.asarray(q, dtype=np.float64)
    if p.shape != q.shape:
        raise DimensionError(f"histograms have {p.shape} and {q.shape} bins")
    for name, h in (("p", p), ("q", q)):
        if abs(h.sum() - 1.0) > tol or np.any(h < -tol):
            raise ContractError(f"{name} is not a normalised histogram (sum={h.sum()!r})")
    return float(np.abs(np.cumsum(p - q)).sum())


def _npss_window(pred: np.ndarray, truth: np.ndarray) -> float:
    sp, st = power_spectrum(pred), power_spectrum(truth)
    dists = np.abs(np.cumsum(sp.probs - st.probs, axis=1)).sum(axis=1)
    w = st.power
    if w.sum() == 0:
        return float(dists.mean())
    return float((dists * w).sum() / w.sum())


def npss(pred, truth, bucket: str | tuple[float, float], hz: float = 25.0) -> float:
    """Power-weighted spectral EMD over one time bucket of the forecast.

    ``pred``/``truth`` are future sequences ``(h, d)`` or ``(B, h, d)``
    starting at the first forecast frame. The bucket's frames are
    transformed as they are, without extra context.
    """
    lo, hi = NPSS_BUCKETS[bucket] if isinstance(bucket, str) else bucket
    a, b = int(round(lo * hz)), int(round(hi * hz))
    p, q = np.asarray(pred, dtype=np.float64), np.asarray(truth, dtype=np.float64)
    if p.shape != q.shape:
        raise DimensionError(f"prediction {p.shape} vs truth {q.shape}")
    if p.ndim == 2:
        p, q = p[None], q[None]
    p, q = p.reshape(p.shape[0], p.shape[1], -1), q.reshape(q.shape[0], q.shape[1], -1)
    if p.shape[1] < b:
        raise HorizonRangeError(f"bucket {lo}-{hi}s needs {b} frames, got {p.shape[1]}")
    return float(np.mean([_npss_window(p[i, a:b], q[i, a:b]) for i in range(p.shape[0])]))


@dataclass
class HorizonTable:
    """Mean MPJPE (mm) per action and horizon."""

    horizons_ms: tuple[int, ...]
    rows: dict[str, list[float]] = field(default_factory=dict)
    counts: dict[str, int] = field(default_factory=dict)
    seed: int = 0

    def average(self) -> list[float]:
        return list(np.mean([v for v in self.rows.values()], axis=0))

    def to_json(self) -> dict:
        return {"metric": "mpjpe_mm", "seed": self.seed, "horizons_ms": list(self.horizons_ms),
                "rows": self.rows, "counts": self.counts}

    def to_csv(self) -> str:
        lines = ["action,count," + ",".join(str(h) for h in self.horizons_ms)]
        for action, vals in self.rows.items():
            lines.append(f"{action},{self.counts[action]}," + ",".join(f"{v:.6f}" for v in vals))
        return "\n".join(lines) + "\n"


def horizon_table(preds: dict[str, np.ndarray], truths: dict[str, np.ndarray], hz: float,
                  horizons_ms=HORIZONS_MS, seed: int = 0) -> HorizonTable:
    """Build the action x horizon table from per-action ``(B, h, d)`` arrays."""
    table = HorizonTable(tuple(horizons_ms), seed=seed)
    for action in preds:
        frames = [ms_to_frames(ms, hz) for ms in horizons_ms]
        table.rows[action] = [mpjpe(preds[action], truths[action], f) for f in frames]
        table.counts[action] = int(np.asarray(preds[action]).shape[0])
    return table
