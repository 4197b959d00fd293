"""Unsupervised frame labels: windowed pose features, PCA and k-means."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autodiff import DimensionError, ParameterError

LOOKAHEAD = 10


class InsufficientLengthError(ValueError):
    """Sequence too short to build a feature window."""


@dataclass
class PcaModel:
    mean: np.ndarray  # (D,)
    components: np.ndarray  # (k, D), rows orthonormal
    explained_variance: np.ndarray  # (k,)

    def project(self, feats: np.ndarray) -> np.ndarray:
        return (np.asarray(feats) - self.mean) @ self.components.T

    def reconstruct(self, z: np.ndarray) -> np.ndarray:
        return z @ self.components + self.mean


@dataclass
class ClusterModel:
    centers: np.ndarray  # (k, D)
    seed: int
    objective_history: list[float] = field(default_factory=list)
    iterations: int = 0

    @property
    def k(self) -> int:
        return self.centers.shape[0]

    def predict(self, z: np.ndarray) -> np.ndarray:
        # argmin picks the lowest id on ties
        return np.argmin(_sq_dists(z, self.centers), axis=1)


def _flat(poses) -> np.ndarray:
    p = poses.positions if hasattr(poses, "positions") else np.asarray(poses, dtype=np.float64)
    return p.reshape(p.shape[0], -1)


def build_frame_features(poses, lookahead: int = LOOKAHEAD) -> np.ndarray:
    """Each frame concatenated with the next ``lookahead`` frames.

    Returns ``(T - lookahead, (lookahead + 1) * d)``; row ``i`` starts with
    frame ``i`` itself.
    """
    x = _flat(poses)
    T = x.shape[0]
    if T < lookahead + 1:
        raise InsufficientLengthError(f"need at least {lookahead + 1} frames, got {T}")
    n = T - lookahead
    return np.concatenate([x[i:i + n] for i in range(lookahead + 1)], axis=1)


def fit_pca(features: np.ndarray, out_dim: int = 32) -> PcaModel:
    features = np.asarray(features, dtype=np.float64)
    n, D = features.shape
    if n < out_dim:
        raise ParameterError(f"PCA to {out_dim} dims needs >= {out_dim} samples, got {n}")
    if D < out_dim:
        raise ParameterError(f"feature dimension {D} is below out_dim={out_dim}")
    mean = features.mean(axis=0)
    centered = features - mean
    cov = centered.T @ centered / max(n - 1, 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:out_dim]
    comps = evecs[:, order].T
    # sign convention: largest-magnitude entry positive
    pivots = comps[np.arange(out_dim), np.argmax(np.abs(comps), axis=1)]
    comps *= np.where(pivots < 0, -1.0, 1.0)[:, None]
    return PcaModel(mean, comps, np.maximum(evals[order], 0.0))


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    return ((x[:, None, :] - c[None, :, :]) ** 2).sum(axis=2)


def fit_kmeans(points: np.ndarray, k: int, seed: int, max_iter: int = 300,
               tol: float = 1e-6) -> ClusterModel:
    """Greedy k-means++ seeding followed by Lloyd iterations.

    Stops once no center moves more than ``tol`` or after ``max_iter``
    iterations. An emptied cluster is re-seeded at the point farthest from
    its current center.
    """
    x = np.asarray(points, dtype=np.float64)
    n = x.shape[0]
    if k < 1 or k > n:
        raise ParameterError(f"k={k} must lie in [1, {n}]")
    rng = np.random.default_rng(seed)
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    closest = ((x - centers[0]) ** 2).sum(axis=1)
    # greedy k-means++: draw a few D^2-weighted candidates, keep the best
    trials = 2 + int(np.log(k))
    for i in range(1, k):
        total = closest.sum()
        if total > 0:
            cand = rng.choice(n, size=trials, p=closest / total)
        else:
            cand = rng.integers(n, size=trials)
        cand_d = np.minimum(closest[None, :], _sq_dists(x[cand], x))
        best = int(np.argmin(cand_d.sum(axis=1)))
        centers[i] = x[cand[best]]
        closest = cand_d[best]

    history = []
    it = 0
    for it in range(1, max_iter + 1):
        d = _sq_dists(x, centers)
        assign = np.argmin(d, axis=1)
        point_d = d[np.arange(n), assign]
        history.append(float(point_d.sum()))
        new = centers.copy()
        for j in range(k):
            members = assign == j
            if members.any():
                new[j] = x[members].mean(axis=0)
            else:
                far = int(np.argmax(point_d))
                new[j] = x[far]
                assign[far] = j
                point_d[far] = 0.0
        shift = np.sqrt(((new - centers) ** 2).sum(axis=1)).max()
        centers = new
        if shift < tol:
            break
    history.append(float(_sq_dists(x, centers).min(axis=1).sum()))
    return ClusterModel(centers, seed, history, it)


def assign_labels(poses, pca: PcaModel, cm: ClusterModel,
                  lookahead: int = LOOKAHEAD) -> np.ndarray:
    """Nearest-center label per frame.

    Frames without a full lookahead window see the last frame repeated.
    """
    x = _flat(poses)
    padded = np.concatenate([x, np.repeat(x[-1:], lookahead, axis=0)])
    feats = build_frame_features(padded, lookahead)
    return cm.predict(pca.project(feats))


def fit_labeler(sequences, k: int, seed: int, out_dim: int = 32,
                lookahead: int = LOOKAHEAD) -> tuple[PcaModel, ClusterModel]:
    """Fit PCA and k-means on the full-window features of all sequences."""
    feats = np.concatenate([build_frame_features(s, lookahead) for s in sequences])
    pca = fit_pca(feats, out_dim)
    return pca, fit_kmeans(pca.project(feats), k, seed)


def label_accuracy(pred, truth) -> float:
    pred, truth = np.asarray(pred), np.asarray(truth)
    if pred.shape != truth.shape:
        raise DimensionError(f"label shapes {pred.shape} and {truth.shape} differ")
    return float(np.mean(pred == truth)) if pred.size else 1.0
