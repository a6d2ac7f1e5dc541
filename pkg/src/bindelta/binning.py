"""Pose-space discretization: K-means key poses, hard/soft labels and delta targets."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import so3

MAX_LLOYD_ITERATIONS = 300
DELTA_MODES = ("additive", "riemannian")


@dataclass
class PoseDictionary:
    """K key poses (axis-angle centroids) and the clustering metadata."""

    key_poses: np.ndarray
    seed: int = 0
    counts: np.ndarray | None = None
    objective_history: list[float] = field(default_factory=list, repr=False, compare=False)

    def __post_init__(self):
        self.key_poses = np.asarray(self.key_poses, dtype=float).reshape(-1, 3)
        if len(self.key_poses) < 1:
            raise ValueError("a pose dictionary needs at least one key pose")
        if self.counts is not None:
            self.counts = np.asarray(self.counts, dtype=int)

    @property
    def K(self) -> int:
        return len(self.key_poses)

    def to_json(self) -> str:
        doc = {"K": self.K, "seed": int(self.seed), "key_poses": self.key_poses.tolist()}
        if self.counts is not None:
            doc["counts"] = self.counts.tolist()
        return json.dumps(doc, indent=1)

    @classmethod
    def from_json(cls, text: str) -> "PoseDictionary":
        doc = json.loads(text)
        d = cls(np.array(doc["key_poses"], dtype=float), seed=doc.get("seed", 0), counts=doc.get("counts"))
        if d.K != doc["K"]:
            raise ValueError(f"dictionary declares K={doc['K']} but holds {d.K} key poses")
        return d

    def save(self, path) -> None:
        Path(path).write_text(self.to_json())

    @classmethod
    def load(cls, path) -> "PoseDictionary":
        return cls.from_json(Path(path).read_text())


def _sq_distances(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    diff = X[..., None, :] - C
    return np.einsum("...kj,...kj->...k", diff, diff)


def _kmeans_pp(X: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    chosen = [int(rng.integers(n))]
    d2 = _sq_distances(X, X[chosen[0]][None])[:, 0]
    for _ in range(1, K):
        total = d2.sum()
        if total > 0.0:
            idx = int(rng.choice(n, p=d2 / total))
        else:
            # every remaining point coincides with a chosen center
            remaining = np.setdiff1d(np.arange(n), chosen)
            idx = int(rng.choice(remaining))
        chosen.append(idx)
        d2 = np.minimum(d2, _sq_distances(X, X[idx][None])[:, 0])
    return X[chosen].copy()


def kmeans_fit(poses, K: int, seed: int = 0) -> PoseDictionary:
    """Lloyd's algorithm with k-means++ seeding on raw axis-angle vectors.

    Iterates until the assignment stops changing or 300 iterations. An empty
    cluster is re-seeded with the point farthest from its current centroid.

    Raises:
        ValueError: if fewer poses than clusters are given.
    """
    X = np.asarray(poses, dtype=float).reshape(-1, 3)
    if K < 1:
        raise ValueError(f"K must be >= 1, got {K}")
    if len(X) < K:
        raise ValueError(f"need at least K={K} poses, got {len(X)}")
    rng = np.random.default_rng(seed)
    centers = _kmeans_pp(X, K, rng)

    labels = np.argmin(_sq_distances(X, centers), axis=1)
    history = []
    for _ in range(MAX_LLOYD_ITERATIONS):
        for k in range(K):
            members = labels == k
            if members.any():
                centers[k] = X[members].mean(axis=0)
        for k in range(K):
            if not np.any(labels == k):
                resid = np.einsum("ij,ij->i", X - centers[labels], X - centers[labels])
                far = int(np.argmax(resid))
                centers[k] = X[far]
                labels[far] = k
        d2 = _sq_distances(X, centers)
        new_labels = np.argmin(d2, axis=1)
        history.append(float(d2[np.arange(len(X)), new_labels].sum()))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels

    counts = np.bincount(labels, minlength=K)
    return PoseDictionary(centers, seed=seed, counts=counts, objective_history=history)


def assign_hard(y, dictionary: PoseDictionary) -> np.ndarray:
    """Index of the Euclidean-nearest key pose; ties go to the lowest index."""
    y = np.asarray(y, dtype=float)
    return np.argmin(_sq_distances(y, dictionary.key_poses), axis=-1)


def assign_soft(y, dictionary: PoseDictionary, gamma: float) -> np.ndarray:
    """Soft assignment ``softmax(-gamma * ||y - z_k||^2)`` over the key poses."""
    if not gamma > 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    logits = -gamma * _sq_distances(np.asarray(y, dtype=float), dictionary.key_poses)
    logits -= logits.max(axis=-1, keepdims=True)
    p = np.exp(logits)
    return p / p.sum(axis=-1, keepdims=True)


def default_gamma(poses, dictionary: PoseDictionary) -> float:
    """``1 / (2 sigma^2)`` with sigma the RMS distance of poses to their assigned key pose."""
    X = np.asarray(poses, dtype=float).reshape(-1, 3)
    d2 = _sq_distances(X, dictionary.key_poses).min(axis=1)
    var = float(d2.mean())
    if var <= 0.0:
        return 1.0
    return 1.0 / (2.0 * var)


def delta_target(y, dictionary: PoseDictionary, label, mode: str = "additive") -> np.ndarray:
    """Residual of ``y`` relative to key pose ``label``.

    ``additive`` returns ``y - z``; ``riemannian`` returns the tangent vector
    ``log(exp(z)^T exp(y))`` so that ``exp(z) @ exp(delta) == exp(y)``.
    """
    label = np.asarray(label)
    if np.any(label < 0) or np.any(label >= dictionary.K):
        raise ValueError(f"label out of range for K={dictionary.K}")
    y = np.asarray(y, dtype=float)
    z = dictionary.key_poses[label]
    if mode == "additive":
        return y - z
    if mode == "riemannian":
        Rz = so3.exp_map(z)
        return so3.log_map(np.swapaxes(Rz, -1, -2) @ so3.exp_map(y), validate=False)
    raise ValueError(f"unknown delta mode {mode!r}; expected one of {DELTA_MODES}")


def nearest_key_distance(dictionary: PoseDictionary, poses) -> np.ndarray:
    """Geodesic distance (radians) from each pose to its geodesically closest key pose."""
    R = so3.exp_map(np.asarray(poses, dtype=float).reshape(-1, 3))
    Z = so3.exp_map(dictionary.key_poses)
    best = np.full(len(R), np.inf)
    for start in range(0, len(R), 8192):
        chunk = R[start:start + 8192]
        tr = np.einsum("kij,nij->nk", Z, chunk)
        ang = np.arccos(np.clip(0.5 * (tr - 1.0), -1.0, 1.0))
        best[start:start + 8192] = ang.min(axis=1)
    return best


def quantization_floor(dictionary: PoseDictionary, poses) -> dict:
    """Error of the best possible key-pose-only predictor, in degrees.

    Returns a dict with ``median`` (lower-middle order statistic) and ``mean``.

    Raises:
        ValueError: for an empty pose list.
    """
    d = nearest_key_distance(dictionary, poses)
    if len(d) == 0:
        raise ValueError("quantization_floor needs at least one pose")
    deg = np.degrees(np.sort(d))
    return {"median": float(deg[(len(deg) - 1) // 2]), "mean": float(deg.mean()), "n": len(deg)}
