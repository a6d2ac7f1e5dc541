"""Synthetic pose datasets (optionally symmetric/multimodal) and CSV feature files."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import so3

POSE_DISTRIBUTIONS = ("uniform", "mixture")


@dataclass(frozen=True)
class SynthConfig:
    """Generator settings.

    ``symmetry_order`` s > 1 makes the object look identical under rotations by
    ``2 pi / s`` about its z-axis: features are computed from a canonical
    member of the orbit ``{R S^j}`` while the label stays the true ``R``.
    ``mixture`` draws poses around ``n_modes`` Haar-random centers with
    tangent-space Gaussian spread ``mode_spread`` (radians).
    """

    n_samples: int = 6000
    feature_dim: int = 64
    noise_std: float = 0.01
    symmetry_order: int = 1
    pose_distribution: str = "uniform"
    seed: int = 0
    category: int = 0
    n_modes: int = 8
    mode_spread: float = 0.3

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be >= 1")
        if self.feature_dim < 9:
            raise ValueError("feature_dim must be >= 9")
        if self.noise_std < 0:
            raise ValueError("noise_std must be >= 0")
        if self.symmetry_order < 1:
            raise ValueError("symmetry_order must be >= 1")
        if self.pose_distribution not in POSE_DISTRIBUTIONS:
            raise ValueError(f"pose_distribution must be one of {POSE_DISTRIBUTIONS}")


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    poses: np.ndarray
    categories: np.ndarray
    provenance: str = "synthetic"

    def __post_init__(self):
        f = np.asarray(self.features, dtype=float)
        y = np.asarray(self.poses, dtype=float).reshape(-1, 3)
        c = np.asarray(self.categories, dtype=int).reshape(-1)
        if f.ndim != 2 or not (len(f) == len(y) == len(c)):
            raise ValueError("features, poses and categories must have matching lengths")
        for name, a in (("features", f), ("poses", y), ("categories", c)):
            a.setflags(write=False)
            object.__setattr__(self, name, a)

    def __len__(self) -> int:
        return len(self.poses)

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> "Dataset":
        return Dataset(self.features[idx], self.poses[idx], self.categories[idx], self.provenance)

    def by_category(self) -> dict[int, "Dataset"]:
        return {int(c): self.subset(self.categories == c) for c in np.unique(self.categories)}


def symmetry_rotation(order: int) -> np.ndarray:
    return so3.exp_map([0.0, 0.0, 2.0 * np.pi / order])


def orbit(R: np.ndarray, order: int) -> np.ndarray:
    """All members ``R S^j``, shape ``(..., order, 3, 3)``."""
    S = symmetry_rotation(order)
    powers = [np.linalg.matrix_power(S, j) for j in range(order)]
    return np.stack([R @ P for P in powers], axis=-3)


def canonical_representative(R: np.ndarray, order: int) -> np.ndarray:
    """Orbit member whose axis-angle vector is lexicographically smallest."""
    if order == 1:
        return R
    members = orbit(R, order)
    logs = so3.log_map(members, validate=False)
    n = len(R)
    best = np.zeros(n, dtype=int)
    for j in range(1, order):
        a, b = logs[np.arange(n), j], logs[np.arange(n), best]
        less = (a[:, 0] < b[:, 0]) | ((a[:, 0] == b[:, 0]) & ((a[:, 1] < b[:, 1]) | ((a[:, 1] == b[:, 1]) & (a[:, 2] < b[:, 2]))))
        best = np.where(less, j, best)
    return members[np.arange(n), best]


def feature_matrix(cfg: SynthConfig) -> np.ndarray:
    """The fixed ``feature_dim x 9`` mixing matrix used by :func:`generate_synthetic`."""
    rng = np.random.default_rng(cfg.seed)
    return rng.standard_normal((cfg.feature_dim, 9)) / 3.0


def generate_synthetic(cfg: SynthConfig) -> Dataset:
    """Features ``A vec(R_canon) + noise``; ground truth ``log(R)`` of the true pose."""
    rng = np.random.default_rng(cfg.seed)
    A = rng.standard_normal((cfg.feature_dim, 9)) / 3.0
    if cfg.pose_distribution == "uniform":
        R = so3.sample_uniform_rotation(rng, cfg.n_samples)
    else:
        centers = so3.sample_uniform_rotation(rng, cfg.n_modes)
        which = rng.integers(cfg.n_modes, size=cfg.n_samples)
        jitter = so3.exp_map(cfg.mode_spread * rng.standard_normal((cfg.n_samples, 3)))
        R = centers[which] @ jitter
    canon = canonical_representative(R, cfg.symmetry_order)
    features = canon.reshape(-1, 9) @ A.T
    if cfg.noise_std > 0:
        features = features + cfg.noise_std * rng.standard_normal(features.shape)
    poses = so3.log_map(R, validate=False)
    return Dataset(features, poses, np.full(cfg.n_samples, cfg.category), "synthetic")


def split(ds: Dataset, val_fraction: float, seed: int = 0) -> tuple[Dataset, Dataset]:
    """Seeded shuffle then partition into ``(train, val)``."""
    if not 0.0 < val_fraction < 1.0:
        raise ValueError("val_fraction must lie strictly between 0 and 1")
    perm = np.random.default_rng(seed).permutation(len(ds))
    n_val = int(round(len(ds) * val_fraction))
    return ds.subset(np.sort(perm[n_val:])), ds.subset(np.sort(perm[:n_val]))


class CsvFormatError(ValueError):
    pass


def load_csv(path, feature_dim: int | None = None) -> Dataset:
    """Read rows ``category_id, y1, y2, y3, f1 .. fD``; ``#`` starts a comment line.

    Poses with norm in ``[pi, pi + 1e-6)`` are wrapped to the canonical ball.

    Raises:
        CsvFormatError: on ragged rows, non-finite values or poses with
            norm ``>= pi + 1e-6``; the message names the line number.
    """
    cats, poses, feats = [], [], []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or row[0].lstrip().startswith("#"):
                continue
            try:
                values = [float(v) for v in row]
            except ValueError as exc:
                raise CsvFormatError(f"{path}:{lineno}: {exc}") from None
            if feature_dim is None:
                feature_dim = len(values) - 4
            if len(values) != 4 + feature_dim or feature_dim < 1:
                raise CsvFormatError(f"{path}:{lineno}: expected {4 + feature_dim} columns, got {len(values)}")
            if not all(np.isfinite(values)):
                raise CsvFormatError(f"{path}:{lineno}: non-finite value")
            if values[0] != int(values[0]):
                raise CsvFormatError(f"{path}:{lineno}: category id must be an integer")
            y = np.array(values[1:4])
            if np.linalg.norm(y) >= np.pi + 1e-6:
                raise CsvFormatError(f"{path}:{lineno}: axis-angle norm {np.linalg.norm(y):.6f} >= pi")
            cats.append(int(values[0]))
            poses.append(y)
            feats.append(values[4:])
    if not poses:
        return Dataset(np.zeros((0, feature_dim or 0)), np.zeros((0, 3)), np.zeros(0, dtype=int), "file")
    poses = np.array(poses)
    wrap = np.linalg.norm(poses, axis=1) >= np.pi
    if wrap.any():
        poses[wrap] = so3.canonicalize(poses[wrap])
    return Dataset(np.array(feats), poses, np.array(cats), "file")


def save_csv(ds: Dataset, path) -> None:
    """Write ``ds`` in the :func:`load_csv` layout with round-trip exact floats."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        fh.write(f"# category_id,y1,y2,y3,f1..f{ds.feature_dim}\n")
        for c, y, f in zip(ds.categories, ds.poses, ds.features):
            w.writerow([int(c)] + [repr(float(v)) for v in y] + [repr(float(v)) for v in f])
