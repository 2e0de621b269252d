"""Preprocessing ahead of PLDA/NDA: length normalization and LDA."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ndakit.plda import scatter_matrices, simultaneous_diagonalizer


def length_normalize(s):
    """Scale every vector to Euclidean norm sqrt(dim).

    The dimension-matched target keeps per-dimension variance comparable
    across dims. Idempotent; zero vectors are refused.
    """
    norms = np.linalg.norm(s.vectors, axis=1)
    zero = np.where(norms == 0.0)[0]
    if zero.size:
        raise ValueError(f"cannot length-normalize zero vector "
                         f"(utt_id {s.utt_ids[int(zero[0])]!r})")
    scaled = s.vectors * (np.sqrt(s.dim) / norms)[:, None]
    return s.with_vectors(scaled)


@dataclass(frozen=True)
class LdaTransform:
    """Rows are the leading generalized eigenvectors of (B, W), scaled so
    projected training data has identity within-class covariance."""

    in_dim: int
    out_dim: int
    mean: np.ndarray
    projection: np.ndarray

    def __post_init__(self):
        mean = np.ascontiguousarray(self.mean, dtype=np.float64)
        proj = np.ascontiguousarray(self.projection, dtype=np.float64)
        if self.out_dim > self.in_dim:
            raise ValueError("out_dim must not exceed in_dim")
        if mean.shape != (self.in_dim,) or proj.shape != (self.out_dim,
                                                          self.in_dim):
            raise ValueError("mean/projection shapes inconsistent with dims")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(proj))):
            raise ValueError("non-finite LDA transform entries")
        mean.flags.writeable = False
        proj.flags.writeable = False
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "projection", proj)

    def to_dict(self) -> dict:
        return {
            "format": "lda-transform",
            "version": 1,
            "in_dim": self.in_dim,
            "out_dim": self.out_dim,
            "mean": self.mean.tolist(),
            "projection": self.projection.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LdaTransform":
        if d.get("format") != "lda-transform" or d.get("version") != 1:
            raise ValueError("not a version-1 lda-transform document")
        return cls(in_dim=d["in_dim"], out_dim=d["out_dim"],
                   mean=np.asarray(d["mean"]),
                   projection=np.asarray(d["projection"]))


def fit_lda(train, out_dim: int) -> LdaTransform:
    """Solve B v = lambda W v via whitening of W followed by a symmetric
    eigendecomposition; keep the out_dim leading directions."""
    groups = train.speakers()
    k = len(groups)
    if not 1 <= out_dim <= min(train.dim, k - 1):
        raise ValueError(f"out_dim must be in [1, min(dim, K-1)] = "
                         f"[1, {min(train.dim, k - 1)}], got {out_dim}")
    mean, W, B = scatter_matrices(train)
    T, _ = simultaneous_diagonalizer(W, B)
    return LdaTransform(in_dim=train.dim, out_dim=out_dim, mean=mean,
                        projection=T[:out_dim])


def apply_lda(t: LdaTransform, s):
    if s.dim != t.in_dim:
        raise ValueError(f"set dim {s.dim} != transform in_dim {t.in_dim}")
    return s.with_vectors((s.vectors - t.mean) @ t.projection.T)
