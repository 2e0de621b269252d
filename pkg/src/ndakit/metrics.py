"""Detection metrics (EER, minDCF) and Gaussianality diagnostics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ScoreSet:
    """Trial scores with aligned target/nontarget labels."""

    scores: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        scores = np.ascontiguousarray(self.scores, dtype=np.float64)
        labels = np.ascontiguousarray(self.labels, dtype=bool)
        if scores.shape != labels.shape or scores.ndim != 1:
            raise ValueError("scores and labels must be 1-D and aligned")
        if not np.all(np.isfinite(scores)):
            raise ValueError("non-finite score")
        scores.flags.writeable = False
        labels.flags.writeable = False
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "labels", labels)

    @property
    def n_target(self) -> int:
        return int(self.labels.sum())

    @property
    def n_nontarget(self) -> int:
        return int((~self.labels).sum())


def operating_points(s: ScoreSet):
    """Thresholds and error rates of the accept-iff-score>=t detector.

    Returns (thresholds, p_miss, p_fa) where thresholds are the distinct
    score values plus +inf, P_miss(t) is the fraction of targets strictly
    below t and P_fa(t) the fraction of nontargets at or above t.
    """
    if s.n_target == 0 or s.n_nontarget == 0:
        raise ValueError("need at least one target and one nontarget trial")
    tar = np.sort(s.scores[s.labels])
    non = np.sort(s.scores[~s.labels])
    thresholds = np.concatenate([np.unique(s.scores), [np.inf]])
    p_miss = np.searchsorted(tar, thresholds, side="left") / tar.size
    p_fa = 1.0 - np.searchsorted(non, thresholds, side="left") / non.size
    return thresholds, p_miss, p_fa


def compute_eer(s: ScoreSet) -> float:
    """Equal error rate with linear interpolation between the two adjacent
    operating points straddling the P_miss = P_fa crossing."""
    _, p_miss, p_fa = operating_points(s)
    diff = p_miss - p_fa
    idx = int(np.searchsorted(diff >= 0, True))
    if diff[idx] == 0.0:
        return float(p_miss[idx])
    m1, m2 = p_miss[idx - 1], p_miss[idx]
    d1, d2 = diff[idx - 1], diff[idx]
    alpha = -d1 / (d2 - d1)
    return float(m1 + alpha * (m2 - m1))


def compute_min_dcf(s: ScoreSet, p_tar: float) -> float:
    """Minimum normalized detection cost with unit miss/false-alarm costs:
    min over thresholds of p_tar*P_miss + (1-p_tar)*P_fa, divided by
    min(p_tar, 1-p_tar)."""
    if not 0.0 < p_tar < 1.0:
        raise ValueError("p_tar must lie strictly between 0 and 1")
    _, p_miss, p_fa = operating_points(s)
    cost = p_tar * p_miss + (1.0 - p_tar) * p_fa
    return float(cost.min() / min(p_tar, 1.0 - p_tar))


@dataclass(frozen=True)
class MomentStats:
    """Skewness and excess kurtosis, averaged over non-degenerate dims."""

    skew: float
    kurt: float
    skipped_dims: int = 0

    def to_dict(self) -> dict:
        return {"skew": self.skew, "kurt": self.kurt,
                "skipped_dims": self.skipped_dims}


@dataclass(frozen=True)
class GaussReport:
    marginal: MomentStats
    conditional: MomentStats
    prior: MomentStats

    def to_dict(self) -> dict:
        return {
            "aggregation": "per-dimension moments averaged over dimensions",
            "marginal": self.marginal.to_dict(),
            "conditional": self.conditional.to_dict(),
            "prior": self.prior.to_dict(),
        }


def _moment_stats(X: np.ndarray) -> MomentStats:
    """Biased (denominator N) per-dimension skew m3/m2^1.5 and excess
    kurtosis m4/m2^2 - 3, averaged over dimensions. Dimensions whose
    variance is zero up to accumulated rounding are skipped."""
    n, dim = X.shape
    mu = X.mean(axis=0)
    R = X - mu
    m2 = (R ** 2).mean(axis=0)
    degenerate = m2 <= (np.finfo(np.float64).eps * n * np.abs(mu)) ** 2
    kept = ~degenerate
    if not kept.any():
        raise ValueError("all dimensions are degenerate (zero variance)")
    m2k = m2[kept]
    m3 = (R[:, kept] ** 3).mean(axis=0)
    m4 = (R[:, kept] ** 4).mean(axis=0)
    skew = m3 / m2k ** 1.5
    kurt = m4 / m2k ** 2 - 3.0
    return MomentStats(skew=float(skew.mean()), kurt=float(kurt.mean()),
                       skipped_dims=int(degenerate.sum()))


def gaussianality_report(s) -> GaussReport:
    """Skew/kurtosis of the marginal (all vectors pooled), conditional
    (residuals about speaker means), and prior (speaker means) distributions.
    Requires >= 2 speakers with >= 2 utterances each."""
    groups = s.speakers()
    if len(groups) < 2 or any(len(idx) < 2 for idx in groups.values()):
        raise ValueError("diagnostics need >= 2 speakers with >= 2 "
                         "utterances each")
    means = np.stack([s.vectors[idx].mean(axis=0) for idx in groups.values()])
    residuals = s.vectors.copy()
    for k, idx in enumerate(groups.values()):
        residuals[idx] -= means[k]
    return GaussReport(marginal=_moment_stats(s.vectors),
                       conditional=_moment_stats(residuals),
                       prior=_moment_stats(means))
