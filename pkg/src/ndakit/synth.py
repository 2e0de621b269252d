"""Synthetic non-Gaussian corpora with a known ground-truth scorer.

Speakers live in a latent space where the linear-Gaussian model is exact:
speaker means from N(0, diag(prior_variances)), utterances from N(mean, I).
Observations are pushed through a known invertible warp, so the oracle can
invert the warp exactly and score with the true prior variances, giving a
Bayes-optimal reference for any learned back-end.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ndakit.plda import score_projected
from ndakit.vecstore import EmbeddingSet, Trial, TrialList

WARP_KINDS = ("identity", "sinh_arcsinh", "rotation_cubic")


@dataclass(frozen=True)
class IdentityWarp:
    def apply(self, Z):
        return np.asarray(Z, dtype=np.float64)

    def invert(self, X):
        return np.asarray(X, dtype=np.float64)

    def to_dict(self):
        return {"kind": "identity"}


@dataclass(frozen=True)
class SinhArcsinhWarp:
    """Elementwise x = sinh((asinh(z) + skew) / tail).

    skew shifts mass to one side; tail < 1 produces heavy tails, > 1 light
    tails. Closed-form inverse: z = sinh(tail * asinh(x) - skew).
    """

    skew: float
    tail: float

    def __post_init__(self):
        if not self.tail > 0:
            raise ValueError("tail must be positive")

    def apply(self, Z):
        Z = np.asarray(Z, dtype=np.float64)
        return np.sinh((np.arcsinh(Z) + self.skew) / self.tail)

    def invert(self, X):
        X = np.asarray(X, dtype=np.float64)
        return np.sinh(self.tail * np.arcsinh(X) - self.skew)

    def to_dict(self):
        return {"kind": "sinh_arcsinh", "skew": self.skew, "tail": self.tail}


def _invert_monotone_cubic(x, strength):
    """Real root of strength*t^3 + t = x (unique since the map is strictly
    increasing), via Cardano in a cancellation-free arrangement plus one
    Newton polish."""
    if strength == 0.0:
        return np.array(x, dtype=np.float64, copy=True)
    x = np.asarray(x, dtype=np.float64)
    ax = np.abs(x)
    p = 1.0 / strength
    q = -ax / strength
    # u = -q/2 + sqrt(q^2/4 + (p/3)^3) > 0 always; the conjugate root factor
    # is recovered as -(p/3)/cbrt(u), avoiding catastrophic cancellation.
    u = -0.5 * q + np.sqrt(0.25 * q * q + (p / 3.0) ** 3)
    cu = np.cbrt(u)
    t = cu - (p / 3.0) / cu
    t = t - (strength * t ** 3 + t - ax) / (3.0 * strength * t * t + 1.0)
    return np.sign(x) * t


@dataclass(frozen=True)
class RotationCubicWarp:
    """x = t + strength * t^3 elementwise, with t the input rotated by a
    fixed orthogonal matrix. Introduces cross-dimensional structure that an
    elementwise warp lacks."""

    rotation: np.ndarray
    strength: float

    def __post_init__(self):
        if self.strength < 0:
            raise ValueError("strength must be >= 0")
        R = np.ascontiguousarray(self.rotation, dtype=np.float64)
        R.flags.writeable = False
        object.__setattr__(self, "rotation", R)

    def apply(self, Z):
        T = np.asarray(Z, dtype=np.float64) @ self.rotation.T
        return T + self.strength * T ** 3

    def invert(self, X):
        T = _invert_monotone_cubic(X, self.strength)
        return T @ self.rotation

    def to_dict(self):
        return {"kind": "rotation_cubic", "strength": self.strength,
                "rotation": self.rotation.tolist()}


def warp_from_dict(d: dict):
    kind = d.get("kind")
    if kind == "identity":
        return IdentityWarp()
    if kind == "sinh_arcsinh":
        return SinhArcsinhWarp(skew=float(d["skew"]), tail=float(d["tail"]))
    if kind == "rotation_cubic":
        return RotationCubicWarp(rotation=np.asarray(d["rotation"]),
                                 strength=float(d["strength"]))
    raise ValueError(f"unknown warp kind {kind!r}")


@dataclass(frozen=True)
class SynthSpec:
    """Corpus recipe. ``warp`` is one of 'identity', 'sinh_arcsinh'
    (parameters skew, tail) or 'rotation_cubic' (parameter strength)."""

    dim: int
    n_train_speakers: int
    n_eval_speakers: int
    utts_per_speaker: int
    prior_variances: tuple[float, ...]
    warp: str = "identity"
    skew: float = 0.0
    tail: float = 1.0
    strength: float = 0.1
    seed: int = 0
    min_nontargets_per_target: int = field(default=5)

    def __post_init__(self):
        pv = tuple(float(v) for v in self.prior_variances)
        object.__setattr__(self, "prior_variances", pv)
        if min(self.dim, self.n_train_speakers, self.n_eval_speakers,
               self.utts_per_speaker) < 1:
            raise ValueError("all counts must be >= 1")
        if len(pv) != self.dim:
            raise ValueError(f"prior_variances has {len(pv)} entries, "
                             f"expected dim={self.dim}")
        if any(v <= 0 for v in pv):
            raise ValueError("prior variances must be positive")
        if self.warp not in WARP_KINDS:
            raise ValueError(f"unknown warp {self.warp!r}")
        if self.tail <= 0:
            raise ValueError("tail must be positive")
        if self.strength < 0:
            raise ValueError("strength must be >= 0")

    def to_dict(self) -> dict:
        return {
            "dim": self.dim,
            "n_train_speakers": self.n_train_speakers,
            "n_eval_speakers": self.n_eval_speakers,
            "utts_per_speaker": self.utts_per_speaker,
            "prior_variances": list(self.prior_variances),
            "warp": self.warp,
            "skew": self.skew,
            "tail": self.tail,
            "strength": self.strength,
            "seed": self.seed,
            "min_nontargets_per_target": self.min_nontargets_per_target,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        return cls(**d)


@dataclass(frozen=True)
class OracleModel:
    """The exact generative warp and prior variances (within variance 1)."""

    warp: object
    prior_variances: np.ndarray

    def __post_init__(self):
        pv = np.ascontiguousarray(self.prior_variances, dtype=np.float64)
        pv.flags.writeable = False
        object.__setattr__(self, "prior_variances", pv)

    @property
    def dim(self) -> int:
        return self.prior_variances.shape[0]

    def to_latent(self, X: np.ndarray) -> np.ndarray:
        Z = self.warp.invert(np.asarray(X, dtype=np.float64))
        if not np.all(np.isfinite(Z)):
            raise ValueError("vector outside the warp's invertible range")
        return Z

    def to_dict(self) -> dict:
        return {
            "format": "oracle-model",
            "version": 1,
            "prior_variances": self.prior_variances.tolist(),
            "warp": self.warp.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "OracleModel":
        if d.get("format") != "oracle-model" or d.get("version") != 1:
            raise ValueError("not a version-1 oracle-model document")
        return cls(warp=warp_from_dict(d["warp"]),
                   prior_variances=np.asarray(d["prior_variances"]))


def oracle_score(oracle: OracleModel, enroll: np.ndarray,
                 test: np.ndarray) -> float:
    """Ground-truth log LR: invert the true warp and apply the closed-form
    marginal with the true prior variances (the volume terms cancel)."""
    enroll = np.atleast_2d(np.asarray(enroll, dtype=np.float64))
    test = np.asarray(test, dtype=np.float64).reshape(-1)
    Ze = oracle.to_latent(enroll)
    zt = oracle.to_latent(test[None, :])[0]
    return score_projected(Ze, zt, oracle.prior_variances)


def _make_warp(spec: SynthSpec, rng: np.random.Generator):
    if spec.warp == "identity":
        return IdentityWarp()
    if spec.warp == "sinh_arcsinh":
        return SinhArcsinhWarp(skew=spec.skew, tail=spec.tail)
    # Random orthogonal matrix with a deterministic sign convention.
    M = rng.standard_normal((spec.dim, spec.dim))
    Q, R = np.linalg.qr(M)
    Q = Q * np.sign(np.diag(R))
    return RotationCubicWarp(rotation=Q, strength=spec.strength)


def _sample_speakers(rng, warp, prior_sd, n_speakers, n_utts, dim, prefix):
    mus = rng.standard_normal((n_speakers, dim)) * prior_sd
    Z = np.repeat(mus, n_utts, axis=0) + rng.standard_normal(
        (n_speakers * n_utts, dim))
    X = warp.apply(Z)
    utts, spks = [], []
    for k in range(n_speakers):
        spk = f"{prefix}{k:04d}"
        for i in range(n_utts):
            utts.append(f"{spk}-{i:03d}")
            spks.append(spk)
    return EmbeddingSet(dim=dim, utt_ids=tuple(utts), speaker_ids=tuple(spks),
                        vectors=X)


def generate_corpus(spec: SynthSpec):
    """Returns (train, eval_set, trials, oracle), deterministic in the seed.

    Per eval speaker the first utterance enrolls and the rest are target
    tests; nontarget trials pair the enrollment against other speakers' test
    utterances, at least ``min_nontargets_per_target`` per target (sampled
    with replacement only when the pool is too small).
    """
    if spec.utts_per_speaker < 2:
        raise ValueError("utts_per_speaker must be >= 2 so that eval "
                         "speakers have both an enrollment and a test")
    rng = np.random.default_rng(spec.seed)
    warp = _make_warp(spec, rng)
    prior_sd = np.sqrt(np.asarray(spec.prior_variances))
    train = _sample_speakers(rng, warp, prior_sd, spec.n_train_speakers,
                             spec.utts_per_speaker, spec.dim, "t")
    eval_set = _sample_speakers(rng, warp, prior_sd, spec.n_eval_speakers,
                                spec.utts_per_speaker, spec.dim, "e")

    n_tests = spec.utts_per_speaker - 1
    speakers = sorted(eval_set.speakers())
    test_utts = {spk: [f"{spk}-{i:03d}" for i in range(1, spec.utts_per_speaker)]
                 for spk in speakers}
    trials = []
    for spk in speakers:
        enroll = (f"{spk}-000",)
        for utt in test_utts[spk]:
            trials.append(Trial(enroll, utt, True))
        pool = np.array([u for other in speakers if other != spk
                         for u in test_utts[other]])
        need = spec.min_nontargets_per_target * n_tests
        picked = rng.choice(pool, size=need, replace=len(pool) < need,
                            shuffle=False)
        for utt in picked:
            trials.append(Trial(enroll, str(utt), False))

    oracle = OracleModel(warp=warp,
                         prior_variances=np.asarray(spec.prior_variances))
    return train, eval_set, TrialList(tuple(trials)), oracle
