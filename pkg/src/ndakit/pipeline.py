"""Model bundles: a scoring model plus the preprocessing chain it was
trained with, serialized together so scoring can never silently apply a
mismatched pipeline."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ndakit import plda as pldamod
from ndakit.nda import NdaModel
from ndakit.plda import PldaModel
from ndakit.preprocess import LdaTransform, apply_lda, length_normalize
from ndakit.synth import OracleModel

BUNDLE_FORMAT = "ndakit-model-bundle"


@dataclass(frozen=True)
class ModelBundle:
    """A plda/nda/oracle model with its recorded preprocessing steps.

    Steps are applied in list order; each is {"type": "length_norm"} or
    {"type": "lda", ...LdaTransform document...}.
    """

    kind: str
    model: object
    steps: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if self.kind not in ("plda", "nda", "oracle"):
            raise ValueError(f"unknown model kind {self.kind!r}")
        object.__setattr__(self, "steps", tuple(self.steps))

    def preprocess(self, s):
        for step in self.steps:
            if step["type"] == "length_norm":
                s = length_normalize(s)
            elif step["type"] == "lda":
                s = apply_lda(LdaTransform.from_dict(step["transform"]), s)
            else:
                raise ValueError(f"unknown preprocessing step "
                                 f"{step['type']!r}")
        return s

    def latent_space(self, X: np.ndarray):
        """Map preprocessed vectors into the whitened scoring space; returns
        (latents, epsilon) ready for ``plda.score_projected``."""
        X = np.asarray(X, dtype=np.float64)
        if self.kind == "plda":
            return self.model.project(X), self.model.epsilon
        if self.kind == "nda":
            Z, _ = self.model.to_latent(X)
            return Z, self.model.epsilon
        return self.model.to_latent(X), self.model.prior_variances

    def score_set(self, s, trials):
        """Score every trial against a preprocessed embedding set."""
        s = self.preprocess(s)
        index = s.index()
        missing = sorted({u for t in trials
                          for u in (*t.enroll_utt_ids, t.test_utt_id)
                          if u not in index})
        if missing:
            raise ValueError("trials reference unknown utt_ids: "
                             + ", ".join(missing))
        Z, epsilon = self.latent_space(s.vectors)
        scores = np.empty(len(trials))
        for i, t in enumerate(trials):
            Ze = Z[[index[u] for u in t.enroll_utt_ids]]
            zt = Z[index[t.test_utt_id]]
            scores[i] = pldamod.score_projected(Ze, zt, epsilon)
        return scores

    def transform_set(self, s):
        """Preprocess and map a whole set into the latent/whitened space."""
        s = self.preprocess(s)
        Z, _ = self.latent_space(s.vectors)
        return s.with_vectors(Z)

    def to_dict(self) -> dict:
        return {
            "format": BUNDLE_FORMAT,
            "version": 1,
            "kind": self.kind,
            "preprocessing": list(self.steps),
            "model": self.model.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelBundle":
        if d.get("format") != BUNDLE_FORMAT or d.get("version") != 1:
            raise ValueError("not a version-1 model bundle")
        kind = d["kind"]
        loader = {"plda": PldaModel, "nda": NdaModel,
                  "oracle": OracleModel}.get(kind)
        if loader is None:
            raise ValueError(f"unknown model kind {kind!r}")
        return cls(kind=kind, model=loader.from_dict(d["model"]),
                   steps=tuple(d.get("preprocessing", ())))


def lda_step(t: LdaTransform) -> dict:
    return {"type": "lda", "transform": t.to_dict()}


def length_norm_step() -> dict:
    return {"type": "length_norm"}


def save_bundle(bundle: ModelBundle, path) -> None:
    Path(path).write_text(json.dumps(bundle.to_dict(), indent=1) + "\n")


def load_bundle(path) -> ModelBundle:
    return ModelBundle.from_dict(json.loads(Path(path).read_text()))
