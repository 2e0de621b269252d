"""Neural discriminant analysis: a coupling-flow Gaussianizer trained jointly
with diagonal prior variances by maximum likelihood over speaker groups.

The latent model is the sigma=1 PLDA family: class means from
N(0, diag(epsilon)), members from N(mu, I), established on z = f^{-1}(x - mean).
Marginals in x-space pick up the flow's volume term; likelihood-ratio scores
are computed entirely in z-space because those terms cancel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ndakit import flow as flowmod
from ndakit.flow import FlowModel
from ndakit.plda import (
    gaussian_marginal_grad,
    gaussian_marginal_log_density,
    score_projected,
)

EPSILON_INIT_FLOOR = 1e-6


@dataclass(frozen=True)
class NdaModel:
    flow: FlowModel
    log_epsilon: np.ndarray
    mean: np.ndarray

    def __post_init__(self):
        log_eps = np.ascontiguousarray(self.log_epsilon, dtype=np.float64)
        mean = np.ascontiguousarray(self.mean, dtype=np.float64)
        if log_eps.shape != (self.flow.dim,) or mean.shape != (self.flow.dim,):
            raise ValueError("log_epsilon and mean must match the flow dim")
        if not (np.all(np.isfinite(log_eps)) and np.all(np.isfinite(mean))):
            raise ValueError("non-finite model parameters")
        log_eps.flags.writeable = False
        mean.flags.writeable = False
        object.__setattr__(self, "log_epsilon", log_eps)
        object.__setattr__(self, "mean", mean)

    @property
    def dim(self) -> int:
        return self.flow.dim

    @property
    def epsilon(self) -> np.ndarray:
        return np.exp(self.log_epsilon)

    def to_latent(self, X: np.ndarray):
        """z = f^{-1}(x - mean) with the per-vector log-volume terms."""
        X = np.asarray(X, dtype=np.float64)
        single = X.ndim == 1
        Z, logj = flowmod.inverse_with_logdet(self.flow,
                                              np.atleast_2d(X) - self.mean)
        if single:
            return Z[0], float(logj[0])
        return Z, logj

    def to_dict(self) -> dict:
        return {
            "format": "nda-model",
            "version": 1,
            "flow": self.flow.to_dict(),
            "mean": self.mean.tolist(),
            "log_epsilon": self.log_epsilon.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NdaModel":
        if d.get("format") != "nda-model" or d.get("version") != 1:
            raise ValueError("not a version-1 nda-model document")
        return cls(flow=FlowModel.from_dict(d["flow"]),
                   log_epsilon=np.asarray(d["log_epsilon"]),
                   mean=np.asarray(d["mean"]))


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    speakers_per_batch: int = 200
    min_speakers_before_update: int | None = None
    learning_rate: float = 1e-3
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    grad_clip_norm: float | None = None
    normalize_per_speaker: bool = False

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not (0 < self.adam_beta1 < 1 and 0 < self.adam_beta2 < 1):
            raise ValueError("Adam betas must lie in (0, 1)")
        if self.epochs < 1 or self.speakers_per_batch < 1:
            raise ValueError("epochs and speakers_per_batch must be >= 1")

    @property
    def update_window(self) -> int:
        return (self.speakers_per_batch
                if self.min_speakers_before_update is None
                else self.min_speakers_before_update)


def nda_log_marginal(model: NdaModel, X: np.ndarray) -> float:
    """Exact log p(x_1..x_n): latent marginal plus the volume terms."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Z, logj = model.to_latent(X)
    return float(logj.sum()) + gaussian_marginal_log_density(Z, model.epsilon)


def nda_score_trial(model: NdaModel, enroll: np.ndarray,
                    test: np.ndarray) -> float:
    """Log LR computed in z-space; the volume terms cancel identically and
    are deliberately not computed."""
    enroll = np.atleast_2d(np.asarray(enroll, dtype=np.float64))
    test = np.asarray(test, dtype=np.float64).reshape(-1)
    Ze, _ = model.to_latent(enroll)
    zt, _ = model.to_latent(test)
    return score_projected(Ze, zt, model.epsilon)


def transform_set(model: NdaModel, s):
    """Replace every vector by its latent code z = f^{-1}(x - mean)."""
    if s.dim != model.dim:
        raise ValueError(f"set dim {s.dim} != model dim {model.dim}")
    Z, _ = model.to_latent(s.vectors)
    return s.with_vectors(Z)


def initial_epsilon(train) -> np.ndarray:
    """Moment-based warm start for the prior variances: the per-dimension
    sample variance of the speaker means of centered data, floored to keep
    log_epsilon finite."""
    groups = train.speakers()
    mean = train.vectors.mean(axis=0)
    mus = np.stack([train.vectors[idx].mean(axis=0) - mean
                    for idx in groups.values()])
    var = mus.var(axis=0, ddof=1)
    return np.maximum(var, EPSILON_INIT_FLOOR)


def _speaker_objective_and_grads(flow, epsilon, Xc):
    """Per-speaker objective value, flow-parameter grads, and log-eps grads."""
    Z, logj, caches = flowmod._inverse_pass(flow, Xc)
    marg = gaussian_marginal_log_density(Z, epsilon)
    obj = float(logj.sum()) + marg
    grad_Z, grad_eps = gaussian_marginal_grad(Z, epsilon)
    flat, _ = flowmod._backward_from_caches(flow, caches, grad_Z,
                                            np.ones(Xc.shape[0]))
    return obj, flat, grad_eps * epsilon


def _objective(flow, epsilon, groups_centered, normalize) -> float:
    total = 0.0
    for Xc in groups_centered:
        Z, logj = flowmod.inverse_with_logdet(flow, Xc)
        obj = float(logj.sum()) + gaussian_marginal_log_density(Z, epsilon)
        total += obj / len(Xc) if normalize else obj
    return total


def fit_nda(train, init: FlowModel, config: TrainConfig,
            step_callback=None):
    """Maximize the speaker-grouped ML objective over (flow, log_epsilon).

    First-order adaptive-moment ascent (Adam) with gradients accumulated
    per speaker; a parameter update is applied once the accumulated window
    reaches ``config.update_window`` speakers (remainders at the end of an
    epoch are flushed), and each update uses the accumulated gradient
    divided by the number of contributing speakers.

    ``loss_trace`` holds the mean per-speaker objective evaluated at the
    parameters in force at the start of each epoch, so its first entry is
    the objective of the untrained (identity-start) model.

    ``step_callback``, if given, is invoked as callback(speakers_consumed)
    after every optimizer step.

    Returns (NdaModel, loss_trace). Fully deterministic given
    (train, init, config).
    """
    from ndakit.vecstore import partition_speaker_batches

    groups = train.speakers()
    if len(groups) < 2:
        raise ValueError("need at least 2 speakers")
    if sum(1 for idx in groups.values() if len(idx) >= 2) < 2:
        raise ValueError("need at least 2 speakers with >= 2 utterances")
    if train.dim != init.dim:
        raise ValueError(f"training dim {train.dim} != flow dim {init.dim}")

    mean = train.vectors.mean(axis=0)
    flow = init
    log_eps = np.log(initial_epsilon(train))
    n_flow = flow.param_count
    theta = np.concatenate([flowmod.get_params(flow), log_eps])

    adam_m = np.zeros_like(theta)
    adam_v = np.zeros_like(theta)
    adam_t = 0
    b1, b2 = config.adam_beta1, config.adam_beta2
    n_speakers = len(groups)
    window = config.update_window

    loss_trace: list[float] = []
    acc = np.zeros_like(theta)
    acc_count = 0

    def apply_step():
        nonlocal theta, flow, log_eps, adam_m, adam_v, adam_t, acc, acc_count
        consumed = acc_count
        g = acc / acc_count
        if config.grad_clip_norm is not None:
            norm = float(np.linalg.norm(g))
            if norm > config.grad_clip_norm:
                g = g * (config.grad_clip_norm / norm)
        adam_t += 1
        adam_m = b1 * adam_m + (1.0 - b1) * g
        adam_v = b2 * adam_v + (1.0 - b2) * g * g
        m_hat = adam_m / (1.0 - b1 ** adam_t)
        v_hat = adam_v / (1.0 - b2 ** adam_t)
        theta = theta + config.learning_rate * m_hat / (np.sqrt(v_hat)
                                                        + config.adam_eps)
        flow = flowmod.with_params(flow, theta[:n_flow])
        log_eps = theta[n_flow:]
        acc = np.zeros_like(theta)
        acc_count = 0
        if step_callback is not None:
            step_callback(consumed)

    for epoch in range(config.epochs):
        centered = [train.vectors[idx] - mean for idx in groups.values()]
        trace_val = _objective(flow, np.exp(log_eps), centered,
                               config.normalize_per_speaker) / n_speakers
        if not np.isfinite(trace_val):
            raise RuntimeError(f"objective diverged at epoch {epoch + 1}")
        loss_trace.append(trace_val)

        batches = partition_speaker_batches(train, config.speakers_per_batch,
                                            seed=config.seed + epoch)
        for batch_idx, batch in enumerate(batches):
            for spk, X in batch.groups:
                epsilon = np.exp(log_eps)
                obj, gflow, geps = _speaker_objective_and_grads(
                    flow, epsilon, X - mean)
                if not np.isfinite(obj):
                    raise RuntimeError(
                        f"objective diverged at epoch {epoch + 1}, "
                        f"batch {batch_idx + 1} (speaker {spk!r})")
                g = np.concatenate([gflow, geps])
                if config.normalize_per_speaker:
                    g /= len(X)
                acc += g
                acc_count += 1
                if acc_count >= window:
                    apply_step()
        if acc_count > 0:
            apply_step()

    model = NdaModel(flow=flow, log_epsilon=log_eps, mean=mean)
    return model, loss_trace
