"""Two-covariance PLDA: fitting, exact marginals, and trial scoring.

The model family: class means are drawn from N(0, diag(epsilon)) and class
members from N(mean, I), both in a whitened space y = whiten @ (x - mean).
Fitting diagonalizes the empirical within- and between-class covariances
simultaneously, which is exact for this family and fully deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOG_2PI = float(np.log(2.0 * np.pi))


def gaussian_marginal_log_density(Y: np.ndarray, epsilon: np.ndarray) -> float:
    """Exact log p(y_1, ..., y_n) for the diagonal linear-Gaussian model.

    Per dimension j the n samples are jointly Gaussian with covariance
    epsilon_j * J_n + I_n (J_n the all-ones matrix); the log-density of that
    dense Gaussian reduces to

        -(n/2) log(2 pi) - (1/2) log(1 + n eps_j)
        - (1/2) [ sum_i y_ij^2 - eps_j / (1 + n eps_j) * (sum_i y_ij)^2 ]

    summed over dimensions. Returns the normalized log density, not a value
    merely proportional to it.
    """
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y[None, :]
    n, dim = Y.shape
    if n == 0:
        raise ValueError("marginal of zero samples is undefined")
    if not np.all(np.isfinite(Y)):
        raise ValueError("non-finite input to marginal_log_density")
    epsilon = np.asarray(epsilon, dtype=np.float64)
    if epsilon.shape != (dim,):
        raise ValueError(f"epsilon has shape {epsilon.shape}, expected ({dim},)")
    S = Y.sum(axis=0)
    Q = (Y * Y).sum(axis=0)
    denom = 1.0 + n * epsilon
    quad = Q - (epsilon / denom) * S * S
    return float(-0.5 * n * dim * LOG_2PI
                 - 0.5 * np.log1p(n * epsilon).sum()
                 - 0.5 * quad.sum())


def gaussian_marginal_grad(Y: np.ndarray, epsilon: np.ndarray):
    """Gradients of :func:`gaussian_marginal_log_density`.

    Returns (grad_Y, grad_epsilon) with grad_Y of shape (n, dim).
    """
    Y = np.asarray(Y, dtype=np.float64)
    n = Y.shape[0]
    S = Y.sum(axis=0)
    denom = 1.0 + n * epsilon
    grad_Y = -Y + (epsilon / denom) * S
    grad_eps = -0.5 * n / denom + 0.5 * (S / denom) ** 2
    return grad_Y, grad_eps


@dataclass(frozen=True)
class PldaModel:
    """Fitted PLDA back-end.

    ``whiten`` has shape (dim, in_dim): after truncation fewer rows are kept
    than the input dimensionality. ``epsilon`` is sorted descending.
    """

    dim: int
    mean: np.ndarray
    whiten: np.ndarray
    epsilon: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=np.float64)
        whiten = np.asarray(self.whiten, dtype=np.float64)
        epsilon = np.asarray(self.epsilon, dtype=np.float64)
        if whiten.shape != (self.dim, mean.shape[0]):
            raise ValueError(f"whiten shape {whiten.shape} inconsistent with "
                             f"dim {self.dim} and mean length {mean.shape[0]}")
        if epsilon.shape != (self.dim,):
            raise ValueError("epsilon length must equal dim")
        if not (np.all(np.isfinite(whiten)) and np.all(np.isfinite(mean))
                and np.all(np.isfinite(epsilon))):
            raise ValueError("PLDA model contains non-finite entries")
        if np.any(epsilon < 0):
            raise ValueError("epsilon must be nonnegative")
        if np.any(np.diff(epsilon) > 0):
            raise ValueError("epsilon must be sorted descending")
        for name, a in (("mean", mean), ("whiten", whiten), ("epsilon", epsilon)):
            a = np.ascontiguousarray(a)
            a.flags.writeable = False
            object.__setattr__(self, name, a)

    @property
    def in_dim(self) -> int:
        return self.mean.shape[0]

    def project(self, X: np.ndarray) -> np.ndarray:
        """Map raw vectors into the whitened scoring space."""
        X = np.asarray(X, dtype=np.float64)
        return (X - self.mean) @ self.whiten.T

    def to_dict(self) -> dict:
        return {
            "format": "plda-model",
            "version": 1,
            "dim": self.dim,
            "mean": self.mean.tolist(),
            "whiten": self.whiten.tolist(),
            "epsilon": self.epsilon.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PldaModel":
        if d.get("format") != "plda-model" or d.get("version") != 1:
            raise ValueError("not a version-1 plda-model document")
        return cls(dim=d["dim"], mean=np.asarray(d["mean"]),
                   whiten=np.asarray(d["whiten"]),
                   epsilon=np.asarray(d["epsilon"]))


def scatter_matrices(s) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Global mean, pooled within-class and between-class covariances.

    W pools squared deviations about class means with denominator N - K
    (speakers with one utterance contribute zero scatter and zero degrees of
    freedom); B is the sample covariance of the class means, denominator
    K - 1.
    """
    groups = s.speakers()
    if len(groups) < 2:
        raise ValueError("need at least 2 speakers")
    mean = s.vectors.mean(axis=0)
    dim = s.dim
    W = np.zeros((dim, dim))
    means = np.empty((len(groups), dim))
    within_dof = 0
    for k, idx in enumerate(groups.values()):
        Xk = s.vectors[idx]
        mu = Xk.mean(axis=0)
        means[k] = mu
        R = Xk - mu
        W += R.T @ R
        within_dof += len(idx) - 1
    if within_dof == 0:
        raise ValueError("every speaker has a single utterance; "
                         "within-class covariance is not estimable")
    W /= within_dof
    Mc = means - means.mean(axis=0)
    B = (Mc.T @ Mc) / (len(groups) - 1)
    return mean, W, B


def simultaneous_diagonalizer(W: np.ndarray, B: np.ndarray):
    """T with T W T' = I and T B T' = diag(lam), lam sorted descending."""
    w_eig, U = np.linalg.eigh(W)
    if w_eig[0] <= 1e-10 * max(w_eig[-1], 1.0):
        raise np.linalg.LinAlgError(
            "within-class covariance is singular or near-singular; reduce "
            "dimensionality first (LDA projection or truncation)")
    W_inv_sqrt = (U / np.sqrt(w_eig)) @ U.T
    Bt = W_inv_sqrt @ B @ W_inv_sqrt
    lam, V = np.linalg.eigh((Bt + Bt.T) / 2.0)
    order = np.argsort(lam, kind="stable")[::-1]
    lam = lam[order]
    T = V[:, order].T @ W_inv_sqrt
    return T, lam


def fit_plda(train) -> PldaModel:
    """Fit PLDA by simultaneous diagonalization of the two covariances.

    Negative eigenvalues of the whitened between-class covariance (a
    small-sample artifact) are clamped to zero.
    """
    mean, W, B = scatter_matrices(train)
    T, lam = simultaneous_diagonalizer(W, B)
    return PldaModel(dim=train.dim, mean=mean, whiten=T,
                     epsilon=np.maximum(lam, 0.0))


def marginal_log_density(model: PldaModel, X: np.ndarray) -> float:
    """Exact log p(y_1..y_n) of raw vectors under the fitted model."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != model.in_dim:
        raise ValueError(f"vectors have dim {X.shape[1]}, model expects "
                         f"{model.in_dim}")
    return gaussian_marginal_log_density(model.project(X), model.epsilon)


def score_trial(model: PldaModel, enroll: np.ndarray, test: np.ndarray) -> float:
    """Log likelihood ratio log p(test, enrolls) - log p(test) - log p(enrolls)."""
    enroll = np.asarray(enroll, dtype=np.float64)
    if enroll.ndim == 1:
        enroll = enroll[None, :]
    test = np.asarray(test, dtype=np.float64).reshape(1, -1)
    Ye = model.project(enroll)
    Yt = model.project(test)
    return score_projected(Ye, Yt[0], model.epsilon)


def score_projected(Ye: np.ndarray, yt: np.ndarray, epsilon: np.ndarray) -> float:
    """Log LR in an already-whitened space (shared by PLDA, NDA, oracle)."""
    joint = np.vstack([Ye, yt[None, :]])
    return (gaussian_marginal_log_density(joint, epsilon)
            - gaussian_marginal_log_density(yt[None, :], epsilon)
            - gaussian_marginal_log_density(Ye, epsilon))


def truncate_dims(model: PldaModel, keep: int) -> PldaModel:
    """Keep the ``keep`` rows with largest epsilon (rows are pre-sorted)."""
    if not 1 <= keep <= model.dim:
        raise ValueError(f"keep must be in [1, {model.dim}], got {keep}")
    return PldaModel(dim=keep, mean=model.mean,
                     whiten=model.whiten[:keep],
                     epsilon=model.epsilon[:keep])
