"""Kernel PCA feature extraction ("eigenlung" bases for lung patches).

Training vectors are mapped into an implicit feature space by a kernel;
principal directions of the (feature-space centered) data are found by an
eigendecomposition of the centered Gram matrix. Component j is represented
by a dual coefficient vector alpha_j over the training set, scaled so the
corresponding feature-space direction has unit norm. New points are
projected by kernel evaluations against the training set with the stored
centering statistics applied.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ArgumentError, DegenerateInputError, NumericalError

# relative eigenvalue cutoff: components below this fraction of the largest
# eigenvalue are numerically null and discarded
EIG_CUTOFF = 1e-10


@dataclass(frozen=True)
class KernelSpec:
    """Kernel family and parameters.

    rbf accepts either a bandwidth ``sigma`` (k = exp(-0.5 d^2 / sigma^2))
    or a rate ``gamma`` (k = exp(-gamma d^2)); the two are related by
    gamma = 0.5 / sigma^2. ``sigma=None`` with kind "rbf" requests the
    median-pairwise-distance heuristic at fit time.
    """

    kind: str = "rbf"
    sigma: float | None = None
    gamma: float | None = None
    degree: int = 3
    coef0: float = 1.0

    def __post_init__(self):
        if self.kind not in ("rbf", "polynomial", "linear"):
            raise ArgumentError(f"unknown kernel kind {self.kind!r}")
        if self.kind == "rbf":
            if self.sigma is not None and self.sigma <= 0:
                raise ArgumentError("rbf sigma must be > 0")
            if self.gamma is not None and self.gamma <= 0:
                raise ArgumentError("rbf gamma must be > 0")
            if self.sigma is not None and self.gamma is not None:
                raise ArgumentError("specify rbf width as sigma or gamma, not both")
        if self.kind == "polynomial" and self.degree < 1:
            raise ArgumentError("polynomial degree must be >= 1")

    @property
    def rbf_rate(self) -> float:
        """The exponent rate gamma, whichever way the width was given."""
        if self.gamma is not None:
            return float(self.gamma)
        if self.sigma is None:
            raise ArgumentError("rbf width unresolved; fit resolves sigma=None first")
        return 0.5 / float(self.sigma) ** 2

    def resolved(self, sigma: float) -> "KernelSpec":
        return KernelSpec("rbf", sigma=float(sigma), degree=self.degree, coef0=self.coef0)


def _sq_dists(X: np.ndarray, Z: np.ndarray) -> np.ndarray:
    xx = np.einsum("ij,ij->i", X, X)
    zz = np.einsum("ij,ij->i", Z, Z)
    d = xx[:, None] + zz[None, :] - 2.0 * (X @ Z.T)
    np.maximum(d, 0.0, out=d)
    return d


def kernel_matrix(X: np.ndarray, Z: np.ndarray, kernel: KernelSpec) -> np.ndarray:
    """Cross-kernel matrix k(x_i, z_j) of shape (len(X), len(Z))."""
    X = np.asarray(X, dtype=np.float64)
    Z = np.asarray(Z, dtype=np.float64)
    if X.ndim != 2 or Z.ndim != 2 or X.shape[1] != Z.shape[1]:
        raise ArgumentError("kernel_matrix expects 2-D inputs with equal feature count")
    if kernel.kind == "linear":
        K = X @ Z.T
    elif kernel.kind == "polynomial":
        K = (X @ Z.T + kernel.coef0) ** kernel.degree
    else:
        K = np.exp(-kernel.rbf_rate * _sq_dists(X, Z))
    if not np.isfinite(K).all():
        raise NumericalError("kernel matrix contains non-finite entries")
    return K


def gram_matrix(X: np.ndarray, kernel: KernelSpec) -> np.ndarray:
    """Symmetric Gram matrix of the training set; rbf diagonal is exactly 1."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ArgumentError("gram_matrix expects an (N, d) matrix with N >= 2")
    K = kernel_matrix(X, X, kernel)
    K = 0.5 * (K + K.T)
    if kernel.kind == "rbf":
        np.fill_diagonal(K, 1.0)
    return K


def center_gram(K: np.ndarray) -> np.ndarray:
    """Double-center a Gram matrix so feature-space data has zero mean."""
    K = np.asarray(K, dtype=np.float64)
    row = K.mean(axis=1)
    grand = float(row.mean())
    return K - row[:, None] - row[None, :] + grand


def median_pairwise_sigma(X: np.ndarray) -> float:
    """Median of positive pairwise Euclidean distances (rbf width heuristic)."""
    X = np.asarray(X, dtype=np.float64)
    d2 = _sq_dists(X, X)
    iu = np.triu_indices(X.shape[0], k=1)
    d = np.sqrt(d2[iu])
    d = d[d > 0]
    if d.size == 0:
        raise DegenerateInputError("all training vectors identical; no distance scale")
    return float(np.median(d))


@dataclass(frozen=True)
class EigenlungModel:
    """Fitted kernel-PCA basis over a set of training patch vectors."""

    train_vectors: np.ndarray  # (N, d)
    kernel: KernelSpec
    alphas: np.ndarray  # (N, m), column j scaled so ||alpha_j|| = 1/sqrt(N*lambda_j)
    eigenvalues: np.ndarray  # (m,), descending, feature-space variances
    n_components: int
    variance_target: float
    train_row_means: np.ndarray  # (N,), row means of the uncentered Gram
    train_grand_mean: float

    @property
    def n_train(self) -> int:
        return self.train_vectors.shape[0]

    def project(self, x: np.ndarray) -> np.ndarray:
        """Nonlinear principal components of one vector or a batch."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        X = x[None, :] if single else x
        if X.shape[1] != self.train_vectors.shape[1]:
            raise ArgumentError(
                f"vector has {X.shape[1]} features, model expects {self.train_vectors.shape[1]}"
            )
        Kx = kernel_matrix(X, self.train_vectors, self.kernel)
        Kc = Kx - Kx.mean(axis=1, keepdims=True) - self.train_row_means[None, :] + self.train_grand_mean
        scores = Kc @ self.alphas
        return scores[0] if single else scores

    def to_dict(self, include_train_vectors: bool = True) -> dict:
        d = {
            "kernel": {
                "kind": self.kernel.kind,
                "sigma": self.kernel.sigma,
                "gamma": self.kernel.gamma,
                "degree": self.kernel.degree,
                "coef0": self.kernel.coef0,
            },
            "alphas": self.alphas.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "n_components": int(self.n_components),
            "variance_target": float(self.variance_target),
            "train_row_means": self.train_row_means.tolist(),
            "train_grand_mean": float(self.train_grand_mean),
        }
        if include_train_vectors:
            d["train_vectors"] = self.train_vectors.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict, train_vectors: np.ndarray | None = None) -> "EigenlungModel":
        if train_vectors is None:
            if "train_vectors" not in d:
                raise ArgumentError("model dict has no train_vectors; pass them explicitly")
            train_vectors = np.asarray(d["train_vectors"], dtype=np.float64)
        k = d["kernel"]
        kernel = KernelSpec(k["kind"], sigma=k["sigma"], gamma=k["gamma"],
                            degree=k["degree"], coef0=k["coef0"])
        return cls(
            train_vectors=np.asarray(train_vectors, dtype=np.float64),
            kernel=kernel,
            alphas=np.asarray(d["alphas"], dtype=np.float64),
            eigenvalues=np.asarray(d["eigenvalues"], dtype=np.float64),
            n_components=int(d["n_components"]),
            variance_target=float(d["variance_target"]),
            train_row_means=np.asarray(d["train_row_means"], dtype=np.float64),
            train_grand_mean=float(d["train_grand_mean"]),
        )


def fit_eigenlungs(
    X: np.ndarray,
    kernel: KernelSpec | None = None,
    variance_target: float = 0.90,
) -> EigenlungModel:
    """Fit the kernel-PCA basis retaining ``variance_target`` of the variance."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ArgumentError("fit_eigenlungs expects an (N, d) matrix with N >= 2")
    if not 0.0 < variance_target <= 1.0:
        raise ArgumentError(f"variance_target must be in (0, 1], got {variance_target}")
    kernel = kernel or KernelSpec("rbf")
    if kernel.kind == "rbf" and kernel.sigma is None and kernel.gamma is None:
        kernel = kernel.resolved(median_pairwise_sigma(X))
    K = gram_matrix(X, kernel)
    row_means = K.mean(axis=1)
    grand_mean = float(row_means.mean())
    Kc = center_gram(K)
    try:
        evals, evecs = np.linalg.eigh(Kc)
    except np.linalg.LinAlgError as exc:
        raise NumericalError(f"eigendecomposition failed: {exc}") from exc
    order = np.argsort(evals)[::-1]
    evals = evals[order]
    evecs = evecs[:, order]
    if evals[0] <= 0:
        raise DegenerateInputError("centered Gram has no positive eigenvalues")
    keep = evals > EIG_CUTOFF * evals[0]
    evals = evals[keep]
    evecs = evecs[:, keep]
    # retained-variance count: smallest m whose cumulative fraction meets the target
    frac = np.cumsum(evals) / evals.sum()
    m = int(np.searchsorted(frac, variance_target - 1e-12) + 1)
    m = min(m, evals.size)
    evals = evals[:m]
    alphas = evecs[:, :m] / np.sqrt(evals)[None, :]
    # deterministic sign: largest-magnitude entry of each column is non-negative
    flip = alphas[np.abs(alphas).argmax(axis=0), np.arange(m)] < 0
    alphas[:, flip] *= -1.0
    n = X.shape[0]
    return EigenlungModel(
        train_vectors=X.copy(),
        kernel=kernel,
        alphas=alphas,
        eigenvalues=evals / n,
        n_components=m,
        variance_target=float(variance_target),
        train_row_means=row_means,
        train_grand_mean=grand_mean,
    )


def project(model: EigenlungModel, x: np.ndarray) -> np.ndarray:
    return model.project(x)


def save_model(model: EigenlungModel, path, include_train_vectors: bool = True) -> None:
    Path(path).write_text(json.dumps(model.to_dict(include_train_vectors)))


def load_model(path, train_vectors: np.ndarray | None = None) -> EigenlungModel:
    return EigenlungModel.from_dict(json.loads(Path(path).read_text()), train_vectors)
