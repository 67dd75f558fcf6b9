"""Bootstrap uncertainty of calibrated-SVM posteriors.

One classifier's reliability for one test sample is estimated by repeatedly
retraining it on resamples of the training set (drawn with replacement,
sized to a fraction of the original) and recording the posterior assigned
to the test sample. The spread of that distribution - its population
variance - is the uncertainty u; consistent classifiers have u near 0, and
u is bounded by 0.25 for probabilities.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from math import ceil
from pathlib import Path

import numpy as np

from .errors import ArgumentError, ResampleError
from .kpca import KernelSpec, gram_matrix, kernel_matrix
from .seeding import spawn_rng
from .svm import TrainerConfig, class_weight_values, fit_platt, solve_smo

LABEL_POS = 1
LABEL_NEG = -1

_STRATIFY_RETRIES = 50


@dataclass(frozen=True)
class PatchPosterior:
    """Bootstrap posterior distribution for one classifier and test sample."""

    samples: np.ndarray  # K posteriors p_pos in [0, 1]
    mean_p: float
    u: float  # population variance of samples
    K: int
    predicted_label: int  # LABEL_POS iff mean_p >= 0.5

    @classmethod
    def from_samples(cls, samples: np.ndarray) -> "PatchPosterior":
        samples = np.asarray(samples, dtype=np.float64).reshape(-1)
        mean_p = float(samples.mean())
        return cls(
            samples=samples,
            mean_p=mean_p,
            u=population_variance(samples),
            K=samples.size,
            predicted_label=LABEL_POS if mean_p >= 0.5 else LABEL_NEG,
        )


def population_variance(samples: np.ndarray) -> float:
    """Variance with divisor K (not K-1) over the given samples."""
    samples = np.asarray(samples, dtype=np.float64).reshape(-1)
    if samples.size == 0:
        raise ArgumentError("variance of an empty sample set is undefined")
    mu = samples.mean()
    return float(np.mean((samples - mu) ** 2))


def _resample_indices(rng: np.random.Generator, y: np.ndarray, size: int) -> np.ndarray:
    """Draw with replacement, redrawing until both classes appear."""
    for _ in range(_STRATIFY_RETRIES):
        idx = rng.integers(0, y.size, size)
        sub = y[idx]
        if np.any(sub > 0) and np.any(sub < 0):
            return idx
    raise ResampleError(
        f"no resample of size {size} contained both classes after {_STRATIFY_RETRIES} draws"
    )


def bootstrap_posterior_gram(
    K_train: np.ndarray,
    k_test: np.ndarray,
    train_y: np.ndarray,
    trainer_config: TrainerConfig,
    K: int = 500,
    subsample_fraction: float = 0.8,
    rng_seed: int = 0,
    stream_key: tuple[int, ...] = (),
) -> PatchPosterior:
    """Bootstrap on precomputed kernel values.

    ``K_train`` is the full training Gram matrix and ``k_test`` the kernel
    row between training points and the test sample; resamples index into
    both, so no kernel evaluation happens inside the repeat loop. Repeat r
    consumes the RNG stream (``*stream_key``, r), making results
    independent of execution order.
    """
    y = np.asarray(train_y, dtype=np.float64).reshape(-1)
    if K < 2:
        raise ArgumentError("bootstrap needs at least 2 repeats")
    if not 0.0 < subsample_fraction <= 1.0:
        raise ArgumentError("subsample_fraction must be in (0, 1]")
    if np.all(y > 0) or np.all(y < 0):
        raise ArgumentError("training set must contain both classes")
    size = ceil(subsample_fraction * y.size)
    samples = np.empty(K)
    for r in range(K):
        rng = spawn_rng(rng_seed, *stream_key, r)
        idx = _resample_indices(rng, y, size)
        y_sub = y[idx]
        K_sub = K_train[np.ix_(idx, idx)]
        weights = class_weight_values(y_sub, trainer_config.class_weighting)
        box = trainer_config.C * np.where(y_sub > 0, weights[1], weights[0])
        alpha, bias, _ = solve_smo(
            K_sub, y_sub, box, trainer_config.kkt_tol, trainer_config.max_passes
        )
        coef = alpha * y_sub
        f_train = K_sub @ coef + bias
        sigmoid = fit_platt(f_train, y_sub)
        f_test = float(coef @ k_test[idx] + bias)
        samples[r] = sigmoid.posterior_pos(f_test)
    return PatchPosterior.from_samples(samples)


def bootstrap_posterior(
    train_X: np.ndarray,
    train_y: np.ndarray,
    test_x: np.ndarray,
    trainer_config: TrainerConfig | None = None,
    K: int = 500,
    subsample_fraction: float = 0.8,
    rng_seed: int = 0,
    kernel: KernelSpec | None = None,
) -> PatchPosterior:
    """Bootstrap posterior distribution of one test sample."""
    trainer_config = trainer_config or TrainerConfig()
    train_X = np.asarray(train_X, dtype=np.float64)
    test_x = np.asarray(test_x, dtype=np.float64).reshape(1, -1)
    if train_X.ndim != 2 or train_X.shape[1] != test_x.shape[1]:
        raise ArgumentError("test vector dimensionality does not match training matrix")
    kernel = kernel or KernelSpec("rbf", gamma=trainer_config.gamma)
    K_train = gram_matrix(train_X, kernel)
    k_test = kernel_matrix(train_X, test_x, kernel)[:, 0]
    return bootstrap_posterior_gram(
        K_train, k_test, train_y, trainer_config, K, subsample_fraction, rng_seed
    )


def export_posteriors_csv(posteriors: dict[int, PatchPosterior], path) -> None:
    """Audit dump: one row per (patch, repeat) with the recorded posterior."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["patch_id", "repeat", "p_pos"])
        for patch_id in sorted(posteriors):
            for r, p in enumerate(posteriors[patch_id].samples):
                writer.writerow([patch_id, r, repr(float(p))])
