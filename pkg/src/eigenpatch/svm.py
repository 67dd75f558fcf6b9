"""Class-weighted soft-margin kernel SVM with probabilistic outputs.

The dual problem is solved by sequential minimal optimization with
second-order working-set selection on a precomputed kernel matrix.
Per-class box constraints implement class weighting: sample i is bounded by
C * w(y_i), and "balanced" weighting sets w_c = n / (2 n_c) so the minority
class carries proportionally more penalty.

Decision values are mapped to posteriors by a two-parameter sigmoid
p(y=1 | f) = 1 / (1 + exp(A f + B)) fitted by Newton iteration on the
cross-entropy of smoothed targets (Platt scaling).
"""

from __future__ import annotations

from dataclasses import dataclass
from itertools import product

import numpy as np
from scipy.special import expit

from .errors import ArgumentError, ConvergenceError, NumericalError, StratificationError
from .kpca import KernelSpec, gram_matrix, kernel_matrix

_SV_EPS = 1e-12  # alphas at or below this are treated as inactive


@dataclass(frozen=True)
class TrainerConfig:
    """Hyperparameters for one calibrated-SVM training run."""

    C: float = 1.0
    gamma: float = 3.0
    class_weighting: str | tuple[float, float] = "balanced"
    kkt_tol: float = 1e-3
    max_passes: int = 100_000


@dataclass(frozen=True)
class SvmModel:
    support_vectors: np.ndarray  # (n_sv, m)
    dual_coefs: np.ndarray  # alpha_i * y_i per support vector
    bias: float
    kernel: KernelSpec
    class_weights: tuple[float, float]  # (w_neg, w_pos)

    def decision(self, x: np.ndarray) -> np.ndarray | float:
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        X = x[None, :] if single else x
        if X.shape[1] != self.support_vectors.shape[1]:
            raise ArgumentError(
                f"input has {X.shape[1]} features, model expects {self.support_vectors.shape[1]}"
            )
        f = kernel_matrix(X, self.support_vectors, self.kernel) @ self.dual_coefs + self.bias
        return float(f[0]) if single else f

    def to_dict(self) -> dict:
        return {
            "support_vectors": self.support_vectors.tolist(),
            "dual_coefs": self.dual_coefs.tolist(),
            "bias": float(self.bias),
            "kernel": {
                "kind": self.kernel.kind,
                "sigma": self.kernel.sigma,
                "gamma": self.kernel.gamma,
                "degree": self.kernel.degree,
                "coef0": self.kernel.coef0,
            },
            "class_weights": list(self.class_weights),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SvmModel":
        k = d["kernel"]
        return cls(
            support_vectors=np.asarray(d["support_vectors"], dtype=np.float64),
            dual_coefs=np.asarray(d["dual_coefs"], dtype=np.float64),
            bias=float(d["bias"]),
            kernel=KernelSpec(k["kind"], sigma=k["sigma"], gamma=k["gamma"],
                              degree=k["degree"], coef0=k["coef0"]),
            class_weights=tuple(d["class_weights"]),
        )


@dataclass(frozen=True)
class PlattSigmoid:
    A: float
    B: float

    def posterior_pos(self, f) -> np.ndarray | float:
        p = expit(-(self.A * np.asarray(f, dtype=np.float64) + self.B))
        return float(p) if np.isscalar(f) or np.ndim(f) == 0 else p


@dataclass(frozen=True)
class CalibratedSvm:
    svm: SvmModel
    sigmoid: PlattSigmoid

    def to_dict(self) -> dict:
        return {"svm": self.svm.to_dict(), "platt": {"A": self.sigmoid.A, "B": self.sigmoid.B}}

    @classmethod
    def from_dict(cls, d: dict) -> "CalibratedSvm":
        return cls(SvmModel.from_dict(d["svm"]),
                   PlattSigmoid(float(d["platt"]["A"]), float(d["platt"]["B"])))


def _check_labels(y: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if not np.all(np.isin(y, (-1.0, 1.0))):
        raise ArgumentError("labels must be -1 or +1")
    if np.all(y > 0) or np.all(y < 0):
        raise ArgumentError("both classes must be present")
    return y


def class_weight_values(y: np.ndarray, class_weighting) -> tuple[float, float]:
    """Resolve the (w_neg, w_pos) pair for "balanced" or explicit weighting."""
    if class_weighting == "balanced":
        n = y.size
        n_pos = int(np.sum(y > 0))
        n_neg = n - n_pos
        return (n / (2.0 * n_neg), n / (2.0 * n_pos))
    w_neg, w_pos = class_weighting
    if w_neg <= 0 or w_pos <= 0:
        raise ArgumentError("class weights must be positive")
    return (float(w_neg), float(w_pos))


def solve_smo(
    K: np.ndarray,
    y: np.ndarray,
    box: np.ndarray,
    kkt_tol: float = 1e-3,
    max_passes: int = 100_000,
    record_objective: bool = False,
) -> tuple[np.ndarray, float, list[float] | None]:
    """SMO on a precomputed kernel matrix with per-sample box constraints.

    Returns (alpha, bias, objective_history). The dual objective is
    non-decreasing across iterations; the final maximal violating-pair gap
    is at most ``kkt_tol``, which bounds every sample's margin-form KKT
    violation by ``kkt_tol / 2``.
    """
    n = y.size
    alpha = np.zeros(n)
    g = -np.ones(n)  # gradient of the (minimization-form) dual at alpha
    diag = np.ascontiguousarray(np.diag(K))
    pos = y > 0
    history: list[float] | None = [] if record_objective else None
    if record_objective:
        history.append(0.5 * (alpha.sum() - alpha @ g))
    for _ in range(max_passes):
        v = -y * g
        up = np.where(pos, alpha < box, alpha > 0)
        low = np.where(pos, alpha > 0, alpha < box)
        if not up.any() or not low.any():
            break
        i = int(np.argmax(np.where(up, v, -np.inf)))
        m_up = v[i]
        M_low = float(np.min(np.where(low, v, np.inf)))
        if m_up - M_low <= kkt_tol:
            break
        # second-order choice of j: largest guaranteed objective decrease
        diff = m_up - v
        cand = low & (diff > 0)
        quad = np.maximum(diag[i] + diag - 2.0 * K[i], 1e-12)
        gain = np.where(cand, diff * diff / quad, -np.inf)
        j = int(np.argmax(gain))
        delta = diff[j] / quad[j]
        # joint box clipping along the feasible pair direction
        if y[i] > 0:
            delta = min(delta, box[i] - alpha[i])
        else:
            delta = min(delta, alpha[i])
        if y[j] > 0:
            delta = min(delta, alpha[j])
        else:
            delta = min(delta, box[j] - alpha[j])
        alpha[i] += y[i] * delta
        alpha[j] -= y[j] * delta
        g += delta * y * (K[i] - K[j])
        if record_objective:
            history.append(0.5 * (alpha.sum() - alpha @ g))
    else:
        raise ConvergenceError(f"SMO did not satisfy tolerance within {max_passes} passes")
    v = -y * g
    up = np.where(pos, alpha < box, alpha > 0)
    low = np.where(pos, alpha > 0, alpha < box)
    lo_b = float(np.max(np.where(up, v, -np.inf))) if up.any() else -np.inf
    hi_b = float(np.min(np.where(low, v, np.inf))) if low.any() else np.inf
    if np.isinf(lo_b):
        bias = hi_b
    elif np.isinf(hi_b):
        bias = lo_b
    else:
        bias = 0.5 * (lo_b + hi_b)
    return alpha, float(bias), history


def train_svm(
    X: np.ndarray,
    y: np.ndarray,
    C: float = 1.0,
    gamma: float = 3.0,
    class_weighting="balanced",
    kkt_tol: float = 1e-3,
    max_passes: int = 100_000,
    kernel: KernelSpec | None = None,
    record_objective: bool = False,
) -> SvmModel:
    """Train a kernel SVM; ``kernel`` overrides the default rbf(gamma)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ArgumentError("train_svm expects an (n, m) matrix with n >= 2")
    y = _check_labels(y)
    if y.size != X.shape[0]:
        raise ArgumentError("label count does not match sample count")
    if C <= 0:
        raise ArgumentError("C must be > 0")
    kernel = kernel or KernelSpec("rbf", gamma=float(gamma))
    weights = class_weight_values(y, class_weighting)
    box = C * np.where(y > 0, weights[1], weights[0])
    K = gram_matrix(X, kernel)
    alpha, bias, history = solve_smo(K, y, box, kkt_tol, max_passes, record_objective)
    sv = alpha > _SV_EPS
    model = SvmModel(
        support_vectors=X[sv].copy(),
        dual_coefs=(alpha * y)[sv],
        bias=bias,
        kernel=kernel,
        class_weights=weights,
    )
    if record_objective:
        object.__setattr__(model, "objective_history", history)
    return model


def decision_value(model: SvmModel, x: np.ndarray) -> float:
    """Uncalibrated margin f(x) of a single input vector."""
    return model.decision(np.asarray(x, dtype=np.float64).reshape(-1))


def _nll(z: np.ndarray, t: np.ndarray) -> float:
    # sum over samples of log(1 + e^z) - (1 - t) z, evaluated stably
    return float(np.sum(np.logaddexp(0.0, z) - (1.0 - t) * z))


def fit_platt(f_vals: np.ndarray, y: np.ndarray, max_newton_iters: int = 100) -> PlattSigmoid:
    """Fit the posterior sigmoid by Newton descent with backtracking.

    Targets are the smoothed values (N+ + 1)/(N+ + 2) and 1/(N- + 2) rather
    than hard 0/1, which keeps the optimum finite on separable data.
    """
    f = np.asarray(f_vals, dtype=np.float64).reshape(-1)
    y = _check_labels(y)
    if f.size != y.size:
        raise ArgumentError("decision values and labels differ in length")
    n_pos = int(np.sum(y > 0))
    n_neg = y.size - n_pos
    t = np.where(y > 0, (n_pos + 1.0) / (n_pos + 2.0), 1.0 / (n_neg + 2.0))
    A = 0.0
    B = float(np.log((n_neg + 1.0) / (n_pos + 1.0)))
    z = A * f + B
    nll = _nll(z, t)
    if not np.isfinite(nll):
        raise NumericalError("non-finite negative log-likelihood")
    for _ in range(max_newton_iters):
        p = expit(-z)
        d = t - p  # dNLL/dz
        grad = np.array([np.sum(f * d), np.sum(d)])
        if np.linalg.norm(grad) < 1e-8:
            break
        w = p * (1.0 - p)
        h11 = np.sum(f * f * w) + 1e-12
        h22 = np.sum(w) + 1e-12
        h12 = np.sum(f * w)
        det = h11 * h22 - h12 * h12
        if det <= 0 or not np.isfinite(det):
            break
        dA = -(h22 * grad[0] - h12 * grad[1]) / det
        dB = -(h11 * grad[1] - h12 * grad[0]) / det
        step = 1.0
        accepted = False
        slope = grad[0] * dA + grad[1] * dB
        for _ in range(25):
            A_new = A + step * dA
            B_new = B + step * dB
            z_new = A_new * f + B_new
            nll_new = _nll(z_new, t)
            if not np.isfinite(nll_new):
                raise NumericalError("non-finite negative log-likelihood")
            if nll_new <= nll + 1e-4 * step * slope:
                A, B, z, nll = A_new, B_new, z_new, nll_new
                accepted = True
                break
            step *= 0.5
        if not accepted:
            break
    return PlattSigmoid(float(A), float(B))


def posterior(cal: CalibratedSvm, x: np.ndarray) -> tuple[float, float]:
    """Class posterior pair (p_neg, p_pos) for one input vector."""
    f = decision_value(cal.svm, x)
    p_pos = float(cal.sigmoid.posterior_pos(f))
    return (1.0 - p_pos, p_pos)


def fit_calibrated(
    X: np.ndarray,
    y: np.ndarray,
    C: float = 1.0,
    gamma: float = 3.0,
    class_weighting="balanced",
    kkt_tol: float = 1e-3,
    kernel: KernelSpec | None = None,
) -> CalibratedSvm:
    """Train the SVM and calibrate the sigmoid on its own training margins."""
    model = train_svm(X, y, C=C, gamma=gamma, class_weighting=class_weighting,
                      kkt_tol=kkt_tol, kernel=kernel)
    f = model.decision(np.asarray(X, dtype=np.float64))
    sigmoid = fit_platt(f, y)
    return CalibratedSvm(model, sigmoid)


DEFAULT_GAMMAS = (0.1, 0.3, 1.0, 3.0, 10.0)
DEFAULT_CS = (0.1, 1.0, 10.0)


def _stratified_folds(y: np.ndarray, folds: int) -> np.ndarray:
    assignment = np.empty(y.size, dtype=int)
    for cls in (-1.0, 1.0):
        idx = np.flatnonzero(y == cls)
        assignment[idx] = np.arange(idx.size) % folds
    return assignment


def grid_search(
    X: np.ndarray,
    y: np.ndarray,
    gammas=DEFAULT_GAMMAS,
    Cs=DEFAULT_CS,
    folds: int = 5,
    class_weighting="balanced",
    kkt_tol: float = 1e-3,
) -> tuple[float, float, list[dict]]:
    """Pick (gamma, C) maximizing mean balanced accuracy over stratified folds.

    Ties prefer the smaller C, then the smaller gamma. Returns the winning
    pair and the full table of per-fold results.
    """
    X = np.asarray(X, dtype=np.float64)
    y = _check_labels(y)
    if folds < 2:
        raise ArgumentError("folds must be >= 2")
    n_pos = int(np.sum(y > 0))
    n_neg = y.size - n_pos
    if min(n_pos, n_neg) < folds:
        raise StratificationError(
            f"cannot stratify {folds} folds with class counts ({n_neg}, {n_pos})"
        )
    assignment = _stratified_folds(y, folds)
    table: list[dict] = []
    means: dict[tuple[float, float], float] = {}
    for gamma, C in product(gammas, Cs):
        accs = []
        for k in range(folds):
            test = assignment == k
            train = ~test
            if np.all(y[train] > 0) or np.all(y[train] < 0):
                raise StratificationError(f"fold {k} leaves a single-class training set")
            model = train_svm(X[train], y[train], C=C, gamma=gamma,
                              class_weighting=class_weighting, kkt_tol=kkt_tol)
            pred = np.sign(model.decision(X[test]))
            pred[pred == 0] = -1.0
            yt = y[test]
            sens = np.mean(pred[yt > 0] > 0) if np.any(yt > 0) else np.nan
            spec = np.mean(pred[yt < 0] < 0) if np.any(yt < 0) else np.nan
            acc = 0.5 * (sens + spec)
            accs.append(acc)
            table.append({"gamma": gamma, "C": C, "fold": k, "balanced_accuracy": float(acc)})
        means[(gamma, C)] = float(np.mean(accs))
    best = min(means, key=lambda gc: (-means[gc], gc[1], gc[0]))
    return best[0], best[1], table
