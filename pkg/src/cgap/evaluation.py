"""Downstream evaluation of frozen embeddings: Lasso regression and clustering."""
from __future__ import annotations

from dataclasses import dataclass, field

import numba
import numpy as np

from .data import DownstreamLabels

TASKS = ("crime", "checkin")


def soft_threshold(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


@numba.njit(cache=True)
def _coordinate_descent(Xs, r, beta, active, col_sq, lam, tol, max_sweeps):
    n = Xs.shape[0]
    sweeps = 0
    for sweeps in range(1, max_sweeps + 1):
        max_delta = 0.0
        for j in active:
            old = beta[j]
            rho = 0.0
            for i in range(n):
                rho += Xs[i, j] * r[i]
            rho = rho / n + col_sq[j] * old
            if rho > lam:
                new = (rho - lam) / col_sq[j]
            elif rho < -lam:
                new = (rho + lam) / col_sq[j]
            else:
                new = 0.0
            if new != old:
                for i in range(n):
                    r[i] -= Xs[i, j] * (new - old)
                beta[j] = new
                max_delta = max(max_delta, abs(new - old))
        if max_delta < tol:
            break
    return sweeps


@dataclass
class LassoModel:
    coef: np.ndarray  # in the original feature scale
    intercept: float
    beta: np.ndarray  # in the standardized scale
    mean: np.ndarray
    scale: np.ndarray
    n_sweeps: int

    def predict(self, X) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.coef + self.intercept


def lasso_fit(X, y, lam: float, standardize: bool = True, fit_intercept: bool = True,
              tol: float = 1e-8, max_sweeps: int = 10_000) -> LassoModel:
    """Cyclic coordinate descent for (1/2n)||y - Xb - c||^2 + lam * ||b||_1.

    With ``standardize`` the columns are centred and scaled to unit variance
    first (constant columns are dropped, i.e. get coefficient 0). Stops when
    the largest coefficient change in a sweep is below ``tol``.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or y.shape != (X.shape[0],):
        raise ValueError(f"X {X.shape} and y {y.shape} do not match")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("lasso_fit: non-finite inputs")
    n, p = X.shape
    if n < 2:
        raise ValueError("lasso_fit needs at least 2 samples")

    mean = X.mean(axis=0) if (standardize or fit_intercept) else np.zeros(p)
    scale = X.std(axis=0) if standardize else np.ones(p)
    keep = scale > 1e-12
    scale = np.where(keep, scale, 1.0)
    Xs = (X - mean) / scale
    Xs[:, ~keep] = 0.0
    y_mean = y.mean() if fit_intercept else 0.0
    yc = y - y_mean

    col_sq = (Xs * Xs).sum(axis=0) / n
    beta = np.zeros(p)
    r = yc.copy()
    sweeps = _coordinate_descent(np.ascontiguousarray(Xs), r, beta, np.flatnonzero(keep),
                                 col_sq, float(lam), float(tol), int(max_sweeps))

    coef = beta / scale
    intercept = y_mean - mean @ coef if fit_intercept else 0.0
    return LassoModel(coef, float(intercept), beta, mean, scale, sweeps)


@dataclass
class RegressionReport:
    mae: float
    rmse: float
    r2: float
    folds: list[dict] = field(default_factory=list)
    task: str | None = None

    def as_dict(self):
        return {"task": self.task, "mae": self.mae, "rmse": self.rmse, "r2": self.r2, "folds": self.folds}


def regression_metrics(y_true, y_pred) -> RegressionReport:
    y_true = np.asarray(y_true, dtype=np.float64)
    y_pred = np.asarray(y_pred, dtype=np.float64)
    if y_true.shape != y_pred.shape or y_true.ndim != 1 or len(y_true) < 2:
        raise ValueError("need two equal-length vectors of at least 2 values")
    err = y_true - y_pred
    sst = ((y_true - y_true.mean()) ** 2).sum()
    if sst == 0:
        raise ValueError("R^2 undefined: y_true has zero variance")
    return RegressionReport(
        mae=float(np.abs(err).mean()),
        rmse=float(np.sqrt((err ** 2).mean())),
        r2=float(1.0 - (err ** 2).sum() / sst),
    )


def kfold_indices(n: int, folds: int, seed: int) -> list[np.ndarray]:
    perm = np.random.default_rng(seed).permutation(n)
    return np.array_split(perm, folds)


def evaluate_regression_task(embeddings, labels: DownstreamLabels | np.ndarray, task: str = "crime",
                             lam: float = 0.01, folds: int = 5, seed: int = 0) -> RegressionReport:
    """K-fold cross-validated Lasso on frozen embeddings; metrics averaged over folds.

    ``labels`` may be a :class:`DownstreamLabels` (``task`` selects the column)
    or a target vector directly.
    """
    X = np.asarray(embeddings, dtype=np.float64)
    if isinstance(labels, DownstreamLabels):
        if task not in TASKS:
            raise ValueError(f"unknown regression task {task!r}")
        y = getattr(labels, task)
    else:
        y = np.asarray(labels, dtype=np.float64)
    n = X.shape[0]
    if len(y) != n:
        raise ValueError("labels and embeddings disagree on region count")
    if n < folds or folds < 2:
        raise ValueError(f"cannot run {folds}-fold CV on {n} regions")
    per_fold = []
    for test in kfold_indices(n, folds, seed):
        train = np.setdiff1d(np.arange(n), test)
        model = lasso_fit(X[train], y[train], lam)
        rep = regression_metrics(y[test], model.predict(X[test]))
        per_fold.append({"mae": rep.mae, "rmse": rep.rmse, "r2": rep.r2})
    return RegressionReport(
        mae=float(np.mean([f["mae"] for f in per_fold])),
        rmse=float(np.mean([f["rmse"] for f in per_fold])),
        r2=float(np.mean([f["r2"] for f in per_fold])),
        folds=per_fold,
        task=task,
    )


@dataclass
class KMeansResult:
    labels: np.ndarray
    centers: np.ndarray
    inertia_history: list[float]

    @property
    def inertia(self) -> float:
        return self.inertia_history[-1]


def _sq_dists(X, C):
    return ((X[:, None, :] - C[None, :, :]) ** 2).sum(axis=-1)


def kmeans_cluster(X, k: int, seed: int = 0, max_iter: int = 300) -> KMeansResult:
    """Lloyd's algorithm from a seeded k-means++ start."""
    X = np.asarray(X, dtype=np.float64)
    n = X.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise ValueError(f"k={k} exceeds the {n} points")
    rng = np.random.default_rng(seed)
    centers = [X[rng.integers(n)]]
    for _ in range(1, k):
        d2 = _sq_dists(X, np.array(centers)).min(axis=1)
        total = d2.sum()
        # all remaining points coincide with a centre: take any unused index
        idx = rng.choice(n, p=d2 / total) if total > 0 else rng.integers(n)
        centers.append(X[idx])
    centers = np.array(centers)

    labels = _sq_dists(X, centers).argmin(axis=1)
    history = [float(_sq_dists(X, centers)[np.arange(n), labels].sum())]
    for _ in range(max_iter):
        for c in range(k):
            members = labels == c
            if members.any():
                centers[c] = X[members].mean(axis=0)
        d2 = _sq_dists(X, centers)
        new_labels = d2.argmin(axis=1)
        # keep the current label on ties so the loop settles
        keep = d2[np.arange(n), labels] <= d2[np.arange(n), new_labels]
        new_labels = np.where(keep, labels, new_labels)
        history.append(float(d2[np.arange(n), new_labels].sum()))
        if np.array_equal(new_labels, labels):
            break
        labels = new_labels
    return KMeansResult(labels, centers, history)


@dataclass
class ClusteringReport:
    nmi: float
    ari: float
    assignment: np.ndarray | None = None

    def as_dict(self):
        return {"task": "landuse", "nmi": self.nmi, "ari": self.ari}


def contingency(a, b) -> np.ndarray:
    _, ai = np.unique(np.asarray(a), return_inverse=True)
    _, bi = np.unique(np.asarray(b), return_inverse=True)
    table = np.zeros((ai.max() + 1, bi.max() + 1))
    np.add.at(table, (ai, bi), 1)
    return table


def _entropy(counts):
    p = counts[counts > 0] / counts.sum()
    return float(-(p * np.log(p)).sum())


def normalized_mutual_info(a, b) -> float:
    """I(U;V) / sqrt(H(U) H(V)); 0 when either partition has zero entropy."""
    t = contingency(a, b)
    n = t.sum()
    hu, hv = _entropy(t.sum(axis=1)), _entropy(t.sum(axis=0))
    if hu == 0 or hv == 0:
        return 0.0
    pij = t / n
    outer = np.outer(t.sum(axis=1), t.sum(axis=0)) / n ** 2
    nz = pij > 0
    mi = float((pij[nz] * np.log(pij[nz] / outer[nz])).sum())
    return min(1.0, max(0.0, mi / np.sqrt(hu * hv)))


def _comb2(x):
    return x * (x - 1) / 2.0


def adjusted_rand_index(a, b) -> float:
    t = contingency(a, b)
    n = t.sum()
    total = _comb2(n)
    sum_ij = _comb2(t).sum()
    sum_a = _comb2(t.sum(axis=1)).sum()
    sum_b = _comb2(t.sum(axis=0)).sum()
    if total == 0:
        return 1.0
    expected = sum_a * sum_b / total
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        # both partitions trivial in the same way (one block, or all singletons)
        return 1.0
    return float((sum_ij - expected) / (max_index - expected))


def clustering_metrics(pred, truth) -> ClusteringReport:
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.shape != truth.shape:
        raise ValueError("assignments differ in length")
    return ClusteringReport(normalized_mutual_info(pred, truth), adjusted_rand_index(pred, truth), pred)


def evaluate_landuse(embeddings, labels: DownstreamLabels, seed: int = 0) -> ClusteringReport:
    """k-means with k = number of land-use classes, scored against the classes."""
    k = int(labels.landuse.max()) + 1
    result = kmeans_cluster(embeddings, k, seed)
    return clustering_metrics(result.labels, labels.landuse)
