"""Diagonal-covariance Gaussian mixtures: density, posteriors, EM and LLR.

The same :class:`Gmm` type serves as universal background model for the
i-vector front end and as per-class model for the back end.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import container
from .errors import DimensionError, InvalidConfigError, InvalidInputError

log = logging.getLogger(__name__)

LOG_2PI = np.log(2.0 * np.pi)
# rows per E-step block; bounds the (rows x K) work matrices for 2048-component UBMs
CHUNK_ROWS = 4096


@container.register("Gmm")
@dataclass
class Gmm:
    weights: np.ndarray  # (K,)
    means: np.ndarray  # (K, D)
    variances: np.ndarray  # (K, D)
    # training diagnostics; not serialized and ignored by ==
    trace: tuple = field(default=(), compare=False, repr=False)
    resets: int = field(default=0, compare=False, repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        self.means = np.atleast_2d(np.asarray(self.means, dtype=np.float64))
        self.variances = np.atleast_2d(np.asarray(self.variances, dtype=np.float64))
        K, D = self.means.shape
        if self.weights.shape != (K,) or self.variances.shape != (K, D):
            raise DimensionError(
                f"inconsistent GMM shapes: weights {self.weights.shape}, "
                f"means {self.means.shape}, variances {self.variances.shape}"
            )
        if np.any(self.variances <= 0):
            raise InvalidInputError("GMM variances must be positive")

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def __eq__(self, other):
        if not isinstance(other, Gmm):
            return NotImplemented
        return (
            np.array_equal(self.weights, other.weights)
            and np.array_equal(self.means, other.means)
            and np.array_equal(self.variances, other.variances)
        )

    def _to_payload(self):
        return {"K": self.n_components, "D": self.dim}, {
            "weights": self.weights,
            "means": self.means,
            "variances": self.variances,
        }

    @classmethod
    def _from_payload(cls, meta, arrays):
        return cls(arrays["weights"], arrays["means"], arrays["variances"])


def _as_rows(model: Gmm, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != model.dim:
        raise DimensionError(f"expected {model.dim}-dimensional input, got shape {x.shape}")
    return X, single


def weighted_log_densities(model: Gmm, X: np.ndarray) -> np.ndarray:
    """``log(w_k) + log N(x_t | mu_k, diag var_k)`` as a (T, K) array."""
    prec = 1.0 / model.variances
    const = np.log(model.weights) - 0.5 * (
        model.dim * LOG_2PI + np.sum(np.log(model.variances), axis=1) + np.sum(model.means**2 * prec, axis=1)
    )
    quad = (X**2) @ prec.T - 2.0 * X @ (model.means * prec).T
    with np.errstate(divide="ignore"):
        return const[None, :] - 0.5 * quad


def gmm_log_pdf(model: Gmm, x):
    """Log mixture density; scalar for one vector, (T,) array for a matrix."""
    X, single = _as_rows(model, x)
    out = logsumexp(weighted_log_densities(model, X), axis=1)
    return float(out[0]) if single else out


def posteriors(model: Gmm, x) -> np.ndarray:
    """Component responsibilities; (K,) for one vector, (T, K) for a matrix."""
    X, single = _as_rows(model, x)
    lw = weighted_log_densities(model, X)
    post = np.exp(lw - logsumexp(lw, axis=1, keepdims=True))
    return post[0] if single else post


def llr_score(normal: Gmm, abnormal: Gmm, x):
    """Log-likelihood ratio, positive when ``x`` looks normal."""
    if normal.dim != abnormal.dim:
        raise DimensionError(f"class models disagree on dimension ({normal.dim} vs {abnormal.dim})")
    return gmm_log_pdf(normal, x) - gmm_log_pdf(abnormal, x)


def _kmeans_pp(X, K, rng):
    T = X.shape[0]
    centers = np.empty((K, X.shape[1]))
    centers[0] = X[rng.integers(T)]
    d2 = np.sum((X - centers[0]) ** 2, axis=1)
    for k in range(1, K):
        total = d2.sum()
        idx = rng.choice(T, p=d2 / total) if total > 0 else rng.integers(T)
        centers[k] = X[idx]
        d2 = np.minimum(d2, np.sum((X - centers[k]) ** 2, axis=1))
    return centers


def _nearest(X, centers):
    labels = np.empty(X.shape[0], dtype=np.intp)
    c2 = np.sum(centers**2, axis=1)
    for s in range(0, X.shape[0], CHUNK_ROWS):
        blk = X[s : s + CHUNK_ROWS]
        labels[s : s + CHUNK_ROWS] = np.argmin(c2[None, :] - 2.0 * blk @ centers.T, axis=1)
    return labels


def _initial_model(X, K, rng, floor, kmeans_steps):
    centers = _kmeans_pp(X, K, rng)
    for _ in range(kmeans_steps):
        labels = _nearest(X, centers)
        for k in range(K):
            members = X[labels == k]
            if len(members):
                centers[k] = members.mean(axis=0)
    labels = _nearest(X, centers)
    counts = np.bincount(labels, minlength=K).astype(np.float64)
    global_var = X.var(axis=0)
    variances = np.empty_like(centers)
    for k in range(K):
        members = X[labels == k]
        variances[k] = members.var(axis=0) if len(members) > 1 else global_var
    counts = np.maximum(counts, 1.0)
    return counts / counts.sum(), centers, np.maximum(variances, floor)


def _e_step(model: Gmm, X):
    """Soft counts, first and raw second moments, and the total log-likelihood."""
    K, D = model.means.shape
    Nk = np.zeros(K)
    Sx = np.zeros((K, D))
    Sxx = np.zeros((K, D))
    total = 0.0
    for s in range(0, X.shape[0], CHUNK_ROWS):
        blk = X[s : s + CHUNK_ROWS]
        lw = weighted_log_densities(model, blk)
        ll = logsumexp(lw, axis=1)
        resp = np.exp(lw - ll[:, None])
        total += ll.sum()
        Nk += resp.sum(axis=0)
        Sx += resp.T @ blk
        Sxx += resp.T @ (blk**2)
    return Nk, Sx, Sxx, total


def em_fit(
    data,
    n_components: int,
    iterations: int = 20,
    seed: int = 0,
    variance_floor: float | None = None,
    kmeans_steps: int = 5,
) -> Gmm:
    """Fit a diagonal GMM by EM.

    Parameters
    ----------
    data : (T, D) array
    n_components : number of mixture components K (K <= T)
    iterations : number of EM iterations
    seed : seeds k-means++ initialisation and degenerate-component resets
    variance_floor : absolute floor on every variance; defaults to
        ``1e-4`` times the global per-dimension data variance

    Returns
    -------
    Gmm
        ``model.trace`` holds the average per-frame log-likelihood before
        each M-step plus one final value after the last update.
        ``model.resets`` counts degenerate components that were re-seeded.
    """
    X = np.asarray(data, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2 or X.shape[0] == 0:
        raise InvalidInputError("em_fit expects a non-empty (T, D) matrix")
    if not np.all(np.isfinite(X)):
        raise InvalidInputError("em_fit data contains non-finite values")
    T, D = X.shape
    K = int(n_components)
    if K < 1 or K > T:
        raise InvalidConfigError(f"cannot fit {K} components to {T} points")

    global_var = X.var(axis=0)
    if variance_floor is None:
        floor = 1e-4 * global_var
    else:
        floor = np.full(D, float(variance_floor))
    # an all-constant dimension would otherwise give zero variance
    floor = np.where(floor > 0, floor, 1e-10)

    # work on globally centred data: keeps E[x^2] - mu^2 free of large offsets
    offset = X.mean(axis=0)
    X = X - offset
    rng = np.random.default_rng(seed)
    if K == 1:
        weights, means, variances = np.ones(1), np.zeros((1, D)), np.maximum(global_var, floor)[None, :]
    else:
        weights, means, variances = _initial_model(X, K, rng, floor, kmeans_steps)
    model = Gmm(weights, means, variances)

    trace = []
    resets = 0
    for it in range(iterations):
        Nk, Sx, Sxx, total = _e_step(model, X)
        trace.append(total / T)
        dead = Nk < 1e-8 * T
        live = ~dead
        new_means = model.means.copy()
        new_means[live] = Sx[live] / Nk[live, None]
        new_vars = model.variances.copy()
        new_vars[live] = Sxx[live] / Nk[live, None] - new_means[live] ** 2
        new_weights = Nk / T
        if np.any(dead):
            for k in np.flatnonzero(dead):
                new_means[k] = X[rng.integers(T)]
                new_vars[k] = global_var
                new_weights[k] = 1.0 / T
                resets += 1
            log.warning("EM iteration %d: re-seeded %d degenerate component(s)", it, int(dead.sum()))
            new_weights /= new_weights.sum()
        model = Gmm(new_weights, new_means, np.maximum(new_vars, floor))

    if iterations:
        trace.append(float(np.sum(gmm_log_pdf(model, X))) / T)
    model = Gmm(model.weights, model.means + offset, model.variances)
    model.trace = tuple(trace)
    model.resets = resets
    return model


def train_class_gmms(
    normal_vecs, abnormal_vecs, n_components: int = 128, iterations: int = 20, seed: int = 0
) -> tuple[Gmm, Gmm]:
    normal_vecs = np.atleast_2d(np.asarray(normal_vecs, dtype=np.float64))
    abnormal_vecs = np.atleast_2d(np.asarray(abnormal_vecs, dtype=np.float64))
    if normal_vecs.size == 0 or abnormal_vecs.size == 0:
        raise InvalidInputError("both classes need at least one training vector")
    if normal_vecs.shape[1] != abnormal_vecs.shape[1]:
        raise DimensionError("normal and abnormal vectors differ in dimension")
    normal = em_fit(normal_vecs, n_components, iterations, seed)
    abnormal = em_fit(abnormal_vecs, n_components, iterations, seed)
    return normal, abnormal


@container.register("GmmPair")
@dataclass
class GmmPair:
    """Normal/abnormal class models stored together as one back end."""

    normal: Gmm
    abnormal: Gmm

    @property
    def dim(self) -> int:
        return self.normal.dim

    def score(self, X) -> np.ndarray:
        return np.atleast_1d(llr_score(self.normal, self.abnormal, X))

    def _to_payload(self):
        meta = {"K_normal": self.normal.n_components, "K_abnormal": self.abnormal.n_components, "D": self.dim}
        arrays = {}
        for tag, g in (("normal", self.normal), ("abnormal", self.abnormal)):
            arrays[f"{tag}_weights"] = g.weights
            arrays[f"{tag}_means"] = g.means
            arrays[f"{tag}_variances"] = g.variances
        return meta, arrays

    @classmethod
    def _from_payload(cls, meta, arrays):
        def get(tag):
            return Gmm(arrays[f"{tag}_weights"], arrays[f"{tag}_means"], arrays[f"{tag}_variances"])

        return cls(get("normal"), get("abnormal"))
