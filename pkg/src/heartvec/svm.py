"""Two-class RBF-kernel SVM trained by sequential minimal optimisation.

Pairs are picked by the maximal-violating-pair rule with a second-order
choice of the partner (Fan, Chen & Lin 2005), which converges to the
requested KKT tolerance instead of stopping after a fixed number of
unchanged passes.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial.distance import cdist, pdist

from . import container
from .errors import ConvergenceWarning, DimensionError, InvalidConfigError, InvalidInputError

log = logging.getLogger(__name__)

_TAU = 1e-12


@container.register("SvmModel")
@dataclass
class SvmModel:
    support_vectors: np.ndarray  # (m, D)
    dual_coeffs: np.ndarray  # (m,) a_n * t_n
    bias: float
    sigma: float
    C: float
    converged: bool = field(default=True, compare=False, repr=False)
    iterations: int = field(default=0, compare=False, repr=False)

    @property
    def dim(self) -> int:
        return self.support_vectors.shape[1]

    def __eq__(self, other):
        if not isinstance(other, SvmModel):
            return NotImplemented
        return (
            np.array_equal(self.support_vectors, other.support_vectors)
            and np.array_equal(self.dual_coeffs, other.dual_coeffs)
            and (self.bias, self.sigma, self.C) == (other.bias, other.sigma, other.C)
        )

    def score(self, X) -> np.ndarray:
        return np.atleast_1d(svm_decision(self, X))

    def _to_payload(self):
        m, D = self.support_vectors.shape
        return {"m": m, "D": D}, {
            "support_vectors": self.support_vectors,
            "dual_coeffs": self.dual_coeffs,
            "bias": np.array(self.bias),
            "sigma": np.array(self.sigma),
            "C": np.array(self.C),
        }

    @classmethod
    def _from_payload(cls, meta, arrays):
        return cls(
            arrays["support_vectors"].reshape(int(meta["m"]), int(meta["D"])),
            arrays["dual_coeffs"],
            float(arrays["bias"]),
            float(arrays["sigma"]),
            float(arrays["C"]),
        )


def rbf_kernel(x, x2, sigma: float):
    """``exp(-||x - x'||^2 / (2 sigma^2))``; matrices give the full Gram block."""
    if not sigma > 0:
        raise InvalidConfigError(f"kernel width must be positive, got {sigma}")
    x = np.asarray(x, dtype=np.float64)
    x2 = np.asarray(x2, dtype=np.float64)
    if x.ndim == 1 and x2.ndim == 1:
        if x.shape != x2.shape:
            raise DimensionError(f"kernel arguments differ in shape: {x.shape} vs {x2.shape}")
        return float(np.exp(-np.sum((x - x2) ** 2) / (2.0 * sigma**2)))
    A, B = np.atleast_2d(x), np.atleast_2d(x2)
    if A.shape[1] != B.shape[1]:
        raise DimensionError(f"kernel arguments differ in dimension: {A.shape[1]} vs {B.shape[1]}")
    return np.exp(-cdist(A, B, "sqeuclidean") / (2.0 * sigma**2))


def median_heuristic(X) -> float:
    """Median pairwise Euclidean distance, falling back to 1.0 when degenerate."""
    d = pdist(np.asarray(X, dtype=np.float64))
    med = float(np.median(d)) if d.size else 0.0
    return med if med > 0 else 1.0


def _smo(K, y, C, tol, max_iter):
    n = y.size
    alpha = np.zeros(n)
    grad = -np.ones(n)  # gradient of 0.5 a'Qa - e'a
    diag = np.diag(K)
    for it in range(max_iter):
        vals = -y * grad
        up = ((y > 0) & (alpha < C)) | ((y < 0) & (alpha > 0))
        low = ((y > 0) & (alpha > 0)) | ((y < 0) & (alpha < C))
        if not up.any() or not low.any():
            return alpha, grad, True, it
        i = int(np.argmax(np.where(up, vals, -np.inf)))
        m_up = vals[i]
        m_low = np.min(np.where(low, vals, np.inf))
        if m_up - m_low < tol:
            return alpha, grad, True, it
        # second-order partner: largest guaranteed decrease b^2 / a
        b = m_up - vals
        a = diag[i] + diag - 2.0 * K[i]
        a = np.where(a > 0, a, _TAU)
        cand = low & (b > 0)
        j = int(np.argmax(np.where(cand, b * b / a, -np.inf)))
        # move a_i += y_i t, a_j -= y_j t; keeps sum(a * y) fixed
        t = b[j] / a[j]
        t = min(t, C - alpha[i] if y[i] > 0 else alpha[i])
        t = min(t, alpha[j] if y[j] > 0 else C - alpha[j])
        alpha[i] += y[i] * t
        alpha[j] -= y[j] * t
        for k in (i, j):
            if alpha[k] < 1e-12 * C:
                alpha[k] = 0.0
            elif alpha[k] > C * (1 - 1e-12):
                alpha[k] = C
        grad += t * y * (K[:, i] - K[:, j])
    return alpha, grad, False, max_iter


def _bias(alpha, grad, y, C):
    yg = y * grad
    free = (alpha > 0) & (alpha < C)
    if free.any():
        rho = float(np.mean(yg[free]))
    else:
        upper = ((y > 0) & (alpha == C)) | ((y < 0) & (alpha == 0))
        lower = ((y > 0) & (alpha == 0)) | ((y < 0) & (alpha == C))
        ub = float(np.min(yg[upper])) if upper.any() else np.inf
        lb = float(np.max(yg[lower])) if lower.any() else -np.inf
        rho = 0.5 * (ub + lb) if np.isfinite(ub) and np.isfinite(lb) else (ub if np.isfinite(ub) else lb)
    return -rho


def svm_train(
    X,
    t,
    C: float = 1.0,
    sigma: float | None = None,
    tolerance: float = 1e-3,
    max_passes: int = 200,
    seed: int = 0,
) -> SvmModel:
    """Solve the soft-margin dual with an RBF kernel.

    Parameters
    ----------
    X : (n, D) training vectors
    t : labels in {-1, +1}
    C : box constraint
    sigma : kernel width; ``None`` uses the median pairwise distance
    tolerance : stop once the maximal KKT violation drops below this
    max_passes : iteration budget is ``max_passes * n`` pair updates
    seed : permutes the scan order, which only decides ties
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    t = np.asarray(t, dtype=np.float64).ravel()
    if X.shape[0] != t.size:
        raise DimensionError(f"{X.shape[0]} vectors but {t.size} labels")
    if X.shape[0] < 2 or not np.all(np.isin(t, (-1.0, 1.0))):
        raise InvalidInputError("svm_train needs n >= 2 vectors labelled -1/+1")
    if np.unique(t).size < 2:
        raise InvalidInputError("svm_train needs both classes present")
    if not C > 0:
        raise InvalidConfigError(f"C must be positive, got {C}")
    sigma = median_heuristic(X) if sigma is None else float(sigma)

    perm = np.random.default_rng(seed).permutation(X.shape[0])
    Xp, tp = X[perm], t[perm]
    K = rbf_kernel(Xp, Xp, sigma)
    alpha, grad, converged, iters = _smo(K, tp, float(C), tolerance, max_passes * X.shape[0])
    if not converged:
        msg = f"SMO stopped after {iters} updates without reaching tolerance {tolerance}"
        log.warning(msg)
        warnings.warn(msg, ConvergenceWarning, stacklevel=2)
    bias = _bias(alpha, grad, tp, float(C))
    sv = alpha > 0
    # keep support vectors in original data order
    order = np.argsort(perm[sv], kind="stable")
    return SvmModel(
        Xp[sv][order].copy(),
        (alpha[sv] * tp[sv])[order],
        float(bias),
        sigma,
        float(C),
        converged=converged,
        iterations=iters,
    )


def svm_decision(model: SvmModel, x):
    """Signed decision value ``sum_n a_n t_n k(x_n, x) + b``."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != model.dim:
        raise DimensionError(f"expected {model.dim}-dimensional input, got {X.shape[1]}")
    if model.dual_coeffs.size == 0:
        out = np.full(X.shape[0], model.bias)
    else:
        out = rbf_kernel(X, model.support_vectors, model.sigma) @ model.dual_coeffs + model.bias
    return float(out[0]) if single else out


def dual_objective(alpha, X, t, sigma) -> float:
    """``sum(a) - 0.5 sum_nm a_n a_m t_n t_m k(x_n, x_m)``."""
    alpha = np.asarray(alpha, dtype=np.float64)
    at = alpha * np.asarray(t, dtype=np.float64)
    return float(alpha.sum() - 0.5 * at @ rbf_kernel(X, X, sigma) @ at)
