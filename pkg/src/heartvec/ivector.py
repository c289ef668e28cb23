"""Total-variability modelling: Baum-Welch statistics, i-vector posteriors
and EM training of the low-rank matrix T.

Supervectors are laid out component-major: rows ``c*D .. c*D + D - 1`` of
T belong to UBM component c.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve

from . import container
from .errors import DimensionError, InvalidConfigError, InvalidInputError, NumericalError
from .gmm import CHUNK_ROWS, Gmm, posteriors

log = logging.getLogger(__name__)

# above this many floats the per-component T_c' S_c^-1 T_c cache is skipped
_GRAM_CACHE_LIMIT = 50_000_000


@dataclass
class BaumWelchStats:
    N: np.ndarray  # (C,) zero-order occupancies
    F: np.ndarray  # (C, D) first-order stats centred on the UBM means

    def __post_init__(self):
        self.N = np.asarray(self.N, dtype=np.float64)
        self.F = np.atleast_2d(np.asarray(self.F, dtype=np.float64))
        if self.N.ndim != 1 or self.F.shape[0] != self.N.shape[0]:
            raise DimensionError(f"N {self.N.shape} and F {self.F.shape} disagree on component count")

    @property
    def n_frames(self) -> float:
        return float(self.N.sum())


@dataclass
class IVectorPosterior:
    mean: np.ndarray
    covariance: np.ndarray
    second_moment: np.ndarray


@container.register("TotalVariabilityModel")
@dataclass
class TotalVariabilityModel:
    T: np.ndarray  # (C*D, R)
    ubm_means: np.ndarray  # (C*D,)
    ubm_variances: np.ndarray  # (C*D,)
    n_components: int
    feature_dim: int
    residuals: tuple = field(default=(), compare=False, repr=False)

    def __post_init__(self):
        self.T = np.atleast_2d(np.asarray(self.T, dtype=np.float64))
        self.ubm_means = np.asarray(self.ubm_means, dtype=np.float64).ravel()
        self.ubm_variances = np.asarray(self.ubm_variances, dtype=np.float64).ravel()
        self.n_components = int(self.n_components)
        self.feature_dim = int(self.feature_dim)
        CD = self.n_components * self.feature_dim
        if self.T.shape[0] != CD or self.ubm_means.size != CD or self.ubm_variances.size != CD:
            raise DimensionError(
                f"T {self.T.shape}, means {self.ubm_means.shape} and variances "
                f"{self.ubm_variances.shape} do not match C*D = {CD}"
            )
        if self.rank < 1:
            raise InvalidConfigError("i-vector rank must be at least 1")
        if np.any(self.ubm_variances <= 0):
            raise InvalidInputError("UBM variances must be positive")
        self._gram = None

    @classmethod
    def from_ubm(cls, ubm: Gmm, T) -> TotalVariabilityModel:
        return cls(T, ubm.means.ravel(), ubm.variances.ravel(), ubm.n_components, ubm.dim)

    @property
    def rank(self) -> int:
        return self.T.shape[1]

    def __eq__(self, other):
        if not isinstance(other, TotalVariabilityModel):
            return NotImplemented
        return (
            np.array_equal(self.T, other.T)
            and np.array_equal(self.ubm_means, other.ubm_means)
            and np.array_equal(self.ubm_variances, other.ubm_variances)
            and (self.n_components, self.feature_dim) == (other.n_components, other.feature_dim)
        )

    def _blocks(self):
        C, D, R = self.n_components, self.feature_dim, self.rank
        return self.T.reshape(C, D, R), self.ubm_variances.reshape(C, D)

    def component_gram(self):
        """Per-component ``T_c' S_c^-1 T_c`` as (C, R, R), cached; None if too large."""
        C, R = self.n_components, self.rank
        if C * R * R > _GRAM_CACHE_LIMIT:
            return None
        if self._gram is None:
            Tc, var = self._blocks()
            self._gram = np.einsum("cdr,cd,cds->crs", Tc, 1.0 / var, Tc)
        return self._gram

    def _to_payload(self):
        meta = {"C": self.n_components, "D": self.feature_dim, "R": self.rank}
        return meta, {"T": self.T, "ubm_means": self.ubm_means, "ubm_variances": self.ubm_variances}

    @classmethod
    def _from_payload(cls, meta, arrays):
        return cls(arrays["T"], arrays["ubm_means"], arrays["ubm_variances"], meta["C"], meta["D"])


def accumulate_stats(ubm: Gmm, features) -> BaumWelchStats:
    """Zero- and centred first-order statistics of one record against the UBM."""
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if X.shape[1] != ubm.dim:
        raise DimensionError(f"features have dimension {X.shape[1]}, UBM expects {ubm.dim}")
    N = np.zeros(ubm.n_components)
    Sx = np.zeros_like(ubm.means)
    for s in range(0, X.shape[0], CHUNK_ROWS):
        blk = X[s : s + CHUNK_ROWS]
        gamma = posteriors(ubm, blk)
        N += gamma.sum(axis=0)
        Sx += gamma.T @ blk
    return BaumWelchStats(N, Sx - N[:, None] * ubm.means)


def _check_stats(model: TotalVariabilityModel, stats: BaumWelchStats):
    if stats.F.shape != (model.n_components, model.feature_dim):
        raise DimensionError(
            f"stats shaped {stats.F.shape}, model expects {(model.n_components, model.feature_dim)}"
        )


def _precision(model: TotalVariabilityModel, N):
    gram = model.component_gram()
    if gram is not None:
        P = np.tensordot(N, gram, axes=1)
    else:
        Tc, var = model._blocks()
        w = (N[:, None] / var).ravel()
        P = model.T.T @ (model.T * w[:, None])
    P[np.diag_indices_from(P)] += 1.0
    return P


def posterior_wi(model: TotalVariabilityModel, stats: BaumWelchStats) -> IVectorPosterior:
    """Gaussian posterior of the latent factor given one record's statistics."""
    _check_stats(model, stats)
    if np.any(stats.N < 0):
        raise InvalidInputError("zero-order statistics must be non-negative")
    R = model.rank
    P = _precision(model, stats.N)
    b = model.T.T @ (stats.F.ravel() / model.ubm_variances)
    if not (np.all(np.isfinite(P)) and np.all(np.isfinite(b))):
        raise NumericalError(
            f"non-finite posterior precision/projection (max |N| = {np.max(np.abs(stats.N)):.3g}, "
            f"max |F| = {np.max(np.abs(stats.F)):.3g}, max |T| = {np.max(np.abs(model.T)):.3g})"
        )
    try:
        factor = cho_factor(P, lower=True)
    except LinAlgError as exc:
        raise NumericalError(f"posterior precision not positive definite: {exc}") from exc
    mean = cho_solve(factor, b)
    cov = cho_solve(factor, np.eye(R))
    cov = 0.5 * (cov + cov.T)
    return IVectorPosterior(mean, cov, cov + np.outer(mean, mean))


def extract_ivector(model: TotalVariabilityModel, stats: BaumWelchStats) -> np.ndarray:
    return posterior_wi(model, stats).mean


def update_T(model: TotalVariabilityModel, stat_list, posterior_list) -> np.ndarray:
    """One M-step for T; components never observed keep their old rows."""
    if not stat_list or len(stat_list) != len(posterior_list):
        raise InvalidInputError("update_T needs equally long, non-empty stat and posterior lists")
    C, D, R = model.n_components, model.feature_dim, model.rank
    Ns = np.stack([s.N for s in stat_list])  # (I, C)
    Fs = np.stack([s.F for s in stat_list])  # (I, C, D)
    Ew = np.stack([p.mean for p in posterior_list])  # (I, R)
    Eww = np.stack([p.second_moment for p in posterior_list])  # (I, R, R)
    A = np.tensordot(Ns.T, Eww, axes=1)  # (C, R, R)
    Bm = np.einsum("icd,ir->cdr", Fs, Ew)
    occupancy = Ns.sum(axis=0)
    T_new = model.T.reshape(C, D, R).copy()
    for c in range(C):
        if occupancy[c] <= 1e-10:
            continue
        try:
            T_new[c] = cho_solve(cho_factor(A[c], lower=True), Bm[c].T).T
        except LinAlgError:
            T_new[c] = np.linalg.lstsq(A[c], Bm[c].T, rcond=None)[0].T
    return T_new.reshape(C * D, R)


def residual(model: TotalVariabilityModel, stat_list, means) -> float:
    """Sum over records and components of ``||F_c - N_c T_c E[w]||^2``."""
    C, D, R = model.n_components, model.feature_dim, model.rank
    total = 0.0
    for stats, w in zip(stat_list, means):
        pred = stats.N[:, None] * (model.T @ w).reshape(C, D)
        total += float(np.sum((stats.F - pred) ** 2))
    return total


def train_tv(
    ubm: Gmm,
    stat_list,
    rank: int,
    iterations: int = 10,
    seed: int = 0,
) -> TotalVariabilityModel:
    """EM training of the total-variability matrix.

    ``model.residuals[k]`` is the squared residual of the statistics
    explained by the posterior means computed with the k-th T (the last
    entry uses the final T). A rise is logged and warned about.
    """
    if not stat_list:
        raise InvalidInputError("train_tv needs at least one record")
    C, D = ubm.n_components, ubm.dim
    if not 1 <= rank <= C * D:
        raise InvalidConfigError(f"rank {rank} outside [1, C*D = {C * D}]")
    rng = np.random.default_rng(seed)
    scale = 0.1 * float(np.mean(np.sqrt(ubm.variances)))
    model = TotalVariabilityModel.from_ubm(ubm, scale * rng.standard_normal((C * D, rank)))

    residuals = []
    for it in range(iterations):
        posts = [posterior_wi(model, s) for s in stat_list]
        residuals.append(residual(model, stat_list, [p.mean for p in posts]))
        model = TotalVariabilityModel.from_ubm(ubm, update_T(model, stat_list, posts))
        log.debug("T-matrix iteration %d: residual %.6g", it, residuals[-1])
    means = [extract_ivector(model, s) for s in stat_list]
    residuals.append(residual(model, stat_list, means))

    rises = [k for k in range(1, len(residuals)) if residuals[k] > residuals[k - 1] * (1 + 1e-6)]
    if rises:
        msg = f"total-variability residual increased at iteration(s) {rises}"
        log.warning(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=2)
    model.residuals = tuple(residuals)
    return model
