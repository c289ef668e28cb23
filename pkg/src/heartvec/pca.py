from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import container
from .errors import DimensionError, InvalidConfigError, InvalidInputError


@container.register("PcaModel")
@dataclass
class PcaModel:
    mean: np.ndarray  # (p,)
    components: np.ndarray  # (p, l), orthonormal columns
    eigenvalues: np.ndarray  # (l,), non-increasing

    @property
    def input_dim(self) -> int:
        return self.components.shape[0]

    @property
    def output_dim(self) -> int:
        return self.components.shape[1]

    def __eq__(self, other):
        if not isinstance(other, PcaModel):
            return NotImplemented
        return all(
            np.array_equal(a, b)
            for a, b in ((self.mean, other.mean), (self.components, other.components), (self.eigenvalues, other.eigenvalues))
        )

    def transform(self, X) -> np.ndarray:
        return pca_project(self, X)

    def _to_payload(self):
        return {"p": self.input_dim, "l": self.output_dim}, {
            "mean": self.mean,
            "components": self.components,
            "eigenvalues": self.eigenvalues,
        }

    @classmethod
    def _from_payload(cls, meta, arrays):
        return cls(arrays["mean"], arrays["components"], arrays["eigenvalues"])


def pca_fit(data, n_components: int) -> PcaModel:
    """Principal axes of the sample covariance (ddof=1), via SVD of the centred data.

    Each axis is sign-normalised so its largest-magnitude entry is positive.
    """
    X = np.asarray(data, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise InvalidInputError("pca_fit needs an (n, p) matrix with n >= 2")
    n, p = X.shape
    l = int(n_components)
    if not 1 <= l <= min(n - 1, p):
        raise InvalidConfigError(f"n_components={l} outside [1, min(n-1, p) = {min(n - 1, p)}]")
    mean = X.mean(axis=0)
    _, s, Vt = np.linalg.svd(X - mean, full_matrices=False)
    W = Vt[:l].T.copy()
    pivot = np.argmax(np.abs(W), axis=0)
    W *= np.sign(W[pivot, np.arange(l)])
    return PcaModel(mean, W, s[:l] ** 2 / (n - 1))


def pca_project(model: PcaModel, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.input_dim:
        raise DimensionError(f"expected {model.input_dim}-dimensional input, got {x.shape[-1]}")
    return (x - model.mean) @ model.components


def pca_reconstruct(model: PcaModel, t) -> np.ndarray:
    return np.asarray(t, dtype=np.float64) @ model.components.T + model.mean
