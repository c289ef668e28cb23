"""Single-hidden-layer variational autoencoder in plain numpy.

Encoder ``x -> tanh -> (mu_z, log var_z)``, decoder ``z -> tanh -> x'``
with a unit-variance Gaussian likelihood, trained by stochastic gradient
ascent on the reparameterised ELBO. Inputs are standardised with
statistics frozen at fit time.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from . import container
from .errors import DimensionError, InvalidInputError, NumericalError, TrainingFailure

PARAM_NAMES = ("enc_W", "enc_b", "mu_W", "mu_b", "lv_W", "lv_b", "dec_W", "dec_b", "out_W", "out_b")


@container.register("VaeModel")
@dataclass
class VaeModel:
    params: dict
    in_mean: np.ndarray
    in_scale: np.ndarray
    trace: tuple = field(default=(), compare=False, repr=False)

    @property
    def input_dim(self) -> int:
        return self.params["enc_W"].shape[1]

    @property
    def hidden_width(self) -> int:
        return self.params["enc_W"].shape[0]

    @property
    def latent_dim(self) -> int:
        return self.params["mu_W"].shape[0]

    @property
    def output_dim(self) -> int:
        return self.latent_dim

    def __eq__(self, other):
        if not isinstance(other, VaeModel):
            return NotImplemented
        return (
            np.array_equal(self.in_mean, other.in_mean)
            and np.array_equal(self.in_scale, other.in_scale)
            and all(np.array_equal(self.params[k], other.params[k]) for k in PARAM_NAMES)
        )

    def transform(self, X) -> np.ndarray:
        return vae_encode(self, X)

    def _to_payload(self):
        arrays = {k: self.params[k] for k in PARAM_NAMES}
        arrays["in_mean"] = self.in_mean
        arrays["in_scale"] = self.in_scale
        return {"D": self.input_dim, "H": self.hidden_width, "d": self.latent_dim}, arrays

    @classmethod
    def _from_payload(cls, meta, arrays):
        return cls({k: arrays[k] for k in PARAM_NAMES}, arrays["in_mean"], arrays["in_scale"])


def init_vae(input_dim: int, latent_dim: int, hidden_width: int, rng, in_mean=None, in_scale=None) -> VaeModel:
    D, d, H = input_dim, latent_dim, hidden_width

    def dense(n_out, n_in):
        return rng.standard_normal((n_out, n_in)) / np.sqrt(n_in)

    params = {
        "enc_W": dense(H, D),
        "enc_b": np.zeros(H),
        "mu_W": dense(d, H),
        "mu_b": np.zeros(d),
        "lv_W": 0.1 * dense(d, H),
        "lv_b": np.zeros(d),
        "dec_W": dense(H, d),
        "dec_b": np.zeros(H),
        "out_W": dense(D, H),
        "out_b": np.zeros(D),
    }
    return VaeModel(
        params,
        np.zeros(D) if in_mean is None else np.asarray(in_mean, dtype=np.float64),
        np.ones(D) if in_scale is None else np.asarray(in_scale, dtype=np.float64),
    )


def _standardize(model: VaeModel, x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = np.atleast_2d(x)
    if X.shape[1] != model.input_dim:
        raise DimensionError(f"expected {model.input_dim}-dimensional input, got {X.shape[1]}")
    return (X - model.in_mean) / model.in_scale, single


def _forward(p, X, eps):
    # overflow surfaces as a non-finite ELBO, which callers turn into an error
    with np.errstate(over="ignore", invalid="ignore"):
        h = np.tanh(X @ p["enc_W"].T + p["enc_b"])
        mu = h @ p["mu_W"].T + p["mu_b"]
        lv = h @ p["lv_W"].T + p["lv_b"]
        s = np.exp(0.5 * lv)
        z = mu + s * eps
        g = np.tanh(z @ p["dec_W"].T + p["dec_b"])
        xr = g @ p["out_W"].T + p["out_b"]
    return h, mu, lv, s, z, g, xr


def vae_elbo_terms(model: VaeModel, x, noise):
    """Per-sample reconstruction term ``-0.5||x - x'||^2`` and KL divergence."""
    X, _ = _standardize(model, x)
    eps = np.atleast_2d(np.asarray(noise, dtype=np.float64))
    _, mu, lv, _, _, _, xr = _forward(model.params, X, eps)
    rec = -0.5 * np.sum((X - xr) ** 2, axis=1)
    kl = 0.5 * np.sum(np.exp(lv) + mu**2 - 1.0 - lv, axis=1)
    return rec, kl


def vae_elbo_and_grads(model: VaeModel, x, noise):
    """Batch-mean ELBO at ``z = mu + sigma * noise`` and its exact gradient.

    ``x`` is (D,) or (n, D); ``noise`` is (d,) or (n, d) standard normal.
    Returns ``(elbo, grads)`` with ``grads`` keyed like ``model.params``.
    """
    p = model.params
    X, _ = _standardize(model, x)
    eps = np.atleast_2d(np.asarray(noise, dtype=np.float64))
    if eps.shape != (X.shape[0], model.latent_dim):
        raise DimensionError(f"noise shaped {eps.shape}, expected {(X.shape[0], model.latent_dim)}")
    n = X.shape[0]
    h, mu, lv, s, z, g, xr = _forward(p, X, eps)
    var = s * s
    rec = -0.5 * np.sum((X - xr) ** 2)
    kl = 0.5 * np.sum(var + mu**2 - 1.0 - lv)
    elbo = (rec - kl) / n
    if not np.isfinite(elbo):
        raise NumericalError("non-finite ELBO (activations overflowed)")

    d_xr = (X - xr) / n
    d_g = d_xr @ p["out_W"]
    d_a2 = d_g * (1.0 - g * g)
    d_z = d_a2 @ p["dec_W"]
    d_mu = d_z - mu / n
    d_lv = 0.5 * d_z * eps * s - 0.5 * (var - 1.0) / n
    d_h = d_mu @ p["mu_W"] + d_lv @ p["lv_W"]
    d_a1 = d_h * (1.0 - h * h)
    grads = {
        "out_W": d_xr.T @ g,
        "out_b": d_xr.sum(axis=0),
        "dec_W": d_a2.T @ z,
        "dec_b": d_a2.sum(axis=0),
        "mu_W": d_mu.T @ h,
        "mu_b": d_mu.sum(axis=0),
        "lv_W": d_lv.T @ h,
        "lv_b": d_lv.sum(axis=0),
        "enc_W": d_a1.T @ X,
        "enc_b": d_a1.sum(axis=0),
    }
    return float(elbo), grads


def vae_fit(
    data,
    latent_dim: int,
    hidden_width: int = 32,
    epochs: int = 200,
    learning_rate: float = 0.01,
    seed: int = 0,
    batch_size: int = 32,
) -> VaeModel:
    """Train by minibatch SGD; ``model.trace`` holds the mean ELBO of each epoch."""
    X = np.asarray(data, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise InvalidInputError("vae_fit needs a non-empty (n, D) matrix")
    n, D = X.shape
    if latent_dim >= D:
        warnings.warn(
            f"latent dimension {latent_dim} >= input dimension {D}: nothing is reduced",
            UserWarning,
            stacklevel=2,
        )
    rng = np.random.default_rng(seed)
    scale = X.std(axis=0)
    scale[scale == 0] = 1.0
    model = init_vae(D, latent_dim, hidden_width, rng, X.mean(axis=0), scale)

    trace = []
    for epoch in range(epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, batch_size):
            idx = order[start : start + batch_size]
            eps = rng.standard_normal((idx.size, latent_dim))
            try:
                elbo, grads = vae_elbo_and_grads(model, X[idx], eps)
            except NumericalError as exc:
                raise TrainingFailure(f"VAE training diverged in epoch {epoch}: {exc}") from exc
            for k in PARAM_NAMES:
                model.params[k] += learning_rate * grads[k]
            total += elbo * idx.size
        trace.append(total / n)
        if not all(np.all(np.isfinite(v)) for v in model.params.values()):
            raise TrainingFailure(f"VAE parameters became non-finite in epoch {epoch}")
    model.trace = tuple(trace)
    return model


def vae_encode(model: VaeModel, x) -> np.ndarray:
    """Posterior mean of the latent code (no sampling)."""
    X, single = _standardize(model, x)
    h = np.tanh(X @ model.params["enc_W"].T + model.params["enc_b"])
    mu = h @ model.params["mu_W"].T + model.params["mu_b"]
    return mu[0] if single else mu
