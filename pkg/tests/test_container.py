from __future__ import annotations

import numpy as np
import pytest

from heartvec import container
from heartvec.errors import FormatError, IncompatibleModelError
from heartvec.gmm import Gmm, GmmPair
from heartvec.ivector import TotalVariabilityModel
from heartvec.mfcc import FeatureMatrix
from heartvec.pca import PcaModel
from heartvec.svm import SvmModel
from heartvec.vae import init_vae


def _gmm(rng, K=2, D=3):
    w = rng.random(K)
    return Gmm(w / w.sum(), rng.normal(size=(K, D)), rng.random((K, D)) + 0.1)


def _models(rng):
    g = _gmm(rng)
    return [
        g,
        GmmPair(g, _gmm(rng, K=3)),
        TotalVariabilityModel(rng.normal(size=(6, 2)), rng.normal(size=6), rng.random(6) + 0.5, 2, 3),
        PcaModel(rng.normal(size=4), np.linalg.qr(rng.normal(size=(4, 2)))[0], np.array([2.0, 1.0])),
        init_vae(5, 2, 4, rng, rng.normal(size=5), rng.random(5) + 0.5),
        SvmModel(rng.normal(size=(3, 2)), np.array([0.5, -0.25, -0.25]), 0.1, 1.3, 2.0),
        FeatureMatrix("a0001", rng.normal(size=(7, 12))),
    ]


def _same(a, b):
    if isinstance(a, FeatureMatrix):
        return a.record_id == b.record_id and np.array_equal(a.values, b.values)
    if hasattr(a, "params"):
        return all(np.array_equal(a.params[k], b.params[k]) for k in a.params) and np.array_equal(a.in_mean, b.in_mean)
    return a == b


def test_round_trip_is_bit_exact(tmp_path, rng):
    for i, model in enumerate(_models(rng)):
        path = tmp_path / f"m{i}.model"
        container.save_model(model, path)
        back = container.load_model(path, type(model))
        assert type(back) is type(model)
        assert _same(model, back), type(model).__name__
        assert container.peek_kind(path) == type(model).KIND


def test_round_trip_preserves_special_values(rng):
    g = Gmm(np.array([1.0]), np.array([[np.pi, -0.0, 1e-300]]), np.array([[1e300, 5e-324, 1.0]]))
    back = container.loads(container.dumps(g))
    assert np.array_equal(back.means.view(np.uint64), g.means.view(np.uint64))
    assert np.array_equal(back.variances, g.variances)


def test_kind_mismatch(tmp_path, rng):
    pca = _models(rng)[3]
    container.save_model(pca, tmp_path / "p.model")
    with pytest.raises(IncompatibleModelError):
        container.load_model(tmp_path / "p.model", TotalVariabilityModel)
    with pytest.raises(IncompatibleModelError):
        container.load_model(tmp_path / "p.model", "Gmm")


def test_truncated(tmp_path, rng):
    blob = container.dumps(_gmm(rng))
    for cut in (3, 20, len(blob) - 1):
        with pytest.raises(FormatError):
            container.loads(blob[:cut])


def test_trailing_bytes_and_bad_magic(rng):
    blob = container.dumps(_gmm(rng))
    with pytest.raises(FormatError):
        container.loads(blob + b"\0")
    with pytest.raises(FormatError):
        container.loads(b"XXXXXXXX" + blob[8:])


def test_unknown_version(rng):
    blob = bytearray(container.dumps(_gmm(rng)))
    blob[8] = 99
    with pytest.raises(IncompatibleModelError):
        container.loads(bytes(blob))


def test_serialization_is_deterministic(rng):
    m = _gmm(rng)
    assert container.dumps(m) == container.dumps(container.loads(container.dumps(m)))


def test_unregistered_type():
    with pytest.raises(TypeError):
        container.dumps(object())
